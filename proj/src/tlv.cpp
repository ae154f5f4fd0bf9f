// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#include "tierstream/tlv.hpp"

#include <bit>
#include <sstream>

#include "tierstream/common.hpp"

namespace tierstream::tlv {

namespace {

enum tag : uint8_t {
  t_null = 0,
  t_int64 = 1,
  t_float64 = 2,
  t_string = 3,
  t_bytes = 4,
  t_list = 5,
  t_map = 6,
};

void push_u64(std::vector<std::byte>& out, uint64_t v) {
  std::byte b[8];
  put_u64_le(b, v);
  out.insert(out.end(), b, b + 8);
}

void push_string(std::vector<std::byte>& out, const std::string& s, const std::string& path) {
  if (!is_valid_utf8(s)) throw tlv_error("tlv: non-utf8 string at " + (path.empty() ? "$" : path));
  out.push_back(std::byte{t_string});
  push_u64(out, s.size());
  const auto* p = reinterpret_cast<const std::byte*>(s.data());
  out.insert(out.end(), p, p + s.size());
}

void encode_one(const value& v, std::vector<std::byte>& out, std::string& path) {
  v.visit([&](const auto& x) {
    using T = std::decay_t<decltype(x)>;
    if constexpr (std::is_same_v<T, std::monostate>) {
      out.push_back(std::byte{t_null});
    } else if constexpr (std::is_same_v<T, int64_t>) {
      out.push_back(std::byte{t_int64});
      push_u64(out, static_cast<uint64_t>(x));
    } else if constexpr (std::is_same_v<T, double>) {
      out.push_back(std::byte{t_float64});
      push_u64(out, std::bit_cast<uint64_t>(x));
    } else if constexpr (std::is_same_v<T, std::string>) {
      push_string(out, x, path);
    } else if constexpr (std::is_same_v<T, bytes>) {
      out.push_back(std::byte{t_bytes});
      push_u64(out, x.size());
      out.insert(out.end(), x.begin(), x.end());
    } else if constexpr (std::is_same_v<T, list>) {
      out.push_back(std::byte{t_list});
      push_u64(out, x.size());
      const size_t mark = path.size();
      for (size_t i = 0; i < x.size(); ++i) {
        path += "[" + std::to_string(i) + "]";
        encode_one(x[i], out, path);
        path.resize(mark);
      }
    } else if constexpr (std::is_same_v<T, map>) {
      out.push_back(std::byte{t_map});
      push_u64(out, x.size());
      const size_t mark = path.size();
      for (const auto& [k, vv] : x) {
        path += "." + k;
        push_string(out, k, path);
        encode_one(vv, out, path);
        path.resize(mark);
      }
    }
  });
}

struct cursor {
  std::span<const std::byte> data;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > data.size()) throw tlv_error("tlv: truncated input");
  }
  uint8_t take_u8() {
    need(1);
    return static_cast<uint8_t>(data[pos++]);
  }
  uint64_t take_u64() {
    need(8);
    uint64_t v = get_u64_le(data.data() + pos);
    pos += 8;
    return v;
  }
  std::span<const std::byte> take(size_t n) {
    need(n);
    auto s = data.subspan(pos, n);
    pos += n;
    return s;
  }
};

value decode_one(cursor& c, int depth) {
  if (depth > 256) throw tlv_error("tlv: nesting too deep");
  switch (c.take_u8()) {
    case t_null:
      return value();
    case t_int64:
      return value(static_cast<int64_t>(c.take_u64()));
    case t_float64:
      return value(std::bit_cast<double>(c.take_u64()));
    case t_string: {
      const uint64_t n = c.take_u64();
      auto s = c.take(n);
      std::string str(reinterpret_cast<const char*>(s.data()), s.size());
      if (!is_valid_utf8(str)) throw tlv_error("tlv: invalid utf8 string");
      return value(std::move(str));
    }
    case t_bytes: {
      const uint64_t n = c.take_u64();
      auto s = c.take(n);
      return value(bytes(s.begin(), s.end()));
    }
    case t_list: {
      const uint64_t n = c.take_u64();
      list l;
      l.reserve(std::min<uint64_t>(n, 4096));
      for (uint64_t i = 0; i < n; ++i) l.push_back(decode_one(c, depth + 1));
      return value(std::move(l));
    }
    case t_map: {
      const uint64_t n = c.take_u64();
      map m;
      for (uint64_t i = 0; i < n; ++i) {
        value k = decode_one(c, depth + 1);
        std::string key;
        try {
          key = k.as_string();
        } catch (const std::bad_variant_access&) {
          throw tlv_error("tlv: map key is not a string");
        }
        value vv = decode_one(c, depth + 1);
        m.emplace(std::move(key), std::move(vv));
      }
      return value(std::move(m));
    }
    default:
      throw tlv_error("tlv: unknown tag");
  }
}

std::string hex_preview(const bytes& b, size_t limit = 16) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (size_t i = 0; i < b.size() && i < limit; ++i) {
    auto v = static_cast<uint8_t>(b[i]);
    out.push_back(digits[v >> 4]);
    out.push_back(digits[v & 0xf]);
  }
  if (b.size() > limit) out += "...";
  return out;
}

}  // namespace

bool is_valid_utf8(std::string_view s) {
  size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<uint8_t>(s[i]);
    size_t len;
    if (c < 0x80) {
      len = 1;
    } else if ((c >> 5) == 0x6) {
      len = 2;
    } else if ((c >> 4) == 0xe) {
      len = 3;
    } else if ((c >> 3) == 0x1e) {
      len = 4;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (size_t k = 1; k < len; ++k)
      if ((static_cast<uint8_t>(s[i + k]) >> 6) != 0x2) return false;
    i += len;
  }
  return true;
}

std::vector<std::byte> encode(const value& v) {
  std::vector<std::byte> out;
  std::string path;
  encode_one(v, out, path);
  return out;
}

value decode(std::span<const std::byte> data) {
  cursor c{data};
  value v = decode_one(c, 0);
  if (c.pos != data.size()) throw tlv_error("tlv: trailing bytes after value");
  return v;
}

std::string to_text(const value& v, int indent) {
  const std::string pad(static_cast<size_t>(indent) * 2, ' ');
  return v.visit([&](const auto& x) -> std::string {
    using T = std::decay_t<decltype(x)>;
    std::ostringstream os;
    if constexpr (std::is_same_v<T, std::monostate>) {
      os << "null";
    } else if constexpr (std::is_same_v<T, int64_t>) {
      os << x;
    } else if constexpr (std::is_same_v<T, double>) {
      os << x;
    } else if constexpr (std::is_same_v<T, std::string>) {
      os << '"' << x << '"';
    } else if constexpr (std::is_same_v<T, bytes>) {
      os << "bytes[" << x.size() << "]:" << hex_preview(x);
    } else if constexpr (std::is_same_v<T, list>) {
      os << "[";
      for (size_t i = 0; i < x.size(); ++i) os << (i ? ", " : "") << to_text(x[i], indent + 1);
      os << "]";
    } else if constexpr (std::is_same_v<T, map>) {
      if (x.empty()) return "{}";
      os << "{\n";
      size_t i = 0;
      for (const auto& [k, vv] : x) {
        os << pad << "  \"" << k << "\": " << to_text(vv, indent + 1);
        os << (++i == x.size() ? "\n" : ",\n");
      }
      os << pad << "}";
    }
    return os.str();
  });
}

}  // namespace tierstream::tlv
