// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace tierstream::tlv {

// Self-contained binary encoding for structured checkpoint state. Part of
// the checkpoint format contract, so it is bit-exact by construction:
// little-endian, value = tag byte + payload,
//   0 null | 1 int64 | 2 float64 | 3 utf8 string | 4 bytes | 5 list | 6 map
// strings/bytes are u64 length + raw payload; lists are u64 count +
// elements; maps are u64 count + (string key value, value) pairs with keys
// kept in sorted order so identical values encode to identical bytes.

class value;
using list = std::vector<value>;
using map = std::map<std::string, value>;
using bytes = std::vector<std::byte>;

class value {
 public:
  value() = default;
  value(std::nullptr_t) {}
  value(int64_t v) : v_(v) {}
  value(int v) : v_(static_cast<int64_t>(v)) {}
  value(uint64_t v) : v_(static_cast<int64_t>(v)) {}
  value(double v) : v_(v) {}
  value(const char* v) : v_(std::string(v)) {}
  value(std::string v) : v_(std::move(v)) {}
  value(bytes v) : v_(std::move(v)) {}
  value(list v) : v_(std::move(v)) {}
  value(map v) : v_(std::move(v)) {}

  bool is_null() const { return std::holds_alternative<std::monostate>(v_); }
  bool is_int() const { return std::holds_alternative<int64_t>(v_); }
  bool is_map() const { return std::holds_alternative<map>(v_); }

  int64_t as_int() const { return std::get<int64_t>(v_); }
  double as_float() const { return std::get<double>(v_); }
  const std::string& as_string() const { return std::get<std::string>(v_); }
  const bytes& as_bytes() const { return std::get<bytes>(v_); }
  const list& as_list() const { return std::get<list>(v_); }
  const map& as_map() const { return std::get<map>(v_); }
  map& as_map() { return std::get<map>(v_); }

  bool operator==(const value& other) const = default;

  template <class Visitor>
  decltype(auto) visit(Visitor&& vis) const {
    return std::visit(std::forward<Visitor>(vis), v_);
  }

 private:
  std::variant<std::monostate, int64_t, double, std::string, bytes, list, map> v_;
};

class tlv_error : public std::runtime_error {
 public:
  explicit tlv_error(const std::string& what) : std::runtime_error(what) {}
};

/// Encodes `v` to its canonical byte form. Throws tlv_error naming the
/// offending key path for values that cannot be encoded (strings that are
/// not valid UTF-8).
std::vector<std::byte> encode(const value& v);

/// Strict decoder: rejects truncation, unknown tags, non-UTF-8 strings and
/// trailing bytes.
value decode(std::span<const std::byte> data);

/// JSON-like rendering used for report summaries and `inspect`.
std::string to_text(const value& v, int indent = 0);

bool is_valid_utf8(std::string_view s);

}  // namespace tierstream::tlv
