// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#include "tierstream/format.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

namespace tierstream {

namespace {

void pwrite_all(int fd, const std::byte* data, size_t len, uint64_t offset,
                const std::filesystem::path& path) {
  size_t done = 0;
  while (done < len) {
    const ssize_t n = ::pwrite(fd, data + done, len - done, static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw format_error(format_error_kind::io,
                         "write failed at " + path.string() + ": " + std::strerror(errno));
    }
    done += static_cast<size_t>(n);
  }
}

std::vector<std::byte> pread_all(int fd, size_t len, uint64_t offset,
                                 const std::filesystem::path& path) {
  std::vector<std::byte> buf(len);
  size_t done = 0;
  while (done < len) {
    const ssize_t n = ::pread(fd, buf.data() + done, len - done, static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw format_error(format_error_kind::io,
                         "read failed at " + path.string() + ": " + std::strerror(errno));
    }
    if (n == 0)
      throw format_error(format_error_kind::incomplete_file,
                         "unexpected end of file: " + path.string());
    done += static_cast<size_t>(n);
  }
  return buf;
}

class file_reader {
 public:
  explicit file_reader(const std::filesystem::path& path) : path_(path) {
    fd_ = ::open(path.c_str(), O_RDONLY);
    if (fd_ < 0) {
      const auto kind = errno == ENOENT ? format_error_kind::missing_file : format_error_kind::io;
      throw format_error(kind, "cannot open " + path.string() + ": " + std::strerror(errno));
    }
    size_ = static_cast<uint64_t>(::lseek(fd_, 0, SEEK_END));
  }
  ~file_reader() {
    if (fd_ >= 0) ::close(fd_);
  }
  uint64_t size() const { return size_; }
  std::vector<std::byte> read(uint64_t offset, size_t len) const {
    return pread_all(fd_, len, offset, path_);
  }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  uint64_t size_ = 0;
};

constexpr size_t entry_wire_size = 8 + 1 + 8 + 8 + 8 + 8;  // 41 bytes

void put_entry(std::byte* out, const footer_entry& e) {
  put_u64_le(out, e.object_id);
  out[8] = static_cast<std::byte>(e.kind);
  put_u64_le(out + 9, e.file_offset);
  put_u64_le(out + 17, e.length);
  put_u64_le(out + 25, e.object_offset_base);
  put_u64_le(out + 33, e.checksum);
}

footer_entry get_entry(const std::byte* in) {
  footer_entry e;
  e.object_id = get_u64_le(in);
  e.kind = static_cast<uint8_t>(in[8]);
  e.file_offset = get_u64_le(in + 9);
  e.length = get_u64_le(in + 17);
  e.object_offset_base = get_u64_le(in + 25);
  e.checksum = get_u64_le(in + 33);
  return e;
}

void validate_entries(const std::vector<footer_entry>& entries, uint64_t tensor_region_end) {
  std::vector<std::pair<uint64_t, uint64_t>> spans;
  spans.reserve(entries.size());
  for (const auto& e : entries) {
    if (e.length == 0)
      throw format_error(format_error_kind::invalid_entries, "zero-length entry", e.object_id);
    if (e.file_offset < header_reserved_bytes)
      throw format_error(format_error_kind::invalid_entries, "entry inside reserved header",
                         e.object_id);
    if (e.kind == 0 && e.file_offset + e.length > tensor_region_end)
      throw format_error(format_error_kind::invalid_entries,
                         "raw entry above the tensor region", e.object_id);
    if (e.kind == 1 && e.file_offset < tensor_region_end)
      throw format_error(format_error_kind::invalid_entries,
                         "structured entry below the tensor region", e.object_id);
    spans.emplace_back(e.file_offset, e.file_offset + e.length);
  }
  std::sort(spans.begin(), spans.end());
  for (size_t i = 1; i < spans.size(); ++i) {
    if (spans[i].first < spans[i - 1].second)
      throw format_error(format_error_kind::invalid_entries, "overlapping footer entries");
  }
}

}  // namespace

checkpoint_file_writer::checkpoint_file_writer(const std::filesystem::path& path,
                                               const file_layout& plan_file, uint64_t plan_hash,
                                               bool overwrite)
    : path_(path), tensor_region_end_(plan_file.tensor_region_end) {
  if (!overwrite && std::filesystem::exists(path))
    throw format_error(format_error_kind::io, "file exists: " + path.string());
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_TRUNC, 0644);
  if (fd_ < 0)
    throw format_error(format_error_kind::io,
                       "cannot create " + path.string() + ": " + std::strerror(errno));

  std::vector<std::byte> header(header_reserved_bytes, std::byte{0});
  std::memcpy(header.data(), checkpoint_magic, sizeof(checkpoint_magic));
  put_u32_le(header.data() + 8, checkpoint_format_version);
  put_u64_le(header.data() + 12, plan_hash);
  pwrite_all(fd_, header.data(), header.size(), 0, path_);

  // Pre-size the fixed region so positional writes never extend the file.
  if (::ftruncate(fd_, static_cast<off_t>(tensor_region_end_)) != 0)
    throw format_error(format_error_kind::io,
                       "cannot pre-size " + path.string() + ": " + std::strerror(errno));
  append_cursor_ = tensor_region_end_;
}

checkpoint_file_writer::~checkpoint_file_writer() {
  if (fd_ >= 0) ::close(fd_);
}

void checkpoint_file_writer::write_fixed(uint64_t file_offset, std::span<const std::byte> data) {
  if (file_offset < header_reserved_bytes || file_offset + data.size() > tensor_region_end_)
    throw format_error(format_error_kind::io, "fixed write outside the tensor region");
  pwrite_all(fd_, data.data(), data.size(), file_offset, path_);
}

uint64_t checkpoint_file_writer::append_chunk(std::span<const std::byte> data) {
  if (data.empty()) throw format_error(format_error_kind::io, "zero-length append rejected");
  uint64_t offset;
  {
    std::lock_guard<std::mutex> g(append_mu_);
    offset = append_cursor_;
    append_cursor_ += data.size();
  }
  pwrite_all(fd_, data.data(), data.size(), offset, path_);
  return offset;
}

uint64_t checkpoint_file_writer::appended_bytes() {
  std::lock_guard<std::mutex> g(append_mu_);
  return append_cursor_ - tensor_region_end_;
}

void checkpoint_file_writer::finalize(const std::vector<footer_entry>& entries) {
  if (finalized_) throw format_error(format_error_kind::io, "finalize called twice");
  validate_entries(entries, tensor_region_end_);

  std::vector<std::byte> blob(8 + entries.size() * entry_wire_size + 16);
  put_u64_le(blob.data(), entries.size());
  for (size_t i = 0; i < entries.size(); ++i)
    put_entry(blob.data() + 8 + i * entry_wire_size, entries[i]);
  const size_t table_len = 8 + entries.size() * entry_wire_size;
  const uint64_t table_checksum =
      fnv1a64(std::span<const std::byte>(blob.data(), table_len));
  put_u64_le(blob.data() + table_len, table_checksum);
  // Trailer: length of (table + checksum), the last 8 bytes of the file.
  put_u64_le(blob.data() + table_len + 8, table_len + 8);

  uint64_t offset;
  {
    std::lock_guard<std::mutex> g(append_mu_);
    offset = append_cursor_;
    append_cursor_ += blob.size();
  }
  pwrite_all(fd_, blob.data(), blob.size(), offset, path_);
  finalized_ = true;
}

file_header read_header(const std::filesystem::path& path) {
  file_reader f(path);
  if (f.size() < header_reserved_bytes)
    throw format_error(format_error_kind::incomplete_file,
                       "file shorter than the reserved header: " + path.string());
  auto head = f.read(0, 20);
  if (std::memcmp(head.data(), checkpoint_magic, sizeof(checkpoint_magic)) != 0)
    throw format_error(format_error_kind::incomplete_file, "bad magic: " + path.string());
  file_header h;
  h.version = get_u32_le(head.data() + 8);
  if (h.version != checkpoint_format_version)
    throw format_error(format_error_kind::incomplete_file,
                       "unsupported format version in " + path.string());
  h.plan_hash = get_u64_le(head.data() + 12);
  return h;
}

file_footer read_footer(const std::filesystem::path& path) {
  read_header(path);  // magic and version must hold first
  file_reader f(path);
  if (f.size() < header_reserved_bytes + 16)
    throw format_error(format_error_kind::incomplete_file,
                       "no room for a footer: " + path.string());
  const auto trailer = f.read(f.size() - 8, 8);
  const uint64_t blob_len = get_u64_le(trailer.data());
  if (blob_len < 16 || blob_len + 8 > f.size())
    throw format_error(format_error_kind::incomplete_file,
                       "implausible footer length, file incomplete: " + path.string());
  const auto blob = f.read(f.size() - 8 - blob_len, blob_len);
  const size_t table_len = blob_len - 8;
  const uint64_t stored = get_u64_le(blob.data() + table_len);
  const uint64_t computed = fnv1a64(std::span<const std::byte>(blob.data(), table_len));
  if (stored != computed)
    throw format_error(format_error_kind::incomplete_file,
                       "footer checksum mismatch, file incomplete: " + path.string());
  const uint64_t count = get_u64_le(blob.data());
  if (8 + count * entry_wire_size != table_len)
    throw format_error(format_error_kind::corrupt_footer,
                       "footer entry count disagrees with table size: " + path.string());
  file_footer footer;
  footer.entries.reserve(count);
  for (uint64_t i = 0; i < count; ++i)
    footer.entries.push_back(get_entry(blob.data() + 8 + i * entry_wire_size));
  return footer;
}

std::vector<file_object> read_file_objects(const std::filesystem::path& path) {
  const file_footer footer = read_footer(path);
  file_reader f(path);

  struct partial {
    object_kind kind;
    std::vector<std::pair<uint64_t, std::vector<std::byte>>> pieces;  // object_offset -> bytes
    uint64_t checksum;
  };
  std::map<uint64_t, partial> objects;
  for (const auto& e : footer.entries) {
    if (e.file_offset + e.length > f.size())
      throw format_error(format_error_kind::corrupt_footer,
                         "entry range outside the file", e.object_id);
    auto& p = objects[e.object_id];
    p.kind = e.kind == 0 ? object_kind::raw_buffer : object_kind::structured;
    p.checksum = e.checksum;
    p.pieces.emplace_back(e.object_offset_base, f.read(e.file_offset, e.length));
  }

  std::vector<file_object> out;
  out.reserve(objects.size());
  for (auto& [oid, p] : objects) {
    std::sort(p.pieces.begin(), p.pieces.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::byte> bytes;
    for (auto& [off, piece] : p.pieces) {
      if (off != bytes.size())
        throw format_error(format_error_kind::corrupt_footer,
                           "gap in object byte ranges", oid);
      bytes.insert(bytes.end(), piece.begin(), piece.end());
    }
    if (fnv1a64(bytes) != p.checksum)
      throw format_error(format_error_kind::corrupt_object,
                         "checksum mismatch for object " + std::to_string(oid) + " in " +
                             path.string(),
                         oid);
    out.push_back({oid, p.kind, std::move(bytes)});
  }
  return out;
}

// --------------------------------------------------------------------------
// Manifest.

tlv::value checkpoint_manifest::to_value() const {
  tlv::map m;
  m.emplace("checkpoint_id", tlv::value(checkpoint_id));
  m.emplace("iteration", tlv::value(iteration));
  m.emplace("tp", tlv::value(tp));
  m.emplace("pp", tlv::value(pp));
  m.emplace("dp", tlv::value(dp));
  m.emplace("zero1", tlv::value(static_cast<int64_t>(zero1 ? 1 : 0)));
  m.emplace("seed", tlv::value(seed));
  m.emplace("n_params", tlv::value(n_params));
  m.emplace("layers", tlv::value(layers));
  m.emplace("metadata_bytes", tlv::value(metadata_bytes));
  m.emplace("complete", tlv::value(static_cast<int64_t>(complete ? 1 : 0)));
  tlv::list rank_list;
  for (const auto& r : ranks) {
    tlv::map rm;
    rm.emplace("rank_id", tlv::value(r.rank_id));
    rm.emplace("tp_idx", tlv::value(r.tp_idx));
    rm.emplace("pp_idx", tlv::value(r.pp_idx));
    rm.emplace("dp_idx", tlv::value(r.dp_idx));
    tlv::list files;
    for (const auto& fi : r.files) {
      tlv::map fm;
      fm.emplace("file_id", tlv::value(static_cast<int64_t>(fi.file_id)));
      fm.emplace("path", tlv::value(fi.relative_path));
      tlv::list oids;
      for (uint64_t oid : fi.object_ids) oids.emplace_back(oid);
      fm.emplace("object_ids", tlv::value(std::move(oids)));
      files.emplace_back(std::move(fm));
    }
    rm.emplace("files", tlv::value(std::move(files)));
    tlv::list objs;
    for (const auto& oi : r.objects) {
      tlv::map om;
      om.emplace("object_id", tlv::value(oi.object_id));
      om.emplace("kind", tlv::value(static_cast<int64_t>(oi.kind)));
      om.emplace("tier", tlv::value(static_cast<int64_t>(oi.residency)));
      om.emplace("precision", tlv::value(static_cast<int64_t>(oi.precision)));
      om.emplace("file_id", tlv::value(static_cast<int64_t>(oi.file_id)));
      objs.emplace_back(std::move(om));
    }
    rm.emplace("objects", tlv::value(std::move(objs)));
    rank_list.emplace_back(std::move(rm));
  }
  m.emplace("ranks", tlv::value(std::move(rank_list)));
  return tlv::value(std::move(m));
}

namespace {
int64_t need_int(const tlv::map& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end() || !it->second.is_int())
    throw format_error(format_error_kind::bad_manifest, "manifest missing field: " + key);
  return it->second.as_int();
}
}  // namespace

checkpoint_manifest checkpoint_manifest::from_value(const tlv::value& v) {
  if (!v.is_map()) throw format_error(format_error_kind::bad_manifest, "manifest is not a map");
  const auto& m = v.as_map();
  checkpoint_manifest out;
  out.checkpoint_id = static_cast<uint64_t>(need_int(m, "checkpoint_id"));
  out.iteration = static_cast<uint64_t>(need_int(m, "iteration"));
  out.tp = static_cast<int>(need_int(m, "tp"));
  out.pp = static_cast<int>(need_int(m, "pp"));
  out.dp = static_cast<int>(need_int(m, "dp"));
  out.zero1 = need_int(m, "zero1") != 0;
  out.seed = static_cast<uint64_t>(need_int(m, "seed"));
  out.n_params = static_cast<uint64_t>(need_int(m, "n_params"));
  out.layers = static_cast<int>(need_int(m, "layers"));
  out.metadata_bytes = static_cast<uint64_t>(need_int(m, "metadata_bytes"));
  out.complete = need_int(m, "complete") != 0;
  auto rit = m.find("ranks");
  if (rit == m.end())
    throw format_error(format_error_kind::bad_manifest, "manifest missing ranks");
  for (const auto& rv : rit->second.as_list()) {
    const auto& rm = rv.as_map();
    manifest_rank_info r;
    r.rank_id = static_cast<int>(need_int(rm, "rank_id"));
    r.tp_idx = static_cast<int>(need_int(rm, "tp_idx"));
    r.pp_idx = static_cast<int>(need_int(rm, "pp_idx"));
    r.dp_idx = static_cast<int>(need_int(rm, "dp_idx"));
    for (const auto& fv : rm.at("files").as_list()) {
      const auto& fm = fv.as_map();
      manifest_file_info fi;
      fi.file_id = static_cast<uint32_t>(need_int(fm, "file_id"));
      fi.relative_path = fm.at("path").as_string();
      for (const auto& ov : fm.at("object_ids").as_list())
        fi.object_ids.push_back(static_cast<uint64_t>(ov.as_int()));
      r.files.push_back(std::move(fi));
    }
    for (const auto& ov : rm.at("objects").as_list()) {
      const auto& om = ov.as_map();
      manifest_object_info oi;
      oi.object_id = static_cast<uint64_t>(need_int(om, "object_id"));
      oi.kind = static_cast<object_kind>(need_int(om, "kind"));
      oi.residency = static_cast<tier>(need_int(om, "tier"));
      oi.precision = static_cast<precision_tag>(need_int(om, "precision"));
      oi.file_id = static_cast<uint32_t>(need_int(om, "file_id"));
      r.objects.push_back(oi);
    }
    out.ranks.push_back(std::move(r));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const checkpoint_manifest& m) {
  const auto bytes = tlv::encode(m.to_value());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw format_error(format_error_kind::io, "cannot write manifest: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw format_error(format_error_kind::io, "manifest write failed: " + path.string());
}

checkpoint_manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f)
    throw format_error(format_error_kind::missing_file, "cannot open manifest: " + path.string());
  const auto size = static_cast<size_t>(f.tellg());
  f.seekg(0);
  std::vector<std::byte> bytes(size);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!f) throw format_error(format_error_kind::io, "manifest read failed: " + path.string());
  tlv::value v;
  try {
    v = tlv::decode(bytes);
  } catch (const tlv::tlv_error& e) {
    throw format_error(format_error_kind::bad_manifest,
                       "manifest does not decode: " + std::string(e.what()));
  }
  auto m = checkpoint_manifest::from_value(v);
  if (!m.complete)
    throw format_error(format_error_kind::bad_manifest,
                       "manifest not marked complete: " + path.string());
  return m;
}

std::vector<rank_state> restore_checkpoint(const std::filesystem::path& manifest_path) {
  const checkpoint_manifest manifest = read_manifest(manifest_path);
  const auto base = manifest_path.parent_path();

  std::vector<rank_state> ranks;
  ranks.reserve(manifest.ranks.size());
  for (const auto& r : manifest.ranks) {
    rank_state rank;
    rank.rank_id = r.rank_id;
    rank.tp_idx = r.tp_idx;
    rank.pp_idx = r.pp_idx;
    rank.dp_idx = r.dp_idx;
    rank.seed = manifest.seed;
    rank.metadata_bytes = manifest.metadata_bytes;

    std::map<uint64_t, file_object> recovered;
    for (const auto& fi : r.files) {
      auto objects = read_file_objects(base / fi.relative_path);
      std::set<uint64_t> expected(fi.object_ids.begin(), fi.object_ids.end());
      for (auto& obj : objects) {
        if (!expected.count(obj.object_id))
          throw format_error(format_error_kind::bad_manifest,
                             "file contains an object the manifest does not list",
                             obj.object_id);
        expected.erase(obj.object_id);
        recovered.emplace(obj.object_id, std::move(obj));
      }
      if (!expected.empty())
        throw format_error(format_error_kind::corrupt_footer,
                           "file is missing manifest-listed objects: " +
                               (base / fi.relative_path).string(),
                           *expected.begin());
    }

    for (const auto& oi : r.objects) {
      auto it = recovered.find(oi.object_id);
      if (it == recovered.end())
        throw format_error(format_error_kind::bad_manifest, "object missing from checkpoint",
                           oi.object_id);
      state_object obj;
      obj.object_id = oi.object_id;
      obj.kind = oi.kind;
      obj.residency = oi.residency;
      obj.precision = oi.precision;
      obj.file_id = oi.file_id;
      obj.size_bytes = it->second.bytes.size();
      obj.size_known = true;
      if (oi.kind == object_kind::raw_buffer) {
        obj.payload = std::move(it->second.bytes);
      } else {
        try {
          obj.structured = tlv::decode(it->second.bytes);
        } catch (const tlv::tlv_error& e) {
          throw format_error(format_error_kind::corrupt_object,
                             "structured object does not decode: " + std::string(e.what()),
                             oi.object_id);
        }
      }
      rank.objects.push_back(std::move(obj));
    }
    for (const auto& fi : r.files) rank.file_ids.push_back(fi.file_id);
    ranks.push_back(std::move(rank));
  }
  return ranks;
}

verify_report verify_checkpoint(const std::filesystem::path& manifest_path) {
  verify_report report;
  checkpoint_manifest manifest;
  try {
    manifest = read_manifest(manifest_path);
  } catch (const format_error& e) {
    report.ok = false;
    report.issues.push_back({e.kind, e.object_id, e.what()});
    return report;
  }
  const auto base = manifest_path.parent_path();
  for (const auto& r : manifest.ranks) {
    for (const auto& fi : r.files) {
      try {
        auto objects = read_file_objects(base / fi.relative_path);
        report.files_checked += 1;
        report.objects_checked += objects.size();
        std::set<uint64_t> found;
        for (const auto& o : objects) found.insert(o.object_id);
        for (uint64_t oid : fi.object_ids) {
          if (!found.count(oid)) {
            report.ok = false;
            report.issues.push_back(
                {format_error_kind::corrupt_footer, oid, "object missing from file"});
          }
        }
      } catch (const format_error& e) {
        report.ok = false;
        report.issues.push_back({e.kind, e.object_id, e.what()});
      }
    }
  }
  return report;
}

}  // namespace tierstream
