// SPDX-License-Identifier: Apache-2.0

#include "msq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "msq/config.hpp"
#include "msq/error.hpp"

namespace msq {

const Blob* Checkpoint::find(const std::string& name) const {
  for (const Blob& b : blobs) {
    if (b.name == name) return &b;
  }
  return nullptr;
}

const Blob& Checkpoint::at(const std::string& name) const {
  const Blob* b = find(name);
  if (b == nullptr) throw FormatError("checkpoint has no blob '" + name + "'");
  return *b;
}

const std::string& Checkpoint::meta_at(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw FormatError("checkpoint has no entry '" + key + "'");
  return it->second;
}

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

class Reader {
 public:
  Reader(const std::vector<unsigned char>& b, std::string what) : b_(b), what_(std::move(what)) {}

  bool done() const { return pos_ == b_.size(); }

  void need(std::size_t n, const char* field) const {
    if (b_.size() - pos_ < n) throw FormatError(what_ + ": truncated " + field);
  }
  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* field) {
    need(8, field);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string bytes(std::size_t n, const char* field) {
    need(n, field);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  const std::string& what() const { return what_; }

 private:
  const std::vector<unsigned char>& b_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<unsigned char> out{'M', 'S', 'Q', '1'};
  put_u32(out, kCheckpointVersion);
  for (const auto& [k, v] : ckpt.meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw FormatError("checkpoint entry '" + k + "' cannot be stored as key=value text");
    }
  }
  const std::string text = format_kv_text(ckpt.meta);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const Blob& b : ckpt.blobs) {
    put_u32(out, static_cast<std::uint32_t>(b.name.size()));
    out.insert(out.end(), b.name.begin(), b.name.end());
    put_u32(out, static_cast<std::uint32_t>(b.value.rank()));
    for (std::size_t d : b.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : b.value.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& what) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "MSQ1", 4) != 0) {
    throw FormatError(what + ": not an MSQ1 checkpoint");
  }
  std::vector<unsigned char> rest(bytes.begin() + 4, bytes.end());
  Reader r(rest, what);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError(what + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const std::uint32_t text_len = r.u32("config length");
  const std::string text = r.bytes(text_len, "config text");
  // Stored verbatim: one key=value per line, split at the first '='.
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) throw FormatError(what + ": unterminated config line");
    const std::string line = text.substr(start, end - start);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(what + ": bad config line '" + line + "'");
    ckpt.meta[line.substr(0, eq)] = line.substr(eq + 1);
    start = end + 1;
  }
  while (!r.done()) {
    Blob b;
    const std::uint32_t name_len = r.u32("blob name length");
    b.name = r.bytes(name_len, "blob name");
    const std::uint32_t rank = r.u32("blob rank");
    if (rank == 0 || rank > 8) throw FormatError(what + ": blob " + b.name + " has bad rank");
    std::vector<std::size_t> shape;
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32("blob dims");
      if (d == 0) throw FormatError(what + ": blob " + b.name + " has a zero extent");
      shape.push_back(d);
      count *= d;
      if (count > (std::uint64_t{1} << 34)) {
        throw FormatError(what + ": blob " + b.name + " is implausibly large");
      }
    }
    r.need(count * 8, "blob payload");
    b.value = Array(shape);
    for (double& v : b.value.values()) v = std::bit_cast<double>(r.u64("blob payload"));
    if (ckpt.find(b.name) != nullptr) throw FormatError(what + ": duplicate blob " + b.name);
    ckpt.blobs.push_back(std::move(b));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::vector<unsigned char> bytes = encode_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write to a sibling and rename so a crash never leaves a torn checkpoint.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes, path.string());
}

}  // namespace msq
