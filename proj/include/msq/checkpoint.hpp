// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container:
//
//   "MSQ1" | u32 version | u32 n | n bytes of key=value text (sorted)
//   then until EOF, per blob:
//   u32 name_len | name | u32 rank | rank x u32 dims | f64 payload
//
// All integers and floats little-endian.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "msq/array.hpp"

namespace msq {

constexpr std::uint32_t kCheckpointVersion = 1;

struct Blob {
  std::string name;
  Array value;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;  // config snapshot and run state
  std::vector<Blob> blobs;

  const Blob* find(const std::string& name) const;
  const Blob& at(const std::string& name) const;
  const std::string& meta_at(const std::string& key) const;
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& what);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace msq
