#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hgwm/autodiff.hpp"

namespace hgwm::ad {

/// Named-tensor archive. Layout (little-endian):
///   "HGTA" u32 version
///   u32 n_meta, then n_meta x (u32 len, key bytes, u32 len, value bytes)
///   u32 n_tensors, then n_tensors x (u32 len, name bytes, u32 rank, rank x u64 dim)
///   raw float64 payloads in header order
struct Archive {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

std::string encode_archive(const Archive& archive);
Archive decode_archive(const std::string& bytes);
void save_archive(const std::filesystem::path& path, const Archive& archive);
Archive load_archive(const std::filesystem::path& path);

}  // namespace hgwm::ad
