#pragma once

#include "kpl/geometry/image_ops.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace kpl {

/// Image corpus over a directory tree: recursive scan for supported raster
/// formats, shortest-side resize + center crop to the working resolution.
/// Unreadable files are warned about once and skipped deterministically.
class Corpus {
 public:
  Corpus(const std::string& dir, ImageSize working);

  int size() const { return (int)paths_.size(); }
  const std::vector<std::string>& paths() const { return paths_; }

  /// Loads entry `idx`; on a decode failure advances to the next readable
  /// entry (wrapping). Throws when every entry is unreadable.
  const Image<float>& load(int idx);

 private:
  std::vector<std::string> paths_;
  std::vector<char> bad_;
  ImageSize working_;
  std::unordered_map<int, Image<float>> cache_;
  bool cache_all_ = false;
};

}  // namespace kpl
