#include "kpl/train/corpus.hpp"

#include "kpl/io/image_io.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <stdexcept>

namespace kpl {

Corpus::Corpus(const std::string& dir, ImageSize working) : working_(working) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::runtime_error("corpus: not a directory: " + dir);
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && is_supported_image(entry.path().string()))
      paths_.push_back(entry.path().string());
  }
  std::sort(paths_.begin(), paths_.end());
  if (paths_.empty()) throw std::runtime_error("corpus: no readable images under " + dir);
  bad_.assign(paths_.size(), 0);
  cache_all_ = paths_.size() <= 512;
}

const Image<float>& Corpus::load(int idx) {
  const int n = size();
  for (int attempt = 0; attempt < n; ++attempt) {
    const int i = (idx + attempt) % n;
    if (bad_[(size_t)i]) continue;
    auto it = cache_.find(i);
    if (it != cache_.end()) return it->second;
    try {
      Image<float> img = fit_to<float>(load_image(paths_[(size_t)i]), working_);
      if (!cache_all_) cache_.clear();
      return cache_.emplace(i, std::move(img)).first->second;
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping unreadable image " << paths_[(size_t)i] << " (" << e.what() << ")\n";
      bad_[(size_t)i] = 1;
    }
  }
  throw std::runtime_error("corpus: all images unreadable");
}

}  // namespace kpl
