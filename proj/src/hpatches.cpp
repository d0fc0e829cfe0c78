#include "kpl/eval/hpatches.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

namespace kpl {

namespace fs = std::filesystem;

namespace {

std::string find_image(const fs::path& dir, int index) {
  for (const char* ext : {".ppm", ".pgm", ".png", ".jpg", ".jpeg", ".pnm"}) {
    fs::path p = dir / (std::to_string(index) + ext);
    if (fs::exists(p)) return p.string();
  }
  return "";
}

}  // namespace

Homography<double> read_homography_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open homography file: " + path);
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      if (!(in >> m(r, c))) throw std::runtime_error("malformed homography file: " + path);
  return Homography<double>::from_matrix(m);
}

HpatchesDataset scan_hpatches(const std::string& root) {
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root is not a directory: " + root);
  HpatchesDataset data;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());

  for (const auto& dir : dirs) {
    HpatchesSequence seq;
    seq.name = dir.filename().string();
    if (seq.name.rfind("i_", 0) == 0)
      seq.subset = 'i';
    else if (seq.name.rfind("v_", 0) == 0)
      seq.subset = 'v';
    seq.ref_image = find_image(dir, 1);
    if (seq.ref_image.empty()) {
      data.skipped.push_back(seq.name + ": missing reference image 1");
      continue;
    }
    for (int k = 2; k <= 6; ++k) {
      const std::string img = find_image(dir, k);
      const fs::path hfile = dir / ("H_1_" + std::to_string(k));
      if (img.empty() || !fs::exists(hfile)) continue;
      seq.target_images.push_back(img);
      seq.homography_files.push_back(hfile.string());
      seq.target_indices.push_back(k);
    }
    if (seq.target_images.empty()) {
      data.skipped.push_back(seq.name + ": no (target image, H_1_k) pairs");
      continue;
    }
    data.sequences.push_back(std::move(seq));
  }
  return data;
}

}  // namespace kpl
