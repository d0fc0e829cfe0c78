#pragma once

#include "kpl/geometry/homography.hpp"

#include <string>
#include <vector>

namespace kpl {

/// One sequence directory: reference image `1`, targets `2..6`, and
/// ground-truth homographies H_1_k (3x3 row-major text). Sequence names
/// prefixed i_/v_ mark the illumination/viewpoint subsets.
struct HpatchesSequence {
  std::string name;
  char subset = '?';  // 'i' or 'v'
  std::string ref_image;
  std::vector<std::string> target_images;     // aligned with homographies
  std::vector<std::string> homography_files;  // H_1_k per target
  std::vector<int> target_indices;            // k values
};

struct HpatchesDataset {
  std::vector<HpatchesSequence> sequences;
  std::vector<std::string> skipped;  // malformed directories with reasons
};

HpatchesDataset scan_hpatches(const std::string& root);

/// Reads nine whitespace-separated reals, row-major.
Homography<double> read_homography_file(const std::string& path);

}  // namespace kpl
