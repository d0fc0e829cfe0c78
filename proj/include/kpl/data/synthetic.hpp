#pragma once

#include "kpl/geometry/image_ops.hpp"

#include <string>

namespace kpl {

/// Procedural textured image: shaded background with random rectangles,
/// disks, stripes and a checkerboard patch. Plenty of corner structure,
/// deterministic in the seed.
Image<float> synthetic_image(ImageSize size, uint64_t seed);

/// Writes `count` synthetic images (ppm) into dir, creating it if needed.
void write_synthetic_corpus(const std::string& dir, int count, ImageSize size, uint64_t seed);

}  // namespace kpl
