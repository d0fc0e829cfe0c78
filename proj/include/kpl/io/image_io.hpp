#pragma once

#include "kpl/geometry/image_ops.hpp"

#include <string>

namespace kpl {

/// Loads a PPM/PGM/PNG/JPEG image as a 3-channel float image in [0,1]
/// (grayscale inputs are replicated). Throws std::runtime_error on failure.
Image<float> load_image(const std::string& path);

bool is_supported_image(const std::string& path);

void save_ppm(const std::string& path, const Image<float>& img);
void save_png(const std::string& path, const Image<float>& img);

}  // namespace kpl
