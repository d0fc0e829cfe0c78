#include "kpl/data/synthetic.hpp"

#include "kpl/core/rng.hpp"
#include "kpl/io/image_io.hpp"

#include <filesystem>

namespace kpl {

namespace {

void fill_rect(Image<float>& img, int x0, int y0, int w, int h, float r, float g, float b) {
  const int H = img.dim(1), W = img.dim(2);
  const int64_t plane = (int64_t)H * W;
  for (int y = std::max(0, y0); y < std::min(H, y0 + h); ++y)
    for (int x = std::max(0, x0); x < std::min(W, x0 + w); ++x) {
      img[(int64_t)y * W + x] = r;
      img[plane + (int64_t)y * W + x] = g;
      img[2 * plane + (int64_t)y * W + x] = b;
    }
}

void fill_disk(Image<float>& img, double cx, double cy, double rad, float r, float g, float b) {
  const int H = img.dim(1), W = img.dim(2);
  const int64_t plane = (int64_t)H * W;
  for (int y = std::max(0, (int)(cy - rad)); y <= std::min(H - 1, (int)(cy + rad)); ++y)
    for (int x = std::max(0, (int)(cx - rad)); x <= std::min(W - 1, (int)(cx + rad)); ++x) {
      const double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy > rad * rad) continue;
      img[(int64_t)y * W + x] = r;
      img[plane + (int64_t)y * W + x] = g;
      img[2 * plane + (int64_t)y * W + x] = b;
    }
}

}  // namespace

Image<float> synthetic_image(ImageSize size, uint64_t seed) {
  Rng rng(mix_seed(seed, 0x73796e74ull));
  const int H = size.height, W = size.width;
  Image<float> img({3, H, W});
  const int64_t plane = (int64_t)H * W;

  // shaded background
  const float base_r = (float)rng.uniform(0.2, 0.8), base_g = (float)rng.uniform(0.2, 0.8),
              base_b = (float)rng.uniform(0.2, 0.8);
  const float gx = (float)rng.uniform(-0.3, 0.3), gy = (float)rng.uniform(-0.3, 0.3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const float shade = gx * (float)x / (float)W + gy * (float)y / (float)H;
      img[(int64_t)y * W + x] = base_r + shade;
      img[plane + (int64_t)y * W + x] = base_g + shade;
      img[2 * plane + (int64_t)y * W + x] = base_b + shade;
    }

  const int rects = rng.uniform_int(6, 12);
  for (int i = 0; i < rects; ++i)
    fill_rect(img, rng.uniform_int(0, W - 8), rng.uniform_int(0, H - 8), rng.uniform_int(8, W / 2),
              rng.uniform_int(8, H / 2), (float)rng.uniform(), (float)rng.uniform(), (float)rng.uniform());

  const int disks = rng.uniform_int(3, 8);
  for (int i = 0; i < disks; ++i)
    fill_disk(img, rng.uniform(0, W), rng.uniform(0, H), rng.uniform(4, std::min(H, W) / 4.0),
              (float)rng.uniform(), (float)rng.uniform(), (float)rng.uniform());

  // checkerboard patch
  {
    const int cell = rng.uniform_int(4, 9);
    const int px = rng.uniform_int(0, std::max(1, W / 2)), py = rng.uniform_int(0, std::max(1, H / 2));
    const int pw = rng.uniform_int(W / 4, W / 2), ph = rng.uniform_int(H / 4, H / 2);
    const float c1 = (float)rng.uniform(0.0, 0.4), c2 = (float)rng.uniform(0.6, 1.0);
    for (int y = py; y < std::min(H, py + ph); ++y)
      for (int x = px; x < std::min(W, px + pw); ++x) {
        const float v = (((x - px) / cell + (y - py) / cell) % 2 == 0) ? c1 : c2;
        img[(int64_t)y * W + x] = v;
        img[plane + (int64_t)y * W + x] = v;
        img[2 * plane + (int64_t)y * W + x] = v;
      }
  }

  // a few stripes
  const int stripes = rng.uniform_int(2, 5);
  for (int i = 0; i < stripes; ++i) {
    const bool horiz = rng.bernoulli(0.5);
    const int t = rng.uniform_int(2, 6);
    const float v = (float)rng.uniform();
    if (horiz)
      fill_rect(img, 0, rng.uniform_int(0, H - t), W, t, v, v, (float)rng.uniform());
    else
      fill_rect(img, rng.uniform_int(0, W - t), 0, t, H, v, (float)rng.uniform(), v);
  }

  for (int64_t i = 0; i < img.size(); ++i) img[i] += (float)rng.normal(0.0, 0.01);
  img.array() = img.array().min(1.0f).max(0.0f);
  return img;
}

void write_synthetic_corpus(const std::string& dir, int count, ImageSize size, uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%04d.ppm", i);
    save_ppm((fs::path(dir) / name).string(), synthetic_image(size, mix_seed(seed, (uint64_t)i)));
  }
}

}  // namespace kpl
