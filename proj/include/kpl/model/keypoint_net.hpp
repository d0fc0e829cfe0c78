#pragma once

#include "kpl/autograd/nn.hpp"
#include "kpl/geometry/homography.hpp"
#include "kpl/geometry/image_ops.hpp"

#include <optional>

namespace kpl {

struct KeypointNetConfig {
  int cell_size = 8;             // embedding stride; one keypoint per cell
  double location_ratio = 2.0;   // offset reach relative to the cell
  int descriptor_dim = 256;
  bool cross_border = true;      // when false the offset reach is clamped to one cell
  bool descriptor_upsample = true;
  double dropout_rate = 0.2;

  void validate() const {
    if (cell_size <= 0 || descriptor_dim <= 0) throw std::invalid_argument("invalid KeypointNetConfig sizes");
    if (location_ratio <= 0.0) throw std::invalid_argument("location_ratio must be > 0");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw std::invalid_argument("dropout_rate must be in [0,1)");
  }

  double effective_ratio() const { return cross_border ? location_ratio : std::min(location_ratio, 1.0); }

  bool operator==(const KeypointNetConfig&) const = default;
};

/// Per-image detections: pixel locations, scores in [0,1], unit-norm
/// descriptors (one row per keypoint).
template <class S>
struct KeypointSet {
  Points<S> locations;                                                     // N x 2, (u,v)
  Eigen::Matrix<S, Eigen::Dynamic, 1> scores;                              // N
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> descriptors;  // N x D

  int size() const { return (int)locations.rows(); }
};

/// Dense network outputs for one image.
template <class S>
struct DenseOutputs {
  ag::Var<S> score;        // [1,1,Hc,Wc], sigmoid
  ag::Var<S> offsets;      // [1,2,Hc,Wc], tanh; channel 0 = u offset, channel 1 = v offset
  ag::Var<S> descriptors;  // [1,D,Hd,Wd]; Hd = H/4 upsampled, H/8 otherwise
  int cells_y = 0, cells_x = 0;
  ImageSize input_size;
};

/// Maps per-cell offsets in (-1,1) to image pixel coordinates:
/// p = cell_center + offset * ratio*(cell-1)/2. Returns [N,2] rows in
/// row-major cell order.
template <class S>
ag::Var<S> cell_to_image(const ag::Var<S>& offsets, const KeypointNetConfig& cfg) {
  const Shape& s = offsets.value().shape();
  const int hc = s[2], wc = s[3];
  const int m = hc * wc;
  const S cell = (S)cfg.cell_size;
  const S reach = (S)(cfg.effective_ratio() * (cfg.cell_size - 1) / 2.0);
  // [1,2,Hc,Wc] -> [2,M] -> [M,2]
  ag::Var<S> flat = ag::transpose2d(ag::reshape(offsets, {2, m}));
  Tensor<S> centers({m, 2});
  auto cm = centers.mat(m, 2);
  for (int cy = 0; cy < hc; ++cy)
    for (int cx = 0; cx < wc; ++cx) {
      cm(cy * wc + cx, 0) = cell * (S)cx + (cell - 1) / 2;
      cm(cy * wc + cx, 1) = cell * (S)cy + (cell - 1) / 2;
    }
  return ag::add_const(ag::scale(flat, reach), centers);
}

/// Bilinear descriptor sampling at pixel locations, then row L2
/// normalization. `clamped`, when given, records locations that fell
/// outside the descriptor grid and were clamped to its border.
template <class S>
ag::Var<S> sample_descriptors(const ag::Var<S>& descriptor_map, const ag::Var<S>& locations,
                              ImageSize image, std::vector<char>* clamped = nullptr) {
  const Shape& ds = descriptor_map.value().shape();
  const int d = ds[1], hd = ds[2], wd = ds[3];
  const int stride = image.height / hd;
  if (stride * hd != image.height || stride * (wd) != image.width)
    throw std::invalid_argument("sample_descriptors: map does not tile the image");
  // pixel -> grid: node j sits at pixel stride*j + (stride-1)/2
  const S a = S(1) / (S)stride;
  const S b = -(S)(stride - 1) / (S)(2 * stride);
  ag::Var<S> grid_locs = ag::affine(locations, a, b);
  if (clamped) {
    const int n = grid_locs.value().dim(0);
    clamped->assign((size_t)n, 0);
    auto lm = grid_locs.value().mat(n, 2);
    for (int i = 0; i < n; ++i)
      (*clamped)[(size_t)i] =
          lm(i, 0) < S(0) || lm(i, 0) > S(wd - 1) || lm(i, 1) < S(0) || lm(i, 1) > S(hd - 1);
  }
  ag::Var<S> map3 = ag::reshape(descriptor_map, {d, hd, wd});
  return ag::l2_normalize_rows(ag::grid_sample(map3, grid_locs));
}

/// Encoder-decoder keypoint network: shared VGG-style encoder, three heads
/// (score / location / descriptor), one prediction per cell.
template <class S>
class KeypointNet {
 public:
  KeypointNet() = default;
  KeypointNet(const KeypointNetConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg_.descriptor_dim;
    enc1a_.init(rng, 3, 32, 3);
    bn1a_.init(32);
    enc1b_.init(rng, 32, 32, 3);
    bn1b_.init(32);
    enc2a_.init(rng, 32, 64, 3);
    bn2a_.init(64);
    enc2b_.init(rng, 64, 64, 3);
    bn2b_.init(64);
    enc3a_.init(rng, 64, 128, 3);
    bn3a_.init(128);
    enc3b_.init(rng, 128, 128, 3);
    bn3b_.init(128);
    enc4a_.init(rng, 128, 256, 3);
    bn4a_.init(256);
    enc4b_.init(rng, 256, 256, 3);
    bn4b_.init(256);

    score_a_.init(rng, 256, 256, 3);
    score_bn_.init(256);
    score_b_.init(rng, 256, 1, 3);
    loc_a_.init(rng, 256, 256, 3);
    loc_bn_.init(256);
    loc_b_.init(rng, 256, 2, 3);

    desc_a_.init(rng, 256, 256, 3);
    desc_bn_a_.init(256);
    if (cfg_.descriptor_upsample) {
      desc_b_.init(rng, 256, 512, 3);
      desc_bn_b_.init(512);
      desc_c_.init(rng, 128 + 128, d, 3);
      desc_bn_c_.init(d);
      desc_d_.init(rng, d, d, 3);
    } else {
      desc_b_.init(rng, 256, 256, 3);
      desc_bn_b_.init(256);
      desc_d_.init(rng, 256, d, 3);
    }
  }

  const KeypointNetConfig& config() const { return cfg_; }

  /// Runs the network on a [3,H,W] image (H, W divisible by the cell size).
  /// `stats`, when given, receives the deferred batch-norm running-stat
  /// updates instead of applying them inline (concurrent-forward support).
  DenseOutputs<S> forward(const Image<S>& image, bool training, Rng& rng, ag::StatsCollector<S>* stats = nullptr) {
    if (image.rank() != 3 || image.dim(0) != 3) throw std::invalid_argument("forward: expected [3,H,W] image");
    const int h = image.dim(1), w = image.dim(2);
    if (h % 8 || w % 8)
      throw std::invalid_argument("forward: input " + std::to_string(h) + "x" + std::to_string(w) +
                                  " not divisible by 8");
    ag::Var<S> x = ag::constant(image.reshaped({1, 3, h, w}));
    const S slope = S(0.1);
    const S drop = (S)cfg_.dropout_rate;
    auto block = [&](const ag::Var<S>& in, Conv2dLayer& conv, BatchNorm2dLayer& bn, bool do_drop) {
      ag::Var<S> y = ag::leaky_relu(bn(conv(in), training, stats), slope);
      return do_drop ? ag::dropout(y, drop, rng, training) : y;
    };

    x = block(x, enc1a_, bn1a_, false);
    x = block(x, enc1b_, bn1b_, true);
    x = ag::max_pool2x2(x);
    x = block(x, enc2a_, bn2a_, false);
    x = block(x, enc2b_, bn2b_, true);
    x = ag::max_pool2x2(x);
    x = block(x, enc3a_, bn3a_, false);
    ag::Var<S> skip = block(x, enc3b_, bn3b_, true);  // 128 @ H/4
    x = ag::max_pool2x2(skip);
    x = block(x, enc4a_, bn4a_, false);
    x = block(x, enc4b_, bn4b_, true);  // 256 @ H/8

    DenseOutputs<S> out;
    out.input_size = {h, w};
    out.cells_y = h / 8;
    out.cells_x = w / 8;

    ag::Var<S> sa = ag::dropout(ag::leaky_relu(score_bn_(score_a_(x), training, stats), slope), drop, rng, training);
    out.score = ag::sigmoid(score_b_(sa));

    ag::Var<S> la = ag::dropout(ag::leaky_relu(loc_bn_(loc_a_(x), training, stats), slope), drop, rng, training);
    out.offsets = ag::tanh_act(loc_b_(la));

    ag::Var<S> da = ag::dropout(ag::leaky_relu(desc_bn_a_(desc_a_(x), training, stats), slope), drop, rng, training);
    if (cfg_.descriptor_upsample) {
      ag::Var<S> db = ag::leaky_relu(desc_bn_b_(desc_b_(da), training, stats), slope);  // 512 @ H/8
      ag::Var<S> up = ag::pixel_shuffle2(db);                                           // 128 @ H/4
      ag::Var<S> cat = ag::concat_channels(skip, up);                                   // 256 @ H/4
      ag::Var<S> dc = ag::leaky_relu(desc_bn_c_(desc_c_(cat), training, stats), slope);
      out.descriptors = desc_d_(dc);
    } else {
      ag::Var<S> db = ag::leaky_relu(desc_bn_b_(desc_b_(da), training, stats), slope);
      out.descriptors = desc_d_(db);
    }
    return out;
  }

  /// Dense keypoints in cell order plus sampled descriptors, score-sorted,
  /// truncated to top_k. No non-maxima suppression. Ties break on score
  /// then cell order, so extraction is deterministic.
  KeypointSet<S> extract_keypoints(const DenseOutputs<S>& out, int top_k) {
    ag::NoGradGuard ng;
    const int m = out.cells_y * out.cells_x;
    if (top_k > m) top_k = m;
    if (top_k < 0) top_k = 0;
    ag::Var<S> locs = cell_to_image(out.offsets, cfg_);
    std::vector<int> order((size_t)m);
    for (int i = 0; i < m; ++i) order[(size_t)i] = i;
    const Tensor<S>& sc = out.score.value();
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sc[a] > sc[b]; });
    order.resize((size_t)top_k);

    KeypointSet<S> kps;
    kps.locations.resize(top_k, 2);
    kps.scores.resize(top_k);
    auto lm = locs.value().mat(m, 2);
    for (int i = 0; i < top_k; ++i) {
      kps.locations(i, 0) = lm(order[(size_t)i], 0);
      kps.locations(i, 1) = lm(order[(size_t)i], 1);
      kps.scores[i] = sc[order[(size_t)i]];
    }
    Tensor<S> sel({top_k, 2});
    sel.mat(top_k, 2) = kps.locations.template cast<S>();
    ag::Var<S> desc = sample_descriptors(out.descriptors, ag::constant(std::move(sel)), out.input_size);
    kps.descriptors = desc.value().mat(top_k, cfg_.descriptor_dim);
    return kps;
  }

  void collect(ag::ParamStore<S>& ps) {
    const std::string p = "kp";
    enc1a_.collect(ps, p + ".enc1a");
    bn1a_.collect(ps, p + ".bn1a");
    enc1b_.collect(ps, p + ".enc1b");
    bn1b_.collect(ps, p + ".bn1b");
    enc2a_.collect(ps, p + ".enc2a");
    bn2a_.collect(ps, p + ".bn2a");
    enc2b_.collect(ps, p + ".enc2b");
    bn2b_.collect(ps, p + ".bn2b");
    enc3a_.collect(ps, p + ".enc3a");
    bn3a_.collect(ps, p + ".bn3a");
    enc3b_.collect(ps, p + ".enc3b");
    bn3b_.collect(ps, p + ".bn3b");
    enc4a_.collect(ps, p + ".enc4a");
    bn4a_.collect(ps, p + ".bn4a");
    enc4b_.collect(ps, p + ".enc4b");
    bn4b_.collect(ps, p + ".bn4b");
    score_a_.collect(ps, p + ".score_a");
    score_bn_.collect(ps, p + ".score_bn");
    score_b_.collect(ps, p + ".score_b");
    loc_a_.collect(ps, p + ".loc_a");
    loc_bn_.collect(ps, p + ".loc_bn");
    loc_b_.collect(ps, p + ".loc_b");
    desc_a_.collect(ps, p + ".desc_a");
    desc_bn_a_.collect(ps, p + ".desc_bn_a");
    desc_b_.collect(ps, p + ".desc_b");
    desc_bn_b_.collect(ps, p + ".desc_bn_b");
    if (cfg_.descriptor_upsample) {
      desc_c_.collect(ps, p + ".desc_c");
      desc_bn_c_.collect(ps, p + ".desc_bn_c");
    }
    desc_d_.collect(ps, p + ".desc_d");
  }

  /// Parameters of the descriptor head only (gradient-reach checks).
  void collect_descriptor_head(ag::ParamStore<S>& ps) {
    desc_a_.collect(ps, "kp.desc_a");
    desc_b_.collect(ps, "kp.desc_b");
    if (cfg_.descriptor_upsample) desc_c_.collect(ps, "kp.desc_c");
    desc_d_.collect(ps, "kp.desc_d");
  }
  void collect_score_head(ag::ParamStore<S>& ps) {
    score_a_.collect(ps, "kp.score_a");
    score_b_.collect(ps, "kp.score_b");
  }
  void collect_location_head(ag::ParamStore<S>& ps) {
    loc_a_.collect(ps, "kp.loc_a");
    loc_b_.collect(ps, "kp.loc_b");
  }

 private:
  using Conv2dLayer = ag::Conv2dLayer<S>;
  using BatchNorm2dLayer = ag::BatchNorm2dLayer<S>;

  KeypointNetConfig cfg_;
  Conv2dLayer enc1a_, enc1b_, enc2a_, enc2b_, enc3a_, enc3b_, enc4a_, enc4b_;
  BatchNorm2dLayer bn1a_, bn1b_, bn2a_, bn2b_, bn3a_, bn3b_, bn4a_, bn4b_;
  Conv2dLayer score_a_, score_b_, loc_a_, loc_b_;
  BatchNorm2dLayer score_bn_, loc_bn_;
  Conv2dLayer desc_a_, desc_b_, desc_c_, desc_d_;
  BatchNorm2dLayer desc_bn_a_, desc_bn_b_, desc_bn_c_;
};

}  // namespace kpl
