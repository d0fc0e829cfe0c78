#pragma once

#include "kpl/geometry/photometric.hpp"
#include "kpl/ionet/io_net.hpp"
#include "kpl/losses/losses.hpp"
#include "kpl/model/keypoint_net.hpp"
#include "kpl/train/adam.hpp"
#include "kpl/train/checkpoint.hpp"
#include "kpl/train/corpus.hpp"

#include <functional>
#include <optional>

namespace kpl {

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 50;
  int batch_size = 8;
  int lr_halve_epoch = 40;  // halve once after this many completed epochs
  int image_height = 240;
  int image_width = 320;
  std::string ablation = "V4";
  uint64_t seed = 0;
  int checkpoint_every = 1;  // epochs
  int log_every = 10;        // steps, stdout progress

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (lr_halve_epoch >= epochs) throw std::invalid_argument("lr_halve_epoch must be < epochs");
    if (image_height % 8 || image_width % 8)
      throw std::invalid_argument("training resolution must be divisible by 8");
    if (learning_rate <= 0) throw std::invalid_argument("learning_rate must be > 0");
  }
};

/// Ablation gating: which architecture switches and loss components are on.
struct Variant {
  bool cross_border = true;
  bool upsample = true;
  bool use_io = true;
  bool use_desc = true;

  static Variant parse(const std::string& name);
};

/// One synthetic supervision pair: the same photometric pipeline applied
/// independently to the base frame and to its known-homography warp.
struct TrainingPair {
  Image<float> source, target;
  Homography<float> h;
  uint64_t seed = 0;
};

struct StepLosses {
  float loc = 0, desc = 0, score = 0, io = 0, total = 0;
  int valid_pairs = 0;
  int skipped_pairs = 0;
  bool stepped = false;
  float grad_norm_loc_head = 0, grad_norm_score_head = 0, grad_norm_desc_head = 0;
};

struct TrainerSetup {
  TrainConfig train;
  KeypointNetConfig kp;
  IoNetConfig io;
  LossConfig loss;
  HomographyConfig geo;
  PhotometricConfig photo;
};

struct FitResult {
  std::string final_checkpoint;
  std::vector<std::string> checkpoints;
  int steps = 0;
  int skipped_steps = 0;
};

/// Joint self-supervised training of the keypoint network and the
/// inlier/outlier classifier on warped image pairs.
class Trainer {
 public:
  using S = float;

  explicit Trainer(TrainerSetup setup);

  /// Resumes state (weights, optimizer moments, epoch/step counters) from a
  /// checkpoint; configs must match the current setup.
  void restore(const std::string& checkpoint_path);

  TrainingPair make_pair(const Image<S>& base, uint64_t seed) const;

  /// One optimizer step over a batch of pairs. Pairs with an empty
  /// association are skipped; if every pair is empty no step is taken.
  StepLosses train_step(const std::vector<TrainingPair>& batch, uint64_t step_seed);

  /// Full schedule over a corpus; checkpoints and a JSONL loss log land in
  /// out_dir. `on_step` (optional) observes every step.
  FitResult fit(Corpus& corpus, const std::string& out_dir,
                const std::function<void(int step, const StepLosses&)>& on_step = nullptr);

  void save(const std::string& path);

  KeypointNet<S>& net() { return net_; }
  IoNet<S>& ionet() { return ionet_; }
  const TrainerSetup& setup() const { return setup_; }
  const Variant& variant() const { return variant_; }
  int epoch() const { return epoch_; }
  int64_t step_count() const { return step_; }
  double current_lr() const;

 private:
  StepLosses build_and_step(const std::vector<TrainingPair>& batch, uint64_t step_seed);

  TrainerSetup setup_;
  Variant variant_;
  KeypointNet<S> net_;
  IoNet<S> ionet_;
  Adam<S> adam_;
  int epoch_ = 0;
  int64_t step_ = 0;
};

}  // namespace kpl
