#pragma once

#include "kpl/eval/hpatches.hpp"
#include "kpl/eval/metrics.hpp"
#include "kpl/eval/ransac.hpp"
#include "kpl/model/keypoint_net.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <string>

namespace kpl {

struct EvalConfig {
  double correctness_threshold = 3.0;
  std::vector<double> homography_thresholds = {1.0, 3.0, 5.0};
  int top_k = 0;  // 0: 300 below 480 rows, 1000 at 480 and up
  int ransac_max_iters = 5000;
  double ransac_confidence = 0.9995;
  double ransac_error_threshold = 3.0;
  std::vector<uint64_t> seeds = {0};
  int height = 240;
  int width = 320;
  std::string subset = "all";  // all | illumination | viewpoint

  int effective_top_k() const { return top_k > 0 ? top_k : (height >= 480 ? 1000 : 300); }

  void validate() const {
    if (correctness_threshold <= 0) throw std::invalid_argument("eval: correctness threshold must be > 0");
    for (double t : homography_thresholds)
      if (t <= 0) throw std::invalid_argument("eval: homography thresholds must be > 0");
    if (effective_top_k() < 4) throw std::invalid_argument("eval: top_k must be >= 4");
    if (seeds.empty()) throw std::invalid_argument("eval: at least one seed required");
    if (height % 8 || width % 8)
      throw std::invalid_argument("eval: resolution " + std::to_string(height) + "x" + std::to_string(width) +
                                  " must be divisible by 8");
    if (subset != "all" && subset != "illumination" && subset != "viewpoint")
      throw std::invalid_argument("eval: subset must be all|illumination|viewpoint");
    RansacConfig rc{ransac_max_iters, ransac_confidence, ransac_error_threshold};
    rc.validate();
  }
};

/// Per image pair metrics (homography accuracy per seed).
struct PairReport {
  std::string sequence;
  char subset = '?';
  int target_index = 0;
  double repeatability = 0;
  bool repeatability_defined = false;
  std::optional<double> localization_error;
  double matching_score = 0;
  int matches = 0;
  std::vector<std::vector<char>> cor_per_seed;  // [seed][threshold]
  double mean_corner_error = 0;
};

struct EvalAggregate {
  int pairs = 0;
  double repeatability = 0;
  double localization_error = 0;
  double matching_score = 0;
  std::vector<double> cor_mean, cor_std;  // per threshold, over seeds
};

struct EvalReport {
  EvalConfig config;
  EvalAggregate all, illumination, viewpoint;
  std::vector<PairReport> pairs;
  std::vector<std::string> skipped;

  nlohmann::json to_json() const;
  std::string table() const;
};

/// Reference aggregate from the published 240x320 protocol, emitted as a
/// comparison row next to computed results at that resolution.
struct ReferenceRow {
  static constexpr double repeatability = 0.686;
  static constexpr double localization_error = 0.890;
  static constexpr double cor1 = 0.591, cor3 = 0.867, cor5 = 0.912;
  static constexpr double matching_score = 0.544;
};

class Evaluator {
 public:
  Evaluator(KeypointNet<float>& net, EvalConfig cfg);

  /// Full dataset pass over an HPatches-layout directory.
  EvalReport evaluate_dataset(const std::string& dataset_path);

  /// One image pair with a known ground-truth homography (original-
  /// resolution inputs; resizing and conjugation happen inside).
  PairReport evaluate_pair(const Image<float>& ref, const Image<float>& target, const Homography<double>& gt,
                           const std::string& sequence_name = "", int target_index = 2);

  /// Metrics over already-extracted keypoint sets at the evaluation
  /// resolution; h maps the first frame into the second.
  PairReport evaluate_extracted(const KeypointSet<float>& kp_a, const KeypointSet<float>& kp_b,
                                const Homography<double>& h, const std::string& sequence_name = "",
                                int target_index = 2);

  /// Keypoints of an image at the evaluation resolution.
  KeypointSet<float> extract(const Image<float>& image_at_eval_res);

  /// Observes every evaluated pair (plot emission and the like).
  struct PairContext {
    const KeypointSet<float>& kp_a;
    const KeypointSet<float>& kp_b;
    const std::vector<std::pair<int, int>>& matches;
    const Homography<double>& h;
    const std::string& sequence;
    int target_index;
  };
  void set_pair_hook(std::function<void(const PairContext&)> hook) { pair_hook_ = std::move(hook); }

 private:
  KeypointNet<float>& net_;
  EvalConfig cfg_;
  std::function<void(const Evaluator::PairContext&)> pair_hook_;
};

}  // namespace kpl
