#include "kpl/eval/evaluator.hpp"

#include "kpl/io/image_io.hpp"

#include <cmath>
#include <iostream>
#include <sstream>

namespace kpl {

namespace {

// Forward map of half-pixel-aligned bilinear resize, as a homography.
Homography<double> resize_map(ImageSize from, ImageSize to) {
  const double ax = (double)to.width / from.width;
  const double ay = (double)to.height / from.height;
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 0) = ax;
  m(1, 1) = ay;
  m(0, 2) = (ax - 1.0) / 2.0;
  m(1, 2) = (ay - 1.0) / 2.0;
  return Homography<double>::from_matrix(m);
}

Points<double> to_double(const Points<float>& p) { return p.cast<double>(); }

void accumulate_aggregate(EvalAggregate& agg, const std::vector<const PairReport*>& pairs, int thresholds,
                          int seeds) {
  agg.pairs = (int)pairs.size();
  agg.cor_mean.assign((size_t)thresholds, 0.0);
  agg.cor_std.assign((size_t)thresholds, 0.0);
  if (pairs.empty()) return;
  int rep_n = 0, loc_n = 0;
  double rep = 0, loc = 0, ms = 0;
  for (const PairReport* p : pairs) {
    if (p->repeatability_defined) {
      rep += p->repeatability;
      ++rep_n;
    }
    if (p->localization_error) {
      loc += *p->localization_error;
      ++loc_n;
    }
    ms += p->matching_score;
  }
  agg.repeatability = rep_n ? rep / rep_n : 0.0;
  agg.localization_error = loc_n ? loc / loc_n : 0.0;
  agg.matching_score = ms / (double)pairs.size();

  for (int t = 0; t < thresholds; ++t) {
    std::vector<double> per_seed((size_t)seeds, 0.0);
    for (int s = 0; s < seeds; ++s) {
      int correct = 0;
      for (const PairReport* p : pairs) correct += p->cor_per_seed[(size_t)s][(size_t)t];
      per_seed[(size_t)s] = (double)correct / (double)pairs.size();
    }
    double mean = 0;
    for (double v : per_seed) mean += v;
    mean /= (double)seeds;
    double var = 0;
    for (double v : per_seed) var += (v - mean) * (v - mean);
    agg.cor_mean[(size_t)t] = mean;
    agg.cor_std[(size_t)t] = seeds > 1 ? std::sqrt(var / (seeds - 1)) : 0.0;
  }
}

}  // namespace

Evaluator::Evaluator(KeypointNet<float>& net, EvalConfig cfg) : net_(net), cfg_(std::move(cfg)) {
  cfg_.validate();
}

KeypointSet<float> Evaluator::extract(const Image<float>& image) {
  ag::NoGradGuard ng;
  Rng rng(0);
  DenseOutputs<float> out = net_.forward(image, false, rng);
  return net_.extract_keypoints(out, cfg_.effective_top_k());
}

PairReport Evaluator::evaluate_pair(const Image<float>& ref, const Image<float>& target,
                                    const Homography<double>& gt, const std::string& sequence_name,
                                    int target_index) {
  const ImageSize eval_size{cfg_.height, cfg_.width};
  const Homography<double> a_ref = resize_map(image_size(ref), eval_size);
  const Homography<double> a_tgt = resize_map(image_size(target), eval_size);
  const Homography<double> h = compose(a_tgt, compose(gt, a_ref.inverse()));

  KeypointSet<float> kp_a = extract(resize_bilinear<float>(ref, eval_size));
  KeypointSet<float> kp_b = extract(resize_bilinear<float>(target, eval_size));
  return evaluate_extracted(kp_a, kp_b, h, sequence_name, target_index);
}

PairReport Evaluator::evaluate_extracted(const KeypointSet<float>& kp_a, const KeypointSet<float>& kp_b,
                                         const Homography<double>& h, const std::string& sequence_name,
                                         int target_index) {
  const ImageSize eval_size{cfg_.height, cfg_.width};
  PairReport report;
  report.sequence = sequence_name;
  report.target_index = target_index;

  const Points<double> pa = to_double(kp_a.locations);
  const Points<double> pb = to_double(kp_b.locations);
  const double tau = cfg_.correctness_threshold;

  auto rep = repeatability<double>(pa, pb, h, eval_size, eval_size, tau);
  report.repeatability = rep.value;
  report.repeatability_defined = rep.defined;
  report.localization_error = localization_error<double>(rep.ab, rep.ba, tau);

  const auto matches = match_descriptors<float>(kp_a.descriptors, kp_b.descriptors);
  report.matches = (int)matches.size();
  report.matching_score = matching_score<double>(matches, pa, pb, h, eval_size, eval_size, tau);

  Points<double> ma((Eigen::Index)matches.size(), 2), mb((Eigen::Index)matches.size(), 2);
  for (size_t k = 0; k < matches.size(); ++k) {
    ma.row((Eigen::Index)k) = pa.row(matches[k].first);
    mb.row((Eigen::Index)k) = pb.row(matches[k].second);
  }
  RansacConfig rc{cfg_.ransac_max_iters, cfg_.ransac_confidence, cfg_.ransac_error_threshold};
  double err_sum = 0;
  for (uint64_t seed : cfg_.seeds) {
    RansacResult rr = estimate_homography(ma, mb, rc, seed);
    HomographyAccuracy acc = homography_accuracy(rr.h, h, eval_size, cfg_.homography_thresholds);
    report.cor_per_seed.push_back(acc.correct);
    err_sum += std::isfinite(acc.corner_error) ? acc.corner_error : 1e9;
  }
  report.mean_corner_error = err_sum / (double)cfg_.seeds.size();

  if (pair_hook_) {
    PairContext ctx{kp_a, kp_b, matches, h, sequence_name, target_index};
    pair_hook_(ctx);
  }
  return report;
}

EvalReport Evaluator::evaluate_dataset(const std::string& dataset_path) {
  HpatchesDataset data = scan_hpatches(dataset_path);
  EvalReport report;
  report.config = cfg_;
  report.skipped = data.skipped;
  const ImageSize eval_size{cfg_.height, cfg_.width};

  for (const auto& seq : data.sequences) {
    if (cfg_.subset == "illumination" && seq.subset != 'i') continue;
    if (cfg_.subset == "viewpoint" && seq.subset != 'v') continue;
    Image<float> ref;
    ImageSize ref_size{};
    KeypointSet<float> kp_ref;
    try {
      ref = load_image(seq.ref_image);
      ref_size = image_size(ref);
      kp_ref = extract(resize_bilinear<float>(ref, eval_size));
    } catch (const std::exception& e) {
      report.skipped.push_back(seq.name + ": " + e.what());
      continue;
    }
    for (size_t t = 0; t < seq.target_images.size(); ++t) {
      try {
        const Image<float> tgt = load_image(seq.target_images[t]);
        const Homography<double> gt = read_homography_file(seq.homography_files[t]);
        const Homography<double> a_ref = resize_map(ref_size, eval_size);
        const Homography<double> a_tgt = resize_map(image_size(tgt), eval_size);
        const Homography<double> h = compose(a_tgt, compose(gt, a_ref.inverse()));
        KeypointSet<float> kp_tgt = extract(resize_bilinear<float>(tgt, eval_size));
        PairReport pr = evaluate_extracted(kp_ref, kp_tgt, h, seq.name, seq.target_indices[t]);
        pr.subset = seq.subset;
        report.pairs.push_back(std::move(pr));
      } catch (const std::exception& e) {
        report.skipped.push_back(seq.name + "/" + std::to_string(seq.target_indices[t]) + ": " + e.what());
      }
    }
  }

  const int nt = (int)cfg_.homography_thresholds.size();
  const int ns = (int)cfg_.seeds.size();
  std::vector<const PairReport*> all, illum, view;
  for (const auto& p : report.pairs) {
    all.push_back(&p);
    if (p.subset == 'i') illum.push_back(&p);
    if (p.subset == 'v') view.push_back(&p);
  }
  accumulate_aggregate(report.all, all, nt, ns);
  accumulate_aggregate(report.illumination, illum, nt, ns);
  accumulate_aggregate(report.viewpoint, view, nt, ns);
  return report;
}

nlohmann::json EvalReport::to_json() const {
  auto agg_json = [&](const EvalAggregate& a) {
    return nlohmann::json{{"pairs", a.pairs},
                          {"repeatability", a.repeatability},
                          {"localization_error", a.localization_error},
                          {"matching_score", a.matching_score},
                          {"cor_mean", a.cor_mean},
                          {"cor_std", a.cor_std}};
  };
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : this->pairs) {
    nlohmann::json cors = nlohmann::json::array();
    for (const auto& seed_row : p.cor_per_seed) {
      nlohmann::json row = nlohmann::json::array();
      for (char c : seed_row) row.push_back((bool)c);
      cors.push_back(row);
    }
    pairs.push_back({{"sequence", p.sequence},
                     {"target", p.target_index},
                     {"repeatability", p.repeatability},
                     {"repeatability_defined", p.repeatability_defined},
                     {"localization_error", p.localization_error ? nlohmann::json(*p.localization_error)
                                                                 : nlohmann::json(nullptr)},
                     {"matching_score", p.matching_score},
                     {"matches", p.matches},
                     {"mean_corner_error", p.mean_corner_error},
                     {"cor_per_seed", cors}});
  }
  return {{"resolution", std::to_string(config.height) + "x" + std::to_string(config.width)},
          {"top_k", config.effective_top_k()},
          {"correctness_threshold", config.correctness_threshold},
          {"homography_thresholds", config.homography_thresholds},
          {"seeds", config.seeds},
          {"subset", config.subset},
          {"aggregate", {{"all", agg_json(all)}, {"illumination", agg_json(illumination)}, {"viewpoint", agg_json(viewpoint)}}},
          {"pairs", pairs},
          {"skipped", skipped}};
}

std::string EvalReport::table() const {
  std::ostringstream out;
  char line[256];
  out << "subset          pairs  Repeat  Loc ";
  for (double t : config.homography_thresholds) {
    std::snprintf(line, sizeof(line), "  Cor-%g        ", t);
    out << line;
  }
  out << " M.Score\n";
  auto row = [&](const std::string& name, const EvalAggregate& a) {
    std::snprintf(line, sizeof(line), "%-15s %5d  %.3f   %.3f", name.c_str(), a.pairs, a.repeatability,
                  a.localization_error);
    out << line;
    for (size_t t = 0; t < a.cor_mean.size(); ++t) {
      std::snprintf(line, sizeof(line), "  %.3f+-%.3f", a.cor_mean[t], a.cor_std[t]);
      out << line;
    }
    std::snprintf(line, sizeof(line), "  %.3f\n", a.matching_score);
    out << line;
  };
  row("all", all);
  if (illumination.pairs) row("illumination", illumination);
  if (viewpoint.pairs) row("viewpoint", viewpoint);
  if (config.height == 240 && config.width == 320 && config.subset == "all") {
    std::snprintf(line, sizeof(line),
                  "%-15s %5s  %.3f   %.3f  %.3f        %.3f        %.3f         %.3f (published protocol)\n",
                  "reference", "-", ReferenceRow::repeatability, ReferenceRow::localization_error,
                  ReferenceRow::cor1, ReferenceRow::cor3, ReferenceRow::cor5, ReferenceRow::matching_score);
    out << line;
  }
  return out.str();
}

}  // namespace kpl
