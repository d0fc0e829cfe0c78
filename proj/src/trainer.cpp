#include "kpl/train/trainer.hpp"

#include "kpl/geometry/warp_autograd.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>

namespace kpl {

Variant Variant::parse(const std::string& name) {
  if (name == "V0") return {false, false, false, true};
  if (name == "V1") return {true, false, false, true};
  if (name == "V2") return {true, true, false, true};
  if (name == "V3") return {true, true, true, false};
  if (name == "V4") return {true, true, true, true};
  throw std::invalid_argument("unknown ablation variant: " + name + " (expected V0..V4)");
}

namespace {

using S = Trainer::S;

Points<S> rows_as_points(const Tensor<S>& t) {
  const int n = t.dim(0);
  Points<S> out(n, 2);
  auto m = t.mat(n, 2);
  for (int i = 0; i < n; ++i) {
    out(i, 0) = m(i, 0);
    out(i, 1) = m(i, 1);
  }
  return out;
}

float grad_norm(ag::ParamStore<S>& store) {
  double acc = 0;
  for (auto& [name, p] : store.params)
    if (p.has_grad()) acc += (double)p.grad().array().square().sum();
  return (float)std::sqrt(acc);
}

// Normalized [5,K] IO-Net input rows from selected source/target keypoints.
ag::Var<S> assemble_io_rows(const ag::Var<S>& locs_s, const ag::Var<S>& locs_t, const ag::Var<S>& f_s,
                            const ag::Var<S>& f_t, const std::vector<int>& src_idx,
                            const std::vector<int>& tgt_idx, ImageSize size) {
  const int k = (int)src_idx.size();
  auto ts = ag::transpose2d(ag::gather_rows(locs_s, src_idx));  // [2,K]
  auto tt = ag::transpose2d(ag::gather_rows(locs_t, tgt_idx));
  const S au = S(2) / S(size.width - 1), av = S(2) / S(size.height - 1);
  auto us = ag::affine(ag::gather_rows(ts, {0}), au, S(-1));
  auto vs = ag::affine(ag::gather_rows(ts, {1}), av, S(-1));
  auto ut = ag::affine(ag::gather_rows(tt, {0}), au, S(-1));
  auto vt = ag::affine(ag::gather_rows(tt, {1}), av, S(-1));
  auto x = ag::reshape(ag::rowwise_norm(ag::sub(ag::gather_rows(f_s, src_idx), ag::gather_rows(f_t, tgt_idx))),
                       {1, k});
  return ag::vstack<S>({us, vs, ut, vt, x});
}

}  // namespace

Trainer::Trainer(TrainerSetup setup) : setup_(std::move(setup)) {
  setup_.train.validate();
  setup_.loss.validate();
  setup_.geo.validate();
  setup_.photo.validate();
  variant_ = Variant::parse(setup_.train.ablation);
  setup_.kp.cross_border = variant_.cross_border;
  setup_.kp.descriptor_upsample = variant_.upsample;
  setup_.kp.validate();
  setup_.io.validate();

  Rng init_rng(mix_seed(setup_.train.seed, 0x696e6974ull));
  net_ = KeypointNet<S>(setup_.kp, init_rng);
  ionet_ = IoNet<S>(setup_.io, init_rng);

  ag::ParamStore<S> store;
  net_.collect(store);
  ionet_.collect(store);
  adam_ = Adam<S>(store.params, (S)setup_.train.learning_rate);
}

double Trainer::current_lr() const {
  const int completed = epoch_;  // epochs finished so far
  return setup_.train.learning_rate * (completed >= setup_.train.lr_halve_epoch ? 0.5 : 1.0);
}

TrainingPair Trainer::make_pair(const Image<S>& base, uint64_t seed) const {
  const ImageSize size = image_size(base);
  TrainingPair pair;
  pair.seed = seed;
  pair.h = sample_homography<S>(setup_.geo, size, mix_seed(seed, 1));
  auto [warped, mask] = warp_image<S>(base, pair.h, size);
  pair.source = apply_photometric<S>(base, setup_.photo, mix_seed(seed, 2));
  pair.target = apply_photometric<S>(warped, setup_.photo, mix_seed(seed, 3));
  return pair;
}

StepLosses Trainer::train_step(const std::vector<TrainingPair>& batch, uint64_t step_seed) {
  return build_and_step(batch, step_seed);
}

StepLosses Trainer::build_and_step(const std::vector<TrainingPair>& batch, uint64_t step_seed) {
  StepLosses out;
  if (batch.empty()) return out;
  const ImageSize size{batch[0].source.dim(1), batch[0].source.dim(2)};
  const LossConfig& lc = setup_.loss;
  const LossGates gates{variant_.use_desc, variant_.use_io};

  adam_.zero_grad();
  std::vector<ag::Var<S>> pair_totals;
  std::vector<ag::Var<S>> comp_loc, comp_desc, comp_score, comp_io;

  for (size_t b = 0; b < batch.size(); ++b) {
    const TrainingPair& pair = batch[b];
    const uint64_t pair_seed = mix_seed(step_seed, (uint64_t)b);

    // the two frames share no mutable state during the forward passes;
    // running-statistic updates are collected and applied in frame order
    Rng rng_s(mix_seed(pair_seed, 0xa)), rng_t(mix_seed(pair_seed, 0xb));
    ag::StatsCollector<S> stats_s, stats_t;
    auto fut = std::async(std::launch::async,
                          [&] { return net_.forward(pair.source, true, rng_s, &stats_s); });
    DenseOutputs<S> out_t = net_.forward(pair.target, true, rng_t, &stats_t);
    DenseOutputs<S> out_s = fut.get();
    for (auto& u : stats_s) u.apply();
    for (auto& u : stats_t) u.apply();

    const int n = out_s.cells_y * out_s.cells_x;
    ag::Var<S> locs_s = cell_to_image(out_s.offsets, setup_.kp);
    ag::Var<S> locs_t = cell_to_image(out_t.offsets, setup_.kp);
    ag::Var<S> scores_s = ag::reshape(out_s.score, {n, 1});
    ag::Var<S> scores_t = ag::reshape(out_t.score, {n, 1});
    ag::Var<S> warped = ag::warp_points(locs_s, pair.h);

    const Points<S> warped_pts = rows_as_points(warped.value());
    const Points<S> target_pts = rows_as_points(locs_t.value());
    Association<S> assoc = associate<S>(warped_pts, target_pts, (S)lc.eps_uv, size);
    if (assoc.empty()) {
      ++out.skipped_pairs;
      continue;
    }

    ag::Var<S> l_loc = loc_loss(warped, locs_t, assoc);
    ag::Var<S> l_score = score_loss(scores_s, scores_t, warped, locs_t, assoc);

    ag::Var<S> f_s = sample_descriptors(out_s.descriptors, locs_s, size);
    ag::Var<S> f_t = sample_descriptors(out_t.descriptors, locs_t, size);

    ag::Var<S> l_desc;
    if (gates.desc) {
      std::vector<int> in_view;
      const std::vector<char> mask = in_bounds_mask<S>(warped_pts, size);
      for (int i = 0; i < n; ++i)
        if (mask[(size_t)i]) in_view.push_back(i);
      if (!in_view.empty()) {
        ag::Var<S> anchors = ag::gather_rows(f_s, in_view);
        ag::Var<S> warped_in = ag::gather_rows(warped, in_view);
        ag::Var<S> positives = sample_descriptors(out_t.descriptors, warped_in, size);
        Points<S> positive_locs(in_view.size(), 2);
        for (size_t k = 0; k < in_view.size(); ++k) positive_locs.row((Eigen::Index)k) = warped_pts.row(in_view[k]);
        auto l = triplet_loss<S>(anchors, positives, f_t, positive_locs, target_pts, (S)lc.margin,
                                 (S)lc.relax_c);
        if (l) l_desc = *l;
      }
    }

    ag::Var<S> l_io;
    if (gates.io) {
      KeypointSet<S> src_view, tgt_view;
      src_view.locations = rows_as_points(locs_s.value());
      src_view.scores.resize(n);
      for (int i = 0; i < n; ++i) src_view.scores[i] = out_s.score.value()[i];
      src_view.descriptors = f_s.value().mat(n, setup_.kp.descriptor_dim);
      tgt_view.locations = target_pts;
      tgt_view.scores.resize(n);
      for (int i = 0; i < n; ++i) tgt_view.scores[i] = out_t.score.value()[i];
      tgt_view.descriptors = f_t.value().mat(n, setup_.kp.descriptor_dim);

      auto [src_idx, tgt_idx] = select_io_pairs<S>(src_view, tgt_view, setup_.io.mining_k);
      std::vector<S> labels = io_labels<S>(warped_pts, target_pts, src_idx, tgt_idx, (S)lc.eps_uv);
      ag::Var<S> rows = assemble_io_rows(locs_s, locs_t, f_s, f_t, src_idx, tgt_idx, size);
      ag::Var<S> r = ionet_.forward(rows, true);
      l_io = io_loss<S>(r, labels);
    }

    ag::Var<S> total = total_loss<S>(l_loc, l_desc, l_score, l_io, lc, gates);
    pair_totals.push_back(total);
    comp_loc.push_back(l_loc);
    comp_score.push_back(l_score);
    if (l_desc.defined()) comp_desc.push_back(l_desc);
    if (l_io.defined()) comp_io.push_back(l_io);
    ++out.valid_pairs;
  }

  if (pair_totals.empty()) return out;

  ag::Var<S> batch_loss = pair_totals[0];
  for (size_t i = 1; i < pair_totals.size(); ++i) batch_loss = ag::add(batch_loss, pair_totals[i]);
  batch_loss = ag::scale(batch_loss, S(1) / (S)pair_totals.size());

  auto mean_of = [](const std::vector<ag::Var<S>>& vs) {
    if (vs.empty()) return 0.0f;
    double acc = 0;
    for (const auto& v : vs) acc += (double)v.value()[0];
    return (float)(acc / (double)vs.size());
  };
  out.loc = mean_of(comp_loc);
  out.desc = mean_of(comp_desc);
  out.score = mean_of(comp_score);
  out.io = mean_of(comp_io);
  out.total = batch_loss.value()[0];

  batch_loss.backward();

  ag::ParamStore<S> head;
  net_.collect_location_head(head);
  out.grad_norm_loc_head = grad_norm(head);
  head = {};
  net_.collect_score_head(head);
  out.grad_norm_score_head = grad_norm(head);
  head = {};
  net_.collect_descriptor_head(head);
  out.grad_norm_desc_head = grad_norm(head);

  adam_.set_lr((S)current_lr());
  adam_.step();
  ++step_;
  out.stepped = true;
  return out;
}

void Trainer::save(const std::string& path) {
  Checkpoint ck;
  ck.meta.kp = setup_.kp;
  ck.meta.io = setup_.io;
  ck.meta.has_ionet = true;
  ck.meta.epoch = epoch_;
  ck.meta.step = step_;
  ck.meta.variant = setup_.train.ablation;
  ck.meta.seed = setup_.train.seed;
  ck.meta.lr = adam_.lr();

  ag::ParamStore<S> store;
  net_.collect(store);
  ionet_.collect(store);
  for (auto& [name, p] : store.params) ck.params.emplace(name, p.value());
  for (auto& [name, buf] : store.buffers) ck.buffers.emplace(name, *buf);
  const auto& params = adam_.params();
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& slot = adam_.slots()[i];
    if (slot.t == 0) continue;
    ck.adam_m.emplace(params[i].first, slot.m);
    ck.adam_v.emplace(params[i].first, slot.v);
    ck.adam_t.emplace(params[i].first, slot.t);
  }
  write_checkpoint(path, ck);
}

void Trainer::restore(const std::string& path) {
  Checkpoint ck = read_checkpoint(path);
  if (!(ck.meta.kp == setup_.kp))
    throw std::runtime_error("restore: checkpoint keypoint-net config does not match the current setup");
  if (!(ck.meta.io == setup_.io))
    throw std::runtime_error("restore: checkpoint ionet config does not match the current setup");
  ag::ParamStore<S> store;
  net_.collect(store);
  ionet_.collect(store);
  fill_params(store, ck);
  const auto& params = adam_.params();
  for (size_t i = 0; i < params.size(); ++i) {
    auto it = ck.adam_t.find(params[i].first);
    if (it == ck.adam_t.end()) continue;
    auto& slot = adam_.slots()[i];
    slot.t = it->second;
    slot.m = ck.adam_m.at(params[i].first);
    slot.v = ck.adam_v.at(params[i].first);
  }
  epoch_ = ck.meta.epoch;
  step_ = ck.meta.step;
}

FitResult Trainer::fit(Corpus& corpus, const std::string& out_dir,
                       const std::function<void(int, const StepLosses&)>& on_step) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const TrainConfig& tc = setup_.train;
  std::ofstream log(fs::path(out_dir) / "train_log.jsonl", epoch_ == 0 ? std::ios::trunc : std::ios::app);
  if (!log) throw std::runtime_error("fit: cannot open training log in " + out_dir);

  FitResult result;
  const int batch = std::min(tc.batch_size, corpus.size());
  const int steps_per_epoch = std::max(1, corpus.size() / batch);

  for (; epoch_ < tc.epochs; ++epoch_) {
    std::vector<int> order((size_t)corpus.size());
    for (int i = 0; i < corpus.size(); ++i) order[(size_t)i] = i;
    Rng shuffle_rng(mix_seed(tc.seed, 0xe70c, (uint64_t)epoch_));
    shuffle_rng.shuffle(order);

    for (int s = 0; s < steps_per_epoch; ++s) {
      std::vector<TrainingPair> pairs;
      pairs.reserve((size_t)batch);
      for (int k = 0; k < batch; ++k) {
        const int idx = order[(size_t)((s * batch + k) % corpus.size())];
        const uint64_t pair_seed = mix_seed(tc.seed, (uint64_t)epoch_ * 1000003ull + (uint64_t)(s * batch + k));
        pairs.push_back(make_pair(corpus.load(idx), pair_seed));
      }
      const uint64_t step_seed = mix_seed(tc.seed, 0x57e9, (uint64_t)step_);
      StepLosses losses = train_step(pairs, step_seed);
      if (!losses.stepped) {
        ++result.skipped_steps;
        std::cerr << "warning: step skipped (no valid associations), epoch " << epoch_ + 1 << "\n";
      }
      ++result.steps;

      nlohmann::json rec = {{"step", step_},
                            {"epoch", epoch_ + 1},
                            {"lr", current_lr()},
                            {"loc", losses.loc},
                            {"desc", losses.desc},
                            {"score", losses.score},
                            {"io", losses.io},
                            {"total", losses.total},
                            {"valid_pairs", losses.valid_pairs},
                            {"skipped_pairs", losses.skipped_pairs}};
      log << rec.dump() << "\n";
      if (on_step) on_step((int)step_, losses);
      if (tc.log_every > 0 && result.steps % tc.log_every == 0) {
        std::cout << "epoch " << epoch_ + 1 << "/" << tc.epochs << " step " << step_ << " total "
                  << losses.total << " (loc " << losses.loc << " desc " << losses.desc << " score "
                  << losses.score << " io " << losses.io << ")\n";
      }
    }
    log.flush();

    if ((epoch_ + 1) % tc.checkpoint_every == 0 || epoch_ + 1 == tc.epochs) {
      const std::string path = (fs::path(out_dir) / ("checkpoint_epoch" + std::to_string(epoch_ + 1) + ".kpc")).string();
      const int saved_epoch = epoch_;
      epoch_ += 1;  // checkpoint records completed epochs
      save(path);
      epoch_ = saved_epoch;
      result.checkpoints.push_back(path);
      result.final_checkpoint = path;
    }
  }
  epoch_ = tc.epochs;
  return result;
}

}  // namespace kpl
