#pragma once

#include "kpl/ionet/io_net.hpp"
#include "kpl/model/keypoint_net.hpp"
#include "kpl/train/adam.hpp"

#include <map>
#include <string>

namespace kpl {

/// Versioned binary weight container (little-endian): a JSON header with
/// the model configs and training counters, followed by named float32
/// tensors. IO-Net tensors are train-time-only and ignored by inference
/// loaders.
struct CheckpointMeta {
  KeypointNetConfig kp;
  IoNetConfig io;
  bool has_ionet = false;
  int epoch = 0;       // completed epochs
  int64_t step = 0;    // completed optimizer steps
  std::string variant = "V4";
  uint64_t seed = 0;
  double lr = 1e-3;
  std::string init = "fan_in_uniform";
};

struct Checkpoint {
  CheckpointMeta meta;
  std::map<std::string, Tensor<float>> params;
  std::map<std::string, Tensor<float>> buffers;
  std::map<std::string, Tensor<float>> adam_m, adam_v;
  std::map<std::string, int64_t> adam_t;
};

void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

/// Moves matching tensors into a collected parameter store; throws on
/// missing names or shape mismatches (config/weight disagreement).
void fill_params(ag::ParamStore<float>& store, const Checkpoint& ck);

/// Inference-side loader: rebuilds the keypoint network from the stored
/// config; never touches IO-Net tensors.
std::pair<KeypointNet<float>, CheckpointMeta> load_keypoint_net(const std::string& path);

}  // namespace kpl
