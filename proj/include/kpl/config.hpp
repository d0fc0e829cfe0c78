#pragma once

#include "kpl/eval/evaluator.hpp"
#include "kpl/train/trainer.hpp"

#include <json.hpp>

#include <map>
#include <string>
#include <vector>

namespace kpl {

/// Merged run configuration: every tunable field is reachable by a dotted
/// path (e.g. "train.learning_rate"), settable from a JSON config file and
/// from CLI flags, with per-field provenance (default/file/flag).
/// Precedence: flag > file > default.
struct RunConfig {
  HomographyConfig geo;
  PhotometricConfig photo;
  KeypointNetConfig kp;
  IoNetConfig io;
  LossConfig loss;
  TrainConfig train;
  EvalConfig eval;
  std::map<std::string, std::string> provenance;

  struct Field {
    std::string path;
    std::string type;  // double|int|bool|string|u64|list<double>|list<int>|list<u64>
    std::function<void(RunConfig&, const nlohmann::json&)> set;
    std::function<nlohmann::json(const RunConfig&)> get;
  };

  static const std::vector<Field>& fields();
  static const Field* find_field(const std::string& path);

  /// Loads a nested JSON file; unknown keys are rejected with their path.
  void load_file(const std::string& path);

  /// Applies one dotted-path override from a string value (flag source).
  void set_from_string(const std::string& path, const std::string& value, const std::string& source);

  /// Validates every sub-config; errors carry the field-group path.
  void validate() const;

  /// Full snapshot; provenance annotations included when requested.
  nlohmann::json to_json(bool with_provenance) const;

  TrainerSetup trainer_setup() const { return {train, kp, io, loss, geo, photo}; }
};

}  // namespace kpl
