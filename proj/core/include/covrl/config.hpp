#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "covrl/policy.hpp"
#include "covrl/tasks.hpp"
#include "covrl/training.hpp"

namespace covrl {

// Parse or validation failure with enough context to point at the offending
// line of a config file. line 0 means the problem is not line-specific.
struct ConfigError : std::runtime_error {
  int line;
  std::string field;
  ConfigError(int line_no, std::string field_name, const std::string& message);
};

struct ModelConfig {
  Backend backend = Backend::neural;
  int context_length = 64;
  // Output-bias added to THINK_CLOSE at init (neural only) so fresh models
  // produce short spans, standing in for a pretrained model's format prior.
  double close_bias = 2.0;
  ArchConfig arch;
};

// Resolved run description: one flat key=value file, explicit schema,
// unknown keys rejected. Snapshots written by write_config_snapshot parse
// back into an identical RunConfig.
struct RunConfig {
  std::string command = "train";
  TrainingConfig training;
  TaskSpec task;
  ModelConfig model;
  std::string output_dir;
  bool deterministic = false;
  std::string resume;
  std::string sweep_axis;
  std::vector<std::string> sweep_values;
  std::vector<std::string> methods;
  double latro_beta = 0.0;
  bool seed_provided = false;

  // Cross-field checks plus per-command requirements (train/sweep demand an
  // explicit seed; sweep demands axis and values).
  void validate() const;
};

RunConfig parse_config_text(std::istream& in, const std::string& origin);
RunConfig parse_config_file(const std::string& path);

// Full resolved schema, every key explicit, doubles at %.17g.
void write_config_snapshot(std::ostream& out, const RunConfig& config);

// Fresh model for the run's task vocabulary, seeded from the training seed.
PolicyModel build_model(const RunConfig& config);

}  // namespace covrl
