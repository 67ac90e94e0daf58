#pragma once

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>

#include "covrl/composite.hpp"
#include "covrl/estimators.hpp"
#include "covrl/tasks.hpp"

namespace covrl {

struct TrainingConfig {
  double alpha = 0.5;
  double clip_epsilon = 0.3;
  double lambda_kl = 1.0;
  double lambda_nll = 1.0;
  RewardVariant reward_variant = RewardVariant::log_prob_mean;
  double softclip_threshold = 10.0;
  int group_size = 8;
  int instances_per_batch = 16;
  int total_steps = 500;
  int warmup_steps = 20;
  double peak_lr = 0.02;
  uint64_t seed = 1;
  BaselineScope baseline_scope = BaselineScope::group;
  // Adam constants, pinned for determinism.
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // Evaluation cadence on the held-out set (greedy prior-mode decoding).
  int eval_every = 25;
  int eval_instances = 200;
  int checkpoint_every = 100;
  SamplingParams sampling;

  void validate() const;  // throws std::invalid_argument naming the field
};

struct StepMetrics {
  int64_t step = 0;
  double mean_reward_prior = 0.0;
  double mean_reward_posterior = 0.0;
  double mean_trace_length = 0.0;
  double nll_loss = 0.0;
  double kl_loss = 0.0;
  double surrogate_loss = 0.0;
  double clip_fraction = 0.0;
  double valid_format_fraction = 0.0;
  double lr = 0.0;
  double wall_time = 0.0;  // seconds; zeroed in deterministic mode
};

// One metrics line per step, fixed field order, %.17g values.
void write_metrics_line(std::ostream& out, const StepMetrics& m);
std::optional<StepMetrics> parse_metrics_line(const std::string& line);

struct EvalRecord {
  int64_t step = 0;
  double exact_match = 0.0;
  double mean_exact_kl = 0.0;     // per-token exact D_KL(p' || prior) on greedy traces
  double mean_trace_length = 0.0;
  double valid_fraction = 0.0;
};
void write_eval_line(std::ostream& out, const EvalRecord& r);

struct TrainState {
  PolicyModel model;
  int64_t step = 0;
  std::vector<double> moment1;
  std::vector<double> moment2;
  uint64_t seed = 0;
  std::vector<StepMetrics> metrics_history;
};

TrainState make_train_state(PolicyModel model, uint64_t seed);

// Thrown when a step produces a non-finite loss or gradient; carries a
// diagnostic dump of the offending batch.
struct TrainingAbort : std::runtime_error {
  explicit TrainingAbort(const std::string& what) : std::runtime_error(what) {}
};

struct LossBreakdown {
  double surrogate = 0.0;
  double nll = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double clip_fraction = 0.0;
  int nll_selected = 0;
  int kl_counted = 0;
};

// Clipped importance-weighted policy surrogate. Per trace token,
// ratio = exp(composite_logp_new - behavior_logp); the objective term is
// min(ratio*A, clamp(ratio, 1-eps, 1+eps)*A) and the loss is the negated
// mean over all tokens of all rollouts. Advantages are constants.
Tape::Var grpo_surrogate(Tape& tape, std::span<const ScoredRollout> rollouts,
                         const PolicyModel& model, const Vocabulary& vocab,
                         double clip_epsilon, LossBreakdown* stats = nullptr);

// Mean over rollouts with valid format and positive advantage of the
// per-token mean negative answer log-likelihood; zero node if none qualify.
Tape::Var selective_nll(Tape& tape, std::span<const ScoredRollout> rollouts,
                        const PolicyModel& model, const Vocabulary& vocab,
                        LossBreakdown* stats = nullptr);

// Mean over untruncated rollouts of the mode-matching sequence KL estimate
// (cumulative prefix weights, matching kl_estimate_prior/posterior); zero
// node when every rollout is truncated.
Tape::Var kl_loss(Tape& tape, std::span<const ScoredRollout> rollouts,
                  const PolicyModel& model, const Vocabulary& vocab, double threshold,
                  LossBreakdown* stats = nullptr);

// surrogate + lambda_nll * selective_nll + lambda_kl * kl_loss.
Tape::Var total_loss(Tape& tape, std::span<const ScoredRollout> rollouts,
                     const PolicyModel& model, const Vocabulary& vocab,
                     const TrainingConfig& config, LossBreakdown* stats = nullptr);

// Unclipped sequence-weighted REINFORCE loss for one rollout:
// -exp(sum composite - sum behavior) * reward, reward constant. Its
// gradient is the exact single-sample estimate of the reconstruction-term
// gradient under hybrid sampling; enumeration oracles validate it.
Tape::Var iw_reinforce_loss(Tape& tape, const ScoredRollout& rollout,
                            const PolicyModel& model, const Vocabulary& vocab);

// Linear warmup to peak_lr over warmup_steps, then cosine decay to zero at
// total_steps.
double lr_at(int64_t step, const TrainingConfig& config);

// One Adam update of the state's parameters at lr_at(state.step); leaves
// the step counter alone.
void apply_adam_update(TrainState& state, const GradientVector& grad,
                       const TrainingConfig& config);

StepMetrics train_step(TrainState& state, std::span<const TaskInstance> instances,
                       const Vocabulary& vocab, const TrainingConfig& config);

// Greedy prior-mode decoding; a hit requires valid format and an exact
// answer-span match.
struct EvalStats {
  double exact_match = 0.0;
  double mean_exact_kl = 0.0;
  double mean_trace_length = 0.0;
  double valid_fraction = 0.0;
};
EvalStats evaluate_exact_match(const PolicyModel& model, const Vocabulary& vocab,
                               std::span<const TaskInstance> instances,
                               const SamplingParams& sampling);

struct RunOptions {
  std::string output_dir;  // empty = no files written
  bool deterministic = false;
  std::string resume_checkpoint;  // empty = fresh start
};

struct TrainResult {
  TrainState state;
  std::vector<EvalRecord> eval_history;
  std::string checkpoint_path;  // final checkpoint when output_dir set
};

TrainResult run_training(const TrainingConfig& config, const TaskSpec& task,
                         const PolicyModel& init, const RunOptions& options);

// Training checkpoint: model checkpoint plus step, seed, and both moment
// vectors; bit-exact round trip. Resuming reproduces the unbroken run.
void save_train_state(const TrainState& state, const std::string& path);
TrainState load_train_state(const std::string& path);

}  // namespace covrl
