#pragma once

#include <optional>
#include <string>

#include "covrl/training.hpp"

namespace covrl {

// The five verifier-free comparison estimators. All of them sample whole
// rollouts from the prior layout except ravr, which samples from the
// posterior layout and couples back to the prior through its reward.
enum class BaselineMethod { jlb, latro, verifree, rlpr, ravr };

const char* baseline_method_name(BaselineMethod m);
BaselineMethod baseline_method_from_name(const std::string& name);

LayoutMode baseline_sampling_mode(BaselineMethod m);

struct BaselineSpec {
  BaselineMethod method = BaselineMethod::jlb;
  double beta = 0.0;  // latro KL coefficient
  // latro scores traces against this frozen snapshot; required iff latro.
  std::optional<PolicyModel> reference;
  // ravr reward baseline: mean prior-sample answer log-likelihood, held
  // constant inside the loss. Training re-estimates it every step; exact
  // checks pin it from enumeration.
  double ravr_baseline = 0.0;

  void validate() const;
};

// Surrogate whose gradient is the method's estimator, averaged over the
// batch. Reward-style coefficients are constants; gradient flows only
// through the trace and answer log-likelihood nodes:
//   jlb:      log p(y*) as reward on grad log p(z|x), plus unit-weight NLL
//   latro:    jlb reward minus beta * log(p(z|x)/p_ref(z|x)), plus NLL
//   verifree: sequence probability p(y*) as both reward and NLL weight
//   rlpr:     mean per-token answer probability on the joint grad log p(y*,z|x)
//   ravr:     clamped prior-baselined reward on grad log p(z|x), plus the
//             answer-gradient term weighted by a single-sample reverse-KL
//             (posterior vs prior) estimate, active only where the clamp is
// Every rollout must come from baseline_sampling_mode(method); a
// wrong-mode rollout is an error.
Tape::Var baseline_loss(Tape& tape, const BaselineSpec& spec,
                        std::span<const ScoredRollout> rollouts, const PolicyModel& model,
                        const Vocabulary& vocab);

// One optimizer step of a baseline method: mode-locked group sampling,
// baseline_loss, Adam. Metrics reuse the training schema; the reward
// columns carry the mean answer log-likelihood of the sampled mode (and of
// the ravr baseline batch on the prior side).
StepMetrics baseline_train_step(TrainState& state, const BaselineSpec& spec,
                                std::span<const TaskInstance> instances,
                                const Vocabulary& vocab, const TrainingConfig& config);

struct BaselineRun {
  std::string method;
  std::vector<StepMetrics> metrics;
  std::vector<EvalRecord> eval;
};

// Trains every method from the same initial parameters on identical
// instance streams and evaluation sets. Needs at least two entries. When
// options.output_dir is set, writes per-method metrics/eval files plus a
// comparison summary.
std::vector<BaselineRun> run_baseline_comparison(std::span<const BaselineSpec> methods,
                                                 const TrainingConfig& config,
                                                 const TaskSpec& task,
                                                 const PolicyModel& init,
                                                 const RunOptions& options);

}  // namespace covrl
