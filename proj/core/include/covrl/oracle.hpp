#pragma once

#include <functional>
#include <string>

#include "covrl/composite.hpp"
#include "covrl/estimators.hpp"

namespace covrl {

class Rng;

enum class Termination { fixed_length, end_terminated };

// Exhaustive outcome space for traces. Fixed-length mode lists every
// sequence of exactly max_len tokens. End-terminated mode mirrors a sampler
// with an END stop and a length budget: outcomes are either stopped (END
// drawn after <= max_len content tokens; the END factor belongs to the
// outcome's probability) or truncated (exactly max_len content tokens, no
// END factor). The two kinds partition sample space, so probabilities sum
// to 1 under any model.
struct EnumeratedSpace {
  std::vector<std::vector<int>> traces;  // content tokens per outcome
  std::vector<char> terminated;          // 1 = END-stopped, 0 = fixed length / truncated
  Termination termination = Termination::fixed_length;
  int vocab_size = 0;
  int end_token = -1;
  int max_len = 0;
  // Filled by with_probabilities: per-outcome probability under dist_name.
  std::vector<double> probabilities;
  std::string dist_name;
};

EnumeratedSpace enumerate_traces(int vocab_size, int max_len, Termination termination,
                                 int end_token = -1);

enum class TraceDist { prior, posterior, composite };

// Log-probability of every outcome under one distribution. Requires the
// tabular backend (oracle answers must be exact, not approximated).
std::vector<double> space_log_probs(const PolicyModel& model, const Vocabulary& vocab,
                                    const TaskInstance& instance,
                                    const EnumeratedSpace& space, TraceDist dist);

EnumeratedSpace with_probabilities(EnumeratedSpace space, const PolicyModel& model,
                                   const Vocabulary& vocab, const TaskInstance& instance,
                                   TraceDist dist);

// Per-outcome log p(y | z, x): the ground-truth answer scored after each
// trace in the prior layout (sum over answer tokens).
std::vector<double> space_answer_log_probs(const PolicyModel& model, const Vocabulary& vocab,
                                           const TaskInstance& instance,
                                           const EnumeratedSpace& space);

// sum_z p_prior(z|x) * p(y|z,x).
double exact_marginal(const PolicyModel& model, const Vocabulary& vocab,
                      const TaskInstance& instance, const EnumeratedSpace& space);

// sum_z from(z) ln(from(z)/to(z)). Errors on support mismatch.
double exact_kl(const PolicyModel& model, const Vocabulary& vocab,
                const TaskInstance& instance, const EnumeratedSpace& space,
                TraceDist from_dist, TraceDist to_dist);
double exact_kl(std::span<const double> from_logp, std::span<const double> to_logp);

// sum_z p'(z) R(z) grad ln p'(z), term by term. R is held constant per
// trace (the score-function gradient, matching the surrogate's stop-grad
// treatment of rewards).
GradientVector exact_reconstruction_gradient(const PolicyModel& model, const Vocabulary& vocab,
                                             const TaskInstance& instance,
                                             const EnumeratedSpace& space,
                                             RewardVariant variant = RewardVariant::log_prob_mean);

// E_q[log p(y|z,x)] - KL(q || prior), evaluated exactly. The reconstruction
// term uses the summed answer log-likelihood (the bound is on ln p(y|x)).
double elbo(const PolicyModel& model, const Vocabulary& vocab, const TaskInstance& instance,
            const EnumeratedSpace& space, TraceDist q);

struct ValidationReport {
  std::string name;
  double exact_value = 0.0;
  double mc_mean = 0.0;
  double mc_stderr = 0.0;
  double z_score = 0.0;
  long n_samples = 0;
  bool pass = false;
};

// Draws n samples, applies the estimator, and z-tests the mean against the
// exact value. n < 100 is an error (stderr would be meaningless).
ValidationReport mc_validate(const std::function<ScoredRollout(Rng&)>& sampler,
                             const std::function<double(const ScoredRollout&)>& estimator,
                             double exact_value, long n, uint64_t seed,
                             const std::string& name = "mc");

// Draws a complete trace of exactly trace_len tokens from one conditioning
// layout with no stop handling, then fills the composite view. This is the
// sampler the enumeration oracles are defined against (fixed-length space).
ScoredRollout sample_mode_trace(const PolicyModel& model, const Vocabulary& vocab,
                                const TaskInstance& instance, LayoutMode mode, int trace_len,
                                Rng& rng);

// Self-contained fixture: an explicit-context tabular model with random
// logits covering every context reachable by the oracles, plus a tiny
// instance and its fixed-length trace space.
struct OracleInstance {
  PolicyModel model;
  Vocabulary vocab;
  TaskInstance instance;
  EnumeratedSpace space;
  int trace_len = 0;
};
OracleInstance make_oracle_instance(uint64_t seed, int n_content = 3, int trace_len = 2,
                                    int answer_len = 2);

// The validation battery behind the `validate` command: normalization,
// estimator unbiasedness, control-variate mean-zero, gradient checks, and
// the ELBO sandwich. Exact (non-MC) checks are encoded in the same report
// shape with stderr = tolerance/3, so pass <=> |deviation| <= tolerance.
// inject_bias corrupts one estimator check to exercise failure paths.
std::vector<ValidationReport> run_validation_suite(uint64_t seed, long mc_samples = 100000,
                                                   bool inject_bias = false);

}  // namespace covrl
