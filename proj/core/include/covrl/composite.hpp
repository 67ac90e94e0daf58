#pragma once

#include <iosfwd>
#include <limits>
#include <span>
#include <vector>

#include "covrl/policy.hpp"
#include "covrl/sampling.hpp"
#include "covrl/tasks.hpp"

namespace covrl {

class Rng;

// Per-token columns for one trace scored under both conditioning layouts.
// Position t of every column refers to trace token t; the two layouts place
// the think-span at different absolute offsets and alignment is by
// think-span position.
struct CompositeView {
  std::vector<double> prior_logp;      // log p(z_t | z_<t, x)
  std::vector<double> posterior_logp;  // log q(z_t | z_<t, x, y)
  std::vector<double> composite_logp;  // log(0.5 exp prior + 0.5 exp posterior)
  std::vector<double> ratio_r;         // exp(posterior_logp - prior_logp)
};

struct HybridConfig {
  double alpha = 0.5;  // probability of sampling a rollout from the prior layout
  int group_size = 8;
};

struct ScoredRollout {
  TaskInstance instance;
  // Generated think-span tokens as scored: content plus the terminating
  // close marker (or END) when one was emitted. Truncated rollouts carry
  // content only.
  std::vector<int> trace;
  LayoutMode behavior_mode = LayoutMode::prior;
  // Mode-matching column of `view`; the distribution the rollout was
  // actually drawn from.
  std::vector<double> behavior_logp;
  CompositeView view;
  bool truncated = false;
  bool think_closed = false;
  // Parse of the full templated sequence with the ground-truth answer
  // spliced in; valid iff the think span closed cleanly.
  ParsedResponse parsed;
  double reward = std::numeric_limits<double>::quiet_NaN();
  double advantage = std::numeric_limits<double>::quiet_NaN();
  bool has_reward = false;
  bool has_advantage = false;
};

// Elementwise equal mixture of two normalized distributions.
std::vector<double> composite_token_dist(std::span<const double> prior_dist,
                                         std::span<const double> posterior_dist);

// Scores `trace` under both layouts of `instance` and fills all columns.
// The log-space mixture uses the max-shifted stable form.
CompositeView composite_log_prob(const PolicyModel& model, const Vocabulary& vocab,
                                 const TaskInstance& instance, std::span<const int> trace);

// Draws group_size rollouts, each wholly from one layout chosen by a
// Bernoulli(alpha) coin. Reward/advantage fields are left unset.
std::vector<ScoredRollout> sample_hybrid(const PolicyModel& model, const Vocabulary& vocab,
                                         const TaskInstance& instance,
                                         const HybridConfig& hybrid,
                                         const SamplingParams& sampling, Rng& rng);

// Prior-layout prefix for scoring the ground-truth answer after the sampled
// trace. Valid-format rollouts get the canonical template
// [question, THINK_OPEN, content, THINK_CLOSE, ANSWER_OPEN]; everything
// else is scored continuing directly after the raw generation, so a rollout
// that breaks the format pays for it in answer likelihood instead of being
// silently repaired.
std::vector<int> answer_scoring_prefix(const Vocabulary& vocab, const ScoredRollout& rollout);

// Line-delimited rollout records for offline estimator audits.
void dump_rollouts(std::ostream& out, std::span<const ScoredRollout> rollouts);

// Tape-recorded scoring of a trace under both layouts plus the per-token
// log-mixture nodes. Values match composite_log_prob to rounding (the tape
// groups the stable mixture differently, so not bitwise).
struct CompositeNodes {
  std::vector<Tape::Var> prior;
  std::vector<Tape::Var> posterior;
  std::vector<Tape::Var> composite;
};
CompositeNodes composite_logp_nodes(Tape& tape, const PolicyModel& model,
                                    const Vocabulary& vocab, const TaskInstance& instance,
                                    std::span<const int> trace);

}  // namespace covrl
