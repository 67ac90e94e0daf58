#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "covrl/composite.hpp"

namespace covrl {

enum class RewardVariant { log_prob_mean, prob_mean, prob_sum, log_prob_sum };
enum class BaselineScope { group, batch };

const char* reward_variant_name(RewardVariant v);
RewardVariant reward_variant_from_name(const std::string& name);

// Per-token log p(y_t | prefix, y_<t) of the ground-truth answer scored in
// the prior layout after the sampled trace (see answer_scoring_prefix).
std::vector<double> answer_logps(const PolicyModel& model, const Vocabulary& vocab,
                                 const ScoredRollout& rollout);

// Reduction of per-token answer log-probs to one reward value.
double reward_from_logps(std::span<const double> logps, RewardVariant variant);

double compute_reward(const PolicyModel& model, const Vocabulary& vocab,
                      const ScoredRollout& rollout, RewardVariant variant);

// Mean-centered advantages, no standard-deviation normalization. For group
// scope the rewards are centered within consecutive groups of group_size
// (group_size <= 0 treats the whole span as one group); batch scope centers
// by the global mean.
std::vector<double> compute_advantages(std::span<const double> rewards,
                                       BaselineScope scope, int group_size = -1);

// Identity up to `threshold`, then logarithmic: threshold*(1+ln(ratio/threshold)).
// Continuous and C1 at the knee, strictly increasing, sublinear above.
double soft_clip(double ratio, double threshold);
// Same map evaluated from log(ratio); never materializes exp(log_ratio)
// above the knee, so huge log-ratios cannot overflow.
double soft_clip_from_log(double log_ratio, double threshold);

struct KLTerm {
  std::vector<double> per_token;  // non-negative contributions
  double total = 0.0;
  bool skipped = false;  // truncated rollouts contribute no KL loss
};

// Single-sample estimators of D_KL(p' || prior) over the whole trace.
//
// Per token, w_t is the importance factor p'(z_t|.)/p_mode(z_t|.) written in
// terms of r_t = exp(posterior_logp - prior_logp):
//   prior mode:     w_t = 1/2 + soft_clip(r_t)/2,    term_t = w_t ln w_t - (w_t - 1)
//   posterior mode: w_t = 1/2 + soft_clip(1/r_t)/2,  term_t = w_t ln(1/2 + r_t/2) + (w_t - 1)
// Each term is multiplied by the running product of the preceding tokens'
// w factors, which is exactly the sequence importance weight of the prefix;
// without it the per-token terms estimate only a single-step divergence and
// the sequence total is biased. Every contribution stays non-negative
// (Bregman form times a non-negative prefix weight) and single-token traces
// reduce to the bare per-token formulas.
KLTerm kl_estimate_prior(const CompositeView& view, bool truncated, double threshold);
KLTerm kl_estimate_posterior(const CompositeView& view, bool truncated, double threshold);

// k3-style reverse KL single-token estimate from log(p/q) evaluated at a
// sample from q: exp(x) - 1 - x, non-negative.
double kl_reverse_k3(double log_ratio);

// Per-token audit records: t,r,w,contribution,clipped (CSV with header).
void write_estimator_audit(std::ostream& out, const CompositeView& view, LayoutMode mode,
                           double threshold);

}  // namespace covrl
