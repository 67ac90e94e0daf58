#include "covrl/estimators.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace covrl {

const char* reward_variant_name(RewardVariant v) {
  switch (v) {
    case RewardVariant::log_prob_mean: return "log_prob_mean";
    case RewardVariant::prob_mean: return "prob_mean";
    case RewardVariant::prob_sum: return "prob_sum";
    case RewardVariant::log_prob_sum: return "log_prob_sum";
  }
  throw std::logic_error("reward_variant_name: bad enum");
}

RewardVariant reward_variant_from_name(const std::string& name) {
  if (name == "log_prob_mean") return RewardVariant::log_prob_mean;
  if (name == "prob_mean") return RewardVariant::prob_mean;
  if (name == "prob_sum") return RewardVariant::prob_sum;
  if (name == "log_prob_sum") return RewardVariant::log_prob_sum;
  throw std::invalid_argument("unknown reward variant: " + name);
}

std::vector<double> answer_logps(const PolicyModel& model, const Vocabulary& vocab,
                                 const ScoredRollout& rollout) {
  if (rollout.instance.answer_tokens.empty())
    throw std::invalid_argument("answer_logps: empty answer");
  const std::vector<int> prefix = answer_scoring_prefix(vocab, rollout);
  return score_sequence(model, prefix, rollout.instance.answer_tokens);
}

double reward_from_logps(std::span<const double> logps, RewardVariant variant) {
  if (logps.empty()) throw std::invalid_argument("reward_from_logps: empty answer");
  double sum = 0.0, psum = 0.0;
  for (double l : logps) {
    sum += l;
    psum += std::exp(l);
  }
  const double n = static_cast<double>(logps.size());
  switch (variant) {
    case RewardVariant::log_prob_mean: return sum / n;
    case RewardVariant::log_prob_sum: return sum;
    case RewardVariant::prob_mean: return psum / n;
    case RewardVariant::prob_sum: return psum;
  }
  throw std::logic_error("reward_from_logps: bad enum");
}

double compute_reward(const PolicyModel& model, const Vocabulary& vocab,
                      const ScoredRollout& rollout, RewardVariant variant) {
  return reward_from_logps(answer_logps(model, vocab, rollout), variant);
}

std::vector<double> compute_advantages(std::span<const double> rewards,
                                       BaselineScope scope, int group_size) {
  if (rewards.empty()) throw std::invalid_argument("compute_advantages: empty rewards");
  const int n = static_cast<int>(rewards.size());
  const int gs = (scope == BaselineScope::batch) ? n : (group_size <= 0 ? n : group_size);
  if (n % gs != 0)
    throw std::invalid_argument("compute_advantages: rewards not divisible into groups");
  std::vector<double> adv(rewards.size());
  for (int g = 0; g < n; g += gs) {
    double mean = 0.0;
    for (int i = g; i < g + gs; ++i) mean += rewards[i];
    mean /= gs;
    for (int i = g; i < g + gs; ++i) adv[i] = rewards[i] - mean;
  }
  return adv;
}

double soft_clip(double ratio, double threshold) {
  if (!(ratio > 0.0)) throw std::invalid_argument("soft_clip: ratio must be positive");
  if (!(threshold > 1.0)) throw std::invalid_argument("soft_clip: threshold must exceed 1");
  if (ratio <= threshold) return ratio;
  return threshold * (1.0 + std::log(ratio / threshold));
}

double soft_clip_from_log(double log_ratio, double threshold) {
  if (!(threshold > 1.0)) throw std::invalid_argument("soft_clip_from_log: threshold must exceed 1");
  const double log_tau = std::log(threshold);
  if (log_ratio <= log_tau) return std::exp(log_ratio);
  return threshold * (1.0 + log_ratio - log_tau);
}

namespace {

double log_mix_half_ratio(double log_r) {
  // ln(1/2 + r/2) computed from ln r without overflow.
  const double m = std::max(log_r, 0.0);
  return m + std::log(0.5 * std::exp(-m) + 0.5 * std::exp(log_r - m));
}

}  // namespace

KLTerm kl_estimate_prior(const CompositeView& view, bool truncated, double threshold) {
  KLTerm term;
  if (truncated) {
    term.skipped = true;
    return term;
  }
  double cum = 1.0;
  term.per_token.reserve(view.prior_logp.size());
  for (size_t t = 0; t < view.prior_logp.size(); ++t) {
    const double log_r = view.posterior_logp[t] - view.prior_logp[t];
    const double w = 0.5 + 0.5 * soft_clip_from_log(log_r, threshold);
    term.per_token.push_back(cum * (w * std::log(w) - (w - 1.0)));
    term.total += term.per_token.back();
    cum *= w;
  }
  return term;
}

KLTerm kl_estimate_posterior(const CompositeView& view, bool truncated, double threshold) {
  KLTerm term;
  if (truncated) {
    term.skipped = true;
    return term;
  }
  double cum = 1.0;
  term.per_token.reserve(view.prior_logp.size());
  for (size_t t = 0; t < view.prior_logp.size(); ++t) {
    const double log_r = view.posterior_logp[t] - view.prior_logp[t];
    const double w = 0.5 + 0.5 * soft_clip_from_log(-log_r, threshold);
    term.per_token.push_back(cum * (w * log_mix_half_ratio(log_r) + (w - 1.0)));
    term.total += term.per_token.back();
    cum *= w;
  }
  return term;
}

double kl_reverse_k3(double log_ratio) {
  return std::expm1(log_ratio) - log_ratio;
}

void write_estimator_audit(std::ostream& out, const CompositeView& view, LayoutMode mode,
                           double threshold) {
  out << "t,r,w,contribution,clipped\n";
  const KLTerm term = (mode == LayoutMode::prior)
                          ? kl_estimate_prior(view, false, threshold)
                          : kl_estimate_posterior(view, false, threshold);
  char buf[128];
  for (size_t t = 0; t < view.ratio_r.size(); ++t) {
    const double log_r = view.posterior_logp[t] - view.prior_logp[t];
    const double arg = (mode == LayoutMode::prior) ? log_r : -log_r;
    const bool clipped = arg > std::log(threshold);
    const double w = 0.5 + 0.5 * soft_clip_from_log(arg, threshold);
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%d\n", t, view.ratio_r[t], w,
                  term.per_token[t], clipped ? 1 : 0);
    out << buf;
  }
}

}  // namespace covrl
