#include "covrl/composite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "covrl/rng.hpp"

namespace covrl {

namespace {

double log_mix_half(double a, double b) {
  const double m = std::max(a, b);
  if (std::isinf(m) && m < 0) return m;
  return m + std::log(0.5 * std::exp(a - m) + 0.5 * std::exp(b - m));
}

}  // namespace

std::vector<double> composite_token_dist(std::span<const double> prior_dist,
                                         std::span<const double> posterior_dist) {
  if (prior_dist.size() != posterior_dist.size())
    throw std::invalid_argument("composite_token_dist: length mismatch");
  std::vector<double> out(prior_dist.size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = 0.5 * prior_dist[i] + 0.5 * posterior_dist[i];
  return out;
}

CompositeView composite_log_prob(const PolicyModel& model, const Vocabulary& vocab,
                                 const TaskInstance& instance, std::span<const int> trace) {
  const std::vector<int> ctx_prior = render_context(vocab, instance, LayoutMode::prior);
  const std::vector<int> ctx_post = render_context(vocab, instance, LayoutMode::posterior);
  CompositeView view;
  view.prior_logp = score_sequence(model, ctx_prior, trace);
  view.posterior_logp = score_sequence(model, ctx_post, trace);
  const size_t n = trace.size();
  view.composite_logp.resize(n);
  view.ratio_r.resize(n);
  for (size_t t = 0; t < n; ++t) {
    view.composite_logp[t] = log_mix_half(view.prior_logp[t], view.posterior_logp[t]);
    view.ratio_r[t] = std::exp(view.posterior_logp[t] - view.prior_logp[t]);
  }
  return view;
}

std::vector<ScoredRollout> sample_hybrid(const PolicyModel& model, const Vocabulary& vocab,
                                         const TaskInstance& instance,
                                         const HybridConfig& hybrid,
                                         const SamplingParams& sampling, Rng& rng) {
  if (hybrid.alpha < 0.0 || hybrid.alpha > 1.0)
    throw std::invalid_argument("sample_hybrid: alpha must be in [0, 1]");
  if (hybrid.group_size < 1)
    throw std::invalid_argument("sample_hybrid: group_size must be >= 1");

  // Think spans stop on THINK_CLOSE or the token budget, nothing else; END
  // inside a span is just another invalid content token. Making END a stop
  // would give the policy a reward-equivalent but format-breaking way out.
  SamplingParams sp = sampling;
  sp.stop_patterns = {{vocab.think_close}};
  sp.end_token = -1;

  std::vector<ScoredRollout> group;
  group.reserve(hybrid.group_size);
  for (int g = 0; g < hybrid.group_size; ++g) {
    ScoredRollout r;
    r.instance = instance;
    r.behavior_mode =
        rng.next_double() < hybrid.alpha ? LayoutMode::prior : LayoutMode::posterior;
    const std::vector<int> ctx = render_context(vocab, instance, r.behavior_mode);
    SampleResult s = sample_sequence(model, ctx, sp, rng);
    r.truncated = s.truncated;
    r.think_closed =
        s.stop_tokens.size() == 1 && s.stop_tokens[0] == vocab.think_close;

    std::vector<int> raw = s.tokens;
    raw.insert(raw.end(), s.stop_tokens.begin(), s.stop_tokens.end());
    r.trace = canonicalize_tokens(vocab, raw);

    // Parse the full templated sequence with the ground-truth answer span
    // spliced in where the layout expects it.
    std::vector<int> full = instance.question_tokens;
    auto push_answer = [&] {
      full.push_back(vocab.answer_open);
      full.insert(full.end(), instance.answer_tokens.begin(), instance.answer_tokens.end());
      full.push_back(vocab.answer_close);
    };
    if (r.behavior_mode == LayoutMode::prior) {
      full.push_back(vocab.think_open);
      full.insert(full.end(), r.trace.begin(), r.trace.end());
      push_answer();
    } else {
      push_answer();
      full.push_back(vocab.think_open);
      full.insert(full.end(), r.trace.begin(), r.trace.end());
    }
    r.parsed = validate_format(vocab, full, r.behavior_mode);

    r.view = composite_log_prob(model, vocab, instance, r.trace);
    r.behavior_logp = (r.behavior_mode == LayoutMode::prior) ? r.view.prior_logp
                                                             : r.view.posterior_logp;
    group.push_back(std::move(r));
  }
  return group;
}

std::vector<int> answer_scoring_prefix(const Vocabulary& vocab, const ScoredRollout& rollout) {
  std::vector<int> prefix = render_context(vocab, rollout.instance, LayoutMode::prior);
  prefix.insert(prefix.end(), rollout.trace.begin(), rollout.trace.end());
  // Valid rollouts end with THINK_CLOSE already; completing the template is
  // only earned by producing it.
  if (rollout.parsed.valid_format) prefix.push_back(vocab.answer_open);
  return prefix;
}

CompositeNodes composite_logp_nodes(Tape& tape, const PolicyModel& model,
                                    const Vocabulary& vocab, const TaskInstance& instance,
                                    std::span<const int> trace) {
  const std::vector<int> ctx_prior = render_context(vocab, instance, LayoutMode::prior);
  const std::vector<int> ctx_post = render_context(vocab, instance, LayoutMode::posterior);
  CompositeNodes nodes;
  nodes.prior = score_sequence_nodes(tape, model, ctx_prior, trace);
  nodes.posterior = score_sequence_nodes(tape, model, ctx_post, trace);
  const double log_half = std::log(0.5);
  nodes.composite.reserve(trace.size());
  for (size_t t = 0; t < trace.size(); ++t)
    nodes.composite.push_back(tape.log_add_exp(tape.s_add_const(nodes.prior[t], log_half),
                                               tape.s_add_const(nodes.posterior[t], log_half)));
  return nodes;
}

void dump_rollouts(std::ostream& out, std::span<const ScoredRollout> rollouts) {
  char buf[32];
  auto col = [&](const std::vector<double>& v) {
    for (size_t i = 0; i < v.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", v[i]);
      out << (i ? " " : "") << buf;
    }
  };
  for (const auto& r : rollouts) {
    out << r.instance.task_id << '\t'
        << (r.behavior_mode == LayoutMode::prior ? "prior" : "posterior") << '\t';
    for (size_t i = 0; i < r.trace.size(); ++i) out << (i ? " " : "") << r.trace[i];
    out << '\t';
    col(r.view.prior_logp);
    out << '\t';
    col(r.view.posterior_logp);
    out << '\t';
    col(r.view.composite_logp);
    out << '\t';
    col(r.view.ratio_r);
    out << '\t' << (r.truncated ? 1 : 0) << '\n';
  }
}

}  // namespace covrl
