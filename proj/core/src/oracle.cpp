#include "covrl/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "covrl/rng.hpp"
#include "covrl/training.hpp"

namespace covrl {

namespace {

constexpr size_t kSpaceGuard = 1000000;

void require_tabular(const PolicyModel& model, const char* who) {
  if (model.backend() != Backend::tabular)
    throw std::invalid_argument(std::string(who) +
                                ": neural backend unsupported; oracles need exact "
                                "tabular probabilities");
}

const char* dist_label(TraceDist d) {
  switch (d) {
    case TraceDist::prior: return "prior";
    case TraceDist::posterior: return "posterior";
    case TraceDist::composite: return "composite";
  }
  throw std::logic_error("dist_label: bad enum");
}

// Appends every sequence of `len` tokens drawn from `alphabet`, in
// lexicographic order of alphabet indices.
void push_sequences(EnumeratedSpace& space, std::span<const int> alphabet, int len,
                    bool terminated) {
  std::vector<int> idx(len, 0);
  while (true) {
    std::vector<int> trace(len);
    for (int i = 0; i < len; ++i) trace[i] = alphabet[idx[i]];
    space.traces.push_back(std::move(trace));
    space.terminated.push_back(terminated ? 1 : 0);
    int p = len - 1;
    while (p >= 0 && idx[p] + 1 == static_cast<int>(alphabet.size())) idx[p--] = 0;
    if (p < 0) break;
    ++idx[p];
  }
}

double checked_pow_count(size_t base, int exp) {
  double c = 1.0;
  for (int i = 0; i < exp; ++i) {
    c *= static_cast<double>(base);
    if (c > static_cast<double>(kSpaceGuard)) return c;
  }
  return c;
}

}  // namespace

EnumeratedSpace enumerate_traces(int vocab_size, int max_len, Termination termination,
                                 int end_token) {
  if (vocab_size < 1) throw std::invalid_argument("enumerate_traces: vocab_size must be >= 1");
  if (max_len < 0) throw std::invalid_argument("enumerate_traces: max_len must be >= 0");
  EnumeratedSpace space;
  space.termination = termination;
  space.vocab_size = vocab_size;
  space.end_token = end_token;
  space.max_len = max_len;

  if (termination == Termination::fixed_length) {
    if (checked_pow_count(vocab_size, max_len) > static_cast<double>(kSpaceGuard))
      throw std::invalid_argument("enumerate_traces: space exceeds 1e6 outcomes");
    std::vector<int> alphabet(vocab_size);
    std::iota(alphabet.begin(), alphabet.end(), 0);
    push_sequences(space, alphabet, max_len, false);
    return space;
  }

  if (end_token < 0 || end_token >= vocab_size)
    throw std::invalid_argument("enumerate_traces: end-terminated mode needs an END id");
  std::vector<int> alphabet;
  for (int t = 0; t < vocab_size; ++t)
    if (t != end_token) alphabet.push_back(t);
  double count = 0.0;
  for (int l = 0; l <= max_len; ++l) count += checked_pow_count(alphabet.size(), l);
  if (count > static_cast<double>(kSpaceGuard))
    throw std::invalid_argument("enumerate_traces: space exceeds 1e6 outcomes");
  // Outcomes with fewer than max_len content tokens stopped on END (the END
  // factor is part of their probability); the length-max_len outcomes are
  // the truncation remainder and carry no END factor. The two kinds
  // partition the sampler's outcome space, so probabilities sum to 1.
  for (int l = 0; l < max_len; ++l) push_sequences(space, alphabet, l, true);
  push_sequences(space, alphabet, max_len, false);
  return space;
}

std::vector<double> space_log_probs(const PolicyModel& model, const Vocabulary& vocab,
                                    const TaskInstance& instance,
                                    const EnumeratedSpace& space, TraceDist dist) {
  require_tabular(model, "space_log_probs");
  std::vector<double> out(space.traces.size());
  for (size_t i = 0; i < space.traces.size(); ++i) {
    std::vector<int> trace = space.traces[i];
    if (space.terminated[i]) trace.push_back(space.end_token);
    const CompositeView view = composite_log_prob(model, vocab, instance, trace);
    const std::vector<double>& col = dist == TraceDist::prior ? view.prior_logp
                                     : dist == TraceDist::posterior
                                         ? view.posterior_logp
                                         : view.composite_logp;
    out[i] = std::accumulate(col.begin(), col.end(), 0.0);
  }
  return out;
}

EnumeratedSpace with_probabilities(EnumeratedSpace space, const PolicyModel& model,
                                   const Vocabulary& vocab, const TaskInstance& instance,
                                   TraceDist dist) {
  const std::vector<double> lp = space_log_probs(model, vocab, instance, space, dist);
  space.probabilities.resize(lp.size());
  for (size_t i = 0; i < lp.size(); ++i) space.probabilities[i] = std::exp(lp[i]);
  space.dist_name = dist_label(dist);
  return space;
}

std::vector<double> space_answer_log_probs(const PolicyModel& model, const Vocabulary& vocab,
                                           const TaskInstance& instance,
                                           const EnumeratedSpace& space) {
  require_tabular(model, "space_answer_log_probs");
  std::vector<double> out(space.traces.size());
  for (size_t i = 0; i < space.traces.size(); ++i) {
    // Reward scoring sees the content trace exactly as a sampler would
    // hand it over, so enumeration and MC use the same answer prefix.
    ScoredRollout r;
    r.instance = instance;
    r.trace = space.traces[i];
    const std::vector<double> lps = answer_logps(model, vocab, r);
    out[i] = std::accumulate(lps.begin(), lps.end(), 0.0);
  }
  return out;
}

double exact_marginal(const PolicyModel& model, const Vocabulary& vocab,
                      const TaskInstance& instance, const EnumeratedSpace& space) {
  require_tabular(model, "exact_marginal");
  const std::vector<double> pz = space_log_probs(model, vocab, instance, space, TraceDist::prior);
  const std::vector<double> ay = space_answer_log_probs(model, vocab, instance, space);
  double m = 0.0;
  for (size_t i = 0; i < pz.size(); ++i) m += std::exp(pz[i] + ay[i]);
  return m;
}

double exact_kl(std::span<const double> from_logp, std::span<const double> to_logp) {
  if (from_logp.size() != to_logp.size())
    throw std::invalid_argument("exact_kl: distribution size mismatch");
  double kl = 0.0;
  for (size_t i = 0; i < from_logp.size(); ++i) {
    const double p = std::exp(from_logp[i]);
    if (p == 0.0) continue;
    if (std::isinf(to_logp[i]) && to_logp[i] < 0.0)
      throw std::invalid_argument("exact_kl: support mismatch (from > 0 where to = 0)");
    kl += p * (from_logp[i] - to_logp[i]);
  }
  return kl;
}

double exact_kl(const PolicyModel& model, const Vocabulary& vocab,
                const TaskInstance& instance, const EnumeratedSpace& space,
                TraceDist from_dist, TraceDist to_dist) {
  require_tabular(model, "exact_kl");
  const std::vector<double> from = space_log_probs(model, vocab, instance, space, from_dist);
  const std::vector<double> to = space_log_probs(model, vocab, instance, space, to_dist);
  return exact_kl(std::span<const double>(from), std::span<const double>(to));
}

GradientVector exact_reconstruction_gradient(const PolicyModel& model, const Vocabulary& vocab,
                                             const TaskInstance& instance,
                                             const EnumeratedSpace& space,
                                             RewardVariant variant) {
  require_tabular(model, "exact_reconstruction_gradient");
  GradientVector total(model.param_count(), 0.0);
  for (size_t i = 0; i < space.traces.size(); ++i) {
    ScoredRollout r;
    r.instance = instance;
    r.trace = space.traces[i];
    const double reward = compute_reward(model, vocab, r, variant);

    std::vector<int> trace = space.traces[i];
    if (space.terminated[i]) trace.push_back(space.end_token);
    Tape tape(&model.parameters());
    const CompositeNodes nodes = composite_logp_nodes(tape, model, vocab, instance, trace);
    Tape::Var logp = tape.constant_scalar(0.0);
    if (!nodes.composite.empty()) {
      const std::vector<double> ones(nodes.composite.size(), 1.0);
      logp = tape.weighted_sum(nodes.composite, ones);
    }
    const double pz = std::exp(tape.value(logp));
    const GradientVector g = tape.gradient(logp);
    const double scale = pz * reward;
    for (size_t j = 0; j < total.size(); ++j) total[j] += scale * g[j];
  }
  return total;
}

double elbo(const PolicyModel& model, const Vocabulary& vocab, const TaskInstance& instance,
            const EnumeratedSpace& space, TraceDist q) {
  require_tabular(model, "elbo");
  const std::vector<double> q_lp = space_log_probs(model, vocab, instance, space, q);
  const std::vector<double> p_lp = space_log_probs(model, vocab, instance, space, TraceDist::prior);
  const std::vector<double> ay = space_answer_log_probs(model, vocab, instance, space);
  double recon = 0.0, kl = 0.0;
  for (size_t i = 0; i < q_lp.size(); ++i) {
    const double qz = std::exp(q_lp[i]);
    if (qz == 0.0) continue;
    recon += qz * ay[i];
    kl += qz * (q_lp[i] - p_lp[i]);
  }
  return recon - kl;
}

ValidationReport mc_validate(const std::function<ScoredRollout(Rng&)>& sampler,
                             const std::function<double(const ScoredRollout&)>& estimator,
                             double exact_value, long n, uint64_t seed,
                             const std::string& name) {
  if (n < 100) throw std::invalid_argument("mc_validate: need at least 100 samples");
  Rng rng(seed);
  double mean = 0.0, m2 = 0.0;
  for (long i = 1; i <= n; ++i) {
    const double x = estimator(sampler(rng));
    const double d = x - mean;
    mean += d / static_cast<double>(i);
    m2 += d * (x - mean);
  }
  ValidationReport rep;
  rep.name = name;
  rep.exact_value = exact_value;
  rep.mc_mean = mean;
  rep.n_samples = n;
  rep.mc_stderr = std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n));
  if (rep.mc_stderr > 0.0)
    rep.z_score = (mean - exact_value) / rep.mc_stderr;
  else
    rep.z_score = (mean == exact_value) ? 0.0 : std::numeric_limits<double>::infinity();
  rep.pass = std::abs(rep.z_score) <= 3.0;
  return rep;
}

ScoredRollout sample_mode_trace(const PolicyModel& model, const Vocabulary& vocab,
                                const TaskInstance& instance, LayoutMode mode, int trace_len,
                                Rng& rng) {
  if (trace_len < 0) throw std::invalid_argument("sample_mode_trace: negative length");
  ScoredRollout r;
  r.instance = instance;
  r.behavior_mode = mode;
  DecodeState st(model);
  for (int t : render_context(vocab, instance, mode)) st.advance(t);
  for (int i = 0; i < trace_len; ++i) {
    const std::vector<double> dist = st.next_dist();
    const int tok = rng.categorical(dist);
    r.trace.push_back(tok);
    if (i + 1 < trace_len) st.advance(tok);
  }
  r.view = composite_log_prob(model, vocab, instance, r.trace);
  r.behavior_logp =
      (mode == LayoutMode::prior) ? r.view.prior_logp : r.view.posterior_logp;
  return r;
}

OracleInstance make_oracle_instance(uint64_t seed, int n_content, int trace_len,
                                    int answer_len) {
  if (n_content < 2) throw std::invalid_argument("make_oracle_instance: n_content must be >= 2");
  if (trace_len < 0 || answer_len < 1)
    throw std::invalid_argument("make_oracle_instance: bad dimensions");
  OracleInstance oi;
  oi.vocab = make_vocabulary(n_content);
  oi.trace_len = trace_len;

  Rng rng(Rng::derive(seed, {0x0ac1e, 1}));
  oi.instance.task_id = "oracle-" + std::to_string(seed);
  for (int i = 0; i < 3; ++i) oi.instance.question_tokens.push_back(rng.next_int(n_content));
  for (int i = 0; i < answer_len; ++i)
    oi.instance.answer_tokens.push_back(rng.next_int(n_content));
  oi.instance.difficulty = 1;

  oi.space = enumerate_traces(oi.vocab.size(), trace_len, Termination::fixed_length);

  // Materialize a row for every context any oracle path can query: both
  // layouts extended by every trace prefix, plus the answer-scoring
  // prefixes. Duplicates collapse before model construction.
  std::vector<std::vector<int>> contexts;
  const std::vector<int> base_p = render_context(oi.vocab, oi.instance, LayoutMode::prior);
  const std::vector<int> base_q = render_context(oi.vocab, oi.instance, LayoutMode::posterior);
  for (int l = 0; l <= trace_len; ++l) {
    EnumeratedSpace prefixes =
        enumerate_traces(oi.vocab.size(), l, Termination::fixed_length);
    for (const auto& z : prefixes.traces) {
      std::vector<int> cp = base_p;
      cp.insert(cp.end(), z.begin(), z.end());
      std::vector<int> cq = base_q;
      cq.insert(cq.end(), z.begin(), z.end());
      // Raw-continuation answer scoring: enumeration traces never close the
      // span, so answers are scored right after the trace tokens.
      std::vector<int> ca = cp;
      contexts.push_back(std::move(cp));
      contexts.push_back(std::move(cq));
      for (int j = 0; j < answer_len; ++j) {
        ca.push_back(oi.instance.answer_tokens[j]);
        contexts.push_back(ca);
      }
    }
  }
  std::sort(contexts.begin(), contexts.end());
  contexts.erase(std::unique(contexts.begin(), contexts.end()), contexts.end());

  ArchConfig arch;
  arch.tabular.explicit_contexts = std::move(contexts);
  const int ctx_len = static_cast<int>(base_q.size()) + trace_len + answer_len + 4;
  oi.model = init_model(Backend::tabular, oi.vocab.size(), ctx_len, arch,
                        Rng::derive(seed, {0x0ac1e, 2}));
  return oi;
}

namespace {

ValidationReport exact_report(const std::string& name, double value, double exact,
                              double tolerance, long n) {
  // Non-MC identities reuse the report shape: stderr = tolerance/3 makes
  // pass <=> |value - exact| <= tolerance.
  ValidationReport rep;
  rep.name = name;
  rep.exact_value = exact;
  rep.mc_mean = value;
  rep.n_samples = n;
  rep.mc_stderr = tolerance / 3.0;
  rep.z_score = (value - exact) / rep.mc_stderr;
  rep.pass = std::abs(rep.z_score) <= 3.0;
  return rep;
}

ValidationReport fd_report(const std::string& name, const FdReport& fd) {
  ValidationReport rep = exact_report(name, fd.max_combined_err, 0.0, fd.tolerance,
                                      static_cast<long>(fd.n_checked));
  rep.pass = fd.pass;
  return rep;
}

}  // namespace

std::vector<ValidationReport> run_validation_suite(uint64_t seed, long mc_samples,
                                                   bool inject_bias) {
  std::vector<ValidationReport> reports;
  const OracleInstance oi = make_oracle_instance(seed);
  const PolicyModel& model = oi.model;
  const Vocabulary& vocab = oi.vocab;
  const TaskInstance& instance = oi.instance;
  const double inf = std::numeric_limits<double>::infinity();

  // 1-2: enumerated composite probabilities are a distribution, in both the
  // fixed-length space and the END-terminated truncation partition.
  {
    const EnumeratedSpace fixed =
        with_probabilities(oi.space, model, vocab, instance, TraceDist::composite);
    const double s =
        std::accumulate(fixed.probabilities.begin(), fixed.probabilities.end(), 0.0);
    reports.push_back(exact_report("normalization_fixed", s, 1.0, 1e-10,
                                   static_cast<long>(fixed.traces.size())));
    EnumeratedSpace term = enumerate_traces(vocab.size(), oi.trace_len,
                                            Termination::end_terminated, vocab.end);
    term = with_probabilities(std::move(term), model, vocab, instance, TraceDist::composite);
    const double st =
        std::accumulate(term.probabilities.begin(), term.probabilities.end(), 0.0);
    reports.push_back(exact_report("normalization_terminated", st, 1.0, 1e-10,
                                   static_cast<long>(term.traces.size())));
  }

  const std::vector<double> comp_lp =
      space_log_probs(model, vocab, instance, oi.space, TraceDist::composite);
  const std::vector<double> prior_lp =
      space_log_probs(model, vocab, instance, oi.space, TraceDist::prior);
  const std::vector<double> post_lp =
      space_log_probs(model, vocab, instance, oi.space, TraceDist::posterior);
  const double kl_exact =
      exact_kl(std::span<const double>(comp_lp), std::span<const double>(prior_lp));

  // 3-4: single-sample KL estimators are unbiased for their own behavior
  // mode (unclipped).
  {
    auto prior_sampler = [&](Rng& rng) {
      return sample_mode_trace(model, vocab, instance, LayoutMode::prior, oi.trace_len, rng);
    };
    auto prior_est = [&](const ScoredRollout& r) {
      const double v = kl_estimate_prior(r.view, false, inf).total;
      return inject_bias ? v + 0.1 : v;
    };
    reports.push_back(mc_validate(prior_sampler, prior_est, kl_exact, mc_samples,
                                  Rng::derive(seed, {0x3c, 1}), "kl_prior_unbiased_mc"));
    auto post_sampler = [&](Rng& rng) {
      return sample_mode_trace(model, vocab, instance, LayoutMode::posterior, oi.trace_len,
                               rng);
    };
    auto post_est = [&](const ScoredRollout& r) {
      return kl_estimate_posterior(r.view, false, inf).total;
    };
    reports.push_back(mc_validate(post_sampler, post_est, kl_exact, mc_samples,
                                  Rng::derive(seed, {0x3c, 2}), "kl_posterior_unbiased_mc"));
  }

  // 5-6: the same unbiasedness as a full-enumeration identity.
  {
    double e_prior = 0.0, e_post = 0.0;
    for (size_t i = 0; i < oi.space.traces.size(); ++i) {
      const CompositeView view =
          composite_log_prob(model, vocab, instance, oi.space.traces[i]);
      e_prior += std::exp(prior_lp[i]) * kl_estimate_prior(view, false, inf).total;
      e_post += std::exp(post_lp[i]) * kl_estimate_posterior(view, false, inf).total;
    }
    const long n = static_cast<long>(oi.space.traces.size());
    reports.push_back(exact_report("kl_prior_enumerated", e_prior, kl_exact, 1e-8, n));
    reports.push_back(exact_report("kl_posterior_enumerated", e_post, kl_exact, 1e-8, n));
  }

  // 7: the control-variate term has exact mean zero under both behavior
  // modes (sequence importance weights telescope to p'(z)/p_mode(z)).
  {
    double worst = 0.0;
    for (TraceDist mode : {TraceDist::prior, TraceDist::posterior}) {
      const std::vector<double>& mode_lp =
          (mode == TraceDist::prior) ? prior_lp : post_lp;
      double mean = 0.0;
      for (size_t i = 0; i < comp_lp.size(); ++i)
        mean += std::exp(mode_lp[i]) * (std::exp(comp_lp[i] - mode_lp[i]) - 1.0);
      worst = std::max(worst, std::abs(mean));
    }
    reports.push_back(exact_report("control_variate_zero", worst, 0.0, 1e-10,
                                   static_cast<long>(2 * comp_lp.size())));
  }

  // 8: MC expectation of the unclipped sequence-weighted policy gradient
  // matches the enumerated reconstruction gradient, entrywise.
  {
    const GradientVector exact =
        exact_reconstruction_gradient(model, vocab, instance, oi.space);
    const size_t np = model.param_count();
    std::vector<double> mean(np, 0.0), m2(np, 0.0);
    Rng rng(Rng::derive(seed, {0x3c, 3}));
    for (long s = 1; s <= mc_samples; ++s) {
      const LayoutMode mode =
          rng.next_double() < 0.5 ? LayoutMode::prior : LayoutMode::posterior;
      ScoredRollout r = sample_mode_trace(model, vocab, instance, mode, oi.trace_len, rng);
      r.reward = compute_reward(model, vocab, r, RewardVariant::log_prob_mean);
      r.has_reward = true;
      Tape tape(&model.parameters());
      const GradientVector g = tape.gradient(iw_reinforce_loss(tape, r, model, vocab));
      for (size_t j = 0; j < np; ++j) {
        const double x = -g[j];
        const double d = x - mean[j];
        mean[j] += d / static_cast<double>(s);
        m2[j] += d * (x - mean[j]);
      }
    }
    ValidationReport rep;
    rep.name = "reconstruction_grad_mc";
    rep.n_samples = mc_samples;
    double worst_abs_z = -1.0;
    for (size_t j = 0; j < np; ++j) {
      const double se = std::sqrt(m2[j] / static_cast<double>(mc_samples - 1) /
                                  static_cast<double>(mc_samples));
      double z;
      if (se > 0.0)
        z = (mean[j] - exact[j]) / se;
      else
        z = (mean[j] == exact[j]) ? 0.0 : inf;
      if (std::abs(z) > worst_abs_z) {
        worst_abs_z = std::abs(z);
        rep.exact_value = exact[j];
        rep.mc_mean = mean[j];
        rep.mc_stderr = se;
        rep.z_score = z;
      }
    }
    rep.pass = worst_abs_z <= 3.0;
    reports.push_back(rep);
  }

  // 9: ELBO sandwich: ln marginal - ELBO(q) = KL(q || true posterior) for
  // every q, where the true posterior is prior * likelihood / marginal.
  {
    const double marg = exact_marginal(model, vocab, instance, oi.space);
    const double ln_marg = std::log(marg);
    const std::vector<double> ay = space_answer_log_probs(model, vocab, instance, oi.space);
    std::vector<double> true_post(ay.size());
    for (size_t i = 0; i < ay.size(); ++i) true_post[i] = prior_lp[i] + ay[i] - ln_marg;
    double worst = 0.0;
    for (TraceDist q : {TraceDist::prior, TraceDist::posterior, TraceDist::composite}) {
      const double gap = ln_marg - elbo(model, vocab, instance, oi.space, q);
      const std::vector<double>& q_lp = q == TraceDist::prior ? prior_lp
                                        : q == TraceDist::posterior ? post_lp
                                                                    : comp_lp;
      const double klq =
          exact_kl(std::span<const double>(q_lp), std::span<const double>(true_post));
      worst = std::max(worst, std::abs(gap - klq));
    }
    reports.push_back(exact_report("elbo_sandwich", worst, 0.0, 1e-8,
                                   static_cast<long>(3 * ay.size())));
  }

  // 10-12: analytic gradients of the three loss heads agree with central
  // differences on a hashed-tabular fixture batch.
  {
    TaskSpec task;
    task.k_min = 1;
    task.k_max = 2;
    task.modulus = 5;
    const Vocabulary tv = make_task_vocabulary(task);
    ArchConfig arch;
    arch.tabular.num_buckets = 512;
    arch.tabular.init_std = 0.8;
    PolicyModel fd_model =
        init_model(Backend::tabular, tv.size(), 64, arch, Rng::derive(seed, {0xfd, 1}));
    SamplingParams sp;
    sp.max_new_tokens = 6;
    HybridConfig hybrid{0.5, 4};
    Rng rng(Rng::derive(seed, {0xfd, 2}));

    // Keep drawing instances until the batch exercises every loss head:
    // at least one untruncated rollout for the KL and one valid rollout
    // with positive advantage for the selective NLL.
    std::vector<ScoredRollout> rollouts;
    for (int attempt = 0; attempt < 20; ++attempt) {
      const TaskInstance inst = generate_instance(task, rng);
      auto group = sample_hybrid(fd_model, tv, inst, hybrid, sp, rng);
      std::vector<double> rewards(group.size());
      for (size_t i = 0; i < group.size(); ++i)
        rewards[i] = compute_reward(fd_model, tv, group[i], RewardVariant::log_prob_mean);
      const std::vector<double> adv =
          compute_advantages(rewards, BaselineScope::group, hybrid.group_size);
      for (size_t i = 0; i < group.size(); ++i) {
        group[i].reward = rewards[i];
        group[i].has_reward = true;
        group[i].advantage = adv[i];
        group[i].has_advantage = true;
        rollouts.push_back(std::move(group[i]));
      }
      bool have_kl = false, have_nll = false;
      for (const auto& r : rollouts) {
        if (!r.truncated) have_kl = true;
        if (r.parsed.valid_format && r.advantage > 0.0) have_nll = true;
      }
      if (rollouts.size() >= 8 && have_kl && have_nll) break;
    }

    const auto nll_builder = [&](Tape& t, const PolicyModel& m) {
      return selective_nll(t, rollouts, m, tv, nullptr);
    };
    const auto surrogate_builder = [&](Tape& t, const PolicyModel& m) {
      return grpo_surrogate(t, rollouts, m, tv, 0.3, nullptr);
    };
    const auto kl_builder = [&](Tape& t, const PolicyModel& m) {
      return kl_loss(t, rollouts, m, tv, 10.0, nullptr);
    };
    reports.push_back(fd_report(
        "fd_nll", finite_difference_check(fd_model, nll_builder, 32, 1e-4,
                                          Rng::derive(seed, {0xfd, 3}))));
    reports.push_back(fd_report(
        "fd_surrogate", finite_difference_check(fd_model, surrogate_builder, 32, 1e-4,
                                                Rng::derive(seed, {0xfd, 4}))));
    reports.push_back(fd_report(
        "fd_kl", finite_difference_check(fd_model, kl_builder, 32, 1e-4,
                                         Rng::derive(seed, {0xfd, 5}))));
  }

  return reports;
}

}  // namespace covrl
