#include "covrl/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "covrl/checkpoint.hpp"
#include "covrl/rng.hpp"
#include "covrl/streams.hpp"

namespace covrl {

namespace {

constexpr uint64_t kStreamRollout = streams::kRollout;
constexpr uint64_t kStreamBatch = streams::kBatch;
constexpr uint64_t kStreamEval = streams::kEval;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void TrainingConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("config field " + field + ": " + why);
  };
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha", "must be in [0, 1]");
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) fail("clip_epsilon", "must be in (0, 1)");
  if (!(lambda_kl >= 0.0)) fail("lambda_kl", "must be >= 0");
  if (!(lambda_nll >= 0.0)) fail("lambda_nll", "must be >= 0");
  if (!(softclip_threshold > 1.0)) fail("softclip_threshold", "must exceed 1");
  if (group_size < 1) fail("group_size", "must be >= 1");
  if (instances_per_batch < 1) fail("instances_per_batch", "must be >= 1");
  if (total_steps < 0) fail("total_steps", "must be >= 0");
  if (warmup_steps < 0) fail("warmup_steps", "must be >= 0");
  if (!(peak_lr > 0.0)) fail("peak_lr", "must be positive");
  if (eval_every < 1) fail("eval_every", "must be >= 1");
  if (eval_instances < 1) fail("eval_instances", "must be >= 1");
  if (checkpoint_every < 1) fail("checkpoint_every", "must be >= 1");
  if (!(sampling.temperature > 0.0)) fail("sampling.temperature", "must be positive");
  if (!(sampling.top_p > 0.0 && sampling.top_p <= 1.0)) fail("sampling.top_p", "must be in (0, 1]");
  if (sampling.max_new_tokens < 1) fail("sampling.max_new_tokens", "must be >= 1");
}

void write_metrics_line(std::ostream& out, const StepMetrics& m) {
  out << "step=" << m.step
      << " mean_reward_prior=" << fmt17(m.mean_reward_prior)
      << " mean_reward_posterior=" << fmt17(m.mean_reward_posterior)
      << " mean_trace_length=" << fmt17(m.mean_trace_length)
      << " nll_loss=" << fmt17(m.nll_loss)
      << " kl_loss=" << fmt17(m.kl_loss)
      << " surrogate_loss=" << fmt17(m.surrogate_loss)
      << " clip_fraction=" << fmt17(m.clip_fraction)
      << " valid_format_fraction=" << fmt17(m.valid_format_fraction)
      << " lr=" << fmt17(m.lr)
      << " wall_time=" << fmt17(m.wall_time) << "\n";
}

std::optional<StepMetrics> parse_metrics_line(const std::string& line) {
  StepMetrics m;
  std::istringstream ss(line);
  std::string tok;
  int seen = 0;
  while (ss >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) return std::nullopt;
    const std::string key = tok.substr(0, eq);
    const std::string val = tok.substr(eq + 1);
    try {
      if (key == "step") m.step = std::stoll(val);
      else if (key == "mean_reward_prior") m.mean_reward_prior = std::stod(val);
      else if (key == "mean_reward_posterior") m.mean_reward_posterior = std::stod(val);
      else if (key == "mean_trace_length") m.mean_trace_length = std::stod(val);
      else if (key == "nll_loss") m.nll_loss = std::stod(val);
      else if (key == "kl_loss") m.kl_loss = std::stod(val);
      else if (key == "surrogate_loss") m.surrogate_loss = std::stod(val);
      else if (key == "clip_fraction") m.clip_fraction = std::stod(val);
      else if (key == "valid_format_fraction") m.valid_format_fraction = std::stod(val);
      else if (key == "lr") m.lr = std::stod(val);
      else if (key == "wall_time") m.wall_time = std::stod(val);
      else return std::nullopt;
    } catch (const std::exception&) {
      return std::nullopt;
    }
    ++seen;
  }
  if (seen != 11) return std::nullopt;
  return m;
}

void write_eval_line(std::ostream& out, const EvalRecord& r) {
  out << "step=" << r.step
      << " exact_match=" << fmt17(r.exact_match)
      << " mean_exact_kl=" << fmt17(r.mean_exact_kl)
      << " mean_trace_length=" << fmt17(r.mean_trace_length)
      << " valid_fraction=" << fmt17(r.valid_fraction) << "\n";
}

TrainState make_train_state(PolicyModel model, uint64_t seed) {
  TrainState st;
  st.moment1.assign(model.param_count(), 0.0);
  st.moment2.assign(model.param_count(), 0.0);
  st.model = std::move(model);
  st.seed = seed;
  return st;
}

namespace {

// Per-token surrogate terms for one rollout, sharing the composite nodes
// with the KL builder. The loss pools tokens across the whole batch, so one
// juncture is one vote.
void surrogate_token_terms(Tape& tape, const ScoredRollout& r, const CompositeNodes& nodes,
                           double clip_epsilon, std::vector<Tape::Var>& terms,
                           long& clipped_tokens, long& total_tokens) {
  if (!r.has_advantage)
    throw std::invalid_argument("grpo_surrogate: rollout missing advantage");
  for (size_t t = 0; t < r.trace.size(); ++t) {
    Tape::Var ratio =
        tape.s_exp(tape.s_add_const(nodes.composite[t], -r.behavior_logp[t]));
    Tape::Var unclipped = tape.scale(ratio, r.advantage);
    Tape::Var clipped =
        tape.scale(tape.clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon), r.advantage);
    Tape::Var term = tape.s_min(unclipped, clipped);
    terms.push_back(term);
    ++total_tokens;
    if (tape.value(term) < tape.value(unclipped)) ++clipped_tokens;
  }
}

// Mode-matching KL total for one rollout with cumulative prefix importance
// weights (see estimators.hpp for why the prefix product is required).
Tape::Var kl_total_node(Tape& tape, const ScoredRollout& r, const CompositeNodes& nodes,
                        double threshold) {
  const double log_half = std::log(0.5);
  std::vector<Tape::Var> terms;
  Tape::Var cum{};
  bool have_cum = false;
  for (size_t t = 0; t < r.trace.size(); ++t) {
    Tape::Var log_r = tape.s_sub(nodes.posterior[t], nodes.prior[t]);
    Tape::Var w, contrib;
    if (r.behavior_mode == LayoutMode::prior) {
      Tape::Var sc = tape.soft_clip_from_log(log_r, threshold);
      w = tape.s_add_const(tape.scale(sc, 0.5), 0.5);
      contrib = tape.s_sub(tape.s_mul(w, tape.s_log(w)), tape.s_add_const(w, -1.0));
    } else {
      Tape::Var sc = tape.soft_clip_from_log(tape.s_neg(log_r), threshold);
      w = tape.s_add_const(tape.scale(sc, 0.5), 0.5);
      Tape::Var log_mix = tape.log_add_exp(tape.constant_scalar(log_half),
                                           tape.s_add_const(log_r, log_half));
      contrib = tape.s_add(tape.s_mul(w, log_mix), tape.s_add_const(w, -1.0));
    }
    terms.push_back(have_cum ? tape.s_mul(cum, contrib) : contrib);
    cum = have_cum ? tape.s_mul(cum, w) : w;
    have_cum = true;
  }
  if (terms.empty()) return tape.constant_scalar(0.0);
  std::vector<double> ones(terms.size(), 1.0);
  return tape.weighted_sum(terms, ones);
}

Tape::Var nll_mean_node(Tape& tape, const ScoredRollout& r, const PolicyModel& model,
                        const Vocabulary& vocab) {
  // Only the answer-span conditional is differentiated: the loss carries no
  // terms for the trace tokens themselves, but the gradient of the answer
  // terms flows through the whole scoring path, prefix consumption included.
  const std::vector<int> prefix = answer_scoring_prefix(vocab, r);
  std::vector<Tape::Var> logps =
      score_sequence_nodes(tape, model, prefix, r.instance.answer_tokens);
  return tape.scale(tape.mean_of(logps), -1.0);
}

}  // namespace

Tape::Var grpo_surrogate(Tape& tape, std::span<const ScoredRollout> rollouts,
                         const PolicyModel& model, const Vocabulary& vocab,
                         double clip_epsilon, LossBreakdown* stats) {
  if (rollouts.empty()) throw std::invalid_argument("grpo_surrogate: no rollouts");
  std::vector<Tape::Var> terms;
  long clipped = 0, total = 0;
  for (const auto& r : rollouts) {
    CompositeNodes nodes = composite_logp_nodes(tape, model, vocab, r.instance, r.trace);
    surrogate_token_terms(tape, r, nodes, clip_epsilon, terms, clipped, total);
  }
  Tape::Var loss = terms.empty() ? tape.constant_scalar(0.0)
                                 : tape.scale(tape.mean_of(terms), -1.0);
  if (stats) {
    stats->surrogate = tape.value(loss);
    stats->clip_fraction = total ? static_cast<double>(clipped) / total : 0.0;
  }
  return loss;
}

Tape::Var selective_nll(Tape& tape, std::span<const ScoredRollout> rollouts,
                        const PolicyModel& model, const Vocabulary& vocab,
                        LossBreakdown* stats) {
  std::vector<Tape::Var> per_rollout;
  for (const auto& r : rollouts) {
    if (!r.parsed.valid_format) continue;
    if (!r.has_advantage || !(r.advantage > 0.0)) continue;
    per_rollout.push_back(nll_mean_node(tape, r, model, vocab));
  }
  Tape::Var loss = per_rollout.empty() ? tape.constant_scalar(0.0)
                                       : tape.mean_of(per_rollout);
  if (stats) {
    stats->nll = tape.value(loss);
    stats->nll_selected = static_cast<int>(per_rollout.size());
  }
  return loss;
}

Tape::Var kl_loss(Tape& tape, std::span<const ScoredRollout> rollouts,
                  const PolicyModel& model, const Vocabulary& vocab, double threshold,
                  LossBreakdown* stats) {
  std::vector<Tape::Var> totals;
  for (const auto& r : rollouts) {
    if (r.truncated) continue;
    CompositeNodes nodes = composite_logp_nodes(tape, model, vocab, r.instance, r.trace);
    totals.push_back(kl_total_node(tape, r, nodes, threshold));
  }
  Tape::Var loss = totals.empty() ? tape.constant_scalar(0.0) : tape.mean_of(totals);
  if (stats) {
    stats->kl = tape.value(loss);
    stats->kl_counted = static_cast<int>(totals.size());
  }
  return loss;
}

Tape::Var total_loss(Tape& tape, std::span<const ScoredRollout> rollouts,
                     const PolicyModel& model, const Vocabulary& vocab,
                     const TrainingConfig& config, LossBreakdown* stats) {
  if (rollouts.empty()) throw std::invalid_argument("total_loss: no rollouts");
  std::vector<Tape::Var> surrogate_term_list;
  std::vector<Tape::Var> kl_totals;
  long clipped = 0, total_tokens = 0;
  for (const auto& r : rollouts) {
    CompositeNodes nodes = composite_logp_nodes(tape, model, vocab, r.instance, r.trace);
    surrogate_token_terms(tape, r, nodes, config.clip_epsilon, surrogate_term_list, clipped,
                          total_tokens);
    if (!r.truncated)
      kl_totals.push_back(kl_total_node(tape, r, nodes, config.softclip_threshold));
  }
  Tape::Var surrogate = surrogate_term_list.empty()
                            ? tape.constant_scalar(0.0)
                            : tape.scale(tape.mean_of(surrogate_term_list), -1.0);
  Tape::Var nll = selective_nll(tape, rollouts, model, vocab, stats);
  Tape::Var kl = kl_totals.empty() ? tape.constant_scalar(0.0) : tape.mean_of(kl_totals);
  const Tape::Var parts[3] = {surrogate, nll, kl};
  const double weights[3] = {1.0, config.lambda_nll, config.lambda_kl};
  Tape::Var loss = tape.weighted_sum(parts, weights);
  if (stats) {
    stats->surrogate = tape.value(surrogate);
    stats->kl = tape.value(kl);
    stats->kl_counted = static_cast<int>(kl_totals.size());
    stats->total = tape.value(loss);
    stats->clip_fraction = total_tokens ? static_cast<double>(clipped) / total_tokens : 0.0;
  }
  return loss;
}

Tape::Var iw_reinforce_loss(Tape& tape, const ScoredRollout& rollout,
                            const PolicyModel& model, const Vocabulary& vocab) {
  if (!rollout.has_reward)
    throw std::invalid_argument("iw_reinforce_loss: rollout missing reward");
  CompositeNodes nodes =
      composite_logp_nodes(tape, model, vocab, rollout.instance, rollout.trace);
  std::vector<double> ones(nodes.composite.size(), 1.0);
  Tape::Var comp_sum = tape.weighted_sum(nodes.composite, ones);
  double behavior_sum = 0.0;
  for (double b : rollout.behavior_logp) behavior_sum += b;
  Tape::Var weight = tape.s_exp(tape.s_add_const(comp_sum, -behavior_sum));
  return tape.scale(weight, -rollout.reward);
}

double lr_at(int64_t step, const TrainingConfig& config) {
  if (step < 0) throw std::invalid_argument("lr_at: negative step");
  if (config.warmup_steps > 0 && step < config.warmup_steps)
    return config.peak_lr * static_cast<double>(step) / config.warmup_steps;
  const int64_t span = std::max<int64_t>(1, config.total_steps - config.warmup_steps);
  const double t = std::clamp(
      static_cast<double>(step - config.warmup_steps) / static_cast<double>(span), 0.0, 1.0);
  return config.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

namespace {

double content_length(const ScoredRollout& r, const Vocabulary& vocab) {
  size_t n = r.trace.size();
  if (n > 0 && (r.trace.back() == vocab.think_close || r.trace.back() == vocab.end)) --n;
  return static_cast<double>(n);
}

}  // namespace

void apply_adam_update(TrainState& state, const GradientVector& grad,
                       const TrainingConfig& config) {
  if (grad.size() != state.model.param_count() || state.moment1.size() != grad.size() ||
      state.moment2.size() != grad.size())
    throw std::invalid_argument("apply_adam_update: gradient/state size mismatch");
  // Adam with bias correction; one update per rollout batch.
  const double lr = lr_at(state.step, config);
  const int64_t t = state.step + 1;
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
  auto& params = state.model.parameters();
  for (size_t i = 0; i < params.size(); ++i) {
    state.moment1[i] = b1 * state.moment1[i] + (1.0 - b1) * grad[i];
    state.moment2[i] = b2 * state.moment2[i] + (1.0 - b2) * grad[i] * grad[i];
    const double mhat = state.moment1[i] / bc1;
    const double vhat = state.moment2[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + config.adam_eps);
  }
}

StepMetrics train_step(TrainState& state, std::span<const TaskInstance> instances,
                       const Vocabulary& vocab, const TrainingConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate();
  if (instances.empty()) throw std::invalid_argument("train_step: no instances");

  HybridConfig hybrid{config.alpha, config.group_size};
  std::vector<ScoredRollout> rollouts;
  rollouts.reserve(instances.size() * config.group_size);
  for (size_t i = 0; i < instances.size(); ++i) {
    Rng rng(Rng::derive(state.seed, {kStreamRollout, static_cast<uint64_t>(state.step),
                                     static_cast<uint64_t>(i)}));
    auto group = sample_hybrid(state.model, vocab, instances[i], hybrid, config.sampling, rng);
    for (auto& r : group) rollouts.push_back(std::move(r));
  }

  std::vector<double> rewards(rollouts.size());
  for (size_t i = 0; i < rollouts.size(); ++i) {
    rewards[i] = compute_reward(state.model, vocab, rollouts[i], config.reward_variant);
    rollouts[i].reward = rewards[i];
    rollouts[i].has_reward = true;
  }
  const std::vector<double> advantages =
      compute_advantages(rewards, config.baseline_scope, config.group_size);
  for (size_t i = 0; i < rollouts.size(); ++i) {
    rollouts[i].advantage = advantages[i];
    rollouts[i].has_advantage = true;
  }

  Tape tape(&state.model.parameters());
  LossBreakdown stats;
  Tape::Var loss = total_loss(tape, rollouts, state.model, vocab, config, &stats);
  if (!std::isfinite(stats.total)) {
    std::ostringstream dump;
    dump_rollouts(dump, rollouts);
    throw TrainingAbort("train_step: non-finite loss at step " + std::to_string(state.step) +
                        "\n" + dump.str());
  }
  GradientVector grad = tape.gradient(loss);
  for (double g : grad)
    if (!std::isfinite(g))
      throw TrainingAbort("train_step: non-finite gradient at step " +
                          std::to_string(state.step));

  const double lr = lr_at(state.step, config);
  apply_adam_update(state, grad, config);

  StepMetrics m;
  m.step = state.step;
  double sum_prior = 0.0, sum_post = 0.0, sum_all = 0.0;
  long n_prior = 0, n_post = 0;
  double sum_len = 0.0;
  long n_valid = 0;
  for (const auto& r : rollouts) {
    sum_all += r.reward;
    if (r.behavior_mode == LayoutMode::prior) {
      sum_prior += r.reward;
      ++n_prior;
    } else {
      sum_post += r.reward;
      ++n_post;
    }
    sum_len += content_length(r, vocab);
    if (r.parsed.valid_format) ++n_valid;
  }
  const double overall = sum_all / static_cast<double>(rollouts.size());
  m.mean_reward_prior = n_prior ? sum_prior / n_prior : overall;
  m.mean_reward_posterior = n_post ? sum_post / n_post : overall;
  m.mean_trace_length = sum_len / static_cast<double>(rollouts.size());
  m.nll_loss = stats.nll;
  m.kl_loss = stats.kl;
  m.surrogate_loss = stats.surrogate;
  m.clip_fraction = stats.clip_fraction;
  m.valid_format_fraction = static_cast<double>(n_valid) / rollouts.size();
  m.lr = lr;
  m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  state.step += 1;
  state.metrics_history.push_back(m);
  return m;
}

EvalStats evaluate_exact_match(const PolicyModel& model, const Vocabulary& vocab,
                               std::span<const TaskInstance> instances,
                               const SamplingParams& sampling) {
  if (instances.empty()) throw std::invalid_argument("evaluate_exact_match: no instances");
  EvalStats stats;
  long hits = 0, valid = 0;
  double kl_sum = 0.0;
  long kl_positions = 0;
  double len_sum = 0.0;
  for (const auto& inst : instances) {
    const std::vector<int> ctx = render_context(vocab, inst, LayoutMode::prior);
    // Greedy think span under the same stop rule as training rollouts:
    // THINK_CLOSE or the token budget, nothing else.
    DecodeState st(model);
    for (int t : ctx) st.advance(t);
    std::vector<int> think;
    bool closed = false;
    for (int i = 0; i < sampling.max_new_tokens; ++i) {
      const std::vector<double> logits = st.logits();
      const int tok = static_cast<int>(
          std::max_element(logits.begin(), logits.end()) - logits.begin());
      st.advance(tok);
      if (tok == vocab.think_close) {
        closed = true;
        break;
      }
      think.push_back(tok);
    }
    // Validity: the span closed itself and the full templated sequence
    // (ground-truth answer spliced in, as in rollout parsing) is clean.
    std::vector<int> full = inst.question_tokens;
    full.push_back(vocab.think_open);
    full.insert(full.end(), think.begin(), think.end());
    if (closed) full.push_back(vocab.think_close);
    full.push_back(vocab.answer_open);
    full.insert(full.end(), inst.answer_tokens.begin(), inst.answer_tokens.end());
    full.push_back(vocab.answer_close);
    const bool is_valid = closed && validate_format(vocab, full, LayoutMode::prior).valid_format;
    if (is_valid) {
      ++valid;
      // The answer span is decoded through the deployment scoring template
      // (ANSWER_OPEN after the closed span), matching how rewards and the
      // NLL score answers during training. Think spans are never templated.
      st.advance(vocab.answer_open);
      bool match = true;
      for (const int expected : inst.answer_tokens) {
        const std::vector<double> logits = st.logits();
        const int tok = static_cast<int>(
            std::max_element(logits.begin(), logits.end()) - logits.begin());
        if (tok != expected) {
          match = false;
          break;
        }
        st.advance(tok);
      }
      if (match) ++hits;
    }
    // Exact per-position composite-vs-prior KL along the generated think
    // span (the close decision included). Incremental cursors keep this
    // linear in trace length.
    const std::vector<int> ctx_post = render_context(vocab, inst, LayoutMode::posterior);
    DecodeState cur_p(model), cur_q(model);
    for (int t : ctx) cur_p.advance(t);
    for (int t : ctx_post) cur_q.advance(t);
    const size_t span = closed ? think.size() + 1 : think.size();
    for (size_t t = 0; t < span; ++t) {
      const std::vector<double> dp = cur_p.next_dist();
      const std::vector<double> dq = cur_q.next_dist();
      double kl = 0.0;
      for (size_t v = 0; v < dp.size(); ++v) {
        const double c = 0.5 * dp[v] + 0.5 * dq[v];
        if (c > 0.0) kl += c * std::log(c / dp[v]);
      }
      kl_sum += kl;
      ++kl_positions;
      if (t < think.size()) {
        cur_p.advance(think[t]);
        cur_q.advance(think[t]);
      }
    }
    len_sum += static_cast<double>(think.size());
  }
  stats.exact_match = static_cast<double>(hits) / instances.size();
  stats.valid_fraction = static_cast<double>(valid) / instances.size();
  stats.mean_exact_kl = kl_positions ? kl_sum / kl_positions : 0.0;
  stats.mean_trace_length = len_sum / instances.size();
  return stats;
}

void save_train_state(const TrainState& state, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("train checkpoint: cannot open for write: " + path);
  f << "covrl-train 1\n";
  f << "step " << state.step << "\n";
  f << "seed " << state.seed << "\n";
  f << "model\n";
  CheckpointCodec::write(state.model, f);
  f << "\nmoments\n";
  write_f64_block(f, state.moment1);
  write_f64_block(f, state.moment2);
  if (!f) throw std::runtime_error("train checkpoint: write failed: " + path);
}

TrainState load_train_state(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("train checkpoint: cannot open for read: " + path);
  std::string line;
  auto expect_line = [&](const char* what) {
    if (!std::getline(f, line)) throw std::runtime_error(std::string("train checkpoint: missing ") + what);
    return line;
  };
  if (expect_line("format id") != "covrl-train 1")
    throw std::runtime_error("train checkpoint: unknown format id");
  TrainState st;
  {
    std::istringstream ss(expect_line("step"));
    std::string k;
    ss >> k >> st.step;
    if (k != "step") throw std::runtime_error("train checkpoint: expected step");
  }
  {
    std::istringstream ss(expect_line("seed"));
    std::string k;
    ss >> k >> st.seed;
    if (k != "seed") throw std::runtime_error("train checkpoint: expected seed");
  }
  if (expect_line("model marker") != "model")
    throw std::runtime_error("train checkpoint: expected model marker");
  st.model = CheckpointCodec::read(f);
  if (expect_line("moments separator").empty() == false)
    throw std::runtime_error("train checkpoint: expected blank line before moments");
  if (expect_line("moments marker") != "moments")
    throw std::runtime_error("train checkpoint: expected moments marker");
  st.moment1 = read_f64_block(f, st.model.param_count());
  st.moment2 = read_f64_block(f, st.model.param_count());
  return st;
}

TrainResult run_training(const TrainingConfig& config, const TaskSpec& task,
                         const PolicyModel& init, const RunOptions& options) {
  config.validate();
  const Vocabulary vocab = make_task_vocabulary(task);
  if (init.vocab_size() != vocab.size())
    throw std::invalid_argument("run_training: model vocab does not match task vocabulary");

  TrainResult result{make_train_state(init, config.seed), {}, {}};
  if (!options.resume_checkpoint.empty()) {
    result.state = load_train_state(options.resume_checkpoint);
    if (result.state.model.param_count() != init.param_count())
      throw std::runtime_error("run_training: resume checkpoint does not match model");
  }
  TrainState& state = result.state;

  // Held-out set drawn from a dedicated stream so it never depends on the
  // training stream consumption.
  std::vector<TaskInstance> eval_set;
  {
    Rng rng(Rng::derive(config.seed, {kStreamEval}));
    eval_set.reserve(config.eval_instances);
    for (int i = 0; i < config.eval_instances; ++i)
      eval_set.push_back(generate_instance(task, rng));
  }

  namespace fs = std::filesystem;
  std::ofstream metrics_out, eval_out;
  if (!options.output_dir.empty()) {
    fs::create_directories(options.output_dir);
    const bool fresh = options.resume_checkpoint.empty();
    const auto mode = fresh ? std::ios::out : std::ios::app;
    metrics_out.open(fs::path(options.output_dir) / "metrics.txt", mode);
    eval_out.open(fs::path(options.output_dir) / "eval.txt", mode);
    if (!metrics_out || !eval_out)
      throw std::runtime_error("run_training: cannot write to " + options.output_dir);
    if (fresh) {
      std::ofstream inst_out(fs::path(options.output_dir) / "eval_instances.txt");
      export_instances(inst_out, eval_set);
    }
  }

  auto run_eval = [&](int64_t step) {
    const EvalStats es = evaluate_exact_match(state.model, vocab, eval_set, config.sampling);
    EvalRecord rec{step, es.exact_match, es.mean_exact_kl, es.mean_trace_length,
                   es.valid_fraction};
    result.eval_history.push_back(rec);
    if (eval_out) {
      write_eval_line(eval_out, rec);
      eval_out.flush();
    }
  };

  while (state.step < config.total_steps) {
    std::vector<TaskInstance> batch;
    batch.reserve(config.instances_per_batch);
    {
      Rng rng(Rng::derive(config.seed, {kStreamBatch, static_cast<uint64_t>(state.step)}));
      for (int i = 0; i < config.instances_per_batch; ++i)
        batch.push_back(generate_instance(task, rng));
    }
    StepMetrics m = train_step(state, batch, vocab, config);
    if (options.deterministic) {
      m.wall_time = 0.0;
      state.metrics_history.back().wall_time = 0.0;
    }
    if (metrics_out) {
      write_metrics_line(metrics_out, m);
      metrics_out.flush();
    }
    if (state.step % config.eval_every == 0 || state.step == config.total_steps)
      run_eval(state.step);
    if (!options.output_dir.empty() && state.step % config.checkpoint_every == 0 &&
        state.step < config.total_steps) {
      save_train_state(state,
                       (fs::path(options.output_dir) / ("ckpt_" + std::to_string(state.step) +
                                                        ".train")).string());
    }
  }
  if (result.eval_history.empty() ||
      result.eval_history.back().step != state.step)
    run_eval(state.step);

  if (!options.output_dir.empty()) {
    const auto final_path = fs::path(options.output_dir) / "checkpoint_final.train";
    save_train_state(state, final_path.string());
    save_model(state.model, (fs::path(options.output_dir) / "model_final.ckpt").string());
    result.checkpoint_path = final_path.string();
  }
  return result;
}

}  // namespace covrl
