#include "covrl/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "covrl/checkpoint.hpp"
#include "covrl/rng.hpp"
#include "covrl/streams.hpp"

namespace covrl {

const char* baseline_method_name(BaselineMethod m) {
  switch (m) {
    case BaselineMethod::jlb: return "jlb";
    case BaselineMethod::latro: return "latro";
    case BaselineMethod::verifree: return "verifree";
    case BaselineMethod::rlpr: return "rlpr";
    case BaselineMethod::ravr: return "ravr";
  }
  throw std::logic_error("baseline_method_name: bad enum");
}

BaselineMethod baseline_method_from_name(const std::string& name) {
  if (name == "jlb") return BaselineMethod::jlb;
  if (name == "latro") return BaselineMethod::latro;
  if (name == "verifree") return BaselineMethod::verifree;
  if (name == "rlpr") return BaselineMethod::rlpr;
  if (name == "ravr") return BaselineMethod::ravr;
  throw std::invalid_argument("unknown baseline method: " + name);
}

LayoutMode baseline_sampling_mode(BaselineMethod m) {
  return m == BaselineMethod::ravr ? LayoutMode::posterior : LayoutMode::prior;
}

void BaselineSpec::validate() const {
  if (beta < 0.0) throw std::invalid_argument("baseline spec: beta must be >= 0");
  if (method == BaselineMethod::latro && !reference.has_value())
    throw std::invalid_argument("baseline spec: latro requires a reference model");
  if (method != BaselineMethod::latro && reference.has_value())
    throw std::invalid_argument("baseline spec: only latro takes a reference model");
}

namespace {

Tape::Var sum_of(Tape& tape, std::span<const Tape::Var> xs) {
  if (xs.empty()) return tape.constant_scalar(0.0);
  const std::vector<double> ones(xs.size(), 1.0);
  return tape.weighted_sum(xs, ones);
}

double plain_sum(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0);
}

}  // namespace

Tape::Var baseline_loss(Tape& tape, const BaselineSpec& spec,
                        std::span<const ScoredRollout> rollouts, const PolicyModel& model,
                        const Vocabulary& vocab) {
  spec.validate();
  if (rollouts.empty()) throw std::invalid_argument("baseline_loss: no rollouts");
  const LayoutMode required = baseline_sampling_mode(spec.method);
  const std::vector<int> ctx_prior;

  std::vector<Tape::Var> losses;
  losses.reserve(rollouts.size());
  for (const auto& r : rollouts) {
    if (r.behavior_mode != required)
      throw std::invalid_argument(std::string("baseline_loss: ") +
                                  baseline_method_name(spec.method) + " requires " +
                                  (required == LayoutMode::prior ? "prior" : "posterior") +
                                  "-mode rollouts");

    const std::vector<int> ctx = render_context(vocab, r.instance, LayoutMode::prior);
    const std::vector<Tape::Var> trace_nodes =
        score_sequence_nodes(tape, model, ctx, r.trace);
    const Tape::Var trace_logp = sum_of(tape, trace_nodes);
    const std::vector<Tape::Var> ans_nodes = score_sequence_nodes(
        tape, model, answer_scoring_prefix(vocab, r), r.instance.answer_tokens);
    const Tape::Var ans_logp = sum_of(tape, ans_nodes);
    const double ans_val = tape.value(ans_logp);

    Tape::Var objective{};
    switch (spec.method) {
      case BaselineMethod::jlb:
        objective = tape.s_add(tape.scale(trace_logp, ans_val), ans_logp);
        break;
      case BaselineMethod::latro: {
        double reward = ans_val;
        // beta=0 skips reference scoring entirely so the loss is the jlb
        // loss bit for bit.
        if (spec.beta != 0.0) {
          const double ref_logp =
              plain_sum(score_sequence(*spec.reference, ctx, r.trace));
          reward -= spec.beta * (tape.value(trace_logp) - ref_logp);
        }
        objective = tape.s_add(tape.scale(trace_logp, reward), ans_logp);
        break;
      }
      case BaselineMethod::verifree: {
        const double p = std::exp(ans_val);
        objective = tape.s_add(tape.scale(trace_logp, p), tape.scale(ans_logp, p));
        break;
      }
      case BaselineMethod::rlpr: {
        double mean_p = 0.0;
        for (const Tape::Var& n : ans_nodes) mean_p += std::exp(tape.value(n));
        mean_p /= static_cast<double>(ans_nodes.size());
        objective = tape.scale(tape.s_add(trace_logp, ans_logp), mean_p);
        break;
      }
      case BaselineMethod::ravr: {
        const double reward = std::max(0.0, ans_val - spec.ravr_baseline);
        // The reward-gradient coupling: grad R is nonzero only off the
        // clamp, and its weight is a single-sample reverse-KL estimate of
        // posterior-vs-prior, held constant.
        double coupling = 0.0;
        if (reward > 0.0) {
          const double log_ratio =
              plain_sum(r.view.prior_logp) - plain_sum(r.view.posterior_logp);
          coupling = kl_reverse_k3(log_ratio);
        }
        objective = tape.s_add(tape.scale(trace_logp, reward),
                               tape.scale(ans_logp, coupling));
        break;
      }
    }
    losses.push_back(tape.scale(objective, -1.0));
  }
  return tape.mean_of(losses);
}

namespace {

double content_tokens(const ScoredRollout& r, const Vocabulary& vocab) {
  size_t n = r.trace.size();
  if (n > 0 && (r.trace.back() == vocab.think_close || r.trace.back() == vocab.end)) --n;
  return static_cast<double>(n);
}

}  // namespace

StepMetrics baseline_train_step(TrainState& state, const BaselineSpec& spec,
                                std::span<const TaskInstance> instances,
                                const Vocabulary& vocab, const TrainingConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate();
  spec.validate();
  if (instances.empty()) throw std::invalid_argument("baseline_train_step: no instances");
  const LayoutMode mode = baseline_sampling_mode(spec.method);

  HybridConfig hybrid{mode == LayoutMode::prior ? 1.0 : 0.0, config.group_size};
  std::vector<ScoredRollout> rollouts;
  rollouts.reserve(instances.size() * config.group_size);
  for (size_t i = 0; i < instances.size(); ++i) {
    Rng rng(Rng::derive(state.seed, {streams::kRollout, static_cast<uint64_t>(state.step),
                                     static_cast<uint64_t>(i)}));
    auto group = sample_hybrid(state.model, vocab, instances[i], hybrid, config.sampling, rng);
    for (auto& r : group) rollouts.push_back(std::move(r));
  }
  for (auto& r : rollouts) {
    r.reward = plain_sum(answer_logps(state.model, vocab, r));
    r.has_reward = true;
  }

  BaselineSpec step_spec = spec;
  double prior_reward = 0.0;
  bool have_prior_reward = false;
  if (spec.method == BaselineMethod::ravr) {
    // Fresh prior-mode samples estimate the reward baseline; they never
    // enter the loss.
    HybridConfig prior_only{1.0, config.group_size};
    double sum = 0.0;
    long n = 0;
    for (size_t i = 0; i < instances.size(); ++i) {
      Rng rng(Rng::derive(state.seed, {streams::kRavrBaseline,
                                       static_cast<uint64_t>(state.step),
                                       static_cast<uint64_t>(i)}));
      auto group =
          sample_hybrid(state.model, vocab, instances[i], prior_only, config.sampling, rng);
      for (const auto& r : group) {
        sum += plain_sum(answer_logps(state.model, vocab, r));
        ++n;
      }
    }
    step_spec.ravr_baseline = sum / static_cast<double>(n);
    prior_reward = step_spec.ravr_baseline;
    have_prior_reward = true;
  }

  Tape tape(&state.model.parameters());
  const Tape::Var loss = baseline_loss(tape, step_spec, rollouts, state.model, vocab);
  const double loss_val = tape.value(loss);
  if (!std::isfinite(loss_val))
    throw TrainingAbort("baseline_train_step: non-finite loss at step " +
                        std::to_string(state.step));
  const GradientVector grad = tape.gradient(loss);
  for (double g : grad)
    if (!std::isfinite(g))
      throw TrainingAbort("baseline_train_step: non-finite gradient at step " +
                          std::to_string(state.step));
  const double lr = lr_at(state.step, config);
  apply_adam_update(state, grad, config);

  StepMetrics m;
  m.step = state.step;
  double reward_mean = 0.0, len = 0.0;
  long valid = 0;
  for (const auto& r : rollouts) {
    reward_mean += r.reward;
    len += content_tokens(r, vocab);
    if (r.parsed.valid_format) ++valid;
  }
  reward_mean /= static_cast<double>(rollouts.size());
  if (mode == LayoutMode::prior) {
    m.mean_reward_prior = reward_mean;
    m.mean_reward_posterior = reward_mean;
  } else {
    m.mean_reward_posterior = reward_mean;
    m.mean_reward_prior = have_prior_reward ? prior_reward : reward_mean;
  }
  m.mean_trace_length = len / static_cast<double>(rollouts.size());
  m.nll_loss = -reward_mean;
  m.kl_loss = 0.0;
  m.surrogate_loss = loss_val;
  m.clip_fraction = 0.0;
  m.valid_format_fraction = static_cast<double>(valid) / rollouts.size();
  m.lr = lr;
  m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  state.step += 1;
  state.metrics_history.push_back(m);
  return m;
}

std::vector<BaselineRun> run_baseline_comparison(std::span<const BaselineSpec> methods,
                                                 const TrainingConfig& config,
                                                 const TaskSpec& task,
                                                 const PolicyModel& init,
                                                 const RunOptions& options) {
  if (methods.size() < 2)
    throw std::invalid_argument("run_baseline_comparison: need at least two methods");
  config.validate();
  const Vocabulary vocab = make_task_vocabulary(task);
  if (init.vocab_size() != vocab.size())
    throw std::invalid_argument("run_baseline_comparison: model vocab does not match task");

  std::vector<TaskInstance> eval_set;
  {
    Rng rng(Rng::derive(config.seed, {streams::kEval}));
    eval_set.reserve(config.eval_instances);
    for (int i = 0; i < config.eval_instances; ++i)
      eval_set.push_back(generate_instance(task, rng));
  }

  namespace fs = std::filesystem;
  std::vector<BaselineRun> out;
  for (size_t mi = 0; mi < methods.size(); ++mi) {
    BaselineSpec spec = methods[mi];
    if (spec.method == BaselineMethod::latro && !spec.reference.has_value())
      spec.reference = init;  // frozen shared starting point
    spec.validate();

    TrainState state = make_train_state(init, config.seed);
    BaselineRun run;
    run.method = baseline_method_name(spec.method);

    std::ofstream metrics_out, eval_out;
    fs::path run_dir;
    if (!options.output_dir.empty()) {
      run_dir = fs::path(options.output_dir) / (std::to_string(mi) + "_" + run.method);
      fs::create_directories(run_dir);
      metrics_out.open(run_dir / "metrics.txt");
      eval_out.open(run_dir / "eval.txt");
      if (!metrics_out || !eval_out)
        throw std::runtime_error("run_baseline_comparison: cannot write to " +
                                 run_dir.string());
    }

    auto run_eval = [&](int64_t step) {
      const EvalStats es = evaluate_exact_match(state.model, vocab, eval_set, config.sampling);
      EvalRecord rec{step, es.exact_match, es.mean_exact_kl, es.mean_trace_length,
                     es.valid_fraction};
      run.eval.push_back(rec);
      if (eval_out) {
        write_eval_line(eval_out, rec);
        eval_out.flush();
      }
    };

    while (state.step < config.total_steps) {
      std::vector<TaskInstance> batch;
      batch.reserve(config.instances_per_batch);
      {
        Rng rng(Rng::derive(config.seed,
                            {streams::kBatch, static_cast<uint64_t>(state.step)}));
        for (int i = 0; i < config.instances_per_batch; ++i)
          batch.push_back(generate_instance(task, rng));
      }
      StepMetrics sm = baseline_train_step(state, spec, batch, vocab, config);
      if (options.deterministic) {
        sm.wall_time = 0.0;
        state.metrics_history.back().wall_time = 0.0;
      }
      run.metrics.push_back(sm);
      if (metrics_out) {
        write_metrics_line(metrics_out, sm);
        metrics_out.flush();
      }
      if (state.step % config.eval_every == 0 || state.step == config.total_steps)
        run_eval(state.step);
    }
    if (run.eval.empty() || run.eval.back().step != state.step) run_eval(state.step);
    if (!options.output_dir.empty())
      save_model(state.model, (run_dir / "model_final.ckpt").string());
    out.push_back(std::move(run));
  }

  if (!options.output_dir.empty()) {
    std::ofstream summary(fs::path(options.output_dir) / "comparison.txt");
    summary << "method exact_match mean_reward_prior mean_reward_posterior steps\n";
    for (const auto& run : out) {
      const EvalRecord& last_eval = run.eval.back();
      const double rp = run.metrics.empty() ? 0.0 : run.metrics.back().mean_reward_prior;
      const double rq = run.metrics.empty() ? 0.0 : run.metrics.back().mean_reward_posterior;
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s %.17g %.17g %.17g %lld\n", run.method.c_str(),
                    last_eval.exact_match, rp, rq,
                    static_cast<long long>(run.metrics.size()));
      summary << buf;
    }
  }
  return out;
}

}  // namespace covrl
