#include <benchmark/benchmark.h>

#include "covrl/composite.hpp"
#include "covrl/estimators.hpp"
#include "covrl/policy.hpp"
#include "covrl/rng.hpp"
#include "covrl/sampling.hpp"
#include "covrl/tasks.hpp"
#include "covrl/training.hpp"

namespace {

using namespace covrl;

TaskSpec bench_task() {
  TaskSpec t;
  t.k_min = 1;
  t.k_max = 2;
  t.modulus = 10;
  return t;
}

PolicyModel bench_model(Backend backend) {
  const Vocabulary vocab = make_task_vocabulary(bench_task());
  ArchConfig arch;
  arch.tabular.num_buckets = 1024;
  return init_model(backend, vocab.size(), 64, arch, 7);
}

std::vector<ScoredRollout> bench_rollouts(const PolicyModel& model, const Vocabulary& vocab,
                                          int count) {
  const TaskSpec task = bench_task();
  Rng task_rng(11);
  Rng rng(13);
  HybridConfig hybrid;
  hybrid.alpha = 0.5;
  hybrid.group_size = count;
  SamplingParams sampling;
  sampling.max_new_tokens = 12;
  const TaskInstance instance = generate_instance(task, task_rng);
  auto rollouts = sample_hybrid(model, vocab, instance, hybrid, sampling, rng);
  for (auto& r : rollouts) {
    r.reward = compute_reward(model, vocab, r, RewardVariant::log_prob_mean);
    r.has_reward = true;
  }
  const std::vector<double> rewards = [&] {
    std::vector<double> out;
    for (const auto& r : rollouts) out.push_back(r.reward);
    return out;
  }();
  const auto adv = compute_advantages(rewards, BaselineScope::group, count);
  for (size_t i = 0; i < rollouts.size(); ++i) {
    rollouts[i].advantage = adv[i];
    rollouts[i].has_advantage = true;
  }
  return rollouts;
}

void bm_tape_forward_backward(benchmark::State& state) {
  const PolicyModel model = bench_model(Backend::neural);
  const Vocabulary vocab = make_task_vocabulary(bench_task());
  const auto rollouts = bench_rollouts(model, vocab, 8);
  TrainingConfig config;
  for (auto _ : state) {
    Tape tape(&model.parameters());
    const auto loss = total_loss(tape, rollouts, model, vocab, config);
    auto grad = tape.gradient(loss);
    benchmark::DoNotOptimize(grad);
  }
}
BENCHMARK(bm_tape_forward_backward);

void bm_hybrid_sampling(benchmark::State& state) {
  const PolicyModel model = bench_model(Backend::neural);
  const Vocabulary vocab = make_task_vocabulary(bench_task());
  const TaskSpec task = bench_task();
  Rng task_rng(11);
  const TaskInstance instance = generate_instance(task, task_rng);
  HybridConfig hybrid;
  hybrid.group_size = 8;
  SamplingParams sampling;
  sampling.max_new_tokens = 12;
  Rng rng(17);
  for (auto _ : state) {
    auto rollouts = sample_hybrid(model, vocab, instance, hybrid, sampling, rng);
    benchmark::DoNotOptimize(rollouts);
  }
}
BENCHMARK(bm_hybrid_sampling);

void bm_kl_estimators(benchmark::State& state) {
  const PolicyModel model = bench_model(Backend::neural);
  const Vocabulary vocab = make_task_vocabulary(bench_task());
  const auto rollouts = bench_rollouts(model, vocab, 8);
  for (auto _ : state) {
    double total = 0.0;
    for (const auto& r : rollouts) {
      const auto est = r.behavior_mode == LayoutMode::prior
                           ? kl_estimate_prior(r.view, r.truncated, 10.0)
                           : kl_estimate_posterior(r.view, r.truncated, 10.0);
      total += est.total;
    }
    benchmark::DoNotOptimize(total);
  }
}
BENCHMARK(bm_kl_estimators);

void bm_train_step_neural(benchmark::State& state) {
  const TaskSpec task = bench_task();
  const Vocabulary vocab = make_task_vocabulary(task);
  TrainingConfig config;
  config.instances_per_batch = 4;
  config.group_size = 4;
  config.sampling.max_new_tokens = 12;
  TrainState ts = make_train_state(bench_model(Backend::neural), 7);
  Rng rng(23);
  std::vector<TaskInstance> batch;
  for (int i = 0; i < config.instances_per_batch; ++i)
    batch.push_back(generate_instance(task, rng));
  for (auto _ : state) {
    const StepMetrics m = train_step(ts, batch, vocab, config);
    benchmark::DoNotOptimize(m);
  }
}
BENCHMARK(bm_train_step_neural);

}  // namespace

BENCHMARK_MAIN();
