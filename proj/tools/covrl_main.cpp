#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "covrl/baselines.hpp"
#include "covrl/checkpoint.hpp"
#include "covrl/config.hpp"
#include "covrl/oracle.hpp"
#include "covrl/rng.hpp"
#include "covrl/streams.hpp"
#include "covrl/training.hpp"

namespace fs = std::filesystem;
using namespace covrl;

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct CommonFlags {
  std::string config;
  long long seed = 0;
  bool deterministic = false;
  std::string output;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Config file (key = value lines)");
  f.seed_opt = cmd->add_option("--seed", f.seed, "Override the run seed");
  cmd->add_flag("--deterministic", f.deterministic,
                "Zero wall-clock fields so reruns are byte-identical");
  cmd->add_option("--output", f.output, "Output directory");
}

// Config file first, then flag overrides; command is fixed by the subcommand.
RunConfig resolve(const CommonFlags& f, const std::string& command) {
  RunConfig c = f.config.empty() ? RunConfig{} : parse_config_file(f.config);
  c.command = command;
  if (f.seed_opt != nullptr && f.seed_opt->count() > 0) {
    c.training.seed = static_cast<uint64_t>(f.seed);
    c.seed_provided = true;
  }
  if (f.deterministic) c.deterministic = true;
  if (!f.output.empty()) c.output_dir = f.output;
  return c;
}

void write_snapshot_file(const RunConfig& c, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_config_snapshot(out, c);
}

std::vector<std::string> split_csv(const std::string& text, const std::string& field) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(text);
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) throw ConfigError(0, field, "empty list item");
    const auto e = item.find_last_not_of(" \t");
    out.push_back(item.substr(b, e - b + 1));
  }
  if (out.empty()) throw ConfigError(0, field, "empty list");
  return out;
}

int cmd_train(RunConfig c) {
  if (c.output_dir.empty()) c.output_dir = "covrl_out";
  c.validate();
  fs::create_directories(c.output_dir);
  write_snapshot_file(c, fs::path(c.output_dir) / "config_resolved.txt");

  const PolicyModel init = build_model(c);
  const RunOptions options{c.output_dir, c.deterministic, c.resume};
  const TrainResult result = run_training(c.training, c.task, init, options);

  std::cout << "trained to step " << result.state.step;
  if (!result.eval_history.empty())
    std::cout << ", final exact_match " << fmt17(result.eval_history.back().exact_match);
  std::cout << ", checkpoint " << result.checkpoint_path << "\n";
  return 0;
}

int cmd_validate(const RunConfig& c, long samples, const std::string& audit_csv,
                 bool inject_bias) {
  const auto reports = run_validation_suite(c.training.seed, samples, inject_bias);

  std::printf("%-28s %14s %14s %12s %9s %10s  %s\n", "check", "exact", "mc_mean", "stderr",
              "z", "n", "status");
  size_t n_pass = 0;
  for (const auto& r : reports) {
    n_pass += r.pass ? 1 : 0;
    std::printf("%-28s %14.6g %14.6g %12.4g %9.3f %10ld  %s\n", r.name.c_str(), r.exact_value,
                r.mc_mean, r.mc_stderr, r.z_score, r.n_samples, r.pass ? "pass" : "FAIL");
  }
  for (const auto& r : reports) {
    std::printf("#report name=%s exact=%s mean=%s stderr=%s z=%s n=%ld pass=%d\n",
                r.name.c_str(), fmt17(r.exact_value).c_str(), fmt17(r.mc_mean).c_str(),
                fmt17(r.mc_stderr).c_str(), fmt17(r.z_score).c_str(), r.n_samples,
                r.pass ? 1 : 0);
  }
  std::printf("%zu/%zu checks passed\n", n_pass, reports.size());

  if (!audit_csv.empty()) {
    OracleInstance oi = make_oracle_instance(c.training.seed);
    Rng rng(Rng::derive(c.training.seed, {0xa0d17}));
    std::ofstream out(audit_csv);
    if (!out) throw std::runtime_error("cannot write " + audit_csv);
    for (const LayoutMode mode : {LayoutMode::prior, LayoutMode::posterior}) {
      const ScoredRollout r =
          sample_mode_trace(oi.model, oi.vocab, oi.instance, mode, oi.trace_len, rng);
      out << "# layout=" << (mode == LayoutMode::prior ? "prior" : "posterior") << "\n";
      write_estimator_audit(out, r.view, mode, c.training.softclip_threshold);
    }
    std::cout << "audit records written to " << audit_csv << "\n";
  }
  return n_pass == reports.size() ? 0 : 1;
}

struct RunSummary {
  EvalRecord final_eval;
  StepMetrics final_metrics;
};

// Mirrors run_training's file layout and rng streams for one comparison
// method, so sweep output directories look the same regardless of axis.
RunSummary run_one_baseline(const RunConfig& c, BaselineMethod method) {
  const Vocabulary vocab = make_task_vocabulary(c.task);
  BaselineSpec spec;
  spec.method = method;
  PolicyModel init = build_model(c);
  if (method == BaselineMethod::latro) {
    spec.beta = c.latro_beta;
    spec.reference = init;
  }
  spec.validate();

  TrainState state = make_train_state(std::move(init), c.training.seed);

  std::vector<TaskInstance> eval_set;
  {
    Rng rng(Rng::derive(c.training.seed, {streams::kEval}));
    eval_set.reserve(c.training.eval_instances);
    for (int i = 0; i < c.training.eval_instances; ++i)
      eval_set.push_back(generate_instance(c.task, rng));
  }

  fs::create_directories(c.output_dir);
  std::ofstream metrics_out(fs::path(c.output_dir) / "metrics.txt");
  std::ofstream eval_out(fs::path(c.output_dir) / "eval.txt");
  if (!metrics_out || !eval_out)
    throw std::runtime_error("cannot write to " + c.output_dir);
  {
    std::ofstream inst_out(fs::path(c.output_dir) / "eval_instances.txt");
    export_instances(inst_out, eval_set);
  }

  RunSummary summary;
  auto run_eval = [&](int64_t step) {
    const EvalStats es = evaluate_exact_match(state.model, vocab, eval_set, c.training.sampling);
    summary.final_eval =
        EvalRecord{step, es.exact_match, es.mean_exact_kl, es.mean_trace_length, es.valid_fraction};
    write_eval_line(eval_out, summary.final_eval);
    eval_out.flush();
  };

  while (state.step < c.training.total_steps) {
    std::vector<TaskInstance> batch;
    batch.reserve(c.training.instances_per_batch);
    {
      Rng rng(Rng::derive(c.training.seed, {streams::kBatch, static_cast<uint64_t>(state.step)}));
      for (int i = 0; i < c.training.instances_per_batch; ++i)
        batch.push_back(generate_instance(c.task, rng));
    }
    StepMetrics m = baseline_train_step(state, spec, batch, vocab, c.training);
    if (c.deterministic) m.wall_time = 0.0;
    write_metrics_line(metrics_out, m);
    metrics_out.flush();
    summary.final_metrics = m;
    if (state.step % c.training.eval_every == 0 || state.step == c.training.total_steps)
      run_eval(state.step);
  }
  if (summary.final_eval.step != state.step || c.training.total_steps == 0) run_eval(state.step);

  save_train_state(state, (fs::path(c.output_dir) / "checkpoint_final.train").string());
  save_model(state.model, (fs::path(c.output_dir) / "model_final.ckpt").string());
  return summary;
}

int cmd_sweep(RunConfig c) {
  if (c.output_dir.empty()) c.output_dir = "covrl_sweep";
  c.validate();

  // Parse every value before any run so a bad entry cannot leave a sweep
  // half-finished.
  struct Planned {
    std::string value;
    double real = 0.0;
    RewardVariant variant = RewardVariant::log_prob_mean;
    bool is_covrl = false;
    BaselineMethod method = BaselineMethod::jlb;
  };
  std::vector<Planned> plan;
  for (const std::string& v : c.sweep_values) {
    Planned p;
    p.value = v;
    try {
      if (c.sweep_axis == "alpha" || c.sweep_axis == "lambda_kl" || c.sweep_axis == "lambda_nll") {
        size_t pos = 0;
        p.real = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
      } else if (c.sweep_axis == "reward_variant") {
        p.variant = reward_variant_from_name(v);
      } else {  // method
        p.is_covrl = (v == "covrl");
        if (!p.is_covrl) p.method = baseline_method_from_name(v);
      }
    } catch (const std::exception&) {
      throw ConfigError(0, "sweep.values", "bad " + c.sweep_axis + " value '" + v + "'");
    }
    plan.push_back(std::move(p));
  }

  fs::create_directories(c.output_dir);
  write_snapshot_file(c, fs::path(c.output_dir) / "config_resolved.txt");
  std::ofstream summary_out(fs::path(c.output_dir) / "sweep_summary.txt");
  summary_out << "# axis = " << c.sweep_axis << "\n";
  summary_out << "# columns: value exact_match mean_trace_length kl_loss mean_reward_prior"
                 " mean_reward_posterior dir\n";

  for (const Planned& p : plan) {
    RunConfig rc = c;
    rc.command = "train";
    rc.sweep_axis.clear();
    rc.sweep_values.clear();
    rc.methods.clear();
    rc.output_dir = (fs::path(c.output_dir) / (c.sweep_axis + "_" + p.value)).string();

    if (c.sweep_axis == "alpha") rc.training.alpha = p.real;
    else if (c.sweep_axis == "lambda_kl") rc.training.lambda_kl = p.real;
    else if (c.sweep_axis == "lambda_nll") rc.training.lambda_nll = p.real;
    else if (c.sweep_axis == "reward_variant") rc.training.reward_variant = p.variant;
    rc.validate();

    fs::create_directories(rc.output_dir);
    write_snapshot_file(rc, fs::path(rc.output_dir) / "config_resolved.txt");

    RunSummary row;
    if (c.sweep_axis != "method" || p.is_covrl) {
      const TrainResult res = run_training(rc.training, rc.task, build_model(rc),
                                           {rc.output_dir, rc.deterministic, ""});
      row.final_eval = res.eval_history.back();
      if (!res.state.metrics_history.empty()) row.final_metrics = res.state.metrics_history.back();
    } else {
      row = run_one_baseline(rc, p.method);
    }

    summary_out << p.value << " " << fmt17(row.final_eval.exact_match) << " "
                << fmt17(row.final_eval.mean_trace_length) << " "
                << fmt17(row.final_metrics.kl_loss) << " "
                << fmt17(row.final_metrics.mean_reward_prior) << " "
                << fmt17(row.final_metrics.mean_reward_posterior) << " " << rc.output_dir << "\n";
    summary_out.flush();
    std::cout << c.sweep_axis << "=" << p.value << ": exact_match "
              << fmt17(row.final_eval.exact_match) << ", dir " << rc.output_dir << "\n";
  }
  std::cout << "sweep summary: " << (fs::path(c.output_dir) / "sweep_summary.txt").string()
            << "\n";
  return 0;
}

int cmd_export(const std::string& metrics_dir, std::string out_dir) {
  std::vector<std::pair<std::string, fs::path>> series;  // name, metrics file
  if (fs::exists(fs::path(metrics_dir) / "metrics.txt")) {
    series.emplace_back("run", fs::path(metrics_dir) / "metrics.txt");
  } else if (fs::is_directory(metrics_dir)) {
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(metrics_dir))
      if (entry.is_directory() && fs::exists(entry.path() / "metrics.txt"))
        names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    for (const auto& n : names) series.emplace_back(n, fs::path(metrics_dir) / n / "metrics.txt");
  }
  if (series.empty()) {
    std::cerr << "export: no metrics.txt under '" << metrics_dir << "'\n";
    return 1;
  }

  struct Loaded {
    std::string name;
    std::vector<StepMetrics> rows;
  };
  std::vector<Loaded> loaded;
  for (const auto& [name, path] : series) {
    Loaded l{name, {}};
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line))
      if (const auto m = parse_metrics_line(line)) l.rows.push_back(*m);
    loaded.push_back(std::move(l));
  }

  if (out_dir.empty()) out_dir = metrics_dir;
  fs::create_directories(out_dir);

  static const std::pair<const char*, double StepMetrics::*> kFields[] = {
      {"mean_reward_prior", &StepMetrics::mean_reward_prior},
      {"mean_reward_posterior", &StepMetrics::mean_reward_posterior},
      {"mean_trace_length", &StepMetrics::mean_trace_length},
      {"nll_loss", &StepMetrics::nll_loss},
      {"kl_loss", &StepMetrics::kl_loss},
      {"surrogate_loss", &StepMetrics::surrogate_loss},
      {"clip_fraction", &StepMetrics::clip_fraction},
      {"valid_format_fraction", &StepMetrics::valid_format_fraction},
      {"lr", &StepMetrics::lr},
      {"wall_time", &StepMetrics::wall_time},
  };
  for (const auto& [name, member] : kFields) {
    std::ofstream out(fs::path(out_dir) / ("export_" + std::string(name) + ".txt"));
    if (!out) throw std::runtime_error("cannot write to " + out_dir);
    out << "step series value\n";
    for (const auto& l : loaded)
      for (const auto& row : l.rows)
        out << row.step << " " << l.name << " " << fmt17(row.*member) << "\n";
  }
  std::cout << "wrote " << std::size(kFields) << " tables for " << loaded.size()
            << " series to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"covrl: a desk-scale coupled variational RL training laboratory"};
  app.require_subcommand(1);

  CommonFlags tf, vf, sf, ef;

  CLI::App* train = app.add_subcommand("train", "Run training with the composite objective");
  add_common(train, tf);
  std::string resume;
  train->add_option("--resume", resume, "Resume from a .train checkpoint");

  CLI::App* validate = app.add_subcommand("validate", "Run the enumeration validation suite");
  add_common(validate, vf);
  long long samples = 100000;
  validate->add_option("--samples", samples, "Monte Carlo samples per statistical check");
  std::string audit_csv;
  validate->add_option("--audit-csv", audit_csv, "Write per-token estimator audit records here");
  bool inject_bias = false;
  validate->add_flag("--inject-bias", inject_bias)->group("");  // fault-injection test hook

  CLI::App* sweep = app.add_subcommand("sweep", "Train once per value along one axis");
  add_common(sweep, sf);
  std::string axis, values;
  sweep->add_option("--axis", axis, "alpha | lambda_kl | lambda_nll | reward_variant | method");
  sweep->add_option("--values", values, "Comma-separated axis values");

  CLI::App* exp = app.add_subcommand("export", "Flatten metrics into tidy per-field tables");
  add_common(exp, ef);
  std::string metrics_dir;
  exp->add_option("--metrics-dir", metrics_dir, "Run directory or sweep root to export");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      RunConfig c = resolve(tf, "train");
      if (!resume.empty()) c.resume = resume;
      return cmd_train(std::move(c));
    }
    if (*validate) {
      RunConfig c = resolve(vf, "validate");
      c.validate();
      if (samples < 100) throw ConfigError(0, "samples", "need at least 100 MC samples");
      return cmd_validate(c, static_cast<long>(samples), audit_csv, inject_bias);
    }
    if (*sweep) {
      RunConfig c = resolve(sf, "sweep");
      if (!axis.empty()) c.sweep_axis = axis;
      if (!values.empty()) c.sweep_values = split_csv(values, "sweep.values");
      return cmd_sweep(std::move(c));
    }
    if (*exp) {
      std::string dir = metrics_dir;
      if (dir.empty() && !ef.config.empty()) dir = resolve(ef, "export").output_dir;
      if (dir.empty()) throw ConfigError(0, "metrics-dir", "required (flag or config output_dir)");
      return cmd_export(dir, ef.output);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const TrainingAbort& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
