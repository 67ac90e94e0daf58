#include "covrl/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "covrl/estimators.hpp"

namespace covrl {

ConfigError::ConfigError(int line_no, std::string field_name, const std::string& message)
    : std::runtime_error((line_no > 0 ? "line " + std::to_string(line_no) + ": " : "") +
                         field_name + ": " + message),
      line(line_no),
      field(std::move(field_name)) {}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

long long parse_int(const std::string& v, int line, const std::string& key) {
  try {
    size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return x;
  } catch (const std::exception&) {
    throw ConfigError(line, key, "expected an integer, got '" + v + "'");
  }
}

double parse_real(const std::string& v, int line, const std::string& key) {
  try {
    size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return x;
  } catch (const std::exception&) {
    throw ConfigError(line, key, "expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& v, int line, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(line, key, "expected true/false, got '" + v + "'");
}

std::vector<std::string> parse_list(const std::string& v, int line, const std::string& key) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError(line, key, "empty list item");
    out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    out += items[i];
  }
  return out;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using Setter = std::function<void(RunConfig&, const std::string&, int)>;

const std::map<std::string, Setter>& schema() {
  static const std::map<std::string, Setter> table = {
      {"command",
       [](RunConfig& c, const std::string& v, int ln) {
         if (v != "train" && v != "validate" && v != "sweep" && v != "export")
           throw ConfigError(ln, "command", "unknown command '" + v + "'");
         c.command = v;
       }},
      {"seed",
       [](RunConfig& c, const std::string& v, int ln) {
         c.training.seed = static_cast<uint64_t>(parse_int(v, ln, "seed"));
         c.seed_provided = true;
       }},
      {"alpha", [](RunConfig& c, const std::string& v, int ln) { c.training.alpha = parse_real(v, ln, "alpha"); }},
      {"clip_epsilon", [](RunConfig& c, const std::string& v, int ln) { c.training.clip_epsilon = parse_real(v, ln, "clip_epsilon"); }},
      {"lambda_kl", [](RunConfig& c, const std::string& v, int ln) { c.training.lambda_kl = parse_real(v, ln, "lambda_kl"); }},
      {"lambda_nll", [](RunConfig& c, const std::string& v, int ln) { c.training.lambda_nll = parse_real(v, ln, "lambda_nll"); }},
      {"reward_variant",
       [](RunConfig& c, const std::string& v, int ln) {
         try {
           c.training.reward_variant = reward_variant_from_name(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(ln, "reward_variant", e.what());
         }
       }},
      {"softclip_threshold", [](RunConfig& c, const std::string& v, int ln) { c.training.softclip_threshold = parse_real(v, ln, "softclip_threshold"); }},
      {"group_size", [](RunConfig& c, const std::string& v, int ln) { c.training.group_size = static_cast<int>(parse_int(v, ln, "group_size")); }},
      {"instances_per_batch", [](RunConfig& c, const std::string& v, int ln) { c.training.instances_per_batch = static_cast<int>(parse_int(v, ln, "instances_per_batch")); }},
      {"total_steps", [](RunConfig& c, const std::string& v, int ln) { c.training.total_steps = static_cast<int>(parse_int(v, ln, "total_steps")); }},
      {"warmup_steps", [](RunConfig& c, const std::string& v, int ln) { c.training.warmup_steps = static_cast<int>(parse_int(v, ln, "warmup_steps")); }},
      {"peak_lr", [](RunConfig& c, const std::string& v, int ln) { c.training.peak_lr = parse_real(v, ln, "peak_lr"); }},
      {"baseline_scope",
       [](RunConfig& c, const std::string& v, int ln) {
         if (v == "group") c.training.baseline_scope = BaselineScope::group;
         else if (v == "batch") c.training.baseline_scope = BaselineScope::batch;
         else throw ConfigError(ln, "baseline_scope", "expected group or batch");
       }},
      {"adam_beta1", [](RunConfig& c, const std::string& v, int ln) { c.training.adam_beta1 = parse_real(v, ln, "adam_beta1"); }},
      {"adam_beta2", [](RunConfig& c, const std::string& v, int ln) { c.training.adam_beta2 = parse_real(v, ln, "adam_beta2"); }},
      {"adam_eps", [](RunConfig& c, const std::string& v, int ln) { c.training.adam_eps = parse_real(v, ln, "adam_eps"); }},
      {"eval_every", [](RunConfig& c, const std::string& v, int ln) { c.training.eval_every = static_cast<int>(parse_int(v, ln, "eval_every")); }},
      {"eval_instances", [](RunConfig& c, const std::string& v, int ln) { c.training.eval_instances = static_cast<int>(parse_int(v, ln, "eval_instances")); }},
      {"checkpoint_every", [](RunConfig& c, const std::string& v, int ln) { c.training.checkpoint_every = static_cast<int>(parse_int(v, ln, "checkpoint_every")); }},
      {"sampling.temperature", [](RunConfig& c, const std::string& v, int ln) { c.training.sampling.temperature = parse_real(v, ln, "sampling.temperature"); }},
      {"sampling.top_p", [](RunConfig& c, const std::string& v, int ln) { c.training.sampling.top_p = parse_real(v, ln, "sampling.top_p"); }},
      {"sampling.max_new_tokens", [](RunConfig& c, const std::string& v, int ln) { c.training.sampling.max_new_tokens = static_cast<int>(parse_int(v, ln, "sampling.max_new_tokens")); }},
      {"model.backend",
       [](RunConfig& c, const std::string& v, int ln) {
         if (v == "tabular") c.model.backend = Backend::tabular;
         else if (v == "neural") c.model.backend = Backend::neural;
         else throw ConfigError(ln, "model.backend", "expected tabular or neural");
       }},
      {"model.context_length", [](RunConfig& c, const std::string& v, int ln) { c.model.context_length = static_cast<int>(parse_int(v, ln, "model.context_length")); }},
      {"model.num_buckets", [](RunConfig& c, const std::string& v, int ln) { c.model.arch.tabular.num_buckets = static_cast<int>(parse_int(v, ln, "model.num_buckets")); }},
      {"model.embed_dim", [](RunConfig& c, const std::string& v, int ln) { c.model.arch.neural.embed_dim = static_cast<int>(parse_int(v, ln, "model.embed_dim")); }},
      {"model.hidden_dim", [](RunConfig& c, const std::string& v, int ln) { c.model.arch.neural.hidden_dim = static_cast<int>(parse_int(v, ln, "model.hidden_dim")); }},
      {"model.close_bias",
       [](RunConfig& c, const std::string& v, int ln) {
         c.model.close_bias = parse_real(v, ln, "model.close_bias");
       }},
      {"model.init_std",
       [](RunConfig& c, const std::string& v, int ln) {
         const double std = parse_real(v, ln, "model.init_std");
         c.model.arch.tabular.init_std = std;
         c.model.arch.neural.init_std = std;
       }},
      {"task.family", [](RunConfig& c, const std::string& v, int) { c.task.family = v; }},
      {"task.k_min", [](RunConfig& c, const std::string& v, int ln) { c.task.k_min = static_cast<int>(parse_int(v, ln, "task.k_min")); }},
      {"task.k_max", [](RunConfig& c, const std::string& v, int ln) { c.task.k_max = static_cast<int>(parse_int(v, ln, "task.k_max")); }},
      {"task.modulus", [](RunConfig& c, const std::string& v, int ln) { c.task.modulus = static_cast<int>(parse_int(v, ln, "task.modulus")); }},
      {"task.ops", [](RunConfig& c, const std::string& v, int) { c.task.ops = v; }},
      {"output_dir", [](RunConfig& c, const std::string& v, int) { c.output_dir = v; }},
      {"deterministic", [](RunConfig& c, const std::string& v, int ln) { c.deterministic = parse_bool(v, ln, "deterministic"); }},
      {"resume", [](RunConfig& c, const std::string& v, int) { c.resume = v; }},
      {"sweep.axis", [](RunConfig& c, const std::string& v, int) { c.sweep_axis = v; }},
      {"sweep.values", [](RunConfig& c, const std::string& v, int ln) { c.sweep_values = parse_list(v, ln, "sweep.values"); }},
      {"methods", [](RunConfig& c, const std::string& v, int ln) { c.methods = parse_list(v, ln, "methods"); }},
      {"latro_beta", [](RunConfig& c, const std::string& v, int ln) { c.latro_beta = parse_real(v, ln, "latro_beta"); }},
  };
  return table;
}

}  // namespace

RunConfig parse_config_text(std::istream& in, const std::string& origin) {
  RunConfig config;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(line_no, origin, "expected key = value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = schema().find(key);
    if (it == schema().end()) throw ConfigError(line_no, key, "unknown key");
    it->second(config, value, line_no);
  }
  return config;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(0, path, "cannot open config file");
  return parse_config_text(f, path);
}

void RunConfig::validate() const {
  if (command != "train" && command != "validate" && command != "sweep" && command != "export")
    throw ConfigError(0, "command", "unknown command '" + command + "'");
  training.validate();
  if (task.family != "mod_chain")
    throw ConfigError(0, "task.family", "unknown family '" + task.family + "'");
  if (task.k_min < 1 || task.k_max < task.k_min)
    throw ConfigError(0, "task.k_min", "need 1 <= k_min <= k_max");
  if (task.modulus < 2 || task.modulus > 1000)
    throw ConfigError(0, "task.modulus", "need modulus in [2, 1000]");
  if (task.ops.empty() || task.ops.find_first_not_of("+*-") != std::string::npos)
    throw ConfigError(0, "task.ops", "must be a non-empty subset of +*-");
  if (model.context_length < 8)
    throw ConfigError(0, "model.context_length", "must be >= 8");
  if (!(model.arch.tabular.init_std > 0.0) || !(model.arch.neural.init_std > 0.0))
    throw ConfigError(0, "model.init_std", "must be positive");
  if (!(std::abs(model.close_bias) <= 20.0))
    throw ConfigError(0, "model.close_bias", "must be in [-20, 20]");
  if (model.arch.neural.embed_dim < 1 || model.arch.neural.hidden_dim < 1)
    throw ConfigError(0, "model.embed_dim", "neural dims must be positive");
  if (latro_beta < 0.0) throw ConfigError(0, "latro_beta", "must be >= 0");
  if (command == "train" || command == "sweep") {
    if (!seed_provided)
      throw ConfigError(0, "seed", "required (set in the config file or pass --seed)");
  }
  if (command == "sweep") {
    static const char* axes[] = {"alpha", "lambda_kl", "lambda_nll", "reward_variant",
                                 "method"};
    bool known = false;
    for (const char* a : axes) known |= (sweep_axis == a);
    if (!known)
      throw ConfigError(0, "sweep.axis",
                        "required: one of alpha, lambda_kl, lambda_nll, reward_variant, method");
    if (sweep_values.empty()) throw ConfigError(0, "sweep.values", "required: non-empty list");
  }
}

void write_config_snapshot(std::ostream& out, const RunConfig& c) {
  out << "command = " << c.command << "\n";
  out << "seed = " << c.training.seed << "\n";
  out << "alpha = " << fmt17(c.training.alpha) << "\n";
  out << "clip_epsilon = " << fmt17(c.training.clip_epsilon) << "\n";
  out << "lambda_kl = " << fmt17(c.training.lambda_kl) << "\n";
  out << "lambda_nll = " << fmt17(c.training.lambda_nll) << "\n";
  out << "reward_variant = " << reward_variant_name(c.training.reward_variant) << "\n";
  out << "softclip_threshold = " << fmt17(c.training.softclip_threshold) << "\n";
  out << "group_size = " << c.training.group_size << "\n";
  out << "instances_per_batch = " << c.training.instances_per_batch << "\n";
  out << "total_steps = " << c.training.total_steps << "\n";
  out << "warmup_steps = " << c.training.warmup_steps << "\n";
  out << "peak_lr = " << fmt17(c.training.peak_lr) << "\n";
  out << "baseline_scope = "
      << (c.training.baseline_scope == BaselineScope::group ? "group" : "batch") << "\n";
  out << "adam_beta1 = " << fmt17(c.training.adam_beta1) << "\n";
  out << "adam_beta2 = " << fmt17(c.training.adam_beta2) << "\n";
  out << "adam_eps = " << fmt17(c.training.adam_eps) << "\n";
  out << "eval_every = " << c.training.eval_every << "\n";
  out << "eval_instances = " << c.training.eval_instances << "\n";
  out << "checkpoint_every = " << c.training.checkpoint_every << "\n";
  out << "sampling.temperature = " << fmt17(c.training.sampling.temperature) << "\n";
  out << "sampling.top_p = " << fmt17(c.training.sampling.top_p) << "\n";
  out << "sampling.max_new_tokens = " << c.training.sampling.max_new_tokens << "\n";
  out << "model.backend = " << (c.model.backend == Backend::tabular ? "tabular" : "neural")
      << "\n";
  out << "model.context_length = " << c.model.context_length << "\n";
  out << "model.close_bias = " << fmt17(c.model.close_bias) << "\n";
  out << "model.num_buckets = " << c.model.arch.tabular.num_buckets << "\n";
  out << "model.embed_dim = " << c.model.arch.neural.embed_dim << "\n";
  out << "model.hidden_dim = " << c.model.arch.neural.hidden_dim << "\n";
  out << "model.init_std = "
      << fmt17(c.model.backend == Backend::tabular ? c.model.arch.tabular.init_std
                                                   : c.model.arch.neural.init_std)
      << "\n";
  out << "task.family = " << c.task.family << "\n";
  out << "task.k_min = " << c.task.k_min << "\n";
  out << "task.k_max = " << c.task.k_max << "\n";
  out << "task.modulus = " << c.task.modulus << "\n";
  out << "task.ops = " << c.task.ops << "\n";
  out << "output_dir = " << c.output_dir << "\n";
  out << "deterministic = " << (c.deterministic ? "true" : "false") << "\n";
  out << "resume = " << c.resume << "\n";
  if (!c.sweep_axis.empty()) out << "sweep.axis = " << c.sweep_axis << "\n";
  if (!c.sweep_values.empty()) out << "sweep.values = " << join(c.sweep_values) << "\n";
  if (!c.methods.empty()) out << "methods = " << join(c.methods) << "\n";
  out << "latro_beta = " << fmt17(c.latro_beta) << "\n";
}

PolicyModel build_model(const RunConfig& config) {
  const Vocabulary vocab = make_task_vocabulary(config.task);
  ArchConfig arch = config.model.arch;
  if (config.model.backend == Backend::neural) {
    if (config.model.close_bias != 0.0)
      arch.neural.token_bias.emplace_back(vocab.think_close, config.model.close_bias);
    // Answer spans read out through their own head so answer-token pressure
    // stays off the juncture logits.
    arch.neural.mode_on_token = vocab.answer_open;
    arch.neural.mode_off_token = vocab.answer_close;
    arch.neural.span_on_token = vocab.think_open;
    arch.neural.span_off_token = vocab.think_close;
    // Only digits feed the copy memories; remembering operators would point
    // the copies at junk.
    arch.neural.content_limit = config.task.modulus;
  }
  return init_model(config.model.backend, vocab.size(), config.model.context_length,
                    arch, config.training.seed);
}

}  // namespace covrl
