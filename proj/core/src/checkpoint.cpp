#include "covrl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace covrl {

namespace {

constexpr const char* kFormatId = "covrl-model 1";

void require(bool ok, const std::string& what) {
  if (!ok) throw std::runtime_error("checkpoint: " + what);
}

std::string read_line(std::istream& in, const char* what) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), std::string("missing ") + what);
  return line;
}

uint64_t to_le_bits(double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, sizeof bits);
  if constexpr (std::endian::native == std::endian::big) {
    bits = __builtin_bswap64(bits);
  }
  return bits;
}

double from_le_bits(uint64_t bits) {
  if constexpr (std::endian::native == std::endian::big) {
    bits = __builtin_bswap64(bits);
  }
  double d;
  std::memcpy(&d, &bits, sizeof d);
  return d;
}

}  // namespace

void write_f64_block(std::ostream& out, const std::vector<double>& v) {
  for (double d : v) {
    const uint64_t bits = to_le_bits(d);
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
}

std::vector<double> read_f64_block(std::istream& in, size_t n) {
  std::vector<double> v(n);
  for (size_t i = 0; i < n; ++i) {
    uint64_t bits;
    in.read(reinterpret_cast<char*>(&bits), sizeof bits);
    require(static_cast<bool>(in), "truncated parameter block");
    v[i] = from_le_bits(bits);
  }
  return v;
}

void CheckpointCodec::write(const PolicyModel& model, std::ostream& out) {
  out << kFormatId << "\n";
  out << "backend " << (model.backend_ == Backend::tabular ? "tabular" : "neural") << "\n";
  out << "vocab_size " << model.vocab_size_ << "\n";
  out << "context_length " << model.context_length_ << "\n";
  if (model.backend_ == Backend::tabular) {
    const auto& tc = model.arch_.tabular;
    out << "num_buckets " << tc.num_buckets << "\n";
    out << "init_std " << std::hexfloat << tc.init_std << std::defaultfloat << "\n";
    out << "explicit_contexts " << tc.explicit_contexts.size() << "\n";
    for (const auto& ctx : tc.explicit_contexts) {
      out << "ctx";
      for (int t : ctx) out << ' ' << t;
      out << "\n";
    }
  } else {
    const auto& nc = model.arch_.neural;
    out << "embed_dim " << nc.embed_dim << "\n";
    out << "hidden_dim " << nc.hidden_dim << "\n";
    out << "init_std " << std::hexfloat << nc.init_std << std::defaultfloat << "\n";
    out << "mode_tokens " << nc.mode_on_token << ' ' << nc.mode_off_token << "\n";
    out << "span_tokens " << nc.span_on_token << ' ' << nc.span_off_token << "\n";
    out << "copy_channel " << nc.content_limit << ' ' << std::hexfloat << nc.copy_gain
        << ' ' << nc.copy_gain_trace << std::defaultfloat << "\n";
  }
  out << "param_count " << model.params_.size() << "\n";
  out << "params\n";
  write_f64_block(out, model.params_);
}

namespace {

// Parses "key value..." and checks the key.
std::istringstream keyed(const std::string& line, const char* key) {
  std::istringstream ss(line);
  std::string k;
  ss >> k;
  require(k == key, std::string("expected '") + key + "', got '" + k + "'");
  return ss;
}

}  // namespace

PolicyModel CheckpointCodec::read(std::istream& in) {
  require(read_line(in, "format id") == kFormatId, "unknown format id");
  std::string backend_name;
  keyed(read_line(in, "backend"), "backend") >> backend_name;
  require(backend_name == "tabular" || backend_name == "neural", "unknown backend");
  const Backend backend = backend_name == "tabular" ? Backend::tabular : Backend::neural;

  int vocab_size = 0, context_length = 0;
  keyed(read_line(in, "vocab_size"), "vocab_size") >> vocab_size;
  keyed(read_line(in, "context_length"), "context_length") >> context_length;

  ArchConfig arch;
  if (backend == Backend::tabular) {
    size_t n_ctx = 0;
    keyed(read_line(in, "num_buckets"), "num_buckets") >> arch.tabular.num_buckets;
    keyed(read_line(in, "init_std"), "init_std") >> std::hexfloat >> arch.tabular.init_std;
    keyed(read_line(in, "explicit_contexts"), "explicit_contexts") >> n_ctx;
    for (size_t i = 0; i < n_ctx; ++i) {
      auto ss = keyed(read_line(in, "ctx"), "ctx");
      std::vector<int> ctx;
      int t;
      while (ss >> t) ctx.push_back(t);
      arch.tabular.explicit_contexts.push_back(std::move(ctx));
    }
  } else {
    keyed(read_line(in, "embed_dim"), "embed_dim") >> arch.neural.embed_dim;
    keyed(read_line(in, "hidden_dim"), "hidden_dim") >> arch.neural.hidden_dim;
    keyed(read_line(in, "init_std"), "init_std") >> std::hexfloat >> arch.neural.init_std;
    keyed(read_line(in, "mode_tokens"), "mode_tokens") >> arch.neural.mode_on_token >>
        arch.neural.mode_off_token;
    keyed(read_line(in, "span_tokens"), "span_tokens") >> arch.neural.span_on_token >>
        arch.neural.span_off_token;
    keyed(read_line(in, "copy_channel"), "copy_channel") >> arch.neural.content_limit >>
        std::hexfloat >> arch.neural.copy_gain >> arch.neural.copy_gain_trace;
  }

  size_t param_count = 0;
  keyed(read_line(in, "param_count"), "param_count") >> param_count;
  require(read_line(in, "params marker") == "params", "missing params marker");

  // Rebuild structure through init_model, then overwrite the parameters.
  PolicyModel m = init_model(backend, vocab_size, context_length, arch, 0);
  require(m.params_.size() == param_count, "param_count does not match architecture");
  m.params_ = read_f64_block(in, param_count);
  return m;
}

void save_model(const PolicyModel& model, std::ostream& out) {
  CheckpointCodec::write(model, out);
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

void save_model(const PolicyModel& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  save_model(model, f);
}

PolicyModel load_model(std::istream& in) { return CheckpointCodec::read(in); }

PolicyModel load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open for read: " + path);
  return load_model(f);
}

}  // namespace covrl
