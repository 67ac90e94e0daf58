#include "covrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "covrl/rng.hpp"

namespace covrl {

namespace {

constexpr uint64_t kHashBasis = 0xcbf29ce484222325ULL;

uint64_t hash_step(uint64_t h, int token) {
  h ^= static_cast<uint64_t>(token) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h * 0x100000001b3ULL;
}

uint64_t finalize_hash(uint64_t h) {
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  return h;
}

std::vector<double> softmax(std::span<const double> logits) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  std::vector<double> probs(logits.size());
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - m);
    z += probs[i];
  }
  for (double& p : probs) p /= z;
  return probs;
}

double log_softmax_at(std::span<const double> logits, int token) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  return logits[token] - m - std::log(z);
}

// Plain GRU step; mirrors the tape version in score_sequence_nodes. The two
// are pinned together by a unit test (plain == tape scores bitwise).
void gru_step(const PolicyModel& model, std::vector<double>& h, int token) {
  const auto& L = model.layout();
  const auto& p = model.parameters();
  const int E = L.embed_dim, H = L.hidden_dim, T = E + H;
  const double* x = p.data() + L.emb + static_cast<size_t>(token) * E;
  auto gate = [&](int w_off, int b_off, const double* hv, double* out, bool use_tanh) {
    for (int r = 0; r < H; ++r) {
      double acc = p[b_off + r];
      const double* wr = p.data() + w_off + static_cast<size_t>(r) * T;
      for (int c = 0; c < E; ++c) acc += wr[c] * x[c];
      for (int c = 0; c < H; ++c) acc += wr[E + c] * hv[c];
      out[r] = use_tanh ? std::tanh(acc) : 1.0 / (1.0 + std::exp(-acc));
    }
  };
  std::vector<double> z(H), r(H), rh(H), c(H);
  gate(L.wz, L.bz, h.data(), z.data(), false);
  gate(L.wr, L.br, h.data(), r.data(), false);
  for (int i = 0; i < H; ++i) rh[i] = r[i] * h[i];
  gate(L.wc, L.bc, rh.data(), c.data(), true);
  for (int i = 0; i < H; ++i) h[i] = h[i] + z[i] * (c[i] - h[i]);
}

// Plain logits; mirrors the tape composition in score_sequence_nodes op for
// op so the two stay bitwise equal. The active copy memory is the opposite
// segment's: mem_think feeds the segment head, mem_answer the shared one.
std::vector<double> output_logits(const PolicyModel& model, const std::vector<double>& h,
                                  bool seg_mode, int mem_think, int mem_answer) {
  const auto& L = model.layout();
  const auto& p = model.parameters();
  const int V = model.vocab_size(), H = L.hidden_dim, E = L.embed_dim;
  std::vector<double> logits(V);
  for (int v = 0; v < V; ++v) {
    double head = p[(seg_mode ? L.bo2 : L.bo) + v];
    const double* wr = p.data() + (seg_mode ? L.wo2 : L.wo) + static_cast<size_t>(v) * H;
    for (int c = 0; c < H; ++c) head += wr[c] * h[c];
    if (seg_mode) {
      double quad = 0.0;
      const double* ar = p.data() + L.a2 + static_cast<size_t>(v) * H;
      for (int c = 0; c < H; ++c) quad += ar[c] * (h[c] * h[c]);
      head = head + quad;
    }
    logits[v] = head;
  }
  const int mem_token = seg_mode ? mem_think : mem_answer;
  if (mem_token >= 0) {
    const auto& nc = model.arch().neural;
    const double gain = seg_mode ? nc.copy_gain : nc.copy_gain_trace;
    const double* mem = p.data() + L.emb + static_cast<size_t>(mem_token) * E;
    for (int v = 0; v < V; ++v) {
      double dot = 0.0;
      const double* ev = p.data() + L.emb + static_cast<size_t>(v) * E;
      for (int c = 0; c < E; ++c) dot += ev[c] * mem[c];
      logits[v] = logits[v] + gain * dot;
    }
  }
  return logits;
}

// Answer-segment automaton shared by every scoring path: consuming the on
// marker enters the segment, the off marker leaves it.
inline void update_seg_mode(const PolicyModel& model, bool& seg_mode, int token) {
  if (model.backend() != Backend::neural) return;
  const auto& nc = model.arch().neural;
  if (token == nc.mode_on_token) seg_mode = true;
  else if (token == nc.mode_off_token) seg_mode = false;
}

// Copy-channel automaton, shared by every scoring path like update_seg_mode:
// span markers open and close a think span, and a content token consumed
// inside one span type becomes that span's remembered token. Content outside
// both span types is ignored.
inline void update_copy_mem(const PolicyModel& model, bool seg_mode, bool& span_mode,
                            int& mem_think, int& mem_answer, int token) {
  if (model.backend() != Backend::neural) return;
  const auto& nc = model.arch().neural;
  if (token == nc.span_on_token) { span_mode = true; return; }
  if (token == nc.span_off_token) { span_mode = false; return; }
  if (token >= nc.content_limit || nc.content_limit < 0) return;
  if (seg_mode) mem_answer = token;
  else if (span_mode) mem_think = token;
}

}  // namespace

bool PolicyModel::explicit_contexts() const {
  return backend_ == Backend::tabular && !arch_.tabular.explicit_contexts.empty();
}

int PolicyModel::context_row(std::span<const int> context) const {
  if (backend_ != Backend::tabular)
    throw std::logic_error("context_row: tabular backend only");
  if (explicit_contexts()) {
    auto it = explicit_rows_.find(std::vector<int>(context.begin(), context.end()));
    if (it == explicit_rows_.end())
      throw std::out_of_range("context_row: context not in explicit table");
    return it->second;
  }
  uint64_t h = kHashBasis;
  for (int t : context) h = hash_step(h, t);
  return static_cast<int>(finalize_hash(h) &
                          static_cast<uint64_t>(arch_.tabular.num_buckets - 1));
}

PolicyModel init_model(Backend backend, int vocab_size, int context_length,
                       const ArchConfig& arch, uint64_t seed) {
  if (vocab_size < 2) throw std::invalid_argument("init_model: vocab_size must be >= 2");
  if (context_length < 1 || context_length > 65536)
    throw std::invalid_argument("init_model: context_length out of range");
  PolicyModel m;
  m.backend_ = backend;
  m.vocab_size_ = vocab_size;
  m.context_length_ = context_length;
  m.arch_ = arch;
  Rng rng(Rng::derive(seed, {0x1717}));
  if (backend == Backend::tabular) {
    const auto& tc = arch.tabular;
    int rows;
    if (!tc.explicit_contexts.empty()) {
      rows = static_cast<int>(tc.explicit_contexts.size());
      for (int i = 0; i < rows; ++i) {
        const auto& ctx = tc.explicit_contexts[i];
        if (static_cast<int>(ctx.size()) > context_length)
          throw std::invalid_argument("init_model: explicit context exceeds context_length");
        if (!m.explicit_rows_.emplace(ctx, i).second)
          throw std::invalid_argument("init_model: duplicate explicit context");
      }
    } else {
      rows = tc.num_buckets;
      if (rows < 1 || (rows & (rows - 1)) != 0)
        throw std::invalid_argument("init_model: num_buckets must be a power of two");
    }
    m.params_.resize(static_cast<size_t>(rows) * vocab_size);
    for (double& p : m.params_) p = rng.normal(0.0, tc.init_std);
  } else {
    const auto& nc = arch.neural;
    if (nc.embed_dim < 1 || nc.hidden_dim < 1)
      throw std::invalid_argument("init_model: neural dims must be positive");
    const int V = vocab_size, E = nc.embed_dim, H = nc.hidden_dim, T = E + H;
    PolicyModel::NeuralLayout L;
    L.embed_dim = E;
    L.hidden_dim = H;
    int off = 0;
    L.emb = off; off += V * E;
    L.wz = off; off += H * T;
    L.bz = off; off += H;
    L.wr = off; off += H * T;
    L.br = off; off += H;
    L.wc = off; off += H * T;
    L.bc = off; off += H;
    L.wo = off; off += V * H;
    L.bo = off; off += V;
    L.wo2 = off; off += V * H;
    L.bo2 = off; off += V;
    L.a2 = off; off += V * H;
    m.layout_ = L;
    m.params_.assign(static_cast<size_t>(off), 0.0);
    // Weights get noise, biases start at zero.
    auto fill = [&](int o, int n) {
      for (int i = 0; i < n; ++i) m.params_[o + i] = rng.normal(0.0, nc.init_std);
    };
    fill(L.emb, V * E);
    fill(L.wz, H * T);
    fill(L.wr, H * T);
    fill(L.wc, H * T);
    fill(L.wo, V * H);
    fill(L.wo2, V * H);
    fill(L.a2, V * H);
    // token_bias targets the shared head only; the segment head keeps its
    // generic init (a format prior on delimiters would be wrong there).
    for (const auto& [token, bias] : nc.token_bias) {
      if (token < 0 || token >= V)
        throw std::invalid_argument("init_model: token_bias outside vocab");
      m.params_[static_cast<size_t>(L.bo) + token] += bias;
    }
  }
  return m;
}

DecodeState::DecodeState(const PolicyModel& model)
    : model_(&model), hash_(kHashBasis) {
  if (model.backend() == Backend::neural)
    h_.assign(model.layout().hidden_dim, 0.0);
}

void DecodeState::advance(int token) {
  if (token < 0 || token >= model_->vocab_size())
    throw std::out_of_range("DecodeState::advance: token outside vocab");
  if (length() >= model_->context_length())
    throw std::length_error("DecodeState::advance: context_length exceeded");
  tokens_.push_back(token);
  if (model_->backend() == Backend::tabular) {
    hash_ = hash_step(hash_, token);
  } else {
    gru_step(*model_, h_, token);
    update_seg_mode(*model_, seg_mode_, token);
    update_copy_mem(*model_, seg_mode_, span_mode_, mem_think_, mem_answer_, token);
  }
}

std::vector<double> DecodeState::logits() const {
  const int V = model_->vocab_size();
  if (model_->backend() == Backend::tabular) {
    int row;
    if (model_->explicit_contexts()) {
      row = model_->context_row(tokens_);
    } else {
      row = static_cast<int>(finalize_hash(hash_) &
                             static_cast<uint64_t>(model_->arch().tabular.num_buckets - 1));
    }
    const double* base = model_->parameters().data() + static_cast<size_t>(row) * V;
    return std::vector<double>(base, base + V);
  }
  return output_logits(*model_, h_, seg_mode_, mem_think_, mem_answer_);
}

std::vector<double> DecodeState::next_dist() const {
  auto l = logits();
  return softmax(l);
}

double DecodeState::next_logp(int token) const {
  if (token < 0 || token >= model_->vocab_size())
    throw std::out_of_range("DecodeState::next_logp: token outside vocab");
  auto l = logits();
  return log_softmax_at(l, token);
}

std::vector<double> next_token_dist(const PolicyModel& model,
                                    std::span<const int> context) {
  DecodeState st(model);
  for (int t : context) st.advance(t);
  return st.next_dist();
}

std::vector<double> score_sequence(const PolicyModel& model,
                                   std::span<const int> context,
                                   std::span<const int> sequence) {
  DecodeState st(model);
  for (int t : context) st.advance(t);
  std::vector<double> logps;
  logps.reserve(sequence.size());
  for (int t : sequence) {
    logps.push_back(st.next_logp(t));
    st.advance(t);
  }
  return logps;
}

std::vector<Tape::Var> score_sequence_nodes(Tape& tape,
                                            const PolicyModel& model,
                                            std::span<const int> context,
                                            std::span<const int> sequence) {
  std::vector<Tape::Var> out;
  out.reserve(sequence.size());
  const int V = model.vocab_size();
  if (static_cast<int>(context.size() + sequence.size()) > model.context_length())
    throw std::length_error("score_sequence_nodes: context_length exceeded");
  if (model.backend() == Backend::tabular) {
    std::vector<int> prefix(context.begin(), context.end());
    prefix.reserve(context.size() + sequence.size());
    for (int t : sequence) {
      if (t < 0 || t >= V) throw std::out_of_range("score_sequence_nodes: token outside vocab");
      const int row = model.context_row(prefix);
      Tape::Var logits = tape.param_slice(row * V, V);
      out.push_back(tape.log_prob_pick(logits, t));
      prefix.push_back(t);
    }
    return out;
  }
  const auto& L = model.layout();
  const auto& nc = model.arch().neural;
  const int E = L.embed_dim, H = L.hidden_dim;
  Tape::Var h = tape.zeros(H);
  bool seg = false, span = false;
  int mem_think = -1, mem_answer = -1;
  auto step = [&](int token) {
    Tape::Var x = tape.param_slice(L.emb + token * E, E);
    Tape::Var z = tape.sigmoid(tape.concat_linear(L.wz, L.bz, H, x, h));
    Tape::Var r = tape.sigmoid(tape.concat_linear(L.wr, L.br, H, x, h));
    Tape::Var c = tape.tanh_elem(tape.concat_linear(L.wc, L.bc, H, x, tape.mul(r, h)));
    h = tape.add(h, tape.mul(z, tape.sub(c, h)));
    update_seg_mode(model, seg, token);
    update_copy_mem(model, seg, span, mem_think, mem_answer, token);
  };
  for (int t : context) {
    if (t < 0 || t >= V) throw std::out_of_range("score_sequence_nodes: token outside vocab");
    step(t);
  }
  for (size_t i = 0; i < sequence.size(); ++i) {
    const int t = sequence[i];
    if (t < 0 || t >= V) throw std::out_of_range("score_sequence_nodes: token outside vocab");
    Tape::Var logits = tape.linear(seg ? L.wo2 : L.wo, seg ? L.bo2 : L.bo, V, H, h);
    if (seg)
      logits = tape.add(logits, tape.linear(L.a2, -1, V, H, tape.mul(h, h)));
    const int mem_token = seg ? mem_think : mem_answer;
    if (mem_token >= 0) {
      const double gain = seg ? nc.copy_gain : nc.copy_gain_trace;
      Tape::Var mem = tape.param_slice(L.emb + mem_token * E, E);
      Tape::Var dots = tape.linear(L.emb, -1, V, E, mem);
      logits = tape.add(logits, tape.scale(dots, gain));
    }
    out.push_back(tape.log_prob_pick(logits, t));
    if (i + 1 < sequence.size()) step(t);
  }
  return out;
}

FdReport finite_difference_check(
    PolicyModel& model,
    const std::function<Tape::Var(Tape&, const PolicyModel&)>& loss_builder,
    int n_params_sampled, double tolerance, uint64_t seed) {
  if (n_params_sampled < 1)
    throw std::invalid_argument("finite_difference_check: need at least one coordinate");
  auto eval = [&]() {
    Tape tape(&model.parameters());
    return tape.value(loss_builder(tape, model));
  };
  Tape tape(&model.parameters());
  Tape::Var loss = loss_builder(tape, model);
  GradientVector grad = tape.gradient(loss);

  Rng rng(Rng::derive(seed, {0xfd}));
  std::vector<size_t> indices;
  indices.reserve(n_params_sampled);
  for (int i = 0; i < n_params_sampled; ++i)
    indices.push_back(static_cast<size_t>(rng.next_int(static_cast<int>(model.param_count()))));

  const double step = 1e-4;
  FdCheckResult raw = covrl::finite_difference_check(
      model.parameters(), [&](const std::vector<double>&) { return eval(); }, grad,
      step, indices);
  FdReport rep;
  rep.n_checked = indices.size();
  rep.max_abs_err = raw.max_abs_err;
  rep.max_rel_err = raw.max_rel_err;
  rep.max_combined_err = raw.max_combined_err;
  rep.worst_index = raw.worst_index;
  rep.tolerance = tolerance;
  rep.pass = raw.max_combined_err <= tolerance;
  return rep;
}

}  // namespace covrl
