#include "covrl/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace covrl {

Tape::Tape(const std::vector<double>* params) : params_(params) {
  if (!params_) throw std::invalid_argument("Tape: null parameter vector");
  nodes_.reserve(256);
  vals_.reserve(4096);
}

const double* Tape::params_data() const { return params_->data(); }

Tape::Var Tape::push(Node n) {
  n.out = static_cast<int32_t>(vals_.size());
  vals_.resize(vals_.size() + n.size);
  nodes_.push_back(n);
  return Var{static_cast<int32_t>(nodes_.size() - 1), n.size};
}

namespace {
void check_scalar(Tape::Var v, const char* what) {
  if (v.size != 1) throw std::invalid_argument(std::string(what) + ": scalar var required");
}
void check_same(Tape::Var a, Tape::Var b, const char* what) {
  if (a.size != b.size) throw std::invalid_argument(std::string(what) + ": size mismatch");
}
}  // namespace

Tape::Var Tape::param_slice(int offset, int len) {
  if (offset < 0 || len <= 0 || static_cast<size_t>(offset + len) > params_->size())
    throw std::out_of_range("Tape::param_slice: slice outside parameter vector");
  Node n;
  n.op = Op::kParam;
  n.size = len;
  n.w_off = offset;
  Var v = push(n);
  std::copy_n(params_data() + offset, len, vals_.begin() + nodes_.back().out);
  return v;
}

Tape::Var Tape::constant(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("Tape::constant: empty");
  Node n;
  n.op = Op::kConst;
  n.size = static_cast<int32_t>(values.size());
  Var v = push(n);
  std::copy(values.begin(), values.end(), vals_.begin() + nodes_.back().out);
  return v;
}

Tape::Var Tape::constant_scalar(double value) {
  return constant(std::span<const double>(&value, 1));
}

Tape::Var Tape::zeros(int len) {
  std::vector<double> z(static_cast<size_t>(len), 0.0);
  return constant(z);
}

Tape::Var Tape::linear(int w_offset, int b_offset, int rows, int cols, Var x) {
  if (x.size != cols) throw std::invalid_argument("Tape::linear: input size != cols");
  Node n;
  n.op = Op::kLinear;
  n.size = rows;
  n.a = x.node;
  n.w_off = w_offset;
  n.b_off = b_offset;
  n.rows = rows;
  n.cols = cols;
  Var v = push(n);
  const Node& self = nodes_.back();
  const double* W = params_data() + w_offset;
  const double* xv = vals_.data() + nodes_[x.node].out;
  double* out = vals_.data() + self.out;
  for (int r = 0; r < rows; ++r) {
    double acc = (b_offset >= 0) ? params_data()[b_offset + r] : 0.0;
    const double* wr = W + static_cast<size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) acc += wr[c] * xv[c];
    out[r] = acc;
  }
  return v;
}

Tape::Var Tape::concat_linear(int w_offset, int b_offset, int rows, Var x, Var h) {
  Node n;
  n.op = Op::kConcatLinear;
  n.size = rows;
  n.a = x.node;
  n.b = h.node;
  n.w_off = w_offset;
  n.b_off = b_offset;
  n.rows = rows;
  n.cols = x.size;  // boundary between the x block and the h block
  Var v = push(n);
  const Node& self = nodes_.back();
  const int total = x.size + h.size;
  const double* W = params_data() + w_offset;
  const double* xv = vals_.data() + nodes_[x.node].out;
  const double* hv = vals_.data() + nodes_[h.node].out;
  double* out = vals_.data() + self.out;
  for (int r = 0; r < rows; ++r) {
    double acc = (b_offset >= 0) ? params_data()[b_offset + r] : 0.0;
    const double* wr = W + static_cast<size_t>(r) * total;
    for (int c = 0; c < x.size; ++c) acc += wr[c] * xv[c];
    for (int c = 0; c < h.size; ++c) acc += wr[x.size + c] * hv[c];
    out[r] = acc;
  }
  return v;
}

#define COVRL_ELEMENTWISE(NAME, OP_ENUM, EXPR)                      \
  Tape::Var Tape::NAME(Var a, Var b) {                              \
    check_same(a, b, #NAME);                                        \
    Node n;                                                         \
    n.op = Op::OP_ENUM;                                             \
    n.size = a.size;                                                \
    n.a = a.node;                                                   \
    n.b = b.node;                                                   \
    Var v = push(n);                                                \
    const Node& self = nodes_.back();                               \
    const double* av = vals_.data() + nodes_[a.node].out;           \
    const double* bv = vals_.data() + nodes_[b.node].out;           \
    double* out = vals_.data() + self.out;                          \
    for (int i = 0; i < self.size; ++i) out[i] = EXPR;              \
    return v;                                                       \
  }

COVRL_ELEMENTWISE(add, kAdd, av[i] + bv[i])
COVRL_ELEMENTWISE(sub, kSub, av[i] - bv[i])
COVRL_ELEMENTWISE(mul, kMul, av[i] * bv[i])
#undef COVRL_ELEMENTWISE

Tape::Var Tape::tanh_elem(Var a) {
  Node n;
  n.op = Op::kTanh;
  n.size = a.size;
  n.a = a.node;
  Var v = push(n);
  const Node& self = nodes_.back();
  const double* av = vals_.data() + nodes_[a.node].out;
  double* out = vals_.data() + self.out;
  for (int i = 0; i < self.size; ++i) out[i] = std::tanh(av[i]);
  return v;
}

Tape::Var Tape::sigmoid(Var a) {
  Node n;
  n.op = Op::kSigmoid;
  n.size = a.size;
  n.a = a.node;
  Var v = push(n);
  const Node& self = nodes_.back();
  const double* av = vals_.data() + nodes_[a.node].out;
  double* out = vals_.data() + self.out;
  for (int i = 0; i < self.size; ++i) out[i] = 1.0 / (1.0 + std::exp(-av[i]));
  return v;
}

Tape::Var Tape::scale(Var a, double c) {
  Node n;
  n.op = Op::kScale;
  n.size = a.size;
  n.a = a.node;
  n.c0 = c;
  Var v = push(n);
  const Node& self = nodes_.back();
  const double* av = vals_.data() + nodes_[a.node].out;
  double* out = vals_.data() + self.out;
  for (int i = 0; i < self.size; ++i) out[i] = c * av[i];
  return v;
}

double Tape::in_val(const Node& n, int which) const {
  const int32_t idx = (which == 0) ? n.a : n.b;
  return vals_[nodes_[idx].out];
}

#define COVRL_SCALAR_BINOP(NAME, OP_ENUM, EXPR)        \
  Tape::Var Tape::NAME(Var a, Var b) {                 \
    check_scalar(a, #NAME);                            \
    check_scalar(b, #NAME);                            \
    Node n;                                            \
    n.op = Op::OP_ENUM;                                \
    n.size = 1;                                        \
    n.a = a.node;                                      \
    n.b = b.node;                                      \
    Var v = push(n);                                   \
    const Node& self = nodes_.back();                  \
    const double x = in_val(self, 0);                  \
    const double y = in_val(self, 1);                  \
    vals_[self.out] = EXPR;                            \
    return v;                                          \
  }

COVRL_SCALAR_BINOP(s_add, kSAdd, x + y)
COVRL_SCALAR_BINOP(s_sub, kSSub, x - y)
COVRL_SCALAR_BINOP(s_mul, kSMul, x * y)
COVRL_SCALAR_BINOP(s_div, kSDiv, x / y)
COVRL_SCALAR_BINOP(s_min, kSMin, std::min(x, y))
COVRL_SCALAR_BINOP(s_max, kSMax, std::max(x, y))
#undef COVRL_SCALAR_BINOP

Tape::Var Tape::s_log(Var a) {
  check_scalar(a, "s_log");
  Node n;
  n.op = Op::kSLog;
  n.size = 1;
  n.a = a.node;
  Var v = push(n);
  const Node& self = nodes_.back();
  vals_[self.out] = std::log(in_val(self, 0));
  return v;
}

Tape::Var Tape::s_exp(Var a) {
  check_scalar(a, "s_exp");
  Node n;
  n.op = Op::kSExp;
  n.size = 1;
  n.a = a.node;
  Var v = push(n);
  const Node& self = nodes_.back();
  vals_[self.out] = std::exp(in_val(self, 0));
  return v;
}

Tape::Var Tape::s_add_const(Var a, double c) {
  check_scalar(a, "s_add_const");
  Node n;
  n.op = Op::kSAddConst;
  n.size = 1;
  n.a = a.node;
  n.c0 = c;
  Var v = push(n);
  const Node& self = nodes_.back();
  vals_[self.out] = in_val(self, 0) + c;
  return v;
}

Tape::Var Tape::clamp(Var a, double lo, double hi) {
  check_scalar(a, "clamp");
  Node n;
  n.op = Op::kClamp;
  n.size = 1;
  n.a = a.node;
  n.c0 = lo;
  n.c1 = hi;
  Var v = push(n);
  const Node& self = nodes_.back();
  vals_[self.out] = std::clamp(in_val(self, 0), lo, hi);
  return v;
}

Tape::Var Tape::log_add_exp(Var a, Var b) {
  check_scalar(a, "log_add_exp");
  check_scalar(b, "log_add_exp");
  Node n;
  n.op = Op::kLogAddExp;
  n.size = 1;
  n.a = a.node;
  n.b = b.node;
  Var v = push(n);
  const Node& self = nodes_.back();
  const double x = in_val(self, 0);
  const double y = in_val(self, 1);
  const double m = std::max(x, y);
  vals_[self.out] = std::isinf(m) && m < 0 ? m : m + std::log1p(std::exp(std::min(x, y) - m));
  return v;
}

Tape::Var Tape::stop_gradient(Var a) {
  Node n;
  n.op = Op::kStopGrad;
  n.size = a.size;
  n.a = a.node;
  Var v = push(n);
  const Node& self = nodes_.back();
  const double* av = vals_.data() + nodes_[a.node].out;
  std::copy_n(av, self.size, vals_.begin() + self.out);
  return v;
}

Tape::Var Tape::log_prob_pick(Var logits, int token) {
  if (token < 0 || token >= logits.size)
    throw std::out_of_range("Tape::log_prob_pick: token outside logits");
  Node n;
  n.op = Op::kLogProbPick;
  n.size = 1;
  n.a = logits.node;
  n.token = token;
  Var v = push(n);
  const Node& self = nodes_.back();
  const double* lv = vals_.data() + nodes_[logits.node].out;
  const int vs = nodes_[logits.node].size;
  double m = lv[0];
  for (int i = 1; i < vs; ++i) m = std::max(m, lv[i]);
  double z = 0.0;
  for (int i = 0; i < vs; ++i) z += std::exp(lv[i] - m);
  vals_[self.out] = lv[token] - m - std::log(z);
  return v;
}

Tape::Var Tape::soft_clip_from_log(Var log_ratio, double threshold) {
  check_scalar(log_ratio, "soft_clip_from_log");
  if (!(threshold > 0.0))
    throw std::invalid_argument("Tape::soft_clip_from_log: threshold must be positive");
  Node n;
  n.op = Op::kSoftClipLog;
  n.size = 1;
  n.a = log_ratio.node;
  n.c0 = threshold;
  Var v = push(n);
  const Node& self = nodes_.back();
  const double L = in_val(self, 0);
  const double log_tau = std::log(threshold);
  vals_[self.out] =
      (L <= log_tau) ? std::exp(L) : threshold * (1.0 + L - log_tau);
  return v;
}

Tape::Var Tape::weighted_sum(std::span<const Var> xs, std::span<const double> weights) {
  if (xs.size() != weights.size() || xs.empty())
    throw std::invalid_argument("Tape::weighted_sum: bad arity");
  Node n;
  n.op = Op::kWeightedSum;
  n.size = 1;
  n.aux_off = static_cast<int32_t>(aux_nodes_.size());
  n.aux_n = static_cast<int32_t>(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) {
    check_scalar(xs[i], "weighted_sum");
    aux_nodes_.push_back(xs[i].node);
    aux_w_.push_back(weights[i]);
  }
  Var v = push(n);
  const Node& self = nodes_.back();
  double acc = 0.0;
  for (int i = 0; i < self.aux_n; ++i)
    acc += aux_w_[self.aux_off + i] * vals_[nodes_[aux_nodes_[self.aux_off + i]].out];
  vals_[self.out] = acc;
  return v;
}

Tape::Var Tape::mean_of(std::span<const Var> xs) {
  std::vector<double> w(xs.size(), 1.0 / static_cast<double>(xs.size()));
  return weighted_sum(xs, w);
}

double Tape::value(Var v) const { return vals_[nodes_[v.node].out]; }

std::span<const double> Tape::values(Var v) const {
  return {vals_.data() + nodes_[v.node].out, static_cast<size_t>(v.size)};
}

GradientVector Tape::gradient(Var loss) const {
  if (loss.size != 1) throw std::invalid_argument("Tape::gradient: loss must be scalar");
  GradientVector grad(params_->size(), 0.0);
  std::vector<double> adj(vals_.size(), 0.0);
  adj[nodes_[loss.node].out] = 1.0;
  for (int32_t ni = loss.node; ni >= 0; --ni) {
    const Node& n = nodes_[ni];
    const double* g = adj.data() + n.out;
    switch (n.op) {
      case Op::kParam:
        for (int i = 0; i < n.size; ++i) grad[n.w_off + i] += g[i];
        break;
      case Op::kConst:
        break;
      case Op::kLinear: {
        double* ga = adj.data() + nodes_[n.a].out;
        const double* xv = vals_.data() + nodes_[n.a].out;
        const double* W = params_data() + n.w_off;
        for (int r = 0; r < n.rows; ++r) {
          const double gr = g[r];
          if (gr == 0.0) continue;
          const double* wr = W + static_cast<size_t>(r) * n.cols;
          double* gw = grad.data() + n.w_off + static_cast<size_t>(r) * n.cols;
          for (int c = 0; c < n.cols; ++c) {
            ga[c] += wr[c] * gr;
            gw[c] += xv[c] * gr;
          }
          if (n.b_off >= 0) grad[n.b_off + r] += gr;
        }
        break;
      }
      case Op::kConcatLinear: {
        double* gx = adj.data() + nodes_[n.a].out;
        double* gh = adj.data() + nodes_[n.b].out;
        const double* xv = vals_.data() + nodes_[n.a].out;
        const double* hv = vals_.data() + nodes_[n.b].out;
        const int xs = n.cols;
        const int hs = nodes_[n.b].size;
        const int total = xs + hs;
        const double* W = params_data() + n.w_off;
        for (int r = 0; r < n.rows; ++r) {
          const double gr = g[r];
          if (gr == 0.0) continue;
          const double* wr = W + static_cast<size_t>(r) * total;
          double* gw = grad.data() + n.w_off + static_cast<size_t>(r) * total;
          for (int c = 0; c < xs; ++c) {
            gx[c] += wr[c] * gr;
            gw[c] += xv[c] * gr;
          }
          for (int c = 0; c < hs; ++c) {
            gh[c] += wr[xs + c] * gr;
            gw[xs + c] += hv[c] * gr;
          }
          if (n.b_off >= 0) grad[n.b_off + r] += gr;
        }
        break;
      }
      case Op::kAdd: {
        double* ga = adj.data() + nodes_[n.a].out;
        double* gb = adj.data() + nodes_[n.b].out;
        for (int i = 0; i < n.size; ++i) {
          ga[i] += g[i];
          gb[i] += g[i];
        }
        break;
      }
      case Op::kSub: {
        double* ga = adj.data() + nodes_[n.a].out;
        double* gb = adj.data() + nodes_[n.b].out;
        for (int i = 0; i < n.size; ++i) {
          ga[i] += g[i];
          gb[i] -= g[i];
        }
        break;
      }
      case Op::kMul: {
        double* ga = adj.data() + nodes_[n.a].out;
        double* gb = adj.data() + nodes_[n.b].out;
        const double* av = vals_.data() + nodes_[n.a].out;
        const double* bv = vals_.data() + nodes_[n.b].out;
        for (int i = 0; i < n.size; ++i) {
          ga[i] += bv[i] * g[i];
          gb[i] += av[i] * g[i];
        }
        break;
      }
      case Op::kTanh: {
        double* ga = adj.data() + nodes_[n.a].out;
        const double* ov = vals_.data() + n.out;
        for (int i = 0; i < n.size; ++i) ga[i] += (1.0 - ov[i] * ov[i]) * g[i];
        break;
      }
      case Op::kSigmoid: {
        double* ga = adj.data() + nodes_[n.a].out;
        const double* ov = vals_.data() + n.out;
        for (int i = 0; i < n.size; ++i) ga[i] += ov[i] * (1.0 - ov[i]) * g[i];
        break;
      }
      case Op::kScale: {
        double* ga = adj.data() + nodes_[n.a].out;
        for (int i = 0; i < n.size; ++i) ga[i] += n.c0 * g[i];
        break;
      }
      case Op::kSAdd:
        adj[nodes_[n.a].out] += g[0];
        adj[nodes_[n.b].out] += g[0];
        break;
      case Op::kSSub:
        adj[nodes_[n.a].out] += g[0];
        adj[nodes_[n.b].out] -= g[0];
        break;
      case Op::kSMul:
        adj[nodes_[n.a].out] += in_val(n, 1) * g[0];
        adj[nodes_[n.b].out] += in_val(n, 0) * g[0];
        break;
      case Op::kSDiv: {
        const double y = in_val(n, 1);
        adj[nodes_[n.a].out] += g[0] / y;
        adj[nodes_[n.b].out] -= in_val(n, 0) / (y * y) * g[0];
        break;
      }
      case Op::kSLog:
        adj[nodes_[n.a].out] += g[0] / in_val(n, 0);
        break;
      case Op::kSExp:
        adj[nodes_[n.a].out] += vals_[n.out] * g[0];
        break;
      case Op::kSAddConst:
        adj[nodes_[n.a].out] += g[0];
        break;
      case Op::kSMin:
        adj[nodes_[in_val(n, 0) <= in_val(n, 1) ? n.a : n.b].out] += g[0];
        break;
      case Op::kSMax:
        adj[nodes_[in_val(n, 0) >= in_val(n, 1) ? n.a : n.b].out] += g[0];
        break;
      case Op::kClamp: {
        const double x = in_val(n, 0);
        if (x >= n.c0 && x <= n.c1) adj[nodes_[n.a].out] += g[0];
        break;
      }
      case Op::kLogAddExp: {
        const double out = vals_[n.out];
        adj[nodes_[n.a].out] += std::exp(in_val(n, 0) - out) * g[0];
        adj[nodes_[n.b].out] += std::exp(in_val(n, 1) - out) * g[0];
        break;
      }
      case Op::kStopGrad:
        break;
      case Op::kLogProbPick: {
        double* ga = adj.data() + nodes_[n.a].out;
        const double* lv = vals_.data() + nodes_[n.a].out;
        const int vs = nodes_[n.a].size;
        double m = lv[0];
        for (int i = 1; i < vs; ++i) m = std::max(m, lv[i]);
        double z = 0.0;
        for (int i = 0; i < vs; ++i) z += std::exp(lv[i] - m);
        for (int i = 0; i < vs; ++i) {
          const double p = std::exp(lv[i] - m) / z;
          ga[i] += (((i == n.token) ? 1.0 : 0.0) - p) * g[0];
        }
        break;
      }
      case Op::kSoftClipLog: {
        const double L = in_val(n, 0);
        const double d = (L <= std::log(n.c0)) ? vals_[n.out] : n.c0;
        adj[nodes_[n.a].out] += d * g[0];
        break;
      }
      case Op::kWeightedSum:
        for (int i = 0; i < n.aux_n; ++i)
          adj[nodes_[aux_nodes_[n.aux_off + i]].out] += aux_w_[n.aux_off + i] * g[0];
        break;
    }
  }
  return grad;
}

FdCheckResult finite_difference_check(
    std::vector<double>& params,
    const std::function<double(const std::vector<double>&)>& f,
    const GradientVector& grad, double step, std::span<const size_t> indices) {
  if (grad.size() != params.size())
    throw std::invalid_argument("finite_difference_check: gradient size mismatch");
  if (!(step > 0.0)) throw std::invalid_argument("finite_difference_check: step must be positive");
  FdCheckResult res;
  for (size_t idx : indices) {
    const double saved = params[idx];
    params[idx] = saved + step;
    const double up = f(params);
    params[idx] = saved - step;
    const double down = f(params);
    params[idx] = saved;
    const double fd = (up - down) / (2.0 * step);
    const double abs_err = std::abs(fd - grad[idx]);
    const double rel_err = abs_err / std::max({std::abs(fd), std::abs(grad[idx]), 1e-8});
    if (abs_err > res.max_abs_err) res.max_abs_err = abs_err;
    if (rel_err > res.max_rel_err) res.max_rel_err = rel_err;
    const double combined = std::min(abs_err, rel_err);
    if (combined > res.max_combined_err) {
      res.max_combined_err = combined;
      res.worst_index = idx;
    }
  }
  return res;
}

}  // namespace covrl
