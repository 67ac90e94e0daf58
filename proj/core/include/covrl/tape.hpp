#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace covrl {

// Dense gradient over the flat parameter vector of a model.
using GradientVector = std::vector<double>;

// Reverse-mode automatic differentiation with vector-valued nodes.
//
// A Tape observes (does not own) a flat parameter vector. Operations are
// evaluated eagerly during recording; `gradient` replays the tape backwards
// and returns d(loss)/d(params). The parameter vector must not be resized or
// mutated between recording and the backward pass.
//
// Nodes are vector-valued (a GRU step is a handful of nodes, not hundreds),
// which keeps tapes small enough that per-sample gradients stay cheap on a
// single core. Accumulation order is fixed by node order, so gradients are
// bit-reproducible.
class Tape {
 public:
  struct Var {
    int32_t node = -1;
    int32_t size = 0;
  };

  explicit Tape(const std::vector<double>* params);

  // Leaves.
  Var param_slice(int offset, int len);
  Var constant(std::span<const double> values);
  Var constant_scalar(double value);
  Var zeros(int len);

  // Vector operations (sizes must match where elementwise).
  // linear: y = W x + b with W row-major [rows x cols] at param offset
  // w_offset; b_offset < 0 means no bias.
  Var linear(int w_offset, int b_offset, int rows, int cols, Var x);
  // concat_linear: y = W [x; h] + b with W row-major [rows x (|x|+|h|)].
  Var concat_linear(int w_offset, int b_offset, int rows, Var x, Var h);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var tanh_elem(Var a);
  Var sigmoid(Var a);
  Var scale(Var a, double c);

  // Scalar operations (size-1 vars).
  Var s_add(Var a, Var b);
  Var s_sub(Var a, Var b);
  Var s_mul(Var a, Var b);
  Var s_div(Var a, Var b);
  Var s_log(Var a);
  Var s_exp(Var a);
  Var s_neg(Var a) { return scale(a, -1.0); }
  Var s_add_const(Var a, double c);
  Var s_min(Var a, Var b);
  Var s_max(Var a, Var b);
  // Derivative is 1 inside [lo, hi] (inclusive), 0 outside.
  Var clamp(Var a, double lo, double hi);
  Var log_add_exp(Var a, Var b);
  // Value passthrough with no gradient flow.
  Var stop_gradient(Var a);
  // log softmax(logits)[token]; gradient is (onehot - softmax) * g.
  Var log_prob_pick(Var logits, int token);
  // soft_clip(exp(log_ratio), threshold) without materializing the ratio:
  // identity below the threshold, logarithmic growth above. See
  // estimators.hpp for the scalar form.
  Var soft_clip_from_log(Var log_ratio, double threshold);
  // sum_i w_i x_i over scalar vars, weights held constant.
  Var weighted_sum(std::span<const Var> xs, std::span<const double> weights);
  Var mean_of(std::span<const Var> xs);

  double value(Var v) const;
  std::span<const double> values(Var v) const;
  size_t node_count() const { return nodes_.size(); }

  // Backward pass from a scalar loss. Returns a dense gradient sized like
  // the observed parameter vector.
  GradientVector gradient(Var loss) const;

 private:
  enum class Op : uint8_t {
    kParam, kConst, kLinear, kConcatLinear, kAdd, kSub, kMul, kTanh,
    kSigmoid, kScale, kSAdd, kSSub, kSMul, kSDiv, kSLog, kSExp, kSAddConst,
    kSMin, kSMax, kClamp, kLogAddExp, kStopGrad, kLogProbPick, kSoftClipLog,
    kWeightedSum,
  };
  struct Node {
    Op op;
    int32_t out = 0;        // offset into vals_
    int32_t size = 0;
    int32_t a = -1, b = -1; // input node indices
    int32_t w_off = -1, b_off = -1;
    int32_t rows = 0, cols = 0;
    int32_t token = -1;
    double c0 = 0.0, c1 = 0.0;
    int32_t aux_off = -1, aux_n = 0;
  };

  Var push(Node n);
  const double* params_data() const;
  double in_val(const Node& n, int which) const;

  const std::vector<double>* params_;
  std::vector<Node> nodes_;
  std::vector<double> vals_;
  std::vector<int32_t> aux_nodes_;
  std::vector<double> aux_w_;
};

// Central-difference check of an analytic gradient. `f` evaluates the scalar
// objective at the supplied parameter values; `indices` selects which
// coordinates to probe (probing all of them is quadratic in model size).
struct FdCheckResult {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  // Worst over coordinates of min(abs err, rel err); the pass metric, since
  // rel error is meaningless near zero and abs error unfair for large grads.
  double max_combined_err = 0.0;
  size_t worst_index = 0;
};
FdCheckResult finite_difference_check(
    std::vector<double>& params,
    const std::function<double(const std::vector<double>&)>& f,
    const GradientVector& grad, double step, std::span<const size_t> indices);

}  // namespace covrl
