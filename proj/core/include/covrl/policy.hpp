#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "covrl/tape.hpp"

namespace covrl {

class Rng;

enum class Backend { tabular, neural };

// Tabular backend: one row of logits per context. Two addressing modes:
//  - hashed (default): contexts are hashed into num_buckets rows. Collisions
//    merge contexts, which is acceptable for smoke training but not for
//    exact math.
//  - explicit: rows are allocated for exactly the supplied contexts and any
//    other context is an error. Enumeration oracles use this mode so that
//    every probability in a proof is exact.
struct TabularConfig {
  int num_buckets = 4096;  // hashed mode; must be a power of two
  double init_std = 1.0;
  std::vector<std::vector<int>> explicit_contexts;  // non-empty selects explicit mode
};

// Neural backend: token embedding -> single-layer GRU -> output projection.
// Parameter layout in the flat vector, in order:
//   embedding [vocab x embed_dim]
//   W_z [hidden x (embed+hidden)], b_z [hidden]
//   W_r [hidden x (embed+hidden)], b_r [hidden]
//   W_c [hidden x (embed+hidden)], b_c [hidden]
//   W_out [vocab x hidden], b_out [vocab]
// Update rule (h0 = 0):
//   z = sigmoid(W_z [x; h] + b_z)
//   r = sigmoid(W_r [x; h] + b_r)
//   c = tanh(W_c [x; r*h] + b_c)
//   h' = h + z * (c - h)
struct NeuralConfig {
  int embed_dim = 16;
  int hidden_dim = 32;
  double init_std = 0.08;
  // Constants added to output-bias rows after the Gaussian fill, e.g. a
  // positive bias on the think-close token so initial traces are short.
  // Plays the role of the format prior a pretrained model would bring; the
  // bias lives in the parameters afterwards and is not tracked separately.
  std::vector<std::pair<int, double>> token_bias;
  // Segment-switched readout: while the most recent of the two marker tokens
  // consumed is mode_on_token, logits come from a second output head, linear
  // plus quadratic (wo2/bo2 on h, a2/zb2 on h*h), instead of the shared one.
  // Answer spans and trace junctures have disjoint token distributions, and
  // at this scale a single head lets answer-span NLL drag down delimiter
  // logits at the junctures as a side effect (the tabular backend is immune,
  // one row per context); the quadratic term makes pairwise products of
  // accumulated state directly readable, which is what residue tables need.
  // The switch is inert while the marker ids are -1.
  int mode_on_token = -1;
  int mode_off_token = -1;
  // Cross-segment copy channel. The state keeps two one-token memories, each
  // the last token with id < content_limit consumed inside a span type:
  // span_on/off_token (think spans) feed one, mode_on/off_token (answer
  // spans) feed the other. Each head reads the opposite memory, adding
  // gain * <emb[v], mem> to the logit of v: the segment head reads the
  // think-span memory (answer with what the trace worked out) and the shared
  // head reads the answer-span memory (repeat an answer shown in context).
  // With tied embeddings both copies are cheap from step zero, the induction
  // shortcut a pretrained model would bring; posterior-mode rollouts can
  // parrot their in-context answer into the trace, which seeds the
  // trace-answer coupling. Tokens outside both span types touch neither
  // memory, so a bare question boosts nothing. The gains are structural
  // constants, not parameters: a trainable gain is a one-knob lever for the
  // optimizer to erase the shortcut before the slow path can absorb what it
  // scaffolds. Inert while content_limit is -1.
  int span_on_token = -1;
  int span_off_token = -1;
  int content_limit = -1;
  double copy_gain = 1.0;        // segment-head gain on the think memory
  double copy_gain_trace = 0.0;  // shared-head gain on the answer memory
};

struct ArchConfig {
  TabularConfig tabular;
  NeuralConfig neural;
};

class PolicyModel {
 public:
  PolicyModel() = default;

  Backend backend() const { return backend_; }
  int vocab_size() const { return vocab_size_; }
  int context_length() const { return context_length_; }
  const ArchConfig& arch() const { return arch_; }
  bool explicit_contexts() const;

  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }
  size_t param_count() const { return params_.size(); }

  // Row index of the logits for a context (tabular only).
  int context_row(std::span<const int> context) const;

  // Neural layout offsets (neural only). wo2/bo2/a2 is the segment readout
  // head, engaged per NeuralConfig mode tokens. All blocks are always
  // allocated.
  struct NeuralLayout {
    int emb = 0, wz = 0, bz = 0, wr = 0, br = 0, wc = 0, bc = 0, wo = 0, bo = 0;
    int wo2 = 0, bo2 = 0, a2 = 0;
    int embed_dim = 0, hidden_dim = 0;
  };
  const NeuralLayout& layout() const { return layout_; }

  friend PolicyModel init_model(Backend backend, int vocab_size,
                                int context_length, const ArchConfig& arch,
                                uint64_t seed);

 private:
  Backend backend_ = Backend::tabular;
  int vocab_size_ = 0;
  int context_length_ = 0;
  ArchConfig arch_;
  NeuralLayout layout_;
  std::vector<double> params_;
  std::map<std::vector<int>, int> explicit_rows_;

  friend class DecodeState;
  friend struct CheckpointCodec;
};

PolicyModel init_model(Backend backend, int vocab_size, int context_length,
                       const ArchConfig& arch, uint64_t seed);

// Incremental decoding cursor: feeds tokens one at a time and exposes the
// next-token logits. Used by sampling and by plain (tape-free) scoring.
class DecodeState {
 public:
  explicit DecodeState(const PolicyModel& model);

  void advance(int token);
  int length() const { return static_cast<int>(tokens_.size()); }
  // Unnormalized next-token logits for the current prefix.
  std::vector<double> logits() const;
  // Softmax of logits (temperature 1).
  std::vector<double> next_dist() const;
  // log p(token | prefix).
  double next_logp(int token) const;

 private:
  const PolicyModel* model_;
  std::vector<int> tokens_;
  uint64_t hash_;           // tabular hashed mode
  std::vector<double> h_;   // neural hidden state
  bool seg_mode_ = false;   // inside an answer segment (neural offsets)
  bool span_mode_ = false;  // inside a think span (neural offsets)
  int mem_think_ = -1;      // copy memory fed by think spans (neural)
  int mem_answer_ = -1;     // copy memory fed by answer spans (neural)
};

// Full next-token probability vector for an explicit context.
std::vector<double> next_token_dist(const PolicyModel& model,
                                    std::span<const int> context);

// Per-token log-probabilities of `sequence` continued from `context`.
std::vector<double> score_sequence(const PolicyModel& model,
                                   std::span<const int> context,
                                   std::span<const int> sequence);

// Tape-recorded scoring: one scalar log-prob node per position of
// `sequence`. Gradients flow through the context processing as well.
std::vector<Tape::Var> score_sequence_nodes(Tape& tape,
                                            const PolicyModel& model,
                                            std::span<const int> context,
                                            std::span<const int> sequence);

// Spec-shaped alias for the reverse pass.
inline GradientVector backward(const Tape& tape, Tape::Var loss) {
  return tape.gradient(loss);
}

// Randomized finite-difference audit of a tape-built loss. `loss_builder`
// records the loss for the model's current parameters; n_params_sampled
// coordinates are probed with central differences.
struct FdReport {
  size_t n_checked = 0;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  // Worst over coordinates of min(abs, rel) error; pass compares this to
  // tolerance.
  double max_combined_err = 0.0;
  size_t worst_index = 0;
  double tolerance = 0.0;
  bool pass = false;
};
FdReport finite_difference_check(
    PolicyModel& model,
    const std::function<Tape::Var(Tape&, const PolicyModel&)>& loss_builder,
    int n_params_sampled, double tolerance, uint64_t seed);

}  // namespace covrl
