#include "covrl/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "covrl/rng.hpp"

namespace covrl {

namespace {

// Sampling-side distribution: softmax(logits / temperature) restricted to
// the top-p nucleus. Returns unnormalized weights (categorical normalizes).
std::vector<double> adjusted_weights(const std::vector<double>& logits,
                                     double temperature, double top_p) {
  const size_t n = logits.size();
  std::vector<double> w(n);
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  for (size_t i = 0; i < n; ++i) w[i] = std::exp((logits[i] - m) / temperature);
  if (top_p >= 1.0) return w;
  double total = std::accumulate(w.begin(), w.end(), 0.0);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return w[a] > w[b] || (w[a] == w[b] && a < b); });
  double cum = 0.0;
  std::vector<double> kept(n, 0.0);
  for (size_t i : order) {
    kept[i] = w[i];
    cum += w[i];
    if (cum >= top_p * total) break;
  }
  return kept;
}

// Longest stop pattern whose tokens form a suffix of `tokens`; -1 if none.
int match_stop(const std::vector<int>& tokens,
               const std::vector<std::vector<int>>& patterns) {
  int best = -1;
  size_t best_len = 0;
  for (size_t pi = 0; pi < patterns.size(); ++pi) {
    const auto& p = patterns[pi];
    if (p.empty() || p.size() > tokens.size() || p.size() < best_len) continue;
    if (std::equal(p.begin(), p.end(), tokens.end() - p.size())) {
      best = static_cast<int>(pi);
      best_len = p.size();
    }
  }
  return best;
}

}  // namespace

SampleResult sample_sequence(const PolicyModel& model,
                             std::span<const int> context,
                             const SamplingParams& params, Rng& rng) {
  if (!(params.temperature > 0.0))
    throw std::invalid_argument("sample_sequence: temperature must be positive");
  if (!(params.top_p > 0.0 && params.top_p <= 1.0))
    throw std::invalid_argument("sample_sequence: top_p must be in (0, 1]");
  if (params.max_new_tokens < 1)
    throw std::invalid_argument("sample_sequence: max_new_tokens must be positive");
  if (static_cast<int>(context.size()) + params.max_new_tokens > model.context_length())
    throw std::length_error("sample_sequence: context + budget exceeds context_length");

  DecodeState st(model);
  for (int t : context) st.advance(t);

  SampleResult res;
  for (int step = 0; step < params.max_new_tokens; ++step) {
    const std::vector<double> logits = st.logits();
    const std::vector<double> weights =
        adjusted_weights(logits, params.temperature, params.top_p);
    const int tok = rng.categorical(weights);

    // Scored under the unadjusted distribution regardless of how it was drawn.
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    double z = 0.0;
    for (double v : logits) z += std::exp(v - m);
    const double logp = logits[tok] - m - std::log(z);

    res.tokens.push_back(tok);
    res.logps.push_back(logp);
    st.advance(tok);

    if (tok == params.end_token) {
      res.stop_tokens.assign(res.tokens.end() - 1, res.tokens.end());
      res.stop_logps.assign(res.logps.end() - 1, res.logps.end());
      res.tokens.pop_back();
      res.logps.pop_back();
      return res;
    }
    const int hit = match_stop(res.tokens, params.stop_patterns);
    if (hit >= 0) {
      const size_t n = params.stop_patterns[hit].size();
      res.stop_tokens.assign(res.tokens.end() - n, res.tokens.end());
      res.stop_logps.assign(res.logps.end() - n, res.logps.end());
      res.tokens.resize(res.tokens.size() - n);
      res.logps.resize(res.logps.size() - n);
      return res;
    }
  }
  res.truncated = true;
  return res;
}

}  // namespace covrl
