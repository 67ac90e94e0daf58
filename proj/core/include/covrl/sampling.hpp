#pragma once

#include <span>
#include <vector>

#include "covrl/policy.hpp"

namespace covrl {

class Rng;

struct SamplingParams {
  double temperature = 1.0;
  double top_p = 1.0;
  int max_new_tokens = 32;
  // Multi-token stop patterns; generation ends when the generated suffix
  // matches one of them.
  std::vector<std::vector<int>> stop_patterns;
  // Single-token end-of-text id, or -1 for none.
  int end_token = -1;
};

struct SampleResult {
  // Generated tokens with any matched stop suffix removed.
  std::vector<int> tokens;
  // Log-probs of `tokens` under the unadjusted model distribution
  // (temperature and top-p shape only the sampling distribution).
  std::vector<double> logps;
  bool truncated = false;
  // The matched stop suffix (or the END token), with its unadjusted
  // log-probs. Empty when truncated. Kept separate so callers can decide
  // whether the stop decision is part of the learned sequence.
  std::vector<int> stop_tokens;
  std::vector<double> stop_logps;
};

SampleResult sample_sequence(const PolicyModel& model,
                             std::span<const int> context,
                             const SamplingParams& params, Rng& rng);

}  // namespace covrl
