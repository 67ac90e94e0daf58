#pragma once

#include <cstdint>

// Purpose tags for derived rng streams. Substreams are addressed by
// (seed, tag, step, index) so resuming at a step needs no generator state,
// and so training and baseline runs consume identical instance streams.
namespace covrl::streams {

constexpr uint64_t kRollout = 0x501;
constexpr uint64_t kBatch = 0x7a58;
constexpr uint64_t kEval = 0xe7a1;
constexpr uint64_t kRavrBaseline = 0x5ab;

}  // namespace covrl::streams
