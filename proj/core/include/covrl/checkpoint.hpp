#pragma once

#include <iosfwd>
#include <string>

#include "covrl/policy.hpp"

namespace covrl {

// Model checkpoint: versioned textual header (format id, backend, dims,
// arch config, parameter count, explicit context table when present)
// followed by the flat parameter vector as raw little-endian IEEE-754
// doubles. Round-trips are bit-exact.
void save_model(const PolicyModel& model, std::ostream& out);
void save_model(const PolicyModel& model, const std::string& path);
PolicyModel load_model(std::istream& in);
PolicyModel load_model(const std::string& path);

// Raw little-endian double block helpers, shared with the training
// checkpoint (which appends optimizer state in the same encoding).
void write_f64_block(std::ostream& out, const std::vector<double>& v);
std::vector<double> read_f64_block(std::istream& in, size_t n);

struct CheckpointCodec {
  static void write(const PolicyModel& model, std::ostream& out);
  static PolicyModel read(std::istream& in);
};

}  // namespace covrl
