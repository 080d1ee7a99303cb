#pragma once

#include "latsched/substrate/tensor.hpp"

#include <string>

namespace latsched::substrate {

// Checkpoint = text manifest at `path` plus a flat little-endian value blob
// at `path`.bin, both written atomically (temp file + rename). Buffers hold
// non-learnable state such as batch-norm running statistics.
void save_checkpoint(const std::string& path, const ParameterSet& params, const BufferSet& buffers,
                     Precision precision);

// Loads into pre-shaped sets; throws if any manifest entry disagrees with
// the configured names or shapes.
void load_checkpoint(const std::string& path, ParameterSet& params, BufferSet& buffers);

} // namespace latsched::substrate
