#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rankssm/tensor.hpp"

namespace rankssm {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Flat binary checkpoint: magic "RKSM", version u32, count u32, then per
// parameter: name length u32, UTF-8 name, rank u32, dims u64 each, and the
// row-major f64 payload. All integers and floats little-endian. Round-trips
// bit-exactly.
void save_checkpoint(const std::string& path, const NamedTensors& params);

NamedTensors load_checkpoint(const std::string& path);

// Copies values from the checkpoint into matching parameters by name.
// Missing names or shape mismatches raise DataError.
void load_checkpoint_into(const std::string& path, NamedTensors& params);

}  // namespace rankssm
