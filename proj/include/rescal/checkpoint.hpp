#pragma once

#include <string>
#include <vector>

#include "rescal/tensor.hpp"

namespace rescal::io {

struct NamedTensor {
  std::string name;
  ad::Tensor tensor;
};

// Binary checkpoint: magic "RSCL", version byte 0x01, little-endian u32 entry
// count, then per entry a u32-length-prefixed UTF-8 name, u32 rank, u32 dims
// and the float32 payload (all little-endian). Round-trips bit-exactly.
void save_checkpoint(const std::string& path,
                     const std::vector<NamedTensor>& entries);

std::vector<NamedTensor> load_checkpoint(const std::string& path);

// Copies checkpoint values into matching destination tensors by name;
// throws on missing names or shape mismatches.
void load_into(const std::string& path, std::vector<NamedTensor> dest);

}  // namespace rescal::io
