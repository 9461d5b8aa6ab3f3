#ifndef PCDC_CHECKPOINT_HPP
#define PCDC_CHECKPOINT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "pcdc/optim.hpp"

namespace pcdc {

// Checkpoint file layout (little endian):
//   "PCKP"  magic
//   u8      version (1)
//   u32     tensor count
//   per tensor:
//     u16   name length, then name bytes
//     u8    rank, then u32 per dim
//     f64   values, row major
std::vector<uint8_t> checkpoint_bytes(const std::vector<std::pair<std::string, Tensor>>& tensors);

void save_checkpoint(const std::vector<std::pair<std::string, Tensor>>& tensors,
                     const std::string& path);

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

// Copies values from `loaded` into matching names of `dst`; throws on
// missing names or shape mismatch.
void restore_params(ParamStore& dst, const std::vector<std::pair<std::string, Tensor>>& loaded);

uint64_t checkpoint_hash(const std::string& path);

}  // namespace pcdc

#endif
