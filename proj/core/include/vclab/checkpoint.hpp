#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vclab/common.hpp"
#include "vclab/tensor.hpp"

namespace vclab {

inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  int64_t step = 0;
  uint64_t embedder_seed = 0;
  int embedder_dim = 0;
  std::string config_json;
};

// A checkpoint is the meta block plus an ordered list of named float
// tensors: model parameters, optimizer moments, whatever the writer chose.
// The byte layout is little-endian and fully determined by the contents, so
// writing the same state twice produces identical files.
struct Checkpoint {
  CheckpointMeta meta;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  }

  void add(const std::string& name, const Tensor<float>& t) {
    tensors.emplace_back(name, t);
  }
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

// Loads and fully validates a checkpoint file. A wrong magic, an unsupported
// version, or a file that ends mid-record raises a checkpoint error naming
// what went wrong.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace vclab
