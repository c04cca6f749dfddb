#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vclab/axes.hpp"
#include "vclab/tensor.hpp"

namespace vclab {

struct TextCodecConfig {
  uint64_t seed = 0x7ec5c0dec0ffee11ull;
  int dim = 128;
};

// Frozen text embedder: each whitespace token maps to a seeded Gaussian
// vector, tokens are mean-pooled and the result is L2-normalized. No
// trainable state; the seed and dimension fully determine every vector.
class TextCodec {
 public:
  explicit TextCodec(TextCodecConfig config = {});

  Tensor<float> embed(const std::string& text) const;

  struct DictionaryEmbedding {
    // Axis names in canonical (lexicographic) order.
    std::vector<std::string> names;
    std::vector<std::string> descriptions;
    Tensor<float> queries;  // [K, D], queries.row(i) = embed(names[i])
    Tensor<float> targets;  // [K, D], targets.row(i) = embed(descriptions[i])
  };
  DictionaryEmbedding embed_dictionary(const AxisDictionary& dict) const;

  uint64_t seed() const { return config_.seed; }
  int dim() const { return config_.dim; }

 private:
  TextCodecConfig config_;
};

}  // namespace vclab
