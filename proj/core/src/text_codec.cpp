#include "vclab/text_codec.hpp"

#include <cmath>

#include "vclab/common.hpp"
#include "vclab/rng.hpp"

namespace vclab {

TextCodec::TextCodec(TextCodecConfig config) : config_(config) {
  VCLAB_CHECK_ARG(config_.dim > 0, "embedding dimension must be positive");
}

Tensor<float> TextCodec::embed(const std::string& text) const {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  VCLAB_CHECK_ARG(!tokens.empty(), "cannot embed an empty string");

  Tensor<float> out({config_.dim});
  out.zero();
  for (const auto& token : tokens) {
    Rng rng(hash_bytes(token, config_.seed));
    for (int i = 0; i < config_.dim; ++i) {
      out[i] += float(rng.normal());
    }
  }
  double norm = 0.0;
  for (int i = 0; i < config_.dim; ++i) {
    out[i] /= float(tokens.size());
    norm += double(out[i]) * double(out[i]);
  }
  norm = std::sqrt(norm);
  VCLAB_CHECK(norm > 1e-12, ErrorCode::kNumeric,
              "degenerate embedding for '" << text << "'");
  for (int i = 0; i < config_.dim; ++i) {
    out[i] = float(double(out[i]) / norm);
  }
  return out;
}

TextCodec::DictionaryEmbedding TextCodec::embed_dictionary(
    const AxisDictionary& dict) const {
  AxisDictionary canon = dict.canonical();
  DictionaryEmbedding out;
  int k = int(canon.size());
  out.queries = Tensor<float>({k, config_.dim});
  out.targets = Tensor<float>({k, config_.dim});
  for (int i = 0; i < k; ++i) {
    const AxisEntry& entry = canon.entries[size_t(i)];
    out.names.push_back(entry.name);
    out.descriptions.push_back(entry.description);
    Tensor<float> q = embed(entry.name);
    Tensor<float> t = embed(entry.description);
    for (int d = 0; d < config_.dim; ++d) {
      out.queries.at(i, d) = q[d];
      out.targets.at(i, d) = t[d];
    }
  }
  return out;
}

}  // namespace vclab
