#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "vclab/common.hpp"
#include "vclab/scene.hpp"
#include "vclab/text_codec.hpp"

using vclab::AxisDictionary;
using vclab::Error;
using vclab::Tensor;
using vclab::TextCodec;
using vclab::TextCodecConfig;

namespace {

double cosine(const Tensor<float>& a, const Tensor<float>& b) {
  double num = 0.0, na = 0.0, nb = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    num += double(a[i]) * double(b[i]);
    na += double(a[i]) * double(a[i]);
    nb += double(b[i]) * double(b[i]);
  }
  return num / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("embeddings are deterministic unit vectors") {
  TextCodec codec;
  Tensor<float> a = codec.embed("red");
  Tensor<float> b = codec.embed("red");
  CHECK(a.data == b.data);
  CHECK(a.numel() == 128);

  double norm = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) norm += double(a[i]) * double(a[i]);
  CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-6);
}

TEST_CASE("the embedder rejects empty input") {
  TextCodec codec;
  CHECK_THROWS_AS(codec.embed(""), Error);
  CHECK_THROWS_AS(codec.embed("   "), Error);
}

TEST_CASE("multi-token strings pool their tokens") {
  TextCodec codec;
  Tensor<float> ab = codec.embed("light brown");
  Tensor<float> ba = codec.embed("brown light");
  CHECK(ab.data == ba.data);
  CHECK(codec.embed("light").data != ab.data);
}

TEST_CASE("the full synthetic vocabulary is well separated") {
  vclab::DomainConfig config = vclab::DomainConfig::desk();
  std::vector<std::string> vocabulary;
  for (const auto& axis : config.axes) {
    vocabulary.push_back(axis.name);
    for (const auto& c : axis.categories) vocabulary.push_back(c);
  }

  TextCodec codec;
  std::vector<Tensor<float>> vectors;
  for (const auto& word : vocabulary) vectors.push_back(codec.embed(word));

  double min_distance = 2.0;
  for (size_t i = 0; i < vectors.size(); ++i) {
    for (size_t j = i + 1; j < vectors.size(); ++j) {
      min_distance = std::min(min_distance, 1.0 - cosine(vectors[i], vectors[j]));
    }
  }
  CHECK(min_distance > 0.1);
  MESSAGE("vocabulary size " << vocabulary.size() << ", min pairwise cosine "
                             << "distance " << min_distance);
}

TEST_CASE("seed and dimension select different frozen codebooks") {
  TextCodec base;
  TextCodec reseeded(TextCodecConfig{.seed = 99, .dim = 128});
  TextCodec wide(TextCodecConfig{.seed = 0x7ec5c0dec0ffee11ull, .dim = 768});

  CHECK(base.embed("red").data != reseeded.embed("red").data);
  CHECK(wide.embed("red").numel() == 768);
  CHECK(base.seed() == wide.seed());
}

TEST_CASE("dictionary embedding follows canonical order") {
  TextCodec codec;
  AxisDictionary forward;
  forward.entries = {{"shape", "circle"}, {"age", "young"}};
  AxisDictionary backward;
  backward.entries = {{"age", "young"}, {"shape", "circle"}};

  auto fe = codec.embed_dictionary(forward);
  auto be = codec.embed_dictionary(backward);
  REQUIRE(fe.names == std::vector<std::string>{"age", "shape"});
  CHECK(fe.names == be.names);
  CHECK(fe.descriptions == std::vector<std::string>{"young", "circle"});
  CHECK(fe.queries.data == be.queries.data);
  CHECK(fe.targets.data == be.targets.data);

  Tensor<float> age = codec.embed("age");
  for (int d = 0; d < 128; ++d) {
    CHECK(fe.queries.at(0, d) == age[d]);
  }
}
