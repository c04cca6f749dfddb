#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "vclab/checkpoint.hpp"
#include "vclab/common.hpp"
#include "vclab/rng.hpp"
#include "vclab/tensor.hpp"

using vclab::Checkpoint;
using vclab::Error;
using vclab::ErrorCode;
using vclab::Rng;
using vclab::Tensor;

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("vclab_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  REQUIRE(out.good());
  out.write(bytes.data(), std::streamsize(bytes.size()));
}

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.meta.step = 1234;
  c.meta.embedder_seed = 0xdeadbeefcafeull;
  c.meta.embedder_dim = 128;
  c.meta.config_json = "{\n  \"steps\": 20000,\n  \"note\": \"desk \\u00e9\"\n}";

  Rng rng(9);
  Tensor<float> w({3, 4});
  w.fill_normal(rng);
  c.add("enc.layer0.weight", w);

  Tensor<float> b({4});
  b.fill_uniform(rng, -1.0f, 1.0f);
  c.add("enc.layer0.bias", b);

  // Awkward values the format must carry through untouched.
  Tensor<float> odd({6});
  odd[0] = 0.0f;
  odd[1] = -0.0f;
  odd[2] = std::numeric_limits<float>::denorm_min();
  odd[3] = std::numeric_limits<float>::max();
  odd[4] = -std::numeric_limits<float>::min();
  odd[5] = 1.0f + std::numeric_limits<float>::epsilon();
  c.add("opt.odd.m", odd);

  // Zero-element tensors are legal: a bias-free layer still claims its slot.
  c.add("dec.empty", Tensor<float>({0, 7}));
  return c;
}

ErrorCode load_code(const fs::path& p) {
  try {
    vclab::load_checkpoint(p.string());
    return ErrorCode::kInvalidState;  // not reached when the load fails
  } catch (const Error& e) {
    return e.code();
  }
}

}  // namespace

TEST_CASE("round trip preserves meta and every byte of every tensor") {
  fs::path dir = fresh_dir("ckpt_roundtrip");
  Checkpoint saved = sample_checkpoint();
  vclab::save_checkpoint((dir / "a.ckpt").string(), saved);
  Checkpoint loaded = vclab::load_checkpoint((dir / "a.ckpt").string());

  CHECK(loaded.meta.step == saved.meta.step);
  CHECK(loaded.meta.embedder_seed == saved.meta.embedder_seed);
  CHECK(loaded.meta.embedder_dim == saved.meta.embedder_dim);
  CHECK(loaded.meta.config_json == saved.meta.config_json);

  REQUIRE(loaded.tensors.size() == saved.tensors.size());
  for (size_t i = 0; i < saved.tensors.size(); ++i) {
    CHECK(loaded.tensors[i].first == saved.tensors[i].first);
    const Tensor<float>& a = saved.tensors[i].second;
    const Tensor<float>& f = loaded.tensors[i].second;
    REQUIRE(f.shape == a.shape);
    if (a.numel() > 0) {
      CHECK(std::memcmp(f.ptr(), a.ptr(),
                        size_t(a.numel()) * sizeof(float)) == 0);
    }
  }
}

TEST_CASE("the same state writes the same file") {
  fs::path dir = fresh_dir("ckpt_determinism");
  Checkpoint c = sample_checkpoint();
  vclab::save_checkpoint((dir / "a.ckpt").string(), c);
  vclab::save_checkpoint((dir / "b.ckpt").string(), c);
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
}

TEST_CASE("find locates tensors by name") {
  Checkpoint c = sample_checkpoint();
  REQUIRE(c.find("enc.layer0.bias") != nullptr);
  CHECK(c.find("enc.layer0.bias")->numel() == 4);
  CHECK(c.find("no.such.tensor") == nullptr);
}

TEST_CASE("duplicate tensor names are rejected at save time") {
  fs::path dir = fresh_dir("ckpt_dup");
  Checkpoint c;
  c.add("w", Tensor<float>({2}));
  c.add("w", Tensor<float>({2}));
  try {
    vclab::save_checkpoint((dir / "dup.ckpt").string(), c);
    FAIL("duplicate name was accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCheckpoint);
    CHECK(std::string(e.what()).find("duplicate") != std::string::npos);
  }
}

TEST_CASE("a non-checkpoint file is refused up front") {
  fs::path dir = fresh_dir("ckpt_magic");
  spit(dir / "noise.bin", "definitely not a checkpoint");
  CHECK(load_code(dir / "noise.bin") == ErrorCode::kCheckpoint);
  spit(dir / "empty.bin", "");
  CHECK(load_code(dir / "empty.bin") == ErrorCode::kCheckpoint);
  CHECK(load_code(dir / "missing.bin") == ErrorCode::kCheckpoint);
}

TEST_CASE("an unsupported format version is refused with its number") {
  fs::path dir = fresh_dir("ckpt_version");
  vclab::save_checkpoint((dir / "a.ckpt").string(), sample_checkpoint());
  std::string bytes = slurp(dir / "a.ckpt");
  bytes[4] = char(99);  // version field sits right after the magic
  spit(dir / "future.ckpt", bytes);
  try {
    vclab::load_checkpoint((dir / "future.ckpt").string());
    FAIL("future version was accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCheckpoint);
    CHECK(std::string(e.what()).find("99") != std::string::npos);
  }
}

TEST_CASE("truncation anywhere surfaces as a checkpoint error") {
  fs::path dir = fresh_dir("ckpt_trunc");
  vclab::save_checkpoint((dir / "a.ckpt").string(), sample_checkpoint());
  std::string bytes = slurp(dir / "a.ckpt");
  REQUIRE(bytes.size() > 64);

  // Cut the file at a spread of offsets covering the header, the meta
  // block, the tensor table, and the middle of a payload.
  std::vector<size_t> cuts = {2,  5,  10, 18, 30, bytes.size() / 4,
                              bytes.size() / 2, bytes.size() - 3};
  for (size_t cut : cuts) {
    CAPTURE(cut);
    spit(dir / "cut.ckpt", bytes.substr(0, cut));
    CHECK(load_code(dir / "cut.ckpt") == ErrorCode::kCheckpoint);
  }
}

TEST_CASE("a corrupted meta block is refused") {
  fs::path dir = fresh_dir("ckpt_meta");
  Checkpoint c;
  c.add("w", Tensor<float>({1}));
  vclab::save_checkpoint((dir / "a.ckpt").string(), c);
  std::string bytes = slurp(dir / "a.ckpt");

  // The meta block starts after magic, version, and its length field;
  // stomping its first brace breaks the JSON without moving any offsets.
  size_t meta_start = 4 + 4 + 8;
  REQUIRE(bytes[meta_start] == '{');
  bytes[meta_start] = '?';
  spit(dir / "bad_meta.ckpt", bytes);
  CHECK(load_code(dir / "bad_meta.ckpt") == ErrorCode::kCheckpoint);
}
