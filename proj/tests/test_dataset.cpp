#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "doctest.h"
#include "vclab/common.hpp"
#include "vclab/dataset.hpp"
#include "vclab/scene.hpp"

using vclab::DatasetManifest;
using vclab::DomainConfig;
using vclab::Error;
using vclab::ErrorCode;
using vclab::ImageSample;
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

}  // namespace

TEST_CASE("generate_dataset writes a complete, well-formed tree") {
  DomainConfig config = DomainConfig::desk();
  fs::path root = fresh_dir("gen");
  DatasetManifest m =
      vclab::generate_dataset(config, 77, 12, 5, root.string());

  CHECK(m.entries.size() == 17);
  std::set<std::string> ids;
  int train = 0, val = 0;
  for (const auto& e : m.entries) {
    ids.insert(e.id);
    if (e.split == "train") ++train;
    if (e.split == "val") ++val;
    CHECK(fs::exists(root / e.image_file));
    CHECK(fs::exists(root / e.record_file));
  }
  CHECK(ids.size() == 17);
  CHECK(train == 12);
  CHECK(val == 5);
  CHECK(fs::exists(root / "manifest.json"));
}

TEST_CASE("same seed reproduces byte-identical files") {
  DomainConfig config = DomainConfig::desk();
  fs::path a = fresh_dir("rep_a");
  fs::path b = fresh_dir("rep_b");
  vclab::generate_dataset(config, 9001, 6, 2, a.string());
  vclab::generate_dataset(config, 9001, 6, 2, b.string());

  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
  DatasetManifest m = vclab::read_manifest(a.string());
  for (const auto& e : m.entries) {
    CHECK(slurp(a / e.image_file) == slurp(b / e.image_file));
    CHECK(slurp(a / e.record_file) == slurp(b / e.record_file));
  }
}

TEST_CASE("load round-trips specs and pixels exactly") {
  DomainConfig config = DomainConfig::desk();
  fs::path root = fresh_dir("roundtrip");

  std::vector<vclab::SceneSpec> expected;
  {
    vclab::Rng master(4242);
    for (int i = 0; i < 8; ++i) {
      vclab::Rng r = master.derive(1, uint64_t(i), 0);
      expected.push_back(vclab::sample_scene(config, r, uint64_t(i)));
    }
  }

  DatasetManifest m = vclab::generate_dataset(config, 4242, 8, 3, root.string());
  DatasetManifest loaded_manifest = vclab::read_manifest(root.string());
  CHECK(loaded_manifest.seed == m.seed);
  CHECK(loaded_manifest.entries.size() == m.entries.size());

  std::vector<ImageSample> samples = vclab::load_dataset(loaded_manifest);
  REQUIRE(samples.size() == 11);
  for (int i = 0; i < 8; ++i) {
    const auto& spec = samples[size_t(i)].spec;
    REQUIRE(spec.axes.size() == expected[size_t(i)].axes.size());
    for (const auto& [name, truth] : expected[size_t(i)].axes) {
      REQUIRE(spec.axes.count(name) == 1);
      CHECK(spec.axes.at(name).category == truth.category);
      CHECK(spec.axes.at(name).nuance == truth.nuance);
    }
    CHECK(spec.jitter_x == expected[size_t(i)].jitter_x);
    CHECK(spec.jitter_y == expected[size_t(i)].jitter_y);
    Tensor<float> rendered = vclab::render_scene(config, expected[size_t(i)]);
    CHECK(samples[size_t(i)].pixels.data == rendered.data);
  }
}

TEST_CASE("a corrupted record is reported with the sample id") {
  DomainConfig config = DomainConfig::desk();
  fs::path root = fresh_dir("corrupt_record");
  DatasetManifest m = vclab::generate_dataset(config, 5, 3, 0, root.string());

  {
    std::ofstream out(root / m.entries[1].record_file, std::ios::binary);
    out << "{ not json";
  }
  try {
    vclab::load_dataset(m);
    FAIL("expected a load error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
    CHECK(std::string(e.what()).find("train_000001") != std::string::npos);
  }
}

TEST_CASE("a corrupted image fails its checksum") {
  DomainConfig config = DomainConfig::desk();
  fs::path root = fresh_dir("corrupt_image");
  DatasetManifest m = vclab::generate_dataset(config, 5, 2, 0, root.string());

  fs::path victim = root / m.entries[0].image_file;
  std::string bytes = slurp(victim);
  bytes[bytes.size() - 7] = char(bytes[bytes.size() - 7] ^ 0x40);
  {
    std::ofstream out(victim, std::ios::binary);
    out << bytes;
  }
  try {
    vclab::load_dataset(m);
    FAIL("expected a checksum error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
    CHECK(std::string(e.what()).find("train_000000") != std::string::npos);
  }
}

TEST_CASE("regenerating with a different seed is refused unless forced") {
  DomainConfig config = DomainConfig::desk();
  fs::path root = fresh_dir("reseed");
  vclab::generate_dataset(config, 100, 2, 1, root.string());
  CHECK_THROWS_AS(vclab::generate_dataset(config, 101, 2, 1, root.string()),
                  Error);
  DatasetManifest m =
      vclab::generate_dataset(config, 101, 2, 1, root.string(), true);
  CHECK(m.seed == 101);
  CHECK(vclab::read_manifest(root.string()).seed == 101);
}

TEST_CASE("manifest version is checked on load") {
  DomainConfig config = DomainConfig::desk();
  fs::path root = fresh_dir("version");
  vclab::generate_dataset(config, 7, 1, 0, root.string());
  std::string text = slurp(root / "manifest.json");
  size_t pos = text.find("\"version\"");
  REQUIRE(pos != std::string::npos);
  text.replace(text.find(": 1", pos), 3, ": 9");
  {
    std::ofstream out(root / "manifest.json", std::ios::binary);
    out << text;
  }
  try {
    vclab::read_manifest(root.string());
    FAIL("expected a version error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kConfig);
  }
}

TEST_CASE("shuffled_order is a reproducible permutation") {
  std::vector<size_t> a = vclab::shuffled_order(100, 3);
  std::vector<size_t> b = vclab::shuffled_order(100, 3);
  std::vector<size_t> c = vclab::shuffled_order(100, 4);
  CHECK(a == b);
  CHECK(a != c);
  std::set<size_t> seen(a.begin(), a.end());
  CHECK(seen.size() == 100);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 99);
}
