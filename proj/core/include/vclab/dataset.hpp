#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vclab/scene.hpp"
#include "vclab/tensor.hpp"

namespace vclab {

inline constexpr int kDatasetVersion = 1;

struct ImageSample {
  std::string id;
  SceneSpec spec;
  Tensor<float> pixels;
};

struct ManifestEntry {
  std::string id;
  std::string split;
  std::string image_file;
  std::string record_file;
  uint64_t pixel_hash = 0;
};

struct DatasetManifest {
  int version = kDatasetVersion;
  uint64_t seed = 0;
  int image_size = 0;
  int n_train = 0;
  int n_val = 0;
  std::string root;
  std::vector<ManifestEntry> entries;
};

// Renders n_train + n_val scenes under root and writes one image plus one
// record per sample along with a manifest. A manifest already present under
// root with a different seed aborts the call unless force is set.
DatasetManifest generate_dataset(const DomainConfig& config, uint64_t seed,
                                 int n_train, int n_val,
                                 const std::string& root, bool force = false);

DatasetManifest read_manifest(const std::string& root);

ImageSample load_sample(const DatasetManifest& manifest,
                        const ManifestEntry& entry);

// Loads every sample in manifest order, verifying checksums.
std::vector<ImageSample> load_dataset(const DatasetManifest& manifest);

// Deterministic visiting order for epoch shuffling.
std::vector<size_t> shuffled_order(size_t n, uint64_t seed);

uint64_t pixel_checksum(const Tensor<float>& pixels);

}  // namespace vclab
