#include "vclab/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vclab/common.hpp"
#include "vclab/image_io.hpp"
#include "vclab/rng.hpp"

namespace vclab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string sample_id(const std::string& split, int index) {
  std::ostringstream os;
  os << split << "_";
  std::string n = std::to_string(index);
  for (size_t i = n.size(); i < 6; ++i) os << '0';
  os << n;
  return os.str();
}

json spec_to_json(const SceneSpec& spec) {
  json axes = json::object();
  for (const auto& [name, value] : spec.axes) {
    axes[name] = {{"description", value.category}, {"nuance", value.nuance}};
  }
  return {{"id", spec.id},
          {"axes", axes},
          {"jitter", {spec.jitter_x, spec.jitter_y}}};
}

SceneSpec spec_from_json(const json& j) {
  SceneSpec spec;
  spec.id = j.at("id").get<uint64_t>();
  for (const auto& [name, value] : j.at("axes").items()) {
    AxisValue v;
    v.category = value.at("description").get<std::string>();
    v.nuance = value.at("nuance").get<double>();
    spec.axes[name] = v;
  }
  spec.jitter_x = j.at("jitter").at(0).get<double>();
  spec.jitter_y = j.at("jitter").at(1).get<double>();
  return spec;
}

json read_json_file(const fs::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  VCLAB_CHECK(in.good(), ErrorCode::kIo,
              "cannot open " << what << " at " << path.string());
  json j = json::parse(in, nullptr, false);
  VCLAB_CHECK(!j.is_discarded(), ErrorCode::kIo,
              what << " at " << path.string() << " is not valid JSON");
  return j;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  VCLAB_CHECK(out.good(), ErrorCode::kIo, "cannot write " << path.string());
  out << text;
  out.close();
  VCLAB_CHECK(out.good(), ErrorCode::kIo,
              "short write to " << path.string());
}

}  // namespace

uint64_t pixel_checksum(const Tensor<float>& pixels) {
  std::string bytes;
  bytes.reserve(pixels.data.size());
  for (float v : pixels.data) bytes.push_back(char(quantize8(v)));
  return hash_bytes(bytes, 0x9e3779b97f4a7c15ull);
}

DatasetManifest generate_dataset(const DomainConfig& config, uint64_t seed,
                                 int n_train, int n_val,
                                 const std::string& root, bool force) {
  VCLAB_CHECK_ARG(n_train >= 0 && n_val >= 0, "negative split size");
  fs::path base(root);
  fs::path manifest_path = base / "manifest.json";
  std::error_code ec;
  if (fs::exists(manifest_path, ec) && !force) {
    json prior = read_json_file(manifest_path, "manifest");
    uint64_t prior_seed = prior.value("seed", uint64_t(0));
    VCLAB_CHECK(prior_seed == seed, ErrorCode::kInvalidState,
                "dataset at " << root << " was generated with seed "
                              << prior_seed << ", refusing to overwrite with "
                              << seed << " (pass force to allow)");
  }
  fs::create_directories(base / "images", ec);
  VCLAB_CHECK(!ec, ErrorCode::kIo,
              "cannot create " << (base / "images").string() << ": "
                               << ec.message());
  fs::create_directories(base / "records", ec);
  VCLAB_CHECK(!ec, ErrorCode::kIo,
              "cannot create " << (base / "records").string() << ": "
                               << ec.message());

  DatasetManifest manifest;
  manifest.seed = seed;
  manifest.image_size = config.image_size;
  manifest.n_train = n_train;
  manifest.n_val = n_val;
  manifest.root = root;

  Rng master(seed);
  json index = json::array();
  const struct {
    const char* split;
    int count;
    uint64_t tag;
  } splits[] = {{"train", n_train, 1}, {"val", n_val, 2}};
  uint64_t running_id = 0;
  for (const auto& s : splits) {
    for (int i = 0; i < s.count; ++i) {
      Rng rng = master.derive(s.tag, uint64_t(i), 0);
      SceneSpec spec = sample_scene(config, rng, running_id++);
      Tensor<float> pixels = render_scene(config, spec);

      ManifestEntry entry;
      entry.id = sample_id(s.split, i);
      entry.split = s.split;
      entry.image_file = "images/" + entry.id + ".ppm";
      entry.record_file = "records/" + entry.id + ".json";
      entry.pixel_hash = pixel_checksum(pixels);

      write_ppm(base / entry.image_file, pixels);
      json record = spec_to_json(spec);
      record["pixel_hash"] = entry.pixel_hash;
      write_text_file(base / entry.record_file, record.dump(2) + "\n");

      index.push_back({{"id", entry.id},
                       {"split", entry.split},
                       {"image", entry.image_file},
                       {"record", entry.record_file},
                       {"pixel_hash", entry.pixel_hash}});
      manifest.entries.push_back(std::move(entry));
    }
  }

  json top = {{"version", kDatasetVersion},
              {"seed", seed},
              {"image_size", config.image_size},
              {"n_train", n_train},
              {"n_val", n_val},
              {"samples", std::move(index)}};
  write_text_file(manifest_path, top.dump(2) + "\n");
  return manifest;
}

DatasetManifest read_manifest(const std::string& root) {
  fs::path base(root);
  json top = read_json_file(base / "manifest.json", "manifest");
  int version = top.value("version", -1);
  VCLAB_CHECK(version == kDatasetVersion, ErrorCode::kConfig,
              "manifest at " << root << " has version " << version
                             << ", expected " << kDatasetVersion);
  DatasetManifest manifest;
  manifest.version = version;
  manifest.seed = top.at("seed").get<uint64_t>();
  manifest.image_size = top.at("image_size").get<int>();
  manifest.n_train = top.at("n_train").get<int>();
  manifest.n_val = top.at("n_val").get<int>();
  manifest.root = root;
  for (const auto& s : top.at("samples")) {
    ManifestEntry entry;
    entry.id = s.at("id").get<std::string>();
    entry.split = s.at("split").get<std::string>();
    entry.image_file = s.at("image").get<std::string>();
    entry.record_file = s.at("record").get<std::string>();
    entry.pixel_hash = s.at("pixel_hash").get<uint64_t>();
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

ImageSample load_sample(const DatasetManifest& manifest,
                        const ManifestEntry& entry) {
  fs::path base(manifest.root);
  ImageSample sample;
  sample.id = entry.id;
  sample.pixels = read_ppm(base / entry.image_file);
  VCLAB_CHECK(pixel_checksum(sample.pixels) == entry.pixel_hash,
              ErrorCode::kIo,
              "pixel checksum mismatch for sample " << entry.id);

  json record;
  try {
    record = read_json_file(base / entry.record_file, "record");
    sample.spec = spec_from_json(record);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrorCode::kIo,
         "corrupt record for sample " + entry.id + ": " + e.what());
  }
  uint64_t recorded = record.value("pixel_hash", uint64_t(0));
  VCLAB_CHECK(recorded == entry.pixel_hash, ErrorCode::kIo,
              "record for sample " << entry.id
                                   << " disagrees with the manifest");
  return sample;
}

std::vector<ImageSample> load_dataset(const DatasetManifest& manifest) {
  std::vector<ImageSample> samples;
  samples.reserve(manifest.entries.size());
  for (const auto& entry : manifest.entries) {
    samples.push_back(load_sample(manifest, entry));
  }
  return samples;
}

std::vector<size_t> shuffled_order(size_t n, uint64_t seed) {
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(combine_seed(seed, 0x7d3a9f0b5c61e847ull));
  rng.shuffle(order);
  return order;
}

}  // namespace vclab
