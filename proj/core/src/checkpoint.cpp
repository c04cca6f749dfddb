#include "vclab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace vclab {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'V', 'C', 'K', 'P'};

template <typename T>
void write_pod(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const char* what) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  VCLAB_CHECK(in.gcount() == std::streamsize(sizeof(T)),
              ErrorCode::kCheckpoint,
              "checkpoint truncated while reading " << what);
  return value;
}

std::string read_bytes(std::ifstream& in, uint64_t len, const char* what) {
  VCLAB_CHECK(len <= (uint64_t(1) << 32), ErrorCode::kCheckpoint,
              "unreasonable " << what << " length in checkpoint");
  std::string buf(size_t(len), '\0');
  in.read(buf.data(), std::streamsize(len));
  VCLAB_CHECK(uint64_t(in.gcount()) == len, ErrorCode::kCheckpoint,
              "checkpoint truncated while reading " << what);
  return buf;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::set<std::string> names;
  for (const auto& [name, tensor] : ckpt.tensors) {
    VCLAB_CHECK(names.insert(name).second, ErrorCode::kCheckpoint,
                "duplicate tensor name in checkpoint: " << name);
    (void)tensor;
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  VCLAB_CHECK(out.good(), ErrorCode::kCheckpoint,
              "cannot open " << path << " for writing");

  out.write(kMagic, 4);
  write_pod<uint32_t>(out, kCheckpointVersion);

  json meta;
  meta["step"] = ckpt.meta.step;
  meta["embedder_seed"] = ckpt.meta.embedder_seed;
  meta["embedder_dim"] = ckpt.meta.embedder_dim;
  meta["config"] = ckpt.meta.config_json;
  std::string meta_str = meta.dump();
  write_pod<uint64_t>(out, meta_str.size());
  out.write(meta_str.data(), std::streamsize(meta_str.size()));

  write_pod<uint64_t>(out, ckpt.tensors.size());
  for (const auto& [name, tensor] : ckpt.tensors) {
    write_pod<uint32_t>(out, uint32_t(name.size()));
    out.write(name.data(), std::streamsize(name.size()));
    write_pod<uint32_t>(out, uint32_t(tensor.rank()));
    for (int64_t d : tensor.shape) write_pod<int64_t>(out, d);
    uint64_t bytes = uint64_t(tensor.numel()) * sizeof(float);
    write_pod<uint64_t>(out, bytes);
    out.write(reinterpret_cast<const char*>(tensor.ptr()),
              std::streamsize(bytes));
  }
  out.flush();
  VCLAB_CHECK(out.good(), ErrorCode::kCheckpoint,
              "write to " << path << " failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  VCLAB_CHECK(in.good(), ErrorCode::kCheckpoint,
              "cannot open " << path << " for reading");

  char magic[4];
  in.read(magic, 4);
  VCLAB_CHECK(in.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0,
              ErrorCode::kCheckpoint, path << " is not a checkpoint file");

  uint32_t version = read_pod<uint32_t>(in, "format version");
  VCLAB_CHECK(version == kCheckpointVersion, ErrorCode::kCheckpoint,
              "checkpoint format version " << version
                                           << " unsupported, expected "
                                           << kCheckpointVersion);

  Checkpoint ckpt;
  uint64_t meta_len = read_pod<uint64_t>(in, "meta length");
  std::string meta_str = read_bytes(in, meta_len, "meta block");
  json meta = json::parse(meta_str, nullptr, false);
  VCLAB_CHECK(!meta.is_discarded() && meta.is_object(),
              ErrorCode::kCheckpoint, "checkpoint meta block is not valid");
  VCLAB_CHECK(meta.contains("step") && meta.contains("embedder_seed") &&
                  meta.contains("embedder_dim") && meta.contains("config"),
              ErrorCode::kCheckpoint, "checkpoint meta block is incomplete");
  ckpt.meta.step = meta["step"].get<int64_t>();
  ckpt.meta.embedder_seed = meta["embedder_seed"].get<uint64_t>();
  ckpt.meta.embedder_dim = meta["embedder_dim"].get<int>();
  ckpt.meta.config_json = meta["config"].get<std::string>();

  uint64_t count = read_pod<uint64_t>(in, "tensor count");
  VCLAB_CHECK(count <= (uint64_t(1) << 20), ErrorCode::kCheckpoint,
              "unreasonable tensor count in checkpoint");
  ckpt.tensors.reserve(size_t(count));
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t name_len = read_pod<uint32_t>(in, "tensor name length");
    std::string name = read_bytes(in, name_len, "tensor name");
    uint32_t rank = read_pod<uint32_t>(in, "tensor rank");
    VCLAB_CHECK(rank <= 8, ErrorCode::kCheckpoint,
                "unreasonable rank for tensor " << name);
    std::vector<int64_t> shape(rank);
    for (uint32_t d = 0; d < rank; ++d) {
      shape[d] = read_pod<int64_t>(in, "tensor dimension");
      VCLAB_CHECK(shape[d] >= 0, ErrorCode::kCheckpoint,
                  "negative dimension for tensor " << name);
    }
    Tensor<float> t(shape);
    uint64_t bytes = read_pod<uint64_t>(in, "tensor byte length");
    VCLAB_CHECK(bytes == uint64_t(t.numel()) * sizeof(float),
                ErrorCode::kCheckpoint,
                "payload size mismatch for tensor " << name);
    in.read(reinterpret_cast<char*>(t.ptr()), std::streamsize(bytes));
    VCLAB_CHECK(uint64_t(in.gcount()) == bytes, ErrorCode::kCheckpoint,
                "checkpoint truncated while reading tensor " << name);
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

}  // namespace vclab
