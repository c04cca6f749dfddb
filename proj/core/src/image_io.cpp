#include "vclab/image_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

namespace vclab {

uint8_t quantize8(float v) {
  float s = std::round(v * 255.0f);
  if (s < 0.0f) s = 0.0f;
  if (s > 255.0f) s = 255.0f;
  return static_cast<uint8_t>(s);
}

void quantize_image(Tensor<float>& image) {
  for (auto& v : image.data) v = quantize8(v) / 255.0f;
}

std::string encode_ppm(const Tensor<float>& image) {
  VCLAB_CHECK_ARG(image.rank() == 3 && image.dim(2) == 3,
                  "expected HWC image with 3 channels, got "
                      << shape_to_string(image.shape));
  std::string out = "P6\n" + std::to_string(image.dim(1)) + " " +
                    std::to_string(image.dim(0)) + "\n255\n";
  out.reserve(out.size() + image.data.size());
  for (float v : image.data) out.push_back(char(quantize8(v)));
  return out;
}

void write_ppm(const std::filesystem::path& path, const Tensor<float>& image) {
  std::string bytes = encode_ppm(image);
  std::ofstream out(path, std::ios::binary);
  VCLAB_CHECK(out.good(), ErrorCode::kIo, "cannot open " << path << " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  VCLAB_CHECK(out.good(), ErrorCode::kIo, "short write to " << path);
}

namespace {

int read_ppm_token(std::istream& in) {
  // Skips whitespace and '#' comments, then reads one decimal token.
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  VCLAB_CHECK(c != EOF && std::isdigit(c), ErrorCode::kIo, "malformed ppm header");
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = in.get();
  }
  return value;
}

}  // namespace

Tensor<float> read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  VCLAB_CHECK(in.good(), ErrorCode::kIo, "cannot open " << path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  VCLAB_CHECK(magic[0] == 'P' && magic[1] == '6', ErrorCode::kIo,
              path << " is not a binary ppm");
  int width = read_ppm_token(in);
  int height = read_ppm_token(in);
  int maxval = read_ppm_token(in);
  VCLAB_CHECK(maxval == 255, ErrorCode::kIo,
              "unsupported ppm maxval " << maxval << " in " << path);
  Tensor<float> image({height, width, 3});
  std::vector<uint8_t> raw(static_cast<size_t>(width) * height * 3);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  VCLAB_CHECK(in.gcount() == static_cast<std::streamsize>(raw.size()),
              ErrorCode::kIo, "truncated ppm payload in " << path);
  for (size_t i = 0; i < raw.size(); ++i) {
    image[static_cast<int64_t>(i)] = raw[i] / 255.0f;
  }
  return image;
}

}  // namespace vclab
