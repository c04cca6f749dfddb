#pragma once

#include <atomic>
#include <semaphore>
#include <string>

#include "vclab/axes.hpp"
#include "vclab/dataset.hpp"

namespace vclab {

struct VlmClientConfig {
  // Base URL plus path, e.g. "http://127.0.0.1:8080/annotate".
  std::string endpoint;
  std::string auth_header_name;
  std::string auth_header_value;
  int timeout_ms = 30000;
  // Additional attempts after the first, spent on transport errors, 5xx
  // responses, and unparseable bodies alike.
  int max_retries = 3;
  int backoff_ms = 100;
  // Concurrent request ceiling when callers share one client.
  int max_in_flight = 4;
  // Directory for the write-through annotation cache; empty disables it.
  std::string cache_dir;
};

// Applies VCLAB_VLM_ENDPOINT, VCLAB_VLM_AUTH_HEADER, VCLAB_VLM_AUTH_VALUE,
// VCLAB_VLM_TIMEOUT_MS, VCLAB_VLM_RETRIES and VCLAB_VLM_CACHE_DIR on top of
// the given defaults.
VlmClientConfig vlm_config_from_env(VlmClientConfig base);

std::string base64_encode(const std::string& bytes);

// Safe for concurrent annotate calls; at most max_in_flight requests are on
// the wire at a time.
class VlmClient {
 public:
  explicit VlmClient(VlmClientConfig config);

  // Raw response text for one image, consulting the cache first. A network
  // fetch whose body yields a parseable dictionary is written back to the
  // cache under the image id.
  std::string fetch_text(const std::string& image_id,
                         const Tensor<float>& image,
                         const std::string& prompt);

  AxisDictionary annotate(const ImageSample& sample,
                          const UniversalPrompt& prompt);

  // Retries spent across all calls so far.
  int total_retries() const { return total_retries_.load(); }

 private:
  VlmClientConfig config_;
  std::string host_;
  std::string path_;
  std::atomic<int> total_retries_ = 0;
  std::counting_semaphore<4096> slots_;
};

}  // namespace vclab
