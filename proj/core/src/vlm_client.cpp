#include "vclab/vlm_client.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <semaphore>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "vclab/common.hpp"
#include "vclab/image_io.hpp"

namespace vclab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string truncate_body(const std::string& body) {
  const size_t limit = 400;
  if (body.size() <= limit) return body;
  return body.substr(0, limit) + "...[truncated]";
}

const char* env_or(const char* name, const char* fallback) {
  const char* v = std::getenv(name);
  return v != nullptr ? v : fallback;
}

}  // namespace

VlmClientConfig vlm_config_from_env(VlmClientConfig base) {
  base.endpoint = env_or("VCLAB_VLM_ENDPOINT", base.endpoint.c_str());
  base.auth_header_name =
      env_or("VCLAB_VLM_AUTH_HEADER", base.auth_header_name.c_str());
  base.auth_header_value =
      env_or("VCLAB_VLM_AUTH_VALUE", base.auth_header_value.c_str());
  base.cache_dir = env_or("VCLAB_VLM_CACHE_DIR", base.cache_dir.c_str());
  if (const char* v = std::getenv("VCLAB_VLM_TIMEOUT_MS")) {
    char* end = nullptr;
    long ms = std::strtol(v, &end, 10);
    VCLAB_CHECK(end != v && *end == '\0' && ms > 0, ErrorCode::kConfig,
                "VCLAB_VLM_TIMEOUT_MS is not a positive integer: " << v);
    base.timeout_ms = int(ms);
  }
  if (const char* v = std::getenv("VCLAB_VLM_RETRIES")) {
    char* end = nullptr;
    long n = std::strtol(v, &end, 10);
    VCLAB_CHECK(end != v && *end == '\0' && n >= 0, ErrorCode::kConfig,
                "VCLAB_VLM_RETRIES is not a non-negative integer: " << v);
    base.max_retries = int(n);
  }
  return base;
}

std::string base64_encode(const std::string& bytes) {
  static const char* alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  while (i + 3 <= bytes.size()) {
    uint32_t v = (uint8_t(bytes[i]) << 16) | (uint8_t(bytes[i + 1]) << 8) |
                 uint8_t(bytes[i + 2]);
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out.push_back(alphabet[(v >> 6) & 63]);
    out.push_back(alphabet[v & 63]);
    i += 3;
  }
  size_t rest = bytes.size() - i;
  if (rest == 1) {
    uint32_t v = uint8_t(bytes[i]) << 16;
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out += "==";
  } else if (rest == 2) {
    uint32_t v = (uint8_t(bytes[i]) << 16) | (uint8_t(bytes[i + 1]) << 8);
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out.push_back(alphabet[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

VlmClient::VlmClient(VlmClientConfig config)
    : config_(std::move(config)),
      slots_(std::max(1, config_.max_in_flight)) {
  VCLAB_CHECK(!config_.endpoint.empty(), ErrorCode::kConfig,
              "VLM endpoint is not configured");
  size_t scheme = config_.endpoint.find("://");
  VCLAB_CHECK(scheme != std::string::npos, ErrorCode::kConfig,
              "VLM endpoint has no scheme: " << config_.endpoint);
  size_t slash = config_.endpoint.find('/', scheme + 3);
  if (slash == std::string::npos) {
    host_ = config_.endpoint;
    path_ = "/";
  } else {
    host_ = config_.endpoint.substr(0, slash);
    path_ = config_.endpoint.substr(slash);
  }
}

std::string VlmClient::fetch_text(const std::string& image_id,
                                  const Tensor<float>& image,
                                  const std::string& prompt) {
  fs::path cache_file;
  if (!config_.cache_dir.empty()) {
    cache_file = fs::path(config_.cache_dir) / (image_id + ".json");
    std::ifstream in(cache_file, std::ios::binary);
    if (in.good()) {
      json cached = json::parse(in, nullptr, false);
      if (!cached.is_discarded() && cached.contains("text")) {
        return cached.at("text").get<std::string>();
      }
      // An unreadable record is treated as a miss and rewritten below.
    }
  }

  json request = {{"image", base64_encode(encode_ppm(image))},
                  {"prompt", prompt}};
  std::string body = request.dump();

  httplib::Headers headers;
  if (!config_.auth_header_name.empty()) {
    headers.insert({config_.auth_header_name, config_.auth_header_value});
  }

  std::string last_error;
  std::string text;
  for (int attempt = 0;; ++attempt) {
    if (attempt > 0) {
      total_retries_.fetch_add(1);
      std::this_thread::sleep_for(
          std::chrono::milliseconds(config_.backoff_ms << (attempt - 1)));
    }
    bool retryable = true;
    bool got_text = false;
    {
      slots_.acquire();
      httplib::Client client(host_);
      client.set_connection_timeout(0, config_.timeout_ms * 1000);
      client.set_read_timeout(config_.timeout_ms / 1000,
                              (config_.timeout_ms % 1000) * 1000);
      auto result = client.Post(path_, headers, body, "application/json");
      slots_.release();

      if (!result) {
        last_error = "transport error: " + httplib::to_string(result.error());
      } else if (result->status < 200 || result->status >= 300) {
        last_error = "status " + std::to_string(result->status) +
                     ", body: " + truncate_body(result->body);
        retryable = result->status >= 500;
      } else {
        json response = json::parse(result->body, nullptr, false);
        if (response.is_discarded() || !response.contains("text") ||
            !response.at("text").is_string()) {
          last_error =
              "response is not {\"text\": ...}, body: " +
              truncate_body(result->body);
        } else {
          text = response.at("text").get<std::string>();
          got_text = true;
        }
      }
    }

    if (got_text) {
      try {
        parse_axis_response(text);
      } catch (const Error& e) {
        last_error = std::string(e.what()) + "; raw response: " +
                     truncate_body(text);
        if (attempt >= config_.max_retries) {
          fail(e.code(), "annotation for " + image_id + " failed: " +
                             last_error);
        }
        continue;
      }
      break;
    }
    VCLAB_CHECK(retryable && attempt < config_.max_retries, ErrorCode::kRemote,
                "annotation for " << image_id << " failed after "
                                  << (attempt + 1) << " attempt(s): "
                                  << last_error);
  }

  if (!cache_file.empty()) {
    std::error_code ec;
    fs::create_directories(cache_file.parent_path(), ec);
    json record = {{"id", image_id}, {"text", text}};
    std::ofstream out(cache_file, std::ios::binary);
    VCLAB_CHECK(out.good(), ErrorCode::kIo,
                "cannot write annotation cache at " << cache_file.string());
    out << record.dump(2) << "\n";
  }
  return text;
}

AxisDictionary VlmClient::annotate(const ImageSample& sample,
                                   const UniversalPrompt& prompt) {
  return parse_axis_response(
      fetch_text(sample.id, sample.pixels, prompt.render()));
}

}  // namespace vclab
