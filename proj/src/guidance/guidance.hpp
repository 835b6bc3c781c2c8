#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "core/error.hpp"
#include "encoders/encoders.hpp"

#include <json.hpp>

namespace avloc::guidance {

// Captions describing the sound-making sources (foreground, one per source)
// and the silent scene elements (background) for one clip.
struct GuidanceCaptions {
  std::string clip_id;
  std::vector<std::string> class_labels;
  std::vector<std::string> foreground;
  std::string background;
  std::string source;  // "mllm" | "fixture" | "cache"
  std::string prompt_version;
};

// Recoverable: the reply parsed but did not contain the expected number of
// foreground captions; the caller may retry.
class KMismatchError : public Error {
 public:
  using Error::Error;
};
class ParseError : public Error {
 public:
  using Error::Error;
};

const std::string& prompt_template();
std::string prompt_version();
std::string build_prompt(const std::vector<std::string>& labels);

// Extracts the first JSON object from a raw reply (code fences tolerated),
// promotes a string foreground to a one-element list, validates against
// expected_k and normalizes whitespace and the "an image of" prefix.
GuidanceCaptions parse_response(const std::string& raw, int expected_k);

struct CaptionRequest {
  std::string clip_id;
  std::string image_b64;  // wire payload for remote models; fixtures ignore it
  std::string prompt;
};

class CaptionClient {
 public:
  virtual ~CaptionClient() = default;
  virtual std::string complete(const CaptionRequest& req) = 0;
  virtual std::string kind() const = 0;        // "fixture" | "mllm"
  virtual std::string model_name() const = 0;  // cache key component
  virtual bool needs_image() const { return true; }
};

// Derives captions from synthetic ground truth and answers in the same JSON
// shape a remote model would, so the parsing path stays identical.
class FixtureClient : public CaptionClient {
 public:
  struct ClipTruth {
    std::vector<std::string> sounding_classes;
    std::vector<std::string> distractor_classes;
  };
  void add_clip(const std::string& clip_id, ClipTruth truth);
  std::string complete(const CaptionRequest& req) override;
  std::string kind() const override { return "fixture"; }
  std::string model_name() const override { return "fixture-v1"; }
  bool needs_image() const override { return false; }

 private:
  std::map<std::string, ClipTruth> clips_;
};

// POSTs {"image": <b64>, "prompt": <text>} and expects {"text": <reply>}.
class HttpClient : public CaptionClient {
 public:
  HttpClient(std::string endpoint, std::string model_name, int timeout_ms = 30000);
  std::string complete(const CaptionRequest& req) override;
  std::string kind() const override { return "mllm"; }
  std::string model_name() const override { return model_; }

 private:
  std::string host_;
  std::string path_;
  std::string model_;
  int timeout_ms_;
};

struct CacheRecord {
  std::string clip_id;
  std::vector<std::string> class_labels;
  std::vector<std::string> foreground;
  std::string background;
  std::string model;
  std::string prompt_version;
  std::string timestamp;
};

// Append-only JSON-lines cache keyed by (clip_id, prompt_version, model).
// The index is loaded once at construction; appends go through one writer.
class CaptionCache {
 public:
  explicit CaptionCache(std::string path);
  bool get(const std::string& clip_id, const std::string& prompt_ver, const std::string& model,
           CacheRecord* out) const;
  void append(const CacheRecord& rec);
  std::size_t size() const { return index_.size(); }
  const std::string& path() const { return path_; }

 private:
  static std::string key(const std::string& clip_id, const std::string& prompt_ver,
                         const std::string& model);
  std::string path_;
  std::map<std::string, CacheRecord> index_;
  mutable std::mutex mu_;
};

nlohmann::json cache_record_to_json(const CacheRecord& rec);
CacheRecord cache_record_from_json(const nlohmann::json& j);

struct ClipForCaptioning {
  std::string clip_id;
  std::vector<std::string> class_labels;
  int expected_k = 1;
  std::string image_path;  // read lazily, only for clients that need pixels
};

struct GenerateOutcome {
  GuidanceCaptions captions;
  bool from_cache = false;
  int client_calls = 0;
};

// Cache hit returns without any client call; otherwise calls the client with
// up to max_retries attempts (retrying on parse and K-mismatch errors) and
// appends the parsed captions to the cache.
GenerateOutcome get_or_generate(const ClipForCaptioning& clip, CaptionClient& client,
                                CaptionCache& cache, int max_retries = 3);

struct ReferenceBatch {
  Tensor foreground;  // (B,K,c)
  Tensor background;  // (B,c)
  int padded_clips = 0;  // ragged K resolved by repeating the last caption
};
ReferenceBatch to_reference_embeddings(const std::vector<GuidanceCaptions>& captions,
                                       const encoders::EncoderConfig& text_cfg);

}  // namespace avloc::guidance
