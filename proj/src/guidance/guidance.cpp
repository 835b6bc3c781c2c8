#include "guidance/guidance.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "core/serialize.hpp"

namespace avloc::guidance {

namespace {

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string collapse_whitespace(const std::string& s) {
  std::string out;
  bool in_space = true;  // trims leading space
  for (char ch : s) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      in_space = true;
    } else {
      if (in_space && !out.empty()) out.push_back(' ');
      in_space = false;
      out.push_back(ch);
    }
  }
  return out;
}

bool starts_with_ci(const std::string& s, const std::string& prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(s[i])) !=
        std::tolower(static_cast<unsigned char>(prefix[i])))
      return false;
  return true;
}

// Collapse whitespace and guarantee the "an image of" prefix.
std::string normalize_caption(const std::string& raw) {
  std::string s = collapse_whitespace(raw);
  if (s.empty()) throw ParseError("empty caption in reply");
  if (!starts_with_ci(s, "an image of")) s = "an image of " + s;
  return s;
}

std::string now_utc_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
  return buf;
}

const char* kTemplate = R"(Analyze the provided image along with its associated class label, which identifies an object or element in the image that emits sound. The scene is complex, containing multiple objects, and requiring categorization based on the examples below.

Instructions:
1. Identify foreground (sound-related) elements: These are objects in the image emitting sounds that match the class description.
2. Identify background (sound-unrelated) elements: These are distinct objects visible in the image but unrelated to the sound described by the class.
3. Focus strictly on what is visible in the image. Do not infer or describe unseen objects.

Output Format:
The response must always be in JSON format with structured sentences that start with 'an image of...'. If there are two or more class labels (separated by commas), the foreground must be provided as a list of sound-making elements.

Examples:
(1) Scenario with multiple objects, including a sound-making one
Input:
- image: example_image_1
- class label: man_blowing_whistle

Output:
{
    "foreground": "an image of a man blowing a whistle",
    "background": "an image of mountains, desert landscape, and sky"
}

(2) Scenario with visually similar objects, distinguishing sound-making ones
Input:
- image: example_image_2
- class label: acoustic_guitar

Output:
{
    "foreground": "an image of a man playing guitar",
    "background": "an image of non-playing guitars, drum-set, and amp"
}

(3) Scenario with multiple sound-making elements
Input:
- image: example_image_3
- class label: clarinet, violin

Output:
{
    "foreground": ["an image of playing clarinet", "an image of playing violin"],
    "background": "an image of the kitchen, curtains, and piano in the background"
}

Now, process the provided input following the same structure and RETURN ONLY the JSON FORMAT.

Input:
- image: <attached>
- class label: )";

}  // namespace

const std::string& prompt_template() {
  static const std::string tmpl = kTemplate;
  return tmpl;
}

std::string prompt_version() {
  static const std::string ver = [] {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "v1-%016llx",
                  static_cast<unsigned long long>(fnv1a64(prompt_template())));
    return std::string(buf);
  }();
  return ver;
}

std::string build_prompt(const std::vector<std::string>& labels) {
  if (labels.empty()) throw ValidationError("build_prompt requires at least one class label");
  std::string joined;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].empty()) throw ValidationError("empty class label");
    if (i) joined += ", ";
    joined += labels[i];
  }
  return prompt_template() + joined + "\n";
}

GuidanceCaptions parse_response(const std::string& raw, int expected_k) {
  if (expected_k < 1) throw ValidationError("expected_k must be >= 1");
  // Find the first balanced JSON object; code fences and prose are skipped
  // because scanning starts at the first '{'.
  const std::size_t start = raw.find('{');
  if (start == std::string::npos)
    throw ParseError("no JSON object in reply: " + raw.substr(0, 80));
  int depth = 0;
  bool in_str = false, escaped = false;
  std::size_t end = std::string::npos;
  for (std::size_t i = start; i < raw.size(); ++i) {
    const char ch = raw[i];
    if (in_str) {
      if (escaped)
        escaped = false;
      else if (ch == '\\')
        escaped = true;
      else if (ch == '"')
        in_str = false;
      continue;
    }
    if (ch == '"')
      in_str = true;
    else if (ch == '{')
      ++depth;
    else if (ch == '}') {
      --depth;
      if (depth == 0) {
        end = i;
        break;
      }
    }
  }
  if (end == std::string::npos) throw ParseError("unterminated JSON object in reply");

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(raw.substr(start, end - start + 1));
  } catch (const std::exception& e) {
    throw ParseError(std::string("malformed JSON in reply: ") + e.what() +
                     "; excerpt: " + raw.substr(start, std::min<std::size_t>(80, end - start + 1)));
  }

  GuidanceCaptions out;
  if (!j.contains("foreground")) throw ParseError("reply missing \"foreground\"");
  if (!j.contains("background")) throw ParseError("reply missing \"background\"");
  if (j["foreground"].is_string()) {
    out.foreground.push_back(normalize_caption(j["foreground"].get<std::string>()));
  } else if (j["foreground"].is_array()) {
    for (const auto& item : j["foreground"]) {
      if (!item.is_string()) throw ParseError("foreground list must contain strings");
      out.foreground.push_back(normalize_caption(item.get<std::string>()));
    }
  } else {
    throw ParseError("foreground must be a string or a list of strings");
  }
  if (!j["background"].is_string()) throw ParseError("background must be a string");
  out.background = normalize_caption(j["background"].get<std::string>());
  if (static_cast<int>(out.foreground.size()) != expected_k)
    throw KMismatchError("expected " + std::to_string(expected_k) + " foreground captions, got " +
                         std::to_string(out.foreground.size()));
  out.prompt_version = prompt_version();
  return out;
}

void FixtureClient::add_clip(const std::string& clip_id, ClipTruth truth) {
  clips_[clip_id] = std::move(truth);
}

std::string FixtureClient::complete(const CaptionRequest& req) {
  const auto it = clips_.find(req.clip_id);
  if (it == clips_.end()) throw Error("fixture client has no ground truth for " + req.clip_id);
  const ClipTruth& truth = it->second;
  nlohmann::json j;
  if (truth.sounding_classes.size() == 1) {
    j["foreground"] = "an image of a sounding " + truth.sounding_classes[0];
  } else {
    nlohmann::json fg = nlohmann::json::array();
    for (const auto& cls : truth.sounding_classes) fg.push_back("an image of a sounding " + cls);
    j["foreground"] = fg;
  }
  if (truth.distractor_classes.empty()) {
    j["background"] = "an image of an empty dark background";
  } else {
    std::string bg = "an image of ";
    for (std::size_t i = 0; i < truth.distractor_classes.size(); ++i) {
      if (i) bg += " and ";
      bg += "a silent " + truth.distractor_classes[i];
    }
    j["background"] = bg;
  }
  return j.dump();
}

HttpClient::HttpClient(std::string endpoint, std::string model_name, int timeout_ms)
    : model_(std::move(model_name)), timeout_ms_(timeout_ms) {
  // endpoint: http://host:port[/path]
  std::string rest = endpoint;
  const std::size_t scheme = rest.find("://");
  std::string prefix;
  if (scheme != std::string::npos) {
    prefix = rest.substr(0, scheme + 3);
    rest = rest.substr(scheme + 3);
  } else {
    prefix = "http://";
  }
  const std::size_t slash = rest.find('/');
  host_ = prefix + (slash == std::string::npos ? rest : rest.substr(0, slash));
  path_ = slash == std::string::npos ? "/" : rest.substr(slash);
}

std::string HttpClient::complete(const CaptionRequest& req) {
  httplib::Client cli(host_);
  cli.set_connection_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
  cli.set_read_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
  const nlohmann::json body{{"image", req.image_b64}, {"prompt", req.prompt}};
  auto res = cli.Post(path_, body.dump(), "application/json");
  if (!res) throw Error("caption endpoint unreachable: " + host_ + path_);
  if (res->status != 200)
    throw Error("caption endpoint returned status " + std::to_string(res->status));
  const nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
  if (reply.is_discarded() || !reply.contains("text") || !reply["text"].is_string())
    throw ParseError("caption endpoint reply lacks a \"text\" field");
  return reply["text"].get<std::string>();
}

nlohmann::json cache_record_to_json(const CacheRecord& rec) {
  return nlohmann::json{{"clip_id", rec.clip_id},
                        {"class_labels", rec.class_labels},
                        {"foreground", rec.foreground},
                        {"background", rec.background},
                        {"model", rec.model},
                        {"prompt_version", rec.prompt_version},
                        {"timestamp", rec.timestamp}};
}

CacheRecord cache_record_from_json(const nlohmann::json& j) {
  CacheRecord rec;
  rec.clip_id = j.at("clip_id").get<std::string>();
  rec.class_labels = j.at("class_labels").get<std::vector<std::string>>();
  rec.foreground = j.at("foreground").get<std::vector<std::string>>();
  rec.background = j.at("background").get<std::string>();
  rec.model = j.at("model").get<std::string>();
  rec.prompt_version = j.at("prompt_version").get<std::string>();
  rec.timestamp = j.value("timestamp", "");
  return rec;
}

std::string CaptionCache::key(const std::string& clip_id, const std::string& prompt_ver,
                              const std::string& model) {
  return clip_id + "\x1f" + prompt_ver + "\x1f" + model;
}

CaptionCache::CaptionCache(std::string path) : path_(std::move(path)) {
  std::ifstream in(path_);
  if (!in) return;  // new cache
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw IoError("corrupt cache line " + std::to_string(lineno) + " in " + path_);
    CacheRecord rec = cache_record_from_json(j);
    index_[key(rec.clip_id, rec.prompt_version, rec.model)] = std::move(rec);
  }
}

bool CaptionCache::get(const std::string& clip_id, const std::string& prompt_ver,
                       const std::string& model, CacheRecord* out) const {
  std::lock_guard<std::mutex> lock(mu_);
  const auto it = index_.find(key(clip_id, prompt_ver, model));
  if (it == index_.end()) return false;
  if (out) *out = it->second;
  return true;
}

void CaptionCache::append(const CacheRecord& rec) {
  std::lock_guard<std::mutex> lock(mu_);
  const std::string k = key(rec.clip_id, rec.prompt_version, rec.model);
  if (index_.count(k)) return;  // already cached; keep the file append-only
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot append to caption cache: " + path_);
  out << cache_record_to_json(rec).dump() << "\n";
  if (!out) throw IoError("short write to caption cache: " + path_);
  index_[k] = rec;
}

GenerateOutcome get_or_generate(const ClipForCaptioning& clip, CaptionClient& client,
                                CaptionCache& cache, int max_retries) {
  GenerateOutcome out;
  CacheRecord rec;
  if (cache.get(clip.clip_id, prompt_version(), client.model_name(), &rec)) {
    out.from_cache = true;
    out.captions = GuidanceCaptions{rec.clip_id,    rec.class_labels, rec.foreground,
                                    rec.background, "cache",          rec.prompt_version};
    return out;
  }
  CaptionRequest req;
  req.clip_id = clip.clip_id;
  req.prompt = build_prompt(clip.class_labels);
  if (client.needs_image() && !clip.image_path.empty()) {
    std::ifstream in(clip.image_path, std::ios::binary);
    if (!in) throw IoError("cannot read image for captioning: " + clip.image_path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    req.image_b64 =
        base64_encode(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
  }
  std::string last_error;
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    ++out.client_calls;
    try {
      const std::string raw = client.complete(req);
      out.captions = parse_response(raw, clip.expected_k);
      out.captions.clip_id = clip.clip_id;
      out.captions.class_labels = clip.class_labels;
      out.captions.source = client.kind();
      cache.append(CacheRecord{clip.clip_id, clip.class_labels, out.captions.foreground,
                               out.captions.background, client.model_name(), prompt_version(),
                               now_utc_iso8601()});
      return out;
    } catch (const KMismatchError& e) {
      last_error = e.what();
    } catch (const ParseError& e) {
      last_error = e.what();
    }
  }
  throw Error("caption generation failed for " + clip.clip_id + " after " +
              std::to_string(max_retries) + " attempts: " + last_error);
}

ReferenceBatch to_reference_embeddings(const std::vector<GuidanceCaptions>& captions,
                                       const encoders::EncoderConfig& text_cfg) {
  if (captions.empty()) throw ValidationError("to_reference_embeddings: empty batch");
  const int B = static_cast<int>(captions.size());
  int K = 0;
  for (const auto& gc : captions) {
    if (gc.foreground.empty()) throw ValidationError("clip without foreground captions");
    K = std::max(K, static_cast<int>(gc.foreground.size()));
  }
  ReferenceBatch out;
  std::vector<std::string> fg_texts, bg_texts;
  fg_texts.reserve(static_cast<std::size_t>(B * K));
  for (const auto& gc : captions) {
    for (int k = 0; k < K; ++k) {
      const std::size_t idx = std::min<std::size_t>(static_cast<std::size_t>(k),
                                                    gc.foreground.size() - 1);
      fg_texts.push_back(gc.foreground[idx]);
    }
    if (static_cast<int>(gc.foreground.size()) != K) ++out.padded_clips;
    bg_texts.push_back(gc.background);
  }
  const Tensor fg = encoders::encode_text(fg_texts, text_cfg);
  out.background = encoders::encode_text(bg_texts, text_cfg);
  out.foreground = fg.reshaped({B, K, text_cfg.feature_channels});
  return out;
}

}  // namespace avloc::guidance
