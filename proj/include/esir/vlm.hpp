#pragma once

// Vision-language annotation adapter: builds a pool-constrained prompt, asks a
// provider for a JSON trajectory, validates it against the pools and retries
// once with the violation list.

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "httplib.h"
#include "esir/schema.hpp"

namespace esir {

class VlmProvider {
 public:
  virtual ~VlmProvider() = default;
  // Returns the model's raw text answer for `prompt` about `media_ref`.
  virtual std::string complete(const std::string& prompt, const std::string& media_ref) = 0;
};

class VlmError : public std::runtime_error {
 public:
  VlmError(const std::string& msg, std::string archived = {})
      : std::runtime_error(msg), archived_(std::move(archived)) {}
  // Path of the archived response, when one was written.
  const std::string& archived() const { return archived_; }

 private:
  std::string archived_;
};

struct VlmEndpoint {
  std::string url;                          // http://host:port/path
  std::string token_env = "ESIR_VLM_TOKEN";  // bearer token variable
  std::string model;                        // forwarded as-is when non-empty
  int timeout_s = 120;
};

// POSTs {"prompt", "media_url", "model"?} and reads the answer from a JSON
// "text" / "output" / "content" string field, or the raw body otherwise.
class HttpJsonProvider : public VlmProvider {
 public:
  explicit HttpJsonProvider(VlmEndpoint endpoint) : endpoint_(std::move(endpoint)) {
    if (!endpoint_.url.starts_with("http://"))
      throw std::invalid_argument("vlm endpoint must be an http:// URL (this build has no TLS support)");
    const std::string rest = endpoint_.url.substr(7);
    const auto slash = rest.find('/');
    host_ = rest.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : rest.substr(slash);
  }

  std::string complete(const std::string& prompt, const std::string& media_ref) override {
    httplib::Client cli("http://" + host_);
    cli.set_read_timeout(endpoint_.timeout_s, 0);
    httplib::Headers headers;
    if (const char* tok = std::getenv(endpoint_.token_env.c_str()); tok && *tok)
      headers.emplace("Authorization", std::string("Bearer ") + tok);
    nlohmann::json body{{"prompt", prompt}, {"media_url", media_ref}};
    if (!endpoint_.model.empty()) body["model"] = endpoint_.model;
    auto res = cli.Post(path_, headers, body.dump(), "application/json");
    if (!res) throw VlmError("vlm transport failure: " + httplib::to_string(res.error()));
    if (res->status / 100 != 2) throw VlmError("vlm endpoint returned HTTP " + std::to_string(res->status));
    auto j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_object())
      for (const char* key : {"text", "output", "content"})
        if (j.contains(key) && j[key].is_string()) return j[key].get<std::string>();
    return res->body;
  }

 private:
  VlmEndpoint endpoint_;
  std::string host_, path_;
};

// Replays canned answers in order (the last one repeats); records prompts.
class StubProvider : public VlmProvider {
 public:
  explicit StubProvider(std::vector<std::string> responses) : responses_(std::move(responses)) {
    if (responses_.empty()) throw std::invalid_argument("stub provider: no responses");
  }

  // Every regular file in `dir`, in filename order.
  static StubProvider from_directory(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<std::string> texts;
    for (const auto& f : files) texts.push_back(read_text_file(f));
    return StubProvider(std::move(texts));
  }

  std::string complete(const std::string& prompt, const std::string&) override {
    prompts_.push_back(prompt);
    const std::size_t i = std::min(calls_++, responses_.size() - 1);
    return responses_[i];
  }

  const std::vector<std::string>& prompts() const { return prompts_; }

 private:
  std::vector<std::string> responses_;
  std::vector<std::string> prompts_;
  std::size_t calls_ = 0;
};

// Drops a surrounding ```json ... ``` (or bare ```) fence and outer
// whitespace; other text is returned trimmed.
inline std::string strip_markdown_fences(const std::string& text) {
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  };
  std::string s = trim(text);
  if (!s.starts_with("```")) return s;
  const auto first_nl = s.find('\n');
  if (first_nl == std::string::npos) return s;
  const auto close = s.rfind("```");
  if (close == std::string::npos || close <= first_nl) return trim(s.substr(first_nl + 1));
  return trim(s.substr(first_nl + 1, close - first_nl - 1));
}

namespace detail {

inline std::string quoted_list(const std::vector<std::string>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", \"" : "\"") + v[i] + "\"";
  return out + "]";
}

}  // namespace detail

inline std::string annotation_prompt(const ValuePools& pools) {
  std::string p;
  p += "Watch the Counter-Strike 2 round in the attached media and describe what the featured player does.\n";
  p += "Reply with one JSON object and nothing else: no prose, no comments, no code fences.\n\n";
  p += "Shape:\n";
  p += "{\"map\": string, \"player_id\": string, \"events\": [{\"timestamp\": seconds, \"player_id\": string, "
       "\"team\": string, \"action\": string, \"location\": string, \"weapon\": [string], \"outcome\": [string], "
       "\"impact\": [string], \"targets\": [string], \"damage\": integer 0-100}]}\n\n";
  p += "Allowed values:\n";
  p += "maps: " + detail::quoted_list(pools.maps) + "\n";
  p += "teams: " + detail::quoted_list(pools.teams) + "\n";
  p += "actions: " + detail::quoted_list(pools.actions) + "\n";
  p += "weapons: " + detail::quoted_list(pools.weapons) + "\n";
  for (const auto& m : pools.maps) p += "locations on " + m + ": " + detail::quoted_list(pools.locations(m)) + "\n";
  p += "outcomes: " + detail::quoted_list(pools.outcomes) + "\n";
  p += "impacts: " + detail::quoted_list(pools.impacts) + "\n\n";
  p += "Rules:\n";
  p += "- Every categorical value must come from the lists above; locations must belong to the chosen map.\n";
  p += "- outcome and impact may be empty lists and must not repeat a value.\n";
  p += "- Step through the round about every 2 seconds and add at most one event per step when something notable "
       "happens; skip quiet steps.\n";
  p += "- Timestamps are seconds from the start of the media and never decrease.\n";
  p += "- Refer to unidentified players as player_1, player_2, ... consistently.\n";
  return p;
}

inline std::string retry_prompt(const std::string& base, const std::vector<Violation>& violations) {
  std::string p = base + "\nYour previous answer was rejected for these reasons:\n";
  for (const auto& v : violations) p += "- " + (v.path.empty() ? std::string("(document)") : v.path) + ": " + v.message + "\n";
  p += "Answer again with a corrected JSON object only.\n";
  return p;
}

// One structured retry; if the second answer is still invalid it is written
// to `archive_dir` (when given) and a VlmError is thrown.
inline Clip vlm_annotate(const std::string& media_ref, const ValuePools& pools, VlmProvider& provider,
                         const std::string& clip_id, const std::optional<fs::path>& archive_dir = std::nullopt) {
  const std::string base = annotation_prompt(pools);
  std::string prompt = base;
  std::string answer;
  std::vector<Violation> last;
  for (int attempt = 0; attempt < 2; ++attempt) {
    answer = provider.complete(prompt, media_ref);
    try {
      auto doc = nlohmann::json::parse(strip_markdown_fences(answer));
      if (doc.is_object() && !doc.contains("clip_id")) doc["clip_id"] = clip_id;
      Clip c = clip_from_json(doc, pools);
      c.clip_id = clip_id;
      return c;
    } catch (const nlohmann::json::parse_error& e) {
      last = {{"", std::string("not valid JSON: ") + e.what()}};
    } catch (const SchemaError& e) {
      last = e.violations();
    }
    prompt = retry_prompt(base, last);
  }
  std::string archived;
  if (archive_dir) {
    const fs::path path = *archive_dir / (clip_id + ".vlm_response.txt");
    write_text_file(path, answer);
    archived = path.string();
  }
  std::string msg = "vlm answer for '" + clip_id + "' failed validation after retry";
  if (!last.empty()) msg += ": " + (last[0].path.empty() ? std::string() : last[0].path + ": ") + last[0].message;
  throw VlmError(msg, archived);
}

}  // namespace esir
