#pragma once

// Rating-study state: deterministic per-participant clip assignment, rating
// records, and the append-only rating log.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "esir/csv.hpp"
#include "esir/rng.hpp"
#include "esir/schema.hpp"

namespace esir {

inline constexpr std::size_t kDefaultSessionSize = 50;
inline constexpr int kMinRating = 1;
inline constexpr int kMaxRating = 100;

// Ordered sample without replacement, seeded by (study seed, participant).
inline std::vector<std::string> assign_clips(const std::vector<std::string>& pool, std::uint64_t study_seed,
                                             const std::string& participant_id, std::size_t session_size) {
  if (participant_id.empty()) throw std::invalid_argument("participant id must be non-empty");
  if (pool.size() < session_size)
    throw std::invalid_argument("study pool (" + std::to_string(pool.size()) + ") smaller than session size (" +
                                std::to_string(session_size) + ")");
  Rng rng(derive_seed(study_seed, "session:" + participant_id));
  std::vector<std::string> out;
  for (std::size_t i : rng.sample_without_replacement(pool.size(), session_size)) out.push_back(pool[i]);
  return out;
}

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Session {
  std::string participant_id;
  std::vector<std::string> clip_ids;
  std::size_t cursor = 0;  // index of the first unrated assigned clip; == size when done
  std::vector<std::string> anchors;
  std::string created_at;
};

struct RatingRecord {
  std::string participant_id;
  std::string clip_id;
  std::map<std::string, int> scores;
  std::string submitted_at;
};

inline nlohmann::json to_json(const RatingRecord& r) {
  return {{"participant_id", r.participant_id}, {"clip_id", r.clip_id}, {"scores", r.scores}, {"submitted_at", r.submitted_at}};
}

// Checks shape and ranges of an incoming rating body without consulting any
// session.
inline std::vector<Violation> record_violations(const nlohmann::json& body, const std::vector<std::string>& anchors) {
  std::vector<Violation> v;
  if (!body.is_object()) return {{"", "body must be a JSON object"}};
  for (const char* key : {"participant_id", "clip_id"})
    if (!body.contains(key) || !body[key].is_string() || body[key].get<std::string>().empty())
      v.push_back({key, "required non-empty string"});
  if (!body.contains("scores") || !body["scores"].is_object()) {
    v.push_back({"scores", "required object of anchor -> integer"});
    return v;
  }
  const auto& scores = body["scores"];
  for (const auto& a : anchors)
    if (!scores.contains(a)) v.push_back({"scores." + a, "missing anchor"});
  std::set<std::string> known(anchors.begin(), anchors.end());
  for (const auto& [k, val] : scores.items()) {
    if (!known.contains(k)) {
      v.push_back({"scores." + k, "unknown anchor"});
      continue;
    }
    if (!val.is_number_integer()) {
      v.push_back({"scores." + k, "must be an integer"});
      continue;
    }
    const auto s = val.get<long long>();
    if (s < kMinRating || s > kMaxRating) v.push_back({"scores." + k, "must lie in [1, 100]"});
  }
  return v;
}

inline RatingRecord record_from_json(const nlohmann::json& j) {
  RatingRecord r;
  r.participant_id = j.at("participant_id").get<std::string>();
  r.clip_id = j.at("clip_id").get<std::string>();
  for (const auto& [k, v] : j.at("scores").items()) r.scores[k] = v.get<int>();
  r.submitted_at = j.value("submitted_at", "");
  return r;
}

// Append-only JSONL log with a last-write-wins index by (participant, clip).
// Without a path the store is memory-only.
class RatingStore {
 public:
  explicit RatingStore(std::optional<fs::path> log_path = std::nullopt) : path_(std::move(log_path)) {
    if (!path_ || !fs::exists(*path_)) return;
    std::ifstream in(*path_);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        index(record_from_json(nlohmann::json::parse(line)));
      } catch (const std::exception& e) {
        throw std::runtime_error(path_->string() + ":" + std::to_string(n) + ": " + e.what());
      }
    }
  }

  void append(const RatingRecord& r) {
    std::unique_lock lock(mutex_);
    if (path_) {
      if (path_->has_parent_path()) fs::create_directories(path_->parent_path());
      std::ofstream out(*path_, std::ios::app);
      out << to_json(r).dump() << "\n";
      out.flush();
      if (!out) throw std::runtime_error("rating log: write failed: " + path_->string());
    }
    index(r);
  }

  std::optional<RatingRecord> find(const std::string& participant, const std::string& clip) const {
    std::shared_lock lock(mutex_);
    auto it = effective_.find({participant, clip});
    if (it == effective_.end()) return std::nullopt;
    return it->second;
  }

  bool has(const std::string& participant, const std::string& clip) const { return find(participant, clip).has_value(); }

  std::vector<RatingRecord> effective() const {
    std::shared_lock lock(mutex_);
    std::vector<RatingRecord> out;
    for (const auto& [_, r] : effective_) out.push_back(r);
    return out;
  }

  // One row per (participant, clip, anchor), ordered by that triple.
  std::string export_csv() const {
    std::string out = csv_row({"participant_id", "clip_id", "anchor", "score"});
    for (const auto& r : effective())
      for (const auto& [anchor, score] : r.scores) out += csv_row({r.participant_id, r.clip_id, anchor, std::to_string(score)});
    return out;
  }

 private:
  void index(const RatingRecord& r) { effective_[{r.participant_id, r.clip_id}] = r; }

  std::optional<fs::path> path_;
  mutable std::shared_mutex mutex_;
  std::map<std::pair<std::string, std::string>, RatingRecord> effective_;
};

class StudyError : public std::runtime_error {
 public:
  enum class Kind { not_found, invalid };
  StudyError(Kind kind, const std::string& msg, std::vector<Violation> v = {})
      : std::runtime_error(msg), kind_(kind), violations_(std::move(v)) {}
  Kind kind() const { return kind_; }
  const std::vector<Violation>& violations() const { return violations_; }

 private:
  Kind kind_;
  std::vector<Violation> violations_;
};

struct StudyConfig {
  std::uint64_t seed = 0;
  std::size_t session_size = kDefaultSessionSize;
  std::vector<std::string> anchors;
  std::vector<std::string> pool;  // clip ids
};

struct Progress {
  std::size_t done = 0;
  std::size_t total = 0;
};

// Sessions are recomputed from the seed; only their creation times persist
// (sessions.jsonl next to ratings.jsonl when a data directory is given).
class Study {
 public:
  using Clock = std::function<std::string()>;

  explicit Study(StudyConfig config, std::optional<fs::path> data_dir = std::nullopt, Clock clock = utc_timestamp)
      : config_(std::move(config)),
        data_dir_(std::move(data_dir)),
        store_(data_dir_ ? std::optional<fs::path>(*data_dir_ / "ratings.jsonl") : std::nullopt),
        clock_(std::move(clock)) {
    if (config_.anchors.size() < 2) throw std::invalid_argument("study: need at least 2 anchors");
    if (config_.session_size == 0) throw std::invalid_argument("study: session size must be >= 1");
    if (config_.pool.size() < config_.session_size)
      throw std::invalid_argument("study pool (" + std::to_string(config_.pool.size()) + ") smaller than session size (" +
                                  std::to_string(config_.session_size) + ")");
    if (data_dir_ && fs::exists(sessions_path())) {
      std::ifstream in(sessions_path());
      std::string line;
      while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto j = nlohmann::json::parse(line);
        created_[j.at("participant_id").get<std::string>()] = j.at("created_at").get<std::string>();
      }
    }
  }

  const StudyConfig& config() const { return config_; }
  const RatingStore& store() const { return store_; }

  // Idempotent: a returning participant gets the same assignment.
  Session start_session(const std::string& participant_id) {
    if (participant_id.empty()) throw StudyError(StudyError::Kind::invalid, "participant id must be non-empty");
    {
      std::unique_lock lock(mutex_);
      if (!created_.contains(participant_id)) {
        const std::string at = clock_();
        created_[participant_id] = at;
        if (data_dir_) {
          fs::create_directories(*data_dir_);
          std::ofstream out(sessions_path(), std::ios::app);
          out << nlohmann::json{{"participant_id", participant_id}, {"created_at", at}}.dump() << "\n";
        }
      }
    }
    return session(participant_id);
  }

  bool has_session(const std::string& participant_id) const {
    std::shared_lock lock(mutex_);
    return created_.contains(participant_id);
  }

  Session session(const std::string& participant_id) const {
    Session s;
    {
      std::shared_lock lock(mutex_);
      auto it = created_.find(participant_id);
      if (it == created_.end()) throw StudyError(StudyError::Kind::not_found, "unknown session '" + participant_id + "'");
      s.created_at = it->second;
    }
    s.participant_id = participant_id;
    s.clip_ids = assign_clips(config_.pool, config_.seed, participant_id, config_.session_size);
    s.anchors = config_.anchors;
    s.cursor = s.clip_ids.size();
    for (std::size_t i = 0; i < s.clip_ids.size(); ++i)
      if (!store_.has(participant_id, s.clip_ids[i])) {
        s.cursor = i;
        break;
      }
    return s;
  }

  Progress progress(const std::string& participant_id) const {
    Session s = session(participant_id);
    Progress p{0, s.clip_ids.size()};
    for (const auto& c : s.clip_ids) p.done += store_.has(participant_id, c);
    return p;
  }

  Progress submit(const nlohmann::json& body) {
    auto v = record_violations(body, config_.anchors);
    if (!v.empty()) throw StudyError(StudyError::Kind::invalid, "invalid rating", std::move(v));
    RatingRecord r = record_from_json(body);
    Session s = session(r.participant_id);
    if (std::find(s.clip_ids.begin(), s.clip_ids.end(), r.clip_id) == s.clip_ids.end())
      throw StudyError(StudyError::Kind::not_found, "clip '" + r.clip_id + "' is not in this session");
    r.submitted_at = clock_();
    {
      std::lock_guard lock(append_mutex_);
      store_.append(r);
    }
    return progress(r.participant_id);
  }

 private:
  fs::path sessions_path() const { return *data_dir_ / "sessions.jsonl"; }

  StudyConfig config_;
  std::optional<fs::path> data_dir_;
  RatingStore store_;
  Clock clock_;
  mutable std::shared_mutex mutex_;
  std::mutex append_mutex_;
  std::map<std::string, std::string> created_;
};

inline nlohmann::json to_json(const Session& s) {
  return {{"participant_id", s.participant_id},
          {"clip_ids", s.clip_ids},
          {"cursor", s.cursor},
          {"next_clip_id", s.cursor < s.clip_ids.size() ? nlohmann::json(s.clip_ids[s.cursor]) : nlohmann::json(nullptr)},
          {"anchors", s.anchors},
          {"total", s.clip_ids.size()},
          {"created_at", s.created_at}};
}

}  // namespace esir
