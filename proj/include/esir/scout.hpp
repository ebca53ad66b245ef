#pragma once

// Model registry, 1-100 score normalization, candidate ranking, five-way
// identification and per-timestep reward heatmaps.

#include <algorithm>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "esir/csv.hpp"
#include "esir/gail.hpp"

namespace esir {

inline constexpr double kScoreMin = 1.0;
inline constexpr double kScoreMax = 100.0;
inline constexpr double kScoreMid = 50.5;
inline constexpr const char* kModelExtension = ".esir.json";

// Affine map taking the batch minimum to 1 and maximum to 100; a constant
// batch maps to the midpoint.
inline std::vector<double> normalize_scores(const std::vector<double>& raw) {
  if (raw.empty()) throw std::invalid_argument("normalize_scores: empty batch");
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  const double mn = *lo, mx = *hi;
  std::vector<double> out(raw.size(), kScoreMid);
  if (mx == mn) return out;
  // Centered on the batch midpoint so a value halfway between the extremes
  // lands on 50.5 exactly; the extremes themselves are pinned.
  const double slope = (kScoreMax - kScoreMin) / (mx - mn);
  const double centre = mn / 2.0 + mx / 2.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] == mn) out[i] = kScoreMin;
    else if (raw[i] == mx) out[i] = kScoreMax;
    else out[i] = std::clamp(kScoreMid + slope * (raw[i] - centre), kScoreMin, kScoreMax);
  }
  return out;
}

// Persisted calibration range for the fixed-reference mode.
struct NormalizationReference {
  double min = 0.0;
  double max = 0.0;

  static NormalizationReference from_batch(const std::vector<double>& raw) {
    if (raw.empty()) throw std::invalid_argument("NormalizationReference: empty calibration batch");
    const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
    return {*lo, *hi};
  }

  // Scores outside the calibration range are clamped to [1, 100].
  double apply(double raw) const {
    if (max == min) return kScoreMid;
    const double v = kScoreMin + (kScoreMax - kScoreMin) * (raw - min) / (max - min);
    return std::clamp(v, kScoreMin, kScoreMax);
  }
};

// ---------------------------------------------------------------------------
// Registry

class Registry {
 public:
  Registry() = default;
  Registry(Registry&& other) noexcept {
    std::unique_lock lock(other.mutex_);
    models_ = std::move(other.models_);
  }

  // Loads every *.esir.json in `dir`. Duplicate professional names are an
  // error.
  static Registry load_directory(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("registry: not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (entry.is_regular_file() && name.ends_with(kModelExtension)) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    Registry r;
    for (const auto& f : files) {
      try {
        r.add(parse_style_model(read_text_file(f)));
      } catch (const std::exception& e) {
        throw std::runtime_error(f.string() + ": " + e.what());
      }
    }
    return r;
  }

  void add(StyleModel model) {
    std::unique_lock lock(mutex_);
    if (models_.contains(model.professional))
      throw std::invalid_argument("registry: duplicate professional '" + model.professional + "'");
    std::string name = model.professional;
    models_.emplace(std::move(name), std::move(model));
  }

  bool contains(const std::string& name) const {
    std::shared_lock lock(mutex_);
    return models_.contains(name);
  }

  const StyleModel& get(const std::string& name) const {
    std::shared_lock lock(mutex_);
    auto it = models_.find(name);
    if (it == models_.end()) throw std::out_of_range("registry: unknown professional '" + name + "'");
    return it->second;
  }

  // Sorted by name.
  std::vector<std::string> names() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [name, _] : models_) out.push_back(name);
    return out;
  }

  std::vector<const StyleModel*> models() const {
    std::shared_lock lock(mutex_);
    std::vector<const StyleModel*> out;
    for (const auto& [_, m] : models_) out.push_back(&m);
    return out;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return models_.size();
  }

 private:
  mutable std::shared_mutex mutex_;
  std::map<std::string, StyleModel> models_;  // node-based: references stay valid across add()
};

inline fs::path model_path(const fs::path& dir, const std::string& professional) {
  return dir / (professional + kModelExtension);
}

// ---------------------------------------------------------------------------
// Identification and reports

// Unique argmax professional; an exact tie at the maximum abstains.
inline std::optional<std::string> identify_scores(const std::map<std::string, double>& raw) {
  if (raw.size() < 2) throw std::invalid_argument("identify: need at least 2 models");
  std::optional<std::string> best;
  double best_score = 0.0;
  bool tied = false;
  for (const auto& [name, score] : raw) {
    if (!best || score > best_score) {
      best = name;
      best_score = score;
      tied = false;
    } else if (score == best_score) {
      tied = true;
    }
  }
  if (tied) return std::nullopt;
  return best;
}

inline std::optional<std::string> identify(const std::vector<const StyleModel*>& models, const Clip& clip) {
  std::map<std::string, double> raw;
  for (const auto* m : models) raw[m->professional] = fit_score(*m, clip);
  return identify_scores(raw);
}

struct FitReport {
  std::string clip_id;
  std::map<std::string, double> raw;
  std::map<std::string, double> normalized;
  std::optional<std::string> predicted;
  std::vector<double> rewards;  // per-timestep, for the predicted model; empty on abstention
  bool truncated = false;
};

// Scores every clip under every model; normalization runs per professional
// over this batch, or through `references` when given.
inline std::vector<FitReport> score_clips(const std::vector<const StyleModel*>& models, const std::vector<Clip>& clips,
                                          const std::map<std::string, NormalizationReference>* references = nullptr) {
  if (models.empty()) throw std::invalid_argument("score_clips: no models");
  std::vector<FitReport> reports(clips.size());
  std::vector<std::map<std::string, std::vector<double>>> rewards(clips.size());
  for (std::size_t c = 0; c < clips.size(); ++c) {
    reports[c].clip_id = clips[c].clip_id;
    for (const auto* m : models) {
      auto r = style_reward(*m, clips[c]);
      reports[c].raw[m->professional] = mean_reward(r);
      reports[c].truncated = clips[c].events.size() > m->encoder_config.max_events;
      rewards[c][m->professional] = std::move(r);
    }
    if (models.size() >= 2) reports[c].predicted = identify_scores(reports[c].raw);
    if (reports[c].predicted) reports[c].rewards = rewards[c][*reports[c].predicted];
  }
  for (const auto* m : models) {
    const std::string& pro = m->professional;
    if (references) {
      auto it = references->find(pro);
      if (it == references->end()) throw std::invalid_argument("score_clips: no reference for '" + pro + "'");
      for (auto& rep : reports) rep.normalized[pro] = it->second.apply(rep.raw[pro]);
      continue;
    }
    if (reports.empty()) continue;
    std::vector<double> raw;
    for (const auto& rep : reports) raw.push_back(rep.raw.at(pro));
    auto norm = normalize_scores(raw);
    for (std::size_t c = 0; c < reports.size(); ++c) reports[c].normalized[pro] = norm[c];
  }
  return reports;
}

inline void sort_by_target(std::vector<FitReport>& reports, const std::string& target) {
  std::stable_sort(reports.begin(), reports.end(), [&](const FitReport& a, const FitReport& b) {
    const double sa = a.raw.at(target), sb = b.raw.at(target);
    if (sa != sb) return sa > sb;
    return a.clip_id < b.clip_id;
  });
}

// Descending by the target's raw score, ties by clip_id ascending.
inline std::vector<FitReport> rank_candidates(const std::vector<const StyleModel*>& models,
                                              const std::vector<Clip>& clips, const std::string& target) {
  if (std::none_of(models.begin(), models.end(), [&](const StyleModel* m) { return m->professional == target; }))
    throw std::invalid_argument("rank_candidates: unknown target '" + target + "'");
  auto reports = score_clips(models, clips);
  sort_by_target(reports, target);
  return reports;
}

struct HeatmapRow {
  std::size_t t = 0;
  double timestamp = 0.0;
  double reward = 0.0;
  double reward_norm = 0.0;
};

// Rewards min-max scaled to [0, 1] within the clip; constant rewards give 0.5.
inline std::vector<HeatmapRow> heatmap_rows(const Clip& clip, const std::vector<double>& rewards) {
  if (rewards.empty()) return {};
  const auto [lo, hi] = std::minmax_element(rewards.begin(), rewards.end());
  std::vector<HeatmapRow> rows;
  for (std::size_t t = 0; t < rewards.size(); ++t) {
    const double norm = *hi == *lo ? 0.5 : (rewards[t] - *lo) / (*hi - *lo);
    rows.push_back({t, clip.events.at(t).timestamp, rewards[t], norm});
  }
  return rows;
}

inline std::vector<HeatmapRow> temporal_heatmap(const StyleModel& model, const Clip& clip) {
  return heatmap_rows(clip, style_reward(model, clip));
}

// ---------------------------------------------------------------------------
// CSV

inline std::string fit_reports_csv(const std::vector<FitReport>& reports) {
  std::string out = csv_row({"clip_id", "pro", "raw_score", "norm_score", "predicted"});
  for (const auto& r : reports)
    for (const auto& [pro, raw] : r.raw)
      out += csv_row({r.clip_id, pro, format_double(raw), format_double(r.normalized.at(pro)), r.predicted.value_or("")});
  return out;
}

// Reads a FitReport CSV back into per-clip reports (clip order preserved).
inline std::vector<FitReport> parse_fit_reports_csv(const std::string& text) {
  auto table = parse_csv(text);
  if (table.empty()) throw std::runtime_error("fit report csv: empty");
  const auto& h = table[0];
  const std::size_t ci = csv_column(h, "clip_id"), pi = csv_column(h, "pro"), ri = csv_column(h, "raw_score"),
                    ni = csv_column(h, "norm_score"), di = csv_column(h, "predicted");
  std::vector<FitReport> out;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 1; i < table.size(); ++i) {
    const auto& row = table[i];
    if (row.size() != h.size()) throw std::runtime_error("fit report csv: row " + std::to_string(i) + " has wrong width");
    auto [it, fresh] = index.emplace(row[ci], out.size());
    if (fresh) {
      out.push_back({});
      out.back().clip_id = row[ci];
      if (!row[di].empty()) out.back().predicted = row[di];
    }
    FitReport& r = out[it->second];
    r.raw[row[pi]] = parse_double(row[ri], "raw_score");
    r.normalized[row[pi]] = parse_double(row[ni], "norm_score");
  }
  return out;
}

inline std::string heatmap_csv(const std::string& clip_id, const std::vector<HeatmapRow>& rows) {
  std::string out = csv_row({"clip_id", "t", "timestamp_s", "reward", "reward_norm"});
  for (const auto& r : rows)
    out += csv_row({clip_id, std::to_string(r.t), format_double(r.timestamp), format_double(r.reward),
                    format_double(r.reward_norm)});
  return out;
}

inline nlohmann::json to_json(const FitReport& r) {
  nlohmann::json j{{"clip_id", r.clip_id},
                   {"raw", r.raw},
                   {"normalized", r.normalized},
                   {"predicted", r.predicted ? nlohmann::json(*r.predicted) : nlohmann::json(nullptr)},
                   {"rewards", r.rewards},
                   {"truncated", r.truncated}};
  return j;
}

}  // namespace esir
