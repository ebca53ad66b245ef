#pragma once

// Human-model alignment statistics: per-rater z-scores, Pearson/Spearman,
// MAE in z-space, two-way mixed consistency ICC, top-1 accuracy, consensus
// baselines and agreement grids.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "esir/csv.hpp"
#include "esir/scout.hpp"

namespace esir {

struct RatingItem {
  std::string clip_id;
  std::string anchor;

  auto operator<=>(const RatingItem&) const = default;
};

struct RatingRow {
  std::string participant_id;
  std::string clip_id;
  std::string anchor;
  double score = 0.0;
};

// rater x item grid; entries may be missing.
struct RatingMatrix {
  std::vector<std::string> raters;
  std::vector<RatingItem> items;
  std::vector<std::vector<std::optional<double>>> values;  // [rater][item]

  std::optional<std::size_t> rater_index(const std::string& name) const {
    for (std::size_t i = 0; i < raters.size(); ++i)
      if (raters[i] == name) return i;
    return std::nullopt;
  }

  std::vector<std::string> clips() const {
    std::set<std::string> s;
    for (const auto& it : items) s.insert(it.clip_id);
    return {s.begin(), s.end()};
  }

  std::vector<std::string> anchors() const {
    std::set<std::string> s;
    for (const auto& it : items) s.insert(it.anchor);
    return {s.begin(), s.end()};
  }

  std::size_t present_count(std::size_t rater) const {
    std::size_t n = 0;
    for (const auto& v : values[rater]) n += v.has_value();
    return n;
  }
};

// Raters and items are sorted; scores must lie in [1, 100]; a repeated
// (participant, clip, anchor) is an error.
inline RatingMatrix rating_matrix_from_rows(const std::vector<RatingRow>& rows) {
  std::set<std::string> raters;
  std::set<RatingItem> items;
  for (const auto& r : rows) {
    if (!(r.score >= kScoreMin && r.score <= kScoreMax))
      throw std::invalid_argument("ratings: score " + format_double(r.score) + " out of [1,100] for " +
                                  r.participant_id + "/" + r.clip_id + "/" + r.anchor);
    raters.insert(r.participant_id);
    items.insert({r.clip_id, r.anchor});
  }
  RatingMatrix m;
  m.raters.assign(raters.begin(), raters.end());
  m.items.assign(items.begin(), items.end());
  m.values.assign(m.raters.size(), std::vector<std::optional<double>>(m.items.size()));
  std::map<std::string, std::size_t> ri;
  std::map<RatingItem, std::size_t> ii;
  for (std::size_t i = 0; i < m.raters.size(); ++i) ri[m.raters[i]] = i;
  for (std::size_t i = 0; i < m.items.size(); ++i) ii[m.items[i]] = i;
  for (const auto& r : rows) {
    auto& cell = m.values[ri[r.participant_id]][ii[{r.clip_id, r.anchor}]];
    if (cell) throw std::invalid_argument("ratings: duplicate entry " + r.participant_id + "/" + r.clip_id + "/" + r.anchor);
    cell = r.score;
  }
  return m;
}

inline std::vector<RatingRow> parse_ratings_csv(const std::string& text) {
  auto table = parse_csv(text);
  if (table.empty()) throw std::runtime_error("ratings csv: empty");
  const auto& h = table[0];
  const std::size_t pi = csv_column(h, "participant_id"), ci = csv_column(h, "clip_id"), ai = csv_column(h, "anchor"),
                    si = csv_column(h, "score");
  std::vector<RatingRow> rows;
  for (std::size_t i = 1; i < table.size(); ++i) {
    const auto& row = table[i];
    if (row.size() != h.size()) throw std::runtime_error("ratings csv: line " + std::to_string(i + 1) + " has wrong width");
    rows.push_back({row[pi], row[ci], row[ai], parse_double(row[si], "score")});
  }
  return rows;
}

// The rating service's append log: later records for the same
// (participant, clip) replace earlier ones.
inline std::vector<RatingRow> parse_ratings_jsonl(const std::string& text) {
  std::map<std::pair<std::string, std::string>, std::map<std::string, double>> effective;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      auto& cell = effective[{j.at("participant_id").get<std::string>(), j.at("clip_id").get<std::string>()}];
      cell.clear();
      for (const auto& [anchor, v] : j.at("scores").items()) cell[anchor] = v.get<double>();
    } catch (const std::exception& e) {
      throw std::runtime_error("ratings jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::vector<RatingRow> rows;
  for (const auto& [key, scores] : effective)
    for (const auto& [anchor, s] : scores) rows.push_back({key.first, key.second, anchor, s});
  return rows;
}

// ---------------------------------------------------------------------------
// Z-scores

struct ZScored {
  RatingMatrix matrix;
  std::vector<std::string> warnings;
};

// (x - mean) / s per rater over that rater's present entries, s the sample
// standard deviation. A constant rater becomes all zeros plus a warning.
inline ZScored znormalize_per_rater(const RatingMatrix& m) {
  ZScored out{m, {}};
  for (std::size_t r = 0; r < m.raters.size(); ++r) {
    std::vector<double> xs;
    for (const auto& v : m.values[r])
      if (v) xs.push_back(*v);
    if (xs.size() < 2) throw std::invalid_argument("znormalize: rater '" + m.raters[r] + "' has fewer than 2 ratings");
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    if (sd == 0.0) out.warnings.push_back("rater '" + m.raters[r] + "' gave constant scores; z-scores set to 0");
    for (auto& v : out.matrix.values[r])
      if (v) v = sd == 0.0 ? 0.0 : (*v - mean) / sd;
  }
  return out;
}

inline std::vector<double> zscore(const std::vector<double>& xs) {
  RatingMatrix m;
  m.raters = {"x"};
  m.items.resize(xs.size());
  m.values.assign(1, {});
  for (double x : xs) m.values[0].push_back(x);
  auto z = znormalize_per_rater(m);
  std::vector<double> out;
  for (const auto& v : z.matrix.values[0]) out.push_back(*v);
  return out;
}

// ---------------------------------------------------------------------------
// Correlations

inline void check_series(const std::vector<double>& x, const std::vector<double>& y, const char* what) {
  if (x.size() != y.size()) throw std::invalid_argument(std::string(what) + ": length mismatch");
  if (x.size() < 2) throw std::invalid_argument(std::string(what) + ": need at least 2 pairs");
}

// Product-moment correlation; missing when either series is constant.
inline std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  check_series(x, y, "pearson");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// 1-based ranks; tied values share the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  check_series(x, y, "spearman");
  return pearson(average_ranks(x), average_ranks(y));
}

inline double mae_z(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("mae_z: length mismatch");
  if (a.empty()) throw std::invalid_argument("mae_z: empty overlap");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

// Pairs where both entries are present.
inline std::pair<std::vector<double>, std::vector<double>> complete_pairs(const std::vector<std::optional<double>>& a,
                                                                          const std::vector<std::optional<double>>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("complete_pairs: length mismatch");
  std::pair<std::vector<double>, std::vector<double>> out;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] && b[i]) {
      out.first.push_back(*a[i]);
      out.second.push_back(*b[i]);
    }
  return out;
}

// ---------------------------------------------------------------------------
// ICC

struct Icc {
  double single = 0.0;
  double average = 0.0;
};

// Two-way mixed, consistency form, on a complete grid indexed [rater][item].
// Sums of squares via the totals form.
inline Icc icc_two_way_mixed(const std::vector<std::vector<double>>& grid) {
  const std::size_t k = grid.size();
  if (k < 2) throw std::invalid_argument("icc: need at least 2 raters");
  const std::size_t n = grid[0].size();
  if (n < 2) throw std::invalid_argument("icc: need at least 2 items");
  for (const auto& row : grid)
    if (row.size() != n) throw std::invalid_argument("icc: ragged grid");
  const double N = static_cast<double>(n * k);
  double total = 0.0, sumsq = 0.0;
  std::vector<double> item_tot(n, 0.0), rater_tot(k, 0.0);
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t i = 0; i < n; ++i) {
      const double x = grid[r][i];
      total += x;
      sumsq += x * x;
      item_tot[i] += x;
      rater_tot[r] += x;
    }
  const double correction = total * total / N;
  double ss_items = 0.0, ss_raters = 0.0;
  for (double t : item_tot) ss_items += t * t;
  for (double t : rater_tot) ss_raters += t * t;
  ss_items = ss_items / static_cast<double>(k) - correction;
  ss_raters = ss_raters / static_cast<double>(n) - correction;
  const double ss_total = sumsq - correction;
  const double ss_error = std::max(0.0, ss_total - ss_items - ss_raters);
  const double bms = ss_items / static_cast<double>(n - 1);
  const double ems = ss_error / static_cast<double>((n - 1) * (k - 1));
  if (!(bms > 0.0)) throw std::domain_error("icc: between-items mean square is zero");
  const double kd = static_cast<double>(k);
  return {(bms - ems) / (bms + (kd - 1.0) * ems), (bms - ems) / bms};
}

// Grid with optional cells: every missing cell is listed in the error.
inline Icc icc_two_way_mixed(const std::vector<std::vector<std::optional<double>>>& grid) {
  std::vector<std::vector<double>> full(grid.size());
  std::vector<Violation> missing;
  for (std::size_t r = 0; r < grid.size(); ++r)
    for (std::size_t i = 0; i < grid[r].size(); ++i) {
      if (grid[r][i]) {
        full[r].push_back(*grid[r][i]);
      } else {
        missing.push_back({"[" + std::to_string(r) + "][" + std::to_string(i) + "]", "missing cell"});
      }
    }
  if (!missing.empty()) throw SchemaError(std::move(missing));
  return icc_two_way_mixed(full);
}

struct IccBlock {
  std::string scope;
  std::size_t n_raters = 0;
  std::size_t n_items = 0;  // size of the complete sub-grid
  std::optional<Icc> icc;
  std::string note;
};

// ICC over the items every listed rater has scored.
inline IccBlock icc_on_complete_subgrid(const RatingMatrix& m, const std::vector<std::string>& raters,
                                        std::string scope) {
  IccBlock b;
  b.scope = std::move(scope);
  b.n_raters = raters.size();
  std::vector<std::size_t> ri;
  for (const auto& name : raters) {
    auto i = m.rater_index(name);
    if (!i) throw std::invalid_argument("icc: unknown rater '" + name + "'");
    ri.push_back(*i);
  }
  std::vector<std::vector<double>> grid(ri.size());
  for (std::size_t item = 0; item < m.items.size(); ++item) {
    if (!std::all_of(ri.begin(), ri.end(), [&](std::size_t r) { return m.values[r][item].has_value(); })) continue;
    for (std::size_t k = 0; k < ri.size(); ++k) grid[k].push_back(*m.values[ri[k]][item]);
    ++b.n_items;
  }
  if (ri.size() < 2 || b.n_items < 2) {
    b.note = "complete sub-grid too small";
    return b;
  }
  try {
    b.icc = icc_two_way_mixed(grid);
  } catch (const std::domain_error& e) {
    b.note = e.what();
  }
  return b;
}

// ---------------------------------------------------------------------------
// Accuracy and consensus

// Fraction of items whose unique-argmax prediction equals the truth;
// abstentions count as incorrect.
inline double top1_accuracy(const std::vector<std::map<std::string, double>>& model_scores,
                            const std::vector<std::string>& truth) {
  if (model_scores.size() != truth.size()) throw std::invalid_argument("top1_accuracy: length mismatch");
  if (truth.empty()) throw std::invalid_argument("top1_accuracy: no items");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    auto p = identify_scores(model_scores[i]);
    correct += p && *p == truth[i];
  }
  return static_cast<double>(correct) / static_cast<double>(truth.size());
}

enum class ConsensusMode { leave_one_out, all_raters };

inline std::string to_string(ConsensusMode m) { return m == ConsensusMode::all_raters ? "all_raters" : "leave_one_out"; }

inline ConsensusMode consensus_mode_from_string(const std::string& s) {
  if (s == "leave_one_out") return ConsensusMode::leave_one_out;
  if (s == "all_raters") return ConsensusMode::all_raters;
  throw std::invalid_argument("unknown consensus mode '" + s + "'");
}

// Per-item mean of the z-scores of all raters not in `exclude`; items no
// remaining rater scored stay missing.
inline std::vector<std::optional<double>> build_consensus(const RatingMatrix& z, const std::set<std::string>& exclude) {
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < z.raters.size(); ++r)
    if (!exclude.contains(z.raters[r])) keep.push_back(r);
  if (keep.size() < 2) throw std::invalid_argument("build_consensus: need at least 2 remaining raters");
  std::vector<std::optional<double>> out(z.items.size());
  for (std::size_t i = 0; i < z.items.size(); ++i) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t r : keep)
      if (z.values[r][i]) {
        s += *z.values[r][i];
        ++n;
      }
    if (n) out[i] = s / static_cast<double>(n);
  }
  return out;
}

inline std::vector<std::optional<double>> build_consensus(const RatingMatrix& z, const std::string& exclude) {
  return build_consensus(z, std::set<std::string>{exclude});
}

// ---------------------------------------------------------------------------
// Study evaluation

struct RaterMetrics {
  std::string rater;
  std::optional<double> pearson_r;
  std::optional<double> spearman_rho;
  std::optional<double> mae_z;
  std::optional<double> accuracy;
  std::size_t n_items = 0;
  std::size_t n_clips = 0;
};

struct EvalSummary {
  std::vector<RaterMetrics> rows;  // each human, then the human mean, then the model
  std::vector<IccBlock> icc;
  std::string consensus;
  std::size_t n_items = 0;
  std::vector<std::string> warnings;
};

inline constexpr const char* kHumanMeanRow = "human_mean";
inline constexpr const char* kDefaultModelRater = "esir";

// Adds the model as a rater scoring every (clip, anchor) item already in `m`,
// using normalized 1-100 scores.
inline RatingMatrix with_model_rater(const RatingMatrix& m, const std::vector<FitReport>& reports,
                                     const std::string& model_name) {
  if (m.rater_index(model_name)) throw std::invalid_argument("model rater name collides with a participant");
  std::map<std::string, const FitReport*> by_clip;
  for (const auto& r : reports) by_clip[r.clip_id] = &r;
  RatingMatrix out = m;
  out.raters.push_back(model_name);
  std::vector<std::optional<double>> row(m.items.size());
  for (std::size_t i = 0; i < m.items.size(); ++i) {
    auto it = by_clip.find(m.items[i].clip_id);
    if (it == by_clip.end()) continue;
    auto s = it->second->normalized.find(m.items[i].anchor);
    if (s != it->second->normalized.end()) row[i] = s->second;
  }
  out.values.push_back(std::move(row));
  return out;
}

// Unique max-scored anchor per clip for one rater row, over clips where the
// rater scored at least two anchors.
inline std::map<std::string, std::optional<std::string>> rater_choices(const RatingMatrix& m, std::size_t rater) {
  std::map<std::string, std::map<std::string, double>> per_clip;
  for (std::size_t i = 0; i < m.items.size(); ++i)
    if (m.values[rater][i]) per_clip[m.items[i].clip_id][m.items[i].anchor] = *m.values[rater][i];
  std::map<std::string, std::optional<std::string>> out;
  for (const auto& [clip, scores] : per_clip)
    if (scores.size() >= 2) out[clip] = identify_scores(scores);
  return out;
}

// The model's pick per clip of `m` is scout's prediction (unique argmax of the
// raw scores), not the argmax of the batch-normalized row.
inline std::map<std::string, std::optional<std::string>> model_choices(const RatingMatrix& m,
                                                                       const std::vector<FitReport>& reports) {
  std::map<std::string, std::optional<std::string>> out;
  const auto clips = m.clips();
  const std::set<std::string> in_study(clips.begin(), clips.end());
  for (const auto& r : reports)
    if (in_study.contains(r.clip_id)) out[r.clip_id] = r.predicted;
  return out;
}

inline std::optional<double> mean_present(const std::vector<std::optional<double>>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& x : v)
    if (x) {
      s += *x;
      ++n;
    }
  if (!n) return std::nullopt;
  return s / static_cast<double>(n);
}

// Compares every human and the model against the consensus of the humans.
// In leave-one-out mode a rater never contributes to its own consensus.
inline EvalSummary evaluate_study(const RatingMatrix& humans, const std::vector<FitReport>& reports,
                                  const std::map<std::string, std::string>& truth,
                                  ConsensusMode mode = ConsensusMode::leave_one_out,
                                  const std::string& model_name = kDefaultModelRater) {
  if (humans.raters.empty()) throw std::invalid_argument("evaluate: no raters");
  RatingMatrix all = with_model_rater(humans, reports, model_name);
  ZScored z = znormalize_per_rater(all);
  EvalSummary summary;
  summary.consensus = to_string(mode);
  summary.n_items = humans.items.size();
  summary.warnings = z.warnings;

  for (std::size_t r = 0; r < all.raters.size(); ++r) {
    const std::string& name = all.raters[r];
    std::set<std::string> exclude{model_name};
    if (mode == ConsensusMode::leave_one_out) exclude.insert(name);
    RaterMetrics row;
    row.rater = name;
    auto consensus = build_consensus(z.matrix, exclude);
    auto [a, b] = complete_pairs(z.matrix.values[r], consensus);
    row.n_items = a.size();
    if (a.size() >= 2) {
      row.pearson_r = pearson(a, b);
      row.spearman_rho = spearman(a, b);
    }
    if (!a.empty()) row.mae_z = mae_z(a, b);
    auto choices = r + 1 == all.raters.size() ? model_choices(all, reports) : rater_choices(all, r);
    std::size_t scored = 0, correct = 0;
    for (const auto& [clip, pick] : choices) {
      auto t = truth.find(clip);
      if (t == truth.end()) continue;
      ++scored;
      correct += pick && *pick == t->second;
    }
    row.n_clips = scored;
    if (scored) row.accuracy = static_cast<double>(correct) / static_cast<double>(scored);
    summary.rows.push_back(row);
  }

  // Model row last, preceded by the human mean.
  RaterMetrics model_row = summary.rows.back();
  summary.rows.pop_back();
  RaterMetrics mean;
  mean.rater = kHumanMeanRow;
  std::vector<std::optional<double>> pr, sr, mz, ac;
  for (const auto& row : summary.rows) {
    pr.push_back(row.pearson_r);
    sr.push_back(row.spearman_rho);
    mz.push_back(row.mae_z);
    ac.push_back(row.accuracy);
    mean.n_items += row.n_items;
    mean.n_clips += row.n_clips;
  }
  mean.pearson_r = mean_present(pr);
  mean.spearman_rho = mean_present(sr);
  mean.mae_z = mean_present(mz);
  mean.accuracy = mean_present(ac);
  summary.rows.push_back(mean);
  summary.rows.push_back(model_row);

  summary.icc.push_back(icc_on_complete_subgrid(all, humans.raters, "humans"));
  std::vector<std::string> everyone = humans.raters;
  everyone.push_back(model_name);
  summary.icc.push_back(icc_on_complete_subgrid(all, everyone, "humans+model"));
  return summary;
}

inline std::string fmt3(const std::optional<double>& v) { return v ? format_fixed(*v, 3) : "NA"; }

inline std::string eval_summary_csv(const EvalSummary& s) {
  std::string out = csv_row({"rater", "pearson_r", "spearman_rho", "mae_z", "accuracy"});
  for (const auto& r : s.rows) out += csv_row({r.rater, fmt3(r.pearson_r), fmt3(r.spearman_rho), fmt3(r.mae_z), fmt3(r.accuracy)});
  out += "\n";
  out += csv_row({"icc_scope", "n_raters", "n_items", "icc_single", "icc_average"});
  for (const auto& b : s.icc)
    out += csv_row({b.scope, std::to_string(b.n_raters), std::to_string(b.n_items),
                    fmt3(b.icc ? std::optional<double>(b.icc->single) : std::nullopt),
                    fmt3(b.icc ? std::optional<double>(b.icc->average) : std::nullopt)});
  return out;
}

inline nlohmann::json to_json(const EvalSummary& s) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : s.rows)
    rows.push_back({{"rater", r.rater},
                    {"pearson_r", opt(r.pearson_r)},
                    {"spearman_rho", opt(r.spearman_rho)},
                    {"mae_z", opt(r.mae_z)},
                    {"accuracy", opt(r.accuracy)},
                    {"n_items", r.n_items},
                    {"n_clips", r.n_clips}});
  nlohmann::json icc = nlohmann::json::array();
  for (const auto& b : s.icc)
    icc.push_back({{"scope", b.scope},
                   {"n_raters", b.n_raters},
                   {"n_items", b.n_items},
                   {"icc_single", b.icc ? nlohmann::json(b.icc->single) : nlohmann::json(nullptr)},
                   {"icc_average", b.icc ? nlohmann::json(b.icc->average) : nlohmann::json(nullptr)},
                   {"note", b.note}});
  return {{"rows", rows}, {"icc", icc}, {"consensus", s.consensus}, {"n_items", s.n_items}, {"warnings", s.warnings}};
}

// ---------------------------------------------------------------------------
// Agreement grids

struct AgreementMatrices {
  std::vector<std::string> raters;
  std::vector<std::string> clips;
  std::vector<std::string> anchors;
  // similarity[anchor][rater][clip]: raw 1-100 score
  std::vector<std::vector<std::vector<std::optional<double>>>> similarity;
  // correctness[rater][clip]: rater's max-scored anchor equals the truth
  std::vector<std::vector<std::optional<bool>>> correctness;
};

// `m` should already contain the model row (see with_model_rater); when
// `reports` is given that row's correctness follows scout's predictions.
inline AgreementMatrices agreement_matrices(const RatingMatrix& m, const std::map<std::string, std::string>& truth,
                                            const std::vector<FitReport>* reports = nullptr,
                                            const std::string& model_name = kDefaultModelRater) {
  AgreementMatrices a;
  a.raters = m.raters;
  a.clips = m.clips();
  a.anchors = m.anchors();
  std::map<std::string, std::size_t> ci, ai;
  for (std::size_t i = 0; i < a.clips.size(); ++i) ci[a.clips[i]] = i;
  for (std::size_t i = 0; i < a.anchors.size(); ++i) ai[a.anchors[i]] = i;
  a.similarity.assign(a.anchors.size(), std::vector<std::vector<std::optional<double>>>(
                                            a.raters.size(), std::vector<std::optional<double>>(a.clips.size())));
  a.correctness.assign(a.raters.size(), std::vector<std::optional<bool>>(a.clips.size()));
  for (std::size_t r = 0; r < m.raters.size(); ++r) {
    for (std::size_t i = 0; i < m.items.size(); ++i)
      if (m.values[r][i]) a.similarity[ai[m.items[i].anchor]][r][ci[m.items[i].clip_id]] = m.values[r][i];
    const bool model_row = reports && m.raters[r] == model_name;
    for (const auto& [clip, pick] : model_row ? model_choices(m, *reports) : rater_choices(m, r)) {
      auto t = truth.find(clip);
      if (t != truth.end()) a.correctness[r][ci[clip]] = pick && *pick == t->second;
    }
  }
  return a;
}

inline std::string similarity_csv(const AgreementMatrices& a) {
  std::vector<std::string> header{"anchor", "rater"};
  header.insert(header.end(), a.clips.begin(), a.clips.end());
  std::string out = csv_row(header);
  for (std::size_t k = 0; k < a.anchors.size(); ++k)
    for (std::size_t r = 0; r < a.raters.size(); ++r) {
      std::vector<std::string> row{a.anchors[k], a.raters[r]};
      for (const auto& v : a.similarity[k][r]) row.push_back(format_optional(v));
      out += csv_row(row);
    }
  return out;
}

inline std::string correctness_csv(const AgreementMatrices& a) {
  std::vector<std::string> header{"rater"};
  header.insert(header.end(), a.clips.begin(), a.clips.end());
  std::string out = csv_row(header);
  for (std::size_t r = 0; r < a.raters.size(); ++r) {
    std::vector<std::string> row{a.raters[r]};
    for (const auto& v : a.correctness[r]) row.push_back(v ? (*v ? "1" : "0") : "");
    out += csv_row(row);
  }
  return out;
}

}  // namespace esir
