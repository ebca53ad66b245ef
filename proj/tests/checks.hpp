#pragma once

// Criterion-level checks shared by the unit suites and the acceptance gate.
// Each returns pass/fail plus a one-line measurement summary.

#include <chrono>
#include <sstream>
#include <string>

#include "esir/eval.hpp"
#include "esir/gail.hpp"
#include "esir/schema.hpp"
#include "esir/scout.hpp"
#include "esir/synth.hpp"
#include "oracles/gradcheck.hpp"
#include "oracles/stats_oracles.hpp"
#include "test_support.hpp"

namespace esir::checks {

struct Result {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail = why;
    pass = false;
  }
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::string sci(double v) {
  std::ostringstream os;
  os.precision(2);
  os << std::scientific << v;
  return os.str();
}

// ---------------------------------------------------------------------------

inline Result gradient_correctness(double tol = 1e-4) {
  const auto t0 = std::chrono::steady_clock::now();
  auto cases = fixtures::all_grad_cases();
  Result r;
  double worst = 0.0;
  std::string worst_name;
  for (auto& c : cases) {
    const double e = oracle::max_error(oracle::check_gradients(c.store, c.loss));
    if (e > worst) worst = e, worst_name = c.name;
    if (!(e < tol)) r.fail(c.name + " relative error " + sci(e));
  }
  const double secs = seconds_since(t0);
  if (cases.size() < 50) r.fail("only " + std::to_string(cases.size()) + " instances");
  if (secs >= 60.0) r.fail("took " + format_fixed(secs, 1) + " s");
  if (r.pass)
    r.detail = std::to_string(cases.size()) + " instances, max rel err " + sci(worst) + " (" + worst_name + "), " +
               format_fixed(secs, 1) + " s";
  return r;
}

// ---------------------------------------------------------------------------

inline Result reward_algebra() {
  Result r;
  if (!(std::abs(style_reward(0.5) - std::log(2.0)) <= 1e-12)) r.fail("style_reward(0.5) != ln 2");
  Rng rng(20);
  std::vector<double> d(1000);
  for (double& x : d) x = clamp_probability(rng.uniform(), kDefaultClampEps);
  std::sort(d.begin(), d.end());
  for (std::size_t i = 1; i < d.size(); ++i)
    if (d[i] > d[i - 1] && !(style_reward(d[i]) > style_reward(d[i - 1]))) r.fail("reward not strictly increasing");

  // fit_score = mean(r_t) and heatmap rows, on a small trained model.
  SynthSpec spec;
  spec.seed = 21;
  spec.profile_names = {"pro_a", "pro_b"};
  spec.train_per_profile = 4;
  spec.test_per_profile = 5;
  SynthCorpus corpus = sample_corpus(spec);
  GailConfig cfg;
  cfg.epochs = 2;
  StyleModel m = train_style_model("pro_a", corpus.train.at("pro_a"), corpus.train.at("pro_b"), default_pools(), cfg,
                                   fixtures::small_encoder(), 21)
                     .model;
  for (const auto& c : corpus.test) {
    auto rewards = style_reward(m, c);
    double s = 0.0;
    for (double x : rewards) s += x;
    if (fit_score(m, c) != s / static_cast<double>(rewards.size())) r.fail("fit_score != mean(r_t) on " + c.clip_id);
    auto rows = temporal_heatmap(m, c);
    double hs = 0.0;
    for (const auto& row : rows) hs += row.reward;
    if (rows.size() != rewards.size() || std::abs(hs / static_cast<double>(rows.size()) - fit_score(m, c)) > 1e-12)
      r.fail("heatmap rows inconsistent with fit_score on " + c.clip_id);
  }
  if (r.pass) r.detail = "ln 2 exact to 1e-12, 1000 monotone samples, fit/heatmap consistent on 10 clips";
  return r;
}

// ---------------------------------------------------------------------------

inline std::vector<double> with_ties(Rng& rng, std::size_t n, std::size_t levels) {
  std::vector<double> v(n);
  for (double& x : v) x = static_cast<double>(1 + rng.below(levels));
  return v;
}

inline Result metric_oracles(std::size_t instances = 25) {
  Result r;
  Rng rng(30);
  double worst = 0.0;
  auto track = [&](double a, double b, const std::string& what) {
    const double e = std::abs(a - b);
    worst = std::max(worst, e);
    if (!(e <= 1e-9)) r.fail(what + " differs by " + sci(e));
  };
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t n = 5 + rng.below(20);
    std::vector<double> x(n), y(n);
    for (std::size_t k = 0; k < n; ++k) {
      x[k] = rng.uniform(1, 100);
      y[k] = 0.5 * x[k] + rng.normal(0, 20);
    }
    track(*pearson(x, y), oracle::pearson_direct(x, y), "pearson");
  }
  // Spearman: continuous and tied series (small n keeps enumeration cheap).
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t n = 4 + rng.below(4);
    std::vector<double> x = i % 2 ? with_ties(rng, n, 3) : std::vector<double>(n);
    std::vector<double> y = with_ties(rng, n, 4);
    if (i % 2 == 0)
      for (double& v : x) v = rng.uniform();
    auto s = spearman(x, y);
    const double o = oracle::spearman_brute_force(x, y);
    if (!s) {
      if (std::isfinite(o)) r.fail("spearman missing where oracle defined");
      continue;
    }
    track(*s, o, "spearman");
  }
  // Tie fixtures.
  if (average_ranks({1, 2, 2, 4}) != std::vector<double>{1, 2.5, 2.5, 4}) r.fail("average ranks of [1,2,2,4]");
  track(*spearman({1, 2, 3}, {1, 8, 27}), 1.0, "spearman monotone");
  track(*spearman({1, 2, 2, 3, 3, 3}, {6, 5, 5, 4, 4, 1}), oracle::spearman_brute_force({1, 2, 2, 3, 3, 3}, {6, 5, 5, 4, 4, 1}),
        "spearman tie fixture");
  // ICC against the definitional ANOVA.
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t k = 2 + rng.below(6), n = 3 + rng.below(20);
    std::vector<std::vector<double>> grid(k, std::vector<double>(n));
    std::vector<double> truth(n);
    for (double& t : truth) t = rng.uniform(1, 100);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < n; ++b) grid[a][b] = std::round(truth[b] + rng.normal(0, 15) + 5.0 * a);
    auto icc = icc_two_way_mixed(grid);
    auto o = oracle::icc_anova(grid);
    track(icc.single, o.single, "icc_single");
    track(icc.average, o.average, "icc_average");
  }
  {
    std::vector<std::vector<double>> fixed{{9, 6, 8, 7}, {2, 1, 4, 1}, {5, 3, 6, 2}};
    auto icc = icc_two_way_mixed(fixed);
    auto o = oracle::icc_anova(fixed);
    track(icc.single, o.single, "icc 3x4 fixture");
    track(icc.average, o.average, "icc 3x4 fixture");
  }
  if (zscore({40, 50, 60}) != std::vector<double>{-1, 0, 1}) r.fail("znormalize([40,50,60]) != [-1,0,1]");
  if (r.pass)
    r.detail = std::to_string(instances) + " instances each (pearson, spearman incl. ties, icc), max |diff| " +
               sci(worst) + "; z([40,50,60]) exact";
  return r;
}

// ---------------------------------------------------------------------------

// Matrix with `n_raters` noisy raters scoring `n_clips` clips against every
// profile name; truth is cyclic.
struct StudyFixture {
  RatingMatrix humans;
  std::vector<FitReport> reports;
  std::map<std::string, std::string> truth;
};

inline StudyFixture study_fixture(std::uint64_t seed, std::size_t n_raters = 6, std::size_t n_clips = 20) {
  const std::vector<std::string> pros{"pro_a", "pro_b", "pro_c", "pro_d", "pro_e"};
  Rng rng(seed);
  StudyFixture f;
  std::vector<RatingRow> rows;
  for (std::size_t c = 0; c < n_clips; ++c) {
    char id[32];
    std::snprintf(id, sizeof id, "clip_%03zu", c + 1);
    f.truth[id] = pros[c % pros.size()];
    FitReport rep;
    rep.clip_id = id;
    for (const auto& p : pros) rep.raw[p] = (p == f.truth[id] ? 1.0 : 0.0) + rng.normal(0, 0.6);
    rep.predicted = identify_scores(rep.raw);
    f.reports.push_back(rep);
    for (std::size_t r = 0; r < n_raters; ++r)
      for (const auto& p : pros) {
        // Skip some cells so the grid is incomplete.
        if (rng.bernoulli(0.1)) continue;
        const double s = std::clamp(std::round(30 + (p == f.truth[id] ? 40 : 0) + rng.normal(0, 15)), 1.0, 100.0);
        rows.push_back({"rater_" + std::to_string(r + 1), id, p, s});
      }
  }
  // Per-pro batch normalization of the model rows.
  for (const auto& p : pros) {
    std::vector<double> raw;
    for (const auto& rep : f.reports) raw.push_back(rep.raw.at(p));
    auto n = normalize_scores(raw);
    for (std::size_t i = 0; i < f.reports.size(); ++i) f.reports[i].normalized[p] = n[i];
  }
  f.humans = rating_matrix_from_rows(rows);
  return f;
}

inline bool metrics_equal(const RaterMetrics& a, const RaterMetrics& b, double tol) {
  auto eq = [tol](const std::optional<double>& x, const std::optional<double>& y) {
    if (x.has_value() != y.has_value()) return false;
    return !x || std::abs(*x - *y) <= tol;
  };
  return a.rater == b.rater && eq(a.pearson_r, b.pearson_r) && eq(a.spearman_rho, b.spearman_rho) &&
         eq(a.mae_z, b.mae_z) && eq(a.accuracy, b.accuracy);
}

inline Result affine_invariance(std::size_t trials = 20) {
  Result r;
  Rng rng(40);
  std::size_t rows_checked = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    StudyFixture f = study_fixture(derive_seed(40, std::to_string(t)));
    EvalSummary base = evaluate_study(f.humans, f.reports, f.truth);
    RatingMatrix moved = f.humans;
    for (auto& row : moved.values) {
      const double a = rng.uniform(0.05, 20.0), b = rng.uniform(-500.0, 500.0);
      for (auto& v : row)
        if (v) v = a * *v + b;
    }
    EvalSummary after = evaluate_study(moved, f.reports, f.truth);
    for (std::size_t i = 0; i < base.rows.size(); ++i) {
      ++rows_checked;
      if (!metrics_equal(base.rows[i], after.rows[i], 1e-9)) r.fail("metrics changed for " + base.rows[i].rater);
    }
  }
  // identify under strictly increasing transforms of the five scores.
  std::size_t clips = 0;
  for (int i = 0; i < 1000; ++i) {
    std::map<std::string, double> raw, moved;
    for (const char* p : {"A", "B", "C", "D", "E"}) raw[p] = rng.bernoulli(0.15) ? 0.25 : rng.uniform(0.0, 3.0);
    const int kind = i % 3;
    const double a = rng.uniform(0.1, 10.0), b = rng.uniform(-5.0, 5.0);
    for (const auto& [p, x] : raw)
      moved[p] = kind == 0 ? a * x + b : kind == 1 ? std::exp(x) : x * x * x + x;
    if (identify_scores(raw) != identify_scores(moved)) r.fail("identify changed under an increasing transform");
    ++clips;
  }
  if (r.pass)
    r.detail = std::to_string(trials) + " studies (" + std::to_string(rows_checked) +
               " rater rows) unchanged to 1e-9; identify stable on " + std::to_string(clips) + " score vectors";
  return r;
}

// ---------------------------------------------------------------------------

inline Result schema_properties() {
  Result r;
  Rng rng(50);
  const ValuePools& pools = default_pools();
  std::size_t parsed = 0, mutations = 0;
  for (int i = 0; i < 1000; ++i) {
    Clip c = fixtures::random_clip(pools, rng, "clip_" + std::to_string(i));
    try {
      if (parse_clip(serialize_clip(c), pools) == c) ++parsed;
      else r.fail("round trip changed clip " + c.clip_id);
    } catch (const SchemaError& e) {
      r.fail("valid clip rejected: " + std::string(e.what()));
    }
    if (i % 10 == 0)
      for (const auto& [field, doc] : fixtures::out_of_pool_mutations(clip_to_json(c))) {
        ++mutations;
        try {
          clip_from_json(doc, pools);
          r.fail("mutation accepted: " + field);
        } catch (const SchemaError&) {
        }
      }
    Clip s = sanitize_clip(c);
    if (!(sanitize_clip(s) == s)) r.fail("sanitize not idempotent on " + c.clip_id);
  }
  nlohmann::json banana = {{"map", "de_mirage"},
                           {"player_id", "p"},
                           {"events",
                            {{{"timestamp", 0.0},
                              {"player_id", "p"},
                              {"team", "T"},
                              {"action", "peek"},
                              {"location", "banana"},
                              {"weapon", {"ak47"}},
                              {"outcome", nlohmann::json::array()},
                              {"impact", nlohmann::json::array()},
                              {"targets", nlohmann::json::array()},
                              {"damage", 0}}}}};
  try {
    clip_from_json(banana, pools);
    r.fail("mirage + banana accepted");
  } catch (const SchemaError& e) {
    if (e.violations().empty() || e.violations()[0].path != "events[0].location") r.fail("mirage + banana path");
  }
  if (r.pass)
    r.detail = std::to_string(parsed) + "/1000 valid clips parse, " + std::to_string(mutations) +
               " single-field mutations rejected, mirage+banana rejected, sanitize idempotent";
  return r;
}

// ---------------------------------------------------------------------------

inline Result normalization() {
  Result r;
  if (normalize_scores({0.2, 0.5, 0.8}) != std::vector<double>{1.0, 50.5, 100.0}) r.fail("[0.2,0.5,0.8]");
  if (normalize_scores({0.4, 0.4}) != std::vector<double>{50.5, 50.5}) r.fail("degenerate batch");
  Rng rng(60);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> raw(2 + rng.below(60));
    for (double& x : raw) x = rng.bernoulli(0.2) ? std::round(rng.uniform(0, 4)) : rng.normal(0, 3);
    auto n = normalize_scores(raw);
    for (std::size_t a = 0; a < raw.size(); ++a) {
      if (n[a] < 1.0 || n[a] > 100.0) r.fail("value outside [1,100]");
      for (std::size_t b = 0; b < raw.size(); ++b)
        if ((raw[a] < raw[b]) != (n[a] < n[b]) || (raw[a] == raw[b]) != (n[a] == n[b])) r.fail("order changed");
    }
  }
  if (r.pass) r.detail = "endpoints exact, degenerate -> 50.5, order preserved on 1000 random batches";
  return r;
}

}  // namespace esir::checks
