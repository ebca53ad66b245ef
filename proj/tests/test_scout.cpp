#include <gtest/gtest.h>

#include "esir/scout.hpp"
#include "esir/synth.hpp"
#include "test_support.hpp"

using namespace esir;

namespace {

std::vector<std::size_t> argsort(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  return idx;
}

FitReport report(const std::string& id, double target_raw) {
  FitReport r;
  r.clip_id = id;
  r.raw = {{"pro_a", target_raw}, {"pro_b", 0.0}};
  return r;
}

}  // namespace

TEST(Normalize, Endpoints) {
  auto n = normalize_scores({0.2, 0.5, 0.8});
  EXPECT_EQ(n[0], 1.0);
  EXPECT_EQ(n[1], 50.5);
  EXPECT_EQ(n[2], 100.0);
}

TEST(Normalize, DegenerateBatchIsMidpoint) {
  EXPECT_EQ(normalize_scores({0.4, 0.4}), (std::vector<double>{50.5, 50.5}));
  EXPECT_EQ(normalize_scores({3.0}), (std::vector<double>{50.5}));
  EXPECT_THROW(normalize_scores({}), std::invalid_argument);
}

TEST(Normalize, PreservesOrderOnRandomBatches) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> raw(1 + rng.below(40));
    for (double& x : raw) x = rng.bernoulli(0.2) ? std::round(rng.uniform(0, 3)) : rng.uniform(-5, 5);
    auto n = normalize_scores(raw);
    ASSERT_EQ(argsort(n), argsort(raw));
    for (double x : n) ASSERT_TRUE(x >= 1.0 && x <= 100.0);
  }
}

TEST(Normalize, FixedReferenceClamps) {
  auto ref = NormalizationReference::from_batch({1.0, 3.0});
  EXPECT_DOUBLE_EQ(ref.apply(2.0), 50.5);
  EXPECT_DOUBLE_EQ(ref.apply(10.0), 100.0);
  EXPECT_DOUBLE_EQ(ref.apply(-10.0), 1.0);
}

TEST(Identify, UniqueArgmax) {
  EXPECT_EQ(identify_scores({{"A", 0.8}, {"B", 0.3}, {"C", 0.3}, {"D", 0.1}, {"E", 0.2}}),
            std::optional<std::string>("A"));
}

TEST(Identify, TieAtMaxAbstains) {
  EXPECT_FALSE(identify_scores({{"A", 0.8}, {"B", 0.8}, {"C", 0.1}}).has_value());
  EXPECT_THROW(identify_scores({{"A", 0.8}}), std::invalid_argument);
}

TEST(Identify, InvariantUnderIncreasingTransforms) {
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    std::map<std::string, double> raw, affine, cubic;
    const double a = rng.uniform(0.1, 5.0), b = rng.uniform(-3, 3);
    for (const char* p : {"A", "B", "C", "D", "E"}) {
      const double x = rng.bernoulli(0.1) ? 0.5 : rng.uniform(0, 2);
      raw[p] = x;
      affine[p] = a * x + b;
      cubic[p] = x * x * x + std::exp(x);
    }
    ASSERT_EQ(identify_scores(raw), identify_scores(affine));
    ASSERT_EQ(identify_scores(raw), identify_scores(cubic));
  }
}

TEST(Rank, DescendingByTarget) {
  std::vector<FitReport> r{report("clip1", 0.9), report("clip2", 0.1), report("clip3", 0.5)};
  sort_by_target(r, "pro_a");
  EXPECT_EQ(r[0].clip_id, "clip1");
  EXPECT_EQ(r[1].clip_id, "clip3");
  EXPECT_EQ(r[2].clip_id, "clip2");
}

TEST(Rank, TiesBreakByClipId) {
  std::vector<FitReport> r{report("zeta", 0.5), report("alpha", 0.5), report("mid", 0.7)};
  sort_by_target(r, "pro_a");
  EXPECT_EQ(r[0].clip_id, "mid");
  EXPECT_EQ(r[1].clip_id, "alpha");
  EXPECT_EQ(r[2].clip_id, "zeta");
}

TEST(Heatmap, ConstantRewardsAreHalf) {
  Rng rng(3);
  Clip c = fixtures::random_clip(default_pools(), rng, "c", 2, 2);
  auto rows = heatmap_rows(c, {std::log(2.0), std::log(2.0)});
  EXPECT_EQ(rows[0].reward_norm, 0.5);
  EXPECT_EQ(rows[1].reward_norm, 0.5);
}

TEST(Heatmap, MinMaxNormalized) {
  Rng rng(4);
  Clip c = fixtures::random_clip(default_pools(), rng, "c", 2, 2);
  auto rows = heatmap_rows(c, {0.1, 0.9});
  EXPECT_EQ(rows[0].reward_norm, 0.0);
  EXPECT_EQ(rows[1].reward_norm, 1.0);
  EXPECT_EQ(rows[1].timestamp, c.events[1].timestamp);
  EXPECT_EQ(rows[1].t, 1u);
}

TEST(Heatmap, CsvHeader) {
  Rng rng(5);
  Clip c = fixtures::random_clip(default_pools(), rng, "c", 2, 2);
  std::string csv = heatmap_csv("c", heatmap_rows(c, {0.1, 0.9}));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "clip_id,t,timestamp_s,reward,reward_norm");
}

class Scoring : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    SynthSpec spec;
    spec.seed = 9;
    spec.profile_names = {"pro_a", "pro_b", "pro_c"};
    spec.train_per_profile = 6;
    spec.test_per_profile = 3;
    corpus_ = new SynthCorpus(sample_corpus(spec));
    registry_ = new Registry();
    GailConfig cfg;
    cfg.epochs = 3;
    for (const auto& name : spec.profile_names)
      registry_->add(train_style_model(name, corpus_->train.at(name), all_train_clips_except(*corpus_, name),
                                       default_pools(), cfg, fixtures::small_encoder(), derive_seed(1, name))
                         .model);
  }
  static void TearDownTestSuite() {
    delete corpus_;
    delete registry_;
  }
  static SynthCorpus* corpus_;
  static Registry* registry_;
};
SynthCorpus* Scoring::corpus_ = nullptr;
Registry* Scoring::registry_ = nullptr;

TEST_F(Scoring, ReportsAreConsistent) {
  auto reports = score_clips(registry_->models(), corpus_->test);
  ASSERT_EQ(reports.size(), corpus_->test.size());
  for (const auto& r : reports) {
    EXPECT_EQ(r.raw.size(), 3u);
    for (const auto& [pro, n] : r.normalized) EXPECT_TRUE(n >= 1.0 && n <= 100.0) << pro;
    EXPECT_EQ(r.predicted, identify_scores(r.raw));
    if (r.predicted) {
      EXPECT_EQ(mean_reward(r.rewards), r.raw.at(*r.predicted));
    } else {
      EXPECT_TRUE(r.rewards.empty());
    }
  }
}

TEST_F(Scoring, ScoreIndependentOfBatchComposition) {
  auto all = score_clips(registry_->models(), corpus_->test);
  std::vector<Clip> reversed(corpus_->test.rbegin(), corpus_->test.rend());
  auto rev = score_clips(registry_->models(), reversed);
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i].raw, rev[all.size() - 1 - i].raw);
  auto one = score_clips(registry_->models(), {corpus_->test[0]});
  EXPECT_EQ(one[0].raw, all[0].raw);
  for (const auto& [_, n] : one[0].normalized) EXPECT_EQ(n, 50.5);
}

TEST_F(Scoring, HeatmapMeanEqualsFitScore) {
  const StyleModel& m = registry_->get("pro_a");
  for (const auto& c : corpus_->test) {
    auto rows = temporal_heatmap(m, c);
    double sum = 0.0;
    for (const auto& r : rows) sum += r.reward;
    EXPECT_NEAR(sum / static_cast<double>(rows.size()), fit_score(m, c), 1e-12);
  }
}

TEST_F(Scoring, RankCandidatesOrdersByTarget) {
  auto ranked = rank_candidates(registry_->models(), corpus_->test, "pro_b");
  for (std::size_t i = 1; i < ranked.size(); ++i) EXPECT_GE(ranked[i - 1].raw.at("pro_b"), ranked[i].raw.at("pro_b"));
  EXPECT_THROW(rank_candidates(registry_->models(), corpus_->test, "nobody"), std::invalid_argument);
}

TEST_F(Scoring, CsvRoundTrip) {
  auto reports = score_clips(registry_->models(), corpus_->test);
  const std::string csv = fit_reports_csv(reports);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "clip_id,pro,raw_score,norm_score,predicted");
  auto back = parse_fit_reports_csv(csv);
  ASSERT_EQ(back.size(), reports.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].raw, reports[i].raw);
    EXPECT_EQ(back[i].predicted, reports[i].predicted);
  }
}

TEST_F(Scoring, RegistryDirectoryRoundTrip) {
  fs::path dir = fs::temp_directory_path() / "esir_scout_registry";
  fs::remove_all(dir);
  fs::create_directories(dir);
  for (const auto* m : registry_->models()) write_text_file(model_path(dir, m->professional), serialize_style_model(*m));
  Registry loaded = Registry::load_directory(dir);
  EXPECT_EQ(loaded.names(), registry_->names());
  const Clip& c = corpus_->test[1];
  for (const auto& name : loaded.names()) EXPECT_EQ(fit_score(loaded.get(name), c), fit_score(registry_->get(name), c));
  EXPECT_THROW(loaded.add(parse_style_model(serialize_style_model(registry_->get("pro_a")))), std::invalid_argument);
  EXPECT_THROW(loaded.get("nobody"), std::out_of_range);
}
