#pragma once

// Synthetic style families: five parametric players whose event fields are
// drawn from known categorical distributions, an exact maximum-likelihood
// identifier over those distributions, and simulated human raters.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "esir/csv.hpp"
#include "esir/eval.hpp"
#include "esir/rng.hpp"
#include "esir/schema.hpp"
#include "esir/study.hpp"

namespace esir {

inline constexpr const char* kSynthMap = "de_mirage";
inline constexpr const char* kDamageOutcome = "EnemyDamaged";

struct StyleProfile {
  std::string name;
  std::string map;
  std::vector<double> action;                    // over pools.actions
  std::vector<std::vector<double>> transitions;  // [prev action][action]; empty when disabled
  std::vector<double> location;                  // over pools.locations(map)
  std::vector<double> weapon;                    // exactly one weapon per event
  std::vector<double> outcome;                   // over pools.outcomes + {none}
  std::vector<double> impact;                    // over pools.impacts + {none}
  double rate = 0.5;                             // events per second
  double damage_p = 0.35;                        // Binomial(100, p) on a damaging outcome
};

struct SynthSpec {
  std::uint64_t seed = 0;
  double alpha = 1.0;
  std::vector<std::string> profile_names{"pro_a", "pro_b", "pro_c", "pro_d", "pro_e"};
  std::size_t train_per_profile = 12;
  std::size_t test_per_profile = 30;
  double duration_s = 40.0;
  double rate = 0.5;
  double bin_s = 2.0;
  double sharpness = 1.5;  // spread of the log-weights of each profile's own distributions
  bool transitions = false;
  double damage_p = 0.35;
  std::string map = kSynthMap;
  ValuePools pools = default_pools();

  void validate() const {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("synth: alpha must lie in [0, 1]");
    if (profile_names.size() < 2) throw std::invalid_argument("synth: need at least 2 profiles");
    std::set<std::string> uniq(profile_names.begin(), profile_names.end());
    if (uniq.size() != profile_names.size()) throw std::invalid_argument("synth: profile names must be unique");
    if (train_per_profile < 1 || test_per_profile < 1) throw std::invalid_argument("synth: clip counts must be >= 1");
    if (!(rate > 0.0)) throw std::invalid_argument("synth: rate must be > 0");
    if (!(duration_s > 0.0) || !(bin_s > 0.0)) throw std::invalid_argument("synth: duration and bin must be > 0");
    if (!pools.has_map(map)) throw std::invalid_argument("synth: map '" + map + "' not in pools");
    if (damage_p < 0.0 || damage_p > 1.0) throw std::invalid_argument("synth: damage_p must lie in [0, 1]");
  }
};

inline nlohmann::json to_json(const SynthSpec& s) {
  return {{"seed", s.seed},
          {"alpha", s.alpha},
          {"profiles", s.profile_names},
          {"train_per_profile", s.train_per_profile},
          {"test_per_profile", s.test_per_profile},
          {"duration_s", s.duration_s},
          {"rate", s.rate},
          {"bin_s", s.bin_s},
          {"sharpness", s.sharpness},
          {"transitions", s.transitions},
          {"damage_p", s.damage_p},
          {"map", s.map},
          {"pools", pools_to_json(s.pools)}};
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  s.seed = j.value("seed", s.seed);
  s.alpha = j.value("alpha", s.alpha);
  if (j.contains("profiles")) j.at("profiles").get_to(s.profile_names);
  s.train_per_profile = j.value("train_per_profile", s.train_per_profile);
  s.test_per_profile = j.value("test_per_profile", s.test_per_profile);
  s.duration_s = j.value("duration_s", s.duration_s);
  s.rate = j.value("rate", s.rate);
  s.bin_s = j.value("bin_s", s.bin_s);
  s.sharpness = j.value("sharpness", s.sharpness);
  s.transitions = j.value("transitions", s.transitions);
  s.damage_p = j.value("damage_p", s.damage_p);
  s.map = j.value("map", s.map);
  if (j.contains("pools")) s.pools = pools_from_json(j.at("pools"));
  s.validate();
  return s;
}

namespace detail {

inline std::vector<double> normalized(std::vector<double> w) {
  double s = 0.0;
  for (double v : w) s += v;
  for (double& v : w) v /= s;
  return w;
}

inline std::vector<double> base_weights(std::size_t n, Rng& rng) {
  std::vector<double> w(n);
  for (double& v : w) v = 0.5 + rng.uniform();
  return normalized(w);
}

inline std::vector<double> peaked_weights(std::size_t n, double sharpness, Rng& rng) {
  std::vector<double> w(n);
  for (double& v : w) v = std::exp(sharpness * rng.normal());
  return normalized(w);
}

inline std::vector<double> blend(const std::vector<double>& own, const std::vector<double>& base, double alpha) {
  std::vector<double> out(own.size());
  for (std::size_t i = 0; i < own.size(); ++i) out[i] = alpha * own[i] + (1.0 - alpha) * base[i];
  return out;
}

}  // namespace detail

// Profiles are a blend alpha * own + (1 - alpha) * base, field by field.
inline std::vector<StyleProfile> make_profiles(const SynthSpec& spec) {
  spec.validate();
  const ValuePools& P = spec.pools;
  const auto& locs = P.locations(spec.map);
  Rng base_rng(derive_seed(spec.seed, "profile:base"));
  StyleProfile base;
  base.action = detail::base_weights(P.actions.size(), base_rng);
  base.location = detail::base_weights(locs.size(), base_rng);
  base.weapon = detail::base_weights(P.weapons.size(), base_rng);
  base.outcome = detail::base_weights(P.outcomes.size() + 1, base_rng);
  base.impact = detail::base_weights(P.impacts.size() + 1, base_rng);

  std::vector<StyleProfile> out;
  for (const auto& name : spec.profile_names) {
    Rng rng(derive_seed(spec.seed, "profile:" + name));
    StyleProfile p;
    p.name = name;
    p.map = spec.map;
    p.rate = spec.rate;
    p.damage_p = spec.damage_p;
    const double a = spec.alpha;
    p.action = detail::blend(detail::peaked_weights(P.actions.size(), spec.sharpness, rng), base.action, a);
    p.location = detail::blend(detail::peaked_weights(locs.size(), spec.sharpness, rng), base.location, a);
    p.weapon = detail::blend(detail::peaked_weights(P.weapons.size(), spec.sharpness, rng), base.weapon, a);
    p.outcome = detail::blend(detail::peaked_weights(P.outcomes.size() + 1, spec.sharpness, rng), base.outcome, a);
    p.impact = detail::blend(detail::peaked_weights(P.impacts.size() + 1, spec.sharpness, rng), base.impact, a);
    if (spec.transitions)
      for (std::size_t i = 0; i < P.actions.size(); ++i)
        p.transitions.push_back(
            detail::blend(detail::peaked_weights(P.actions.size(), spec.sharpness, rng), base.action, a));
    out.push_back(std::move(p));
  }
  return out;
}

inline nlohmann::json to_json(const StyleProfile& p) {
  return {{"name", p.name},         {"map", p.map},         {"action", p.action},
          {"transitions", p.transitions}, {"location", p.location}, {"weapon", p.weapon},
          {"outcome", p.outcome},   {"impact", p.impact},   {"rate", p.rate},
          {"damage_p", p.damage_p}};
}

// Events arrive as Poisson(rate * bin) counts per bin, uniformly placed
// inside the bin. A clip always has at least one event.
inline Clip sample_clip(const StyleProfile& p, const ValuePools& pools, std::uint64_t seed, const std::string& clip_id,
                        double duration_s, double bin_s) {
  Rng rng(seed);
  const auto& locs = pools.locations(p.map);
  Clip c;
  c.clip_id = clip_id;
  c.map = p.map;
  c.player_id = p.name;
  const std::string team = pools.teams[rng.below(pools.teams.size())];
  std::optional<std::size_t> prev;
  std::size_t enemy = 0;
  for (int attempt = 0; c.events.empty(); ++attempt) {
    if (attempt > 1000) throw std::runtime_error("synth: could not sample a non-empty clip");
    for (double start = 0.0; start < duration_s; start += bin_s) {
      const double width = std::min(bin_s, duration_s - start);
      const std::size_t n = rng.poisson(p.rate * width);
      std::vector<double> times;
      for (std::size_t i = 0; i < n; ++i) times.push_back(std::round((start + rng.uniform() * width) * 100.0) / 100.0);
      std::sort(times.begin(), times.end());
      for (double t : times) {
        TrajectoryEvent e;
        e.timestamp = t;
        e.player_id = p.name;
        e.team = team;
        const auto& adist = prev && !p.transitions.empty() ? p.transitions[*prev] : p.action;
        const std::size_t a = rng.categorical(adist);
        prev = a;
        e.action = pools.actions[a];
        e.location = locs[rng.categorical(p.location)];
        e.weapon = {pools.weapons[rng.categorical(p.weapon)]};
        const std::size_t o = rng.categorical(p.outcome);
        if (o < pools.outcomes.size()) e.outcome = {pools.outcomes[o]};
        const std::size_t im = rng.categorical(p.impact);
        if (im < pools.impacts.size()) e.impact = {pools.impacts[im]};
        if (!e.outcome.empty() && e.outcome[0] == kDamageOutcome) {
          e.damage = static_cast<int>(rng.binomial(100, p.damage_p));
          e.targets = {"enemy_" + std::to_string(++enemy)};
        }
        c.events.push_back(std::move(e));
      }
    }
  }
  return c;
}

// Exact log-likelihood of the clip's categorical fields under a profile.
// Timing, team and damage are shared by all profiles and cancel out.
inline double profile_log_likelihood(const StyleProfile& p, const ValuePools& pools, const Clip& clip) {
  const auto& locs = pools.locations(p.map);
  double ll = 0.0;
  std::optional<std::size_t> prev;
  for (const auto& e : clip.events) {
    const std::size_t a = Vocab::position_in(pools.actions, e.action, "action");
    const auto& adist = prev && !p.transitions.empty() ? p.transitions[*prev] : p.action;
    ll += std::log(adist[a]);
    prev = a;
    ll += std::log(p.location[Vocab::position_in(locs, e.location, "location")]);
    if (e.weapon.size() != 1) return -INFINITY;
    ll += std::log(p.weapon[Vocab::position_in(pools.weapons, e.weapon[0], "weapon")]);
    if (e.outcome.size() > 1 || e.impact.size() > 1) return -INFINITY;
    ll += std::log(p.outcome[e.outcome.empty() ? pools.outcomes.size()
                                               : Vocab::position_in(pools.outcomes, e.outcome[0], "outcome")]);
    ll += std::log(p.impact[e.impact.empty() ? pools.impacts.size()
                                             : Vocab::position_in(pools.impacts, e.impact[0], "impact")]);
  }
  return ll;
}

// Maximum-likelihood profile; exact ties abstain.
inline std::optional<std::string> bayes_oracle(const std::vector<StyleProfile>& profiles, const ValuePools& pools,
                                               const Clip& clip) {
  std::map<std::string, double> ll;
  for (const auto& p : profiles) ll[p.name] = profile_log_likelihood(p, pools, clip);
  return identify_scores(ll);
}

// Posterior over profiles under a uniform prior, with log-likelihoods divided
// by `temperature` (> 1 flattens it).
inline std::map<std::string, double> profile_posterior(const std::vector<StyleProfile>& profiles,
                                                       const ValuePools& pools, const Clip& clip,
                                                       double temperature = 1.0) {
  std::map<std::string, double> ll;
  double mx = -INFINITY;
  for (const auto& p : profiles) {
    ll[p.name] = profile_log_likelihood(p, pools, clip) / temperature;
    mx = std::max(mx, ll[p.name]);
  }
  double z = 0.0;
  for (auto& [_, v] : ll) z += (v = std::exp(v - mx));
  for (auto& [_, v] : ll) v /= z;
  return ll;
}

struct SynthCorpus {
  SynthSpec spec;
  std::vector<StyleProfile> profiles;
  std::map<std::string, std::vector<Clip>> train;  // labeled, by profile
  std::vector<Clip> test;                          // sanitized, shuffled
  std::map<std::string, std::string> truth;        // test clip_id -> profile
  std::map<std::string, Clip> test_unsanitized;    // kept for the oracle
};

inline SynthCorpus sample_corpus(const SynthSpec& spec) {
  SynthCorpus c;
  c.spec = spec;
  c.profiles = make_profiles(spec);
  struct Pending {
    Clip clip;
    std::string pro;
  };
  std::vector<Pending> pending;
  for (const auto& p : c.profiles) {
    for (std::size_t k = 0; k < spec.train_per_profile; ++k) {
      char id[64];
      std::snprintf(id, sizeof id, "train_%s_%02zu", p.name.c_str(), k + 1);
      Clip clip = sample_clip(p, spec.pools, derive_seed(spec.seed, std::string("clip:") + id), id, spec.duration_s,
                              spec.bin_s);
      clip.archetype_label = p.name;
      c.train[p.name].push_back(std::move(clip));
    }
    for (std::size_t k = 0; k < spec.test_per_profile; ++k) {
      const std::string key = "test:" + p.name + ":" + std::to_string(k);
      pending.push_back({sample_clip(p, spec.pools, derive_seed(spec.seed, key), "", spec.duration_s, spec.bin_s), p.name});
    }
  }
  Rng order(derive_seed(spec.seed, "test-order"));
  order.shuffle(pending);
  for (std::size_t i = 0; i < pending.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "clip_%03zu", i + 1);
    pending[i].clip.clip_id = id;
    c.truth[id] = pending[i].pro;
    c.test_unsanitized[id] = pending[i].clip;
    c.test.push_back(sanitize_clip(pending[i].clip));
  }
  return c;
}

// Accuracy ceiling of the maximum-likelihood rule. On a tie among m
// profiles that includes the truth a uniform tie-break is right with
// probability 1/m, so the clip contributes 1/m; this keeps the ceiling at
// chance, not zero, when profiles coincide.
inline double oracle_accuracy(const SynthCorpus& c) {
  double credit = 0.0;
  for (const auto& clip : c.test) {
    std::map<std::string, double> ll;
    double best = -INFINITY;
    for (const auto& p : c.profiles) {
      ll[p.name] = profile_log_likelihood(p, c.spec.pools, clip);
      best = std::max(best, ll[p.name]);
    }
    std::size_t tied = 0;
    for (const auto& [_, v] : ll) tied += v == best;
    if (ll.at(c.truth.at(clip.clip_id)) == best) credit += 1.0 / static_cast<double>(tied);
  }
  return credit / static_cast<double>(c.test.size());
}

// Fraction of clips where the oracle names the truth outright (ties abstain).
inline double oracle_strict_accuracy(const SynthCorpus& c) {
  std::size_t correct = 0;
  for (const auto& clip : c.test) {
    auto p = bayes_oracle(c.profiles, c.spec.pools, clip);
    correct += p && *p == c.truth.at(clip.clip_id);
  }
  return static_cast<double>(correct) / static_cast<double>(c.test.size());
}

inline std::vector<Clip> all_train_clips_except(const SynthCorpus& c, const std::string& pro) {
  std::vector<Clip> out;
  for (const auto& [name, clips] : c.train)
    if (name != pro) out.insert(out.end(), clips.begin(), clips.end());
  return out;
}

// ---------------------------------------------------------------------------
// Simulated raters

struct RaterSimSpec {
  std::size_t n_raters = 5;
  std::size_t session_size = kDefaultSessionSize;
  std::uint64_t study_seed = 0;
  double temperature = 4.0;  // flattens the posterior a rater perceives
  double noise_sd = 12.0;
  double max_offset = 10.0;  // severity / leniency shift
  double min_scale = 0.7, max_scale = 1.1;
};

inline nlohmann::json to_json(const RaterSimSpec& r) {
  return {{"n_raters", r.n_raters},   {"session_size", r.session_size}, {"study_seed", r.study_seed},
          {"temperature", r.temperature}, {"noise_sd", r.noise_sd},     {"max_offset", r.max_offset},
          {"min_scale", r.min_scale}, {"max_scale", r.max_scale}};
}

inline std::vector<std::string> sorted_ids(const std::vector<Clip>& clips) {
  std::vector<std::string> ids;
  for (const auto& c : clips) ids.push_back(c.clip_id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Each rater scores their assigned clips (same assignment rule as the rating
// service) for every anchor: 15 + 70 * posterior plus noise, then a personal
// affine bias, rounded and clamped to [1, 100].
inline std::vector<RatingRow> simulate_ratings(const SynthCorpus& c, const RaterSimSpec& spec, std::uint64_t seed) {
  const auto pool = sorted_ids(c.test);
  std::vector<RatingRow> rows;
  for (std::size_t r = 0; r < spec.n_raters; ++r) {
    const std::string pid = "rater_" + std::to_string(r + 1);
    Rng rng(derive_seed(seed, "rater:" + pid));
    const double offset = rng.uniform(-spec.max_offset, spec.max_offset);
    const double scale = rng.uniform(spec.min_scale, spec.max_scale);
    for (const auto& clip_id : assign_clips(pool, spec.study_seed, pid, spec.session_size)) {
      auto post = profile_posterior(c.profiles, c.spec.pools, c.test_unsanitized.at(clip_id), spec.temperature);
      for (const auto& [anchor, p] : post) {
        const double latent = 15.0 + 70.0 * p + rng.normal(0.0, spec.noise_sd);
        const double s = std::clamp(std::round(offset + scale * latent), 1.0, 100.0);
        rows.push_back({pid, clip_id, anchor, s});
      }
    }
  }
  std::sort(rows.begin(), rows.end(), [](const RatingRow& a, const RatingRow& b) {
    return std::tie(a.participant_id, a.clip_id, a.anchor) < std::tie(b.participant_id, b.clip_id, b.anchor);
  });
  return rows;
}

inline std::string ratings_csv(const std::vector<RatingRow>& rows) {
  std::string out = csv_row({"participant_id", "clip_id", "anchor", "score"});
  for (const auto& r : rows) out += csv_row({r.participant_id, r.clip_id, r.anchor, format_double(r.score)});
  return out;
}

inline std::string truth_csv(const std::map<std::string, std::string>& truth) {
  std::string out = csv_row({"clip_id", "true_pro"});
  for (const auto& [clip, pro] : truth) out += csv_row({clip, pro});
  return out;
}

inline std::map<std::string, std::string> parse_truth_csv(const std::string& text) {
  auto t = parse_csv(text);
  if (t.empty()) throw std::runtime_error("truth csv: empty");
  const std::size_t ci = csv_column(t[0], "clip_id"), pi = csv_column(t[0], "true_pro");
  std::map<std::string, std::string> out;
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (t[i].size() != t[0].size()) throw std::runtime_error("truth csv: line " + std::to_string(i + 1) + " has wrong width");
    out[t[i][ci]] = t[i][pi];
  }
  return out;
}

// Layout under `dir`:
//   pools.json, spec.json, profiles.json
//   clips/<clip_id>.json
//   train_manifest.json (labeled), test_manifest.json (unlabeled)
//   truth.csv
inline void write_corpus(const SynthCorpus& c, const fs::path& dir) {
  fs::create_directories(dir / "clips");
  write_text_file(dir / "pools.json", pools_to_json(c.spec.pools).dump(2) + "\n");
  write_text_file(dir / "spec.json", to_json(c.spec).dump(2) + "\n");
  nlohmann::json profiles = nlohmann::json::array();
  for (const auto& p : c.profiles) profiles.push_back(to_json(p));
  write_text_file(dir / "profiles.json", profiles.dump(2) + "\n");
  CorpusManifest train, test;
  train.pools_version = test.pools_version = c.spec.pools.version;
  for (const auto& [pro, clips] : c.train)
    for (const auto& clip : clips) {
      write_text_file(dir / "clips" / (clip.clip_id + ".json"), serialize_clip(clip) + "\n");
      train.clips.push_back({clip.clip_id, "clips/" + clip.clip_id + ".json", pro, std::nullopt});
    }
  for (const auto& clip : c.test) {
    write_text_file(dir / "clips" / (clip.clip_id + ".json"), serialize_clip(clip) + "\n");
    test.clips.push_back({clip.clip_id, "clips/" + clip.clip_id + ".json", std::nullopt, std::nullopt});
  }
  write_text_file(dir / "train_manifest.json", manifest_to_json(train).dump(2) + "\n");
  write_text_file(dir / "test_manifest.json", manifest_to_json(test).dump(2) + "\n");
  write_text_file(dir / "truth.csv", truth_csv(c.truth));
}

}  // namespace esir
