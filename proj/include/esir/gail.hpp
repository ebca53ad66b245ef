#pragma once

// Adversarial style-reward learning. A per-timestep discriminator head sits
// on the encoder's contextual rows; the learned reward for a step is
// -log(1 - D), and a clip's archetype-fit score is the mean step reward.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "esir/encoder.hpp"
#include "esir/numerics.hpp"
#include "esir/rng.hpp"
#include "esir/schema.hpp"

namespace esir {

inline constexpr double kDefaultClampEps = 1e-4;

enum class GailMode { contrast_negatives, learned_generator };

inline std::string to_string(GailMode m) {
  return m == GailMode::learned_generator ? "learned_generator" : "contrast_negatives";
}

inline GailMode gail_mode_from_string(const std::string& s) {
  if (s == "contrast_negatives") return GailMode::contrast_negatives;
  if (s == "learned_generator") return GailMode::learned_generator;
  throw std::invalid_argument("unknown gail mode '" + s + "'");
}

struct GailConfig {
  GailMode mode = GailMode::contrast_negatives;
  std::size_t d_steps = 2;
  std::size_t batch = 8;
  std::size_t epochs = 50;
  double clamp_eps = kDefaultClampEps;
  // Share of each negative batch made of field-shuffled expert clips; the
  // rest are other players' clips.
  double shuffled_fraction = 0.2;
  double holdout_fraction = 0.2;
  AdamConfig disc_adam{2e-3, 0.9, 0.999, 1e-8};
  AdamConfig gen_adam{1e-2, 0.9, 0.999, 1e-8};
  std::size_t gen_hidden = 16;
  double baseline_decay = 0.9;

  void validate() const {
    if (!(clamp_eps > 0.0 && clamp_eps < 0.1)) throw std::invalid_argument("GailConfig: clamp eps must lie in (0, 0.1)");
    if (batch < 2) throw std::invalid_argument("GailConfig: batch must be >= 2");
    if (d_steps < 1 || epochs < 1) throw std::invalid_argument("GailConfig: d_steps and epochs must be >= 1");
    if (shuffled_fraction < 0.0 || shuffled_fraction > 1.0)
      throw std::invalid_argument("GailConfig: shuffled_fraction must lie in [0, 1]");
    if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
      throw std::invalid_argument("GailConfig: holdout_fraction must lie in [0, 1)");
  }
};

inline nlohmann::json to_json(const GailConfig& c) {
  return {{"mode", to_string(c.mode)},
          {"d_steps", c.d_steps},
          {"batch", c.batch},
          {"epochs", c.epochs},
          {"clamp_eps", c.clamp_eps},
          {"shuffled_fraction", c.shuffled_fraction},
          {"holdout_fraction", c.holdout_fraction},
          {"disc_lr", c.disc_adam.learning_rate},
          {"gen_lr", c.gen_adam.learning_rate},
          {"gen_hidden", c.gen_hidden},
          {"baseline_decay", c.baseline_decay}};
}

inline GailConfig gail_config_from_json(const nlohmann::json& j) {
  GailConfig c;
  c.mode = gail_mode_from_string(j.value("mode", to_string(c.mode)));
  c.d_steps = j.value("d_steps", c.d_steps);
  c.batch = j.value("batch", c.batch);
  c.epochs = j.value("epochs", c.epochs);
  c.clamp_eps = j.value("clamp_eps", c.clamp_eps);
  c.shuffled_fraction = j.value("shuffled_fraction", c.shuffled_fraction);
  c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
  c.disc_adam.learning_rate = j.value("disc_lr", c.disc_adam.learning_rate);
  c.gen_adam.learning_rate = j.value("gen_lr", c.gen_adam.learning_rate);
  c.gen_hidden = j.value("gen_hidden", c.gen_hidden);
  c.baseline_decay = j.value("baseline_decay", c.baseline_decay);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Reward algebra

inline double clamp_probability(double d, double eps) { return std::clamp(d, eps, 1.0 - eps); }

inline double style_reward(double d, double eps = kDefaultClampEps) {
  return -std::log(1.0 - clamp_probability(d, eps));
}

inline std::vector<double> style_rewards(const std::vector<double>& d, double eps = kDefaultClampEps) {
  std::vector<double> r;
  r.reserve(d.size());
  for (double v : d) r.push_back(style_reward(v, eps));
  return r;
}

inline double mean_reward(const std::vector<double>& rewards) {
  if (rewards.empty()) throw std::invalid_argument("mean_reward: no timesteps");
  double s = 0.0;
  for (double r : rewards) s += r;
  return s / static_cast<double>(rewards.size());
}

// Negated adversarial objective over per-timestep D values:
//   -( mean_expert log D + mean_negative log(1 - D) ),
// each mean taken over all live positions of its batch.
inline double discriminator_loss(const std::vector<std::vector<double>>& expert_d,
                                 const std::vector<std::vector<double>>& negative_d, double eps = kDefaultClampEps) {
  auto mean_log = [eps](const std::vector<std::vector<double>>& batch, bool expert) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& clip : batch)
      for (double d : clip) {
        const double c = clamp_probability(d, eps);
        s += std::log(expert ? c : 1.0 - c);
        ++n;
      }
    if (n == 0) throw std::invalid_argument("discriminator_loss: empty batch");
    return s / static_cast<double>(n);
  };
  return -(mean_log(expert_d, true) + mean_log(negative_d, false));
}

// Area under the ROC curve by exhaustive pair counting (ties count half).
inline double pairwise_auc(const std::vector<double>& positive, const std::vector<double>& negative) {
  if (positive.empty() || negative.empty()) return 0.5;
  double wins = 0.0;
  for (double p : positive)
    for (double n : negative) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return wins / static_cast<double>(positive.size() * negative.size());
}

// ---------------------------------------------------------------------------
// Discriminator

inline void init_discriminator_params(ParamStore& store, const EncoderConfig& cfg, Rng& rng) {
  init_dense(store, "disc.h1", cfg.d_model, cfg.d_model, rng);
  init_dense(store, "disc.out", cfg.d_model, 1, rng);
}

// Per-row D in (0,1), unclamped: [rows x 1].
inline Var discriminator_graph(Graph& g, const ParamStore& p, Var contextual) {
  Var h = g.gelu(g.dense(p, contextual, "disc.h1"));
  return g.sigmoid(g.dense(p, h, "disc.out"));
}

inline std::vector<double> live_values(const Tensor& column, const Mask& mask) {
  std::vector<double> out;
  for (std::size_t r = 0; r < mask.size(); ++r)
    if (mask[r]) out.push_back(column.at(r, 0));
  return out;
}

// Per-timestep D for the live events of one clip (first max_events only).
inline std::vector<double> discriminator_probs(const ParamStore& p, const EncoderConfig& cfg, const TokenBatch& b) {
  Graph g(false);
  EncoderVars enc = encode_graph(g, p, cfg, b);
  return live_values(g.value(discriminator_graph(g, p, enc.contextual)), b.mask);
}

// Adds the negated objective's contribution of one clip to `acc`.
inline Var clip_loss_term(Graph& g, const ParamStore& p, const EncoderConfig& cfg, const TokenBatch& b, bool expert,
                          double weight, double eps) {
  EncoderVars enc = encode_graph(g, p, cfg, b);
  Var d = g.clamp(discriminator_graph(g, p, enc.contextual), eps, 1.0 - eps);
  Var target = expert ? d : g.add(g.constant(Tensor(b.rows(), 1, 1.0)), g.scale(d, -1.0));
  Tensor w(b.rows(), 1);
  for (std::size_t r = 0; r < b.rows(); ++r) w.at(r, 0) = b.mask[r] ? -weight : 0.0;
  // log of masked rows is harmless: clamped D is always in [eps, 1-eps].
  return g.weighted_sum(g.log(target), std::move(w));
}

inline Var discriminator_loss_graph(Graph& g, const ParamStore& p, const EncoderConfig& cfg,
                                    const std::vector<TokenBatch>& expert, const std::vector<TokenBatch>& negative,
                                    double eps) {
  std::size_t ne = 0, nn = 0;
  for (const auto& b : expert) ne += b.live();
  for (const auto& b : negative) nn += b.live();
  if (ne == 0 || nn == 0) throw std::invalid_argument("discriminator_loss: empty batch");
  std::optional<Var> total;
  auto acc = [&](Var v) { total = total ? g.add(*total, v) : v; };
  for (const auto& b : expert) acc(clip_loss_term(g, p, cfg, b, true, 1.0 / static_cast<double>(ne), eps));
  for (const auto& b : negative) acc(clip_loss_term(g, p, cfg, b, false, 1.0 / static_cast<double>(nn), eps));
  return *total;
}

// ---------------------------------------------------------------------------
// Style-mimic generator
//
// A recurrent summary h_t = tanh(x_{t-1} Wx + h_{t-1} Wh + b) of previously
// sampled events drives per-field heads: categorical action / location /
// team, Bernoulli inclusion for each weapon, outcome and impact token, an
// exponential-link gap dt = exp(mu) * Exp(1) and a Binomial(100, sigmoid(nu))
// damage. Clip lengths are resampled from the expert clips.

struct GeneratorLayout {
  std::size_t actions = 0, locations = 0, teams = 0, weapons = 0, outcomes = 0, impacts = 0;

  std::size_t input_width() const { return actions + locations + teams + weapons + outcomes + impacts + 2; }
  std::size_t head_width() const { return actions + locations + teams + weapons + outcomes + impacts + 2; }
};

class Generator {
 public:
  Generator() = default;
  Generator(const ValuePools& pools, std::string map, std::size_t hidden, std::vector<std::size_t> lengths, Rng& rng)
      : map_(std::move(map)), hidden_(hidden), lengths_(std::move(lengths)), params_(rng.next_u64()) {
    if (lengths_.empty()) throw std::invalid_argument("Generator: needs at least one reference length");
    actions_ = pools.actions;
    locations_ = pools.locations(map_);
    teams_ = pools.teams;
    weapons_ = pools.weapons;
    outcomes_ = pools.outcomes;
    impacts_ = pools.impacts;
    layout_ = {actions_.size(), locations_.size(), teams_.size(), weapons_.size(), outcomes_.size(), impacts_.size()};
    init_dense(params_, "gen.in", layout_.input_width(), hidden_, rng);
    params_.add("gen.rec.w", uniform_init(hidden_, hidden_, 1.0 / std::sqrt(static_cast<double>(hidden_)), rng));
    init_dense(params_, "gen.head", hidden_, layout_.head_width(), rng);
  }

  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }
  const GeneratorLayout& layout() const { return layout_; }
  const std::string& map() const { return map_; }
  double baseline() const { return baseline_; }
  bool baseline_initialized() const { return baseline_set_; }
  void update_baseline(double mean_reward, double decay) {
    baseline_ = baseline_set_ ? decay * baseline_ + (1.0 - decay) * mean_reward : mean_reward;
    baseline_set_ = true;
  }

  struct Sample {
    Clip clip;
    std::vector<Tensor> inputs;   // x_{t-1} fed at each step (1 x input_width)
    std::vector<double> gap_noise;  // Exp(1) draws behind each dt
  };

  // Head activations for the current parameters given a fixed input sequence.
  std::vector<Var> heads(Graph& g, const std::vector<Tensor>& inputs) const {
    std::vector<Var> out;
    Var h = g.constant(Tensor(1, hidden_));
    Var wrec = g.param(params_, "gen.rec.w");
    for (const auto& x : inputs) {
      h = g.tanh(g.add(g.dense(params_, g.constant(x), "gen.in"), g.matmul(h, wrec)));
      out.push_back(g.dense(params_, h, "gen.head"));
    }
    return out;
  }

  // Action-head probabilities at the first step (no history).
  std::vector<double> first_step_action_probs() const {
    Graph g(false);
    auto hs = heads(g, {Tensor(1, layout_.input_width())});
    const Tensor& head = g.value(hs[0]);
    std::vector<double> logits(head.values.begin(), head.values.begin() + static_cast<std::ptrdiff_t>(layout_.actions));
    return softmax(logits);
  }

  Sample sample(Rng& rng, const std::string& clip_id) const {
    Sample s;
    s.clip.clip_id = clip_id;
    s.clip.map = map_;
    s.clip.player_id = "player_1";
    const std::size_t len = lengths_[rng.below(lengths_.size())];
    Tensor x(1, layout_.input_width());
    double t = 0.0;
    Tensor h(1, hidden_);
    const Tensor& win = params_.get("gen.in.w");
    const Tensor& bin = params_.get("gen.in.b");
    const Tensor& wrec = params_.get("gen.rec.w");
    const Tensor& whead = params_.get("gen.head.w");
    const Tensor& bhead = params_.get("gen.head.b");
    for (std::size_t step = 0; step < len; ++step) {
      s.inputs.push_back(x);
      Tensor pre = bin;
      kernels::gemm(x, false, win, false, pre, true);
      kernels::gemm(h, false, wrec, false, pre, true);
      for (double& v : pre.values) v = std::tanh(v);
      h = pre;
      Tensor head = bhead;
      kernels::gemm(h, false, whead, false, head, true);

      std::size_t off = 0;
      auto categorical = [&](std::size_t n) {
        std::vector<double> logits(head.values.begin() + static_cast<std::ptrdiff_t>(off),
                                   head.values.begin() + static_cast<std::ptrdiff_t>(off + n));
        off += n;
        return rng.categorical(softmax(logits));
      };
      auto inclusion = [&](const std::vector<std::string>& pool) {
        std::vector<std::string> picked;
        for (std::size_t i = 0; i < pool.size(); ++i)
          if (rng.bernoulli(Graph::sigmoid_fn(head.values[off + i]))) picked.push_back(pool[i]);
        off += pool.size();
        return picked;
      };
      TrajectoryEvent e;
      e.player_id = "player_1";
      const std::size_t a = categorical(layout_.actions);
      const std::size_t l = categorical(layout_.locations);
      const std::size_t tm = categorical(layout_.teams);
      e.action = actions_[a];
      e.location = locations_[l];
      e.team = teams_[tm];
      e.weapon = inclusion(weapons_);
      e.outcome = inclusion(outcomes_);
      e.impact = inclusion(impacts_);
      const double mu = head.values[off];
      const double nu = head.values[off + 1];
      const double noise = rng.exponential(1.0);
      s.gap_noise.push_back(noise);
      const double dt = std::min(std::exp(std::clamp(mu, -10.0, 5.0)) * noise, 120.0);
      t += dt;
      e.timestamp = t;
      e.damage = static_cast<int>(rng.binomial(100, Graph::sigmoid_fn(nu)));
      s.clip.events.push_back(e);

      x = encode_event(e, dt);
    }
    return s;
  }

  // One-hot/multi-hot features of a sampled event (next step's input).
  Tensor encode_event(const TrajectoryEvent& e, double dt) const {
    Tensor x(1, layout_.input_width());
    std::size_t off = 0;
    auto one_hot = [&](const std::vector<std::string>& pool, const std::string& tok) {
      x.values[off + Vocab::position_in(pool, tok, "generator")] = 1.0;
      off += pool.size();
    };
    auto multi = [&](const std::vector<std::string>& pool, const std::vector<std::string>& toks) {
      for (const auto& t : toks) x.values[off + Vocab::position_in(pool, t, "generator")] = 1.0;
      off += pool.size();
    };
    one_hot(actions_, e.action);
    one_hot(locations_, e.location);
    one_hot(teams_, e.team);
    multi(weapons_, e.weapon);
    multi(outcomes_, e.outcome);
    multi(impacts_, e.impact);
    x.values[off] = dt_feature(dt);
    x.values[off + 1] = e.damage / 100.0;
    return x;
  }

  // Constant weights that pick log-probabilities of the sampled tokens out of
  // the head row; laid out like the head.
  struct Picks {
    Tensor action, location, team;  // one-hot over each categorical
    Tensor inclusion;               // weapons|outcomes|impacts: target in {0,1}
    double damage = 0.0;
    double gap = 0.0;
  };

  Picks picks_for(const TrajectoryEvent& e, double gap) const {
    Picks p{Tensor(1, layout_.actions), Tensor(1, layout_.locations), Tensor(1, layout_.teams),
            Tensor(1, layout_.weapons + layout_.outcomes + layout_.impacts), static_cast<double>(e.damage), gap};
    p.action.values[Vocab::position_in(actions_, e.action, "generator")] = 1.0;
    p.location.values[Vocab::position_in(locations_, e.location, "generator")] = 1.0;
    p.team.values[Vocab::position_in(teams_, e.team, "generator")] = 1.0;
    for (const auto& w : e.weapon) p.inclusion.values[Vocab::position_in(weapons_, w, "generator")] = 1.0;
    for (const auto& o : e.outcome)
      p.inclusion.values[layout_.weapons + Vocab::position_in(outcomes_, o, "generator")] = 1.0;
    for (const auto& i : e.impact)
      p.inclusion.values[layout_.weapons + layout_.outcomes + Vocab::position_in(impacts_, i, "generator")] = 1.0;
    return p;
  }

  nlohmann::json to_json() const {
    return {{"map", map_},           {"hidden", hidden_},         {"lengths", lengths_},
            {"actions", actions_},   {"locations", locations_},   {"teams", teams_},
            {"weapons", weapons_},   {"outcomes", outcomes_},     {"impacts", impacts_},
            {"baseline", baseline_}, {"baseline_set", baseline_set_}, {"params", params_.to_json()}};
  }

  static Generator from_json(const nlohmann::json& j) {
    Generator gen;
    gen.map_ = j.at("map").get<std::string>();
    gen.hidden_ = j.at("hidden").get<std::size_t>();
    j.at("lengths").get_to(gen.lengths_);
    j.at("actions").get_to(gen.actions_);
    j.at("locations").get_to(gen.locations_);
    j.at("teams").get_to(gen.teams_);
    j.at("weapons").get_to(gen.weapons_);
    j.at("outcomes").get_to(gen.outcomes_);
    j.at("impacts").get_to(gen.impacts_);
    gen.baseline_ = j.at("baseline").get<double>();
    gen.baseline_set_ = j.at("baseline_set").get<bool>();
    gen.params_ = ParamStore::from_json(j.at("params"));
    gen.layout_ = {gen.actions_.size(), gen.locations_.size(), gen.teams_.size(),
                   gen.weapons_.size(), gen.outcomes_.size(),  gen.impacts_.size()};
    return gen;
  }

  static std::vector<double> softmax(const std::vector<double>& logits) {
    double mx = -INFINITY;
    for (double v : logits) mx = std::max(mx, v);
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
    for (double& v : p) v /= z;
    return p;
  }

 private:
  std::string map_;
  std::size_t hidden_ = 16;
  std::vector<std::size_t> lengths_;
  std::vector<std::string> actions_, locations_, teams_, weapons_, outcomes_, impacts_;
  GeneratorLayout layout_;
  ParamStore params_;
  double baseline_ = 0.0;
  bool baseline_set_ = false;
};

// Per-timestep rewards for a generated clip, plus optionally d(sum of rewards)
// / d(dt_feature) per event for the pathwise gap gradient.
struct RewardSignal {
  std::vector<double> rewards;
  std::vector<double> dt_feature_grad;  // empty when not available
};
using RewardFn = std::function<RewardSignal(const Clip&)>;

struct GeneratorUpdateStats {
  double mean_reward = 0.0;
  double surrogate_loss = 0.0;
};

struct GeneratorGradients {
  Gradients grads;  // empty when no reward was produced
  GeneratorUpdateStats stats;
  std::vector<Clip> samples;
};

// Surrogate-loss gradients for one batch: score-function terms on the
// categorical/Bernoulli/Binomial heads with advantage r_t - baseline, and the
// pathwise term on the gap head. An unset baseline is initialized to the
// batch mean first. Parameters are left untouched.
inline GeneratorGradients generator_gradients(Generator& gen, const RewardFn& reward_fn, std::size_t n_samples,
                                              Rng& rng) {
  if (n_samples == 0) throw std::invalid_argument("generator_update: no samples");
  const GeneratorLayout& L = gen.layout();
  std::vector<Generator::Sample> samples;
  std::vector<RewardSignal> signals;
  double reward_sum = 0.0;
  std::size_t reward_count = 0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    samples.push_back(gen.sample(rng, "gen_" + std::to_string(i)));
    signals.push_back(reward_fn(samples.back().clip));
    if (signals.back().rewards.size() > samples.back().clip.events.size())
      throw std::invalid_argument("generator_update: more rewards than events");
    for (double r : signals.back().rewards) reward_sum += r;
    reward_count += signals.back().rewards.size();
  }
  const double batch_mean = reward_count ? reward_sum / static_cast<double>(reward_count) : 0.0;
  if (!gen.baseline_initialized()) gen.update_baseline(batch_mean, 0.0);
  const double baseline = gen.baseline();

  Graph g;
  std::optional<Var> total;
  auto acc = [&](Var v) { total = total ? g.add(*total, v) : v; };
  const double inv_n = 1.0 / static_cast<double>(n_samples);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto& sig = signals[i];
    auto hs = gen.heads(g, s.inputs);
    for (std::size_t t = 0; t < sig.rewards.size(); ++t) {
      const double adv = sig.rewards[t] - baseline;
      const double dt = t == 0 ? s.clip.events[0].timestamp
                               : s.clip.events[t].timestamp - s.clip.events[t - 1].timestamp;
      Generator::Picks pk = gen.picks_for(s.clip.events[t], dt);
      Var head = hs[t];
      std::size_t off = 0;
      auto cat_logp = [&](std::size_t n, const Tensor& onehot) {
        Var lp = g.weighted_sum(g.log_softmax(g.slice_cols(head, off, n)), onehot);
        off += n;
        return lp;
      };
      Var logp = cat_logp(L.actions, pk.action);
      logp = g.add(logp, cat_logp(L.locations, pk.location));
      logp = g.add(logp, cat_logp(L.teams, pk.team));
      const std::size_t nb = L.weapons + L.outcomes + L.impacts;
      Var z = g.slice_cols(head, off, nb);
      off += nb;
      // y log s(z) + (1-y) log(1 - s(z)) = -y softplus(-z) - (1-y) softplus(z)
      Tensor not_y(1, nb);
      for (std::size_t k = 0; k < nb; ++k) not_y.values[k] = -(1.0 - pk.inclusion.values[k]);
      Tensor neg_y = pk.inclusion;
      for (double& v : neg_y.values) v = -v;
      logp = g.add(logp, g.weighted_sum(g.softplus(g.scale(z, -1.0)), neg_y));
      logp = g.add(logp, g.weighted_sum(g.softplus(z), not_y));
      Var mu = g.slice_cols(head, off, 1);
      Var nu = g.slice_cols(head, off + 1, 1);
      // Binomial(100, s(nu)): k log s(nu) + (100-k) log(1 - s(nu))
      logp = g.add(logp, g.weighted_sum(g.softplus(g.scale(nu, -1.0)), Tensor(1, 1, -pk.damage)));
      logp = g.add(logp, g.weighted_sum(g.softplus(nu), Tensor(1, 1, -(100.0 - pk.damage))));
      acc(g.scale(logp, -adv * inv_n));
      // Pathwise: dt = exp(mu) E, d dt / d mu = dt; the first event's gap
      // feeds no feature.
      if (!sig.dt_feature_grad.empty() && t > 0) {
        const double feat_grad = sig.dt_feature_grad[t];
        const double y = std::tanh(dt / kDtScaleSeconds);
        const double coef = feat_grad * (1.0 - y * y) / kDtScaleSeconds * dt;
        acc(g.weighted_sum(mu, Tensor(1, 1, -coef * inv_n)));
      }
    }
  }
  GeneratorGradients out;
  out.stats.mean_reward = batch_mean;
  if (total) {
    out.stats.surrogate_loss = g.scalar(*total);
    g.backward(*total);
    out.grads = g.param_gradients();
  }
  for (auto& s : samples) out.samples.push_back(std::move(s.clip));
  return out;
}

// One Adam step on generator_gradients, then the baseline moves toward this
// batch's mean reward.
inline GeneratorUpdateStats generator_update(Generator& gen, const RewardFn& reward_fn, std::size_t n_samples,
                                             const GailConfig& config, Rng& rng,
                                             std::vector<Clip>* samples_out = nullptr) {
  if (config.mode != GailMode::learned_generator)
    throw std::logic_error("generator_update: called in contrast_negatives mode");
  GeneratorGradients r = generator_gradients(gen, reward_fn, n_samples, rng);
  if (!r.grads.empty()) gen.params().adam_step(r.grads, config.gen_adam);
  gen.update_baseline(r.stats.mean_reward, config.baseline_decay);
  if (samples_out)
    for (auto& c : r.samples) samples_out->push_back(std::move(c));
  return r.stats;
}

// ---------------------------------------------------------------------------
// Style model

struct TrainingMeta {
  std::uint64_t seed = 0;
  std::size_t clip_count = 0;
  std::size_t epochs = 0;
  std::string mode;
  nlohmann::json gail_config;

  bool operator==(const TrainingMeta&) const = default;
};

struct StyleModel {
  static constexpr int kFormatVersion = 1;

  std::string professional;
  std::string pools_version;
  EncoderConfig encoder_config;
  Vocab vocab;
  double clamp_eps = kDefaultClampEps;
  FrozenParams params;  // enc.* and disc.*
  std::optional<Generator> generator;
  TrainingMeta training;
};

inline nlohmann::json style_model_to_json(const StyleModel& m) {
  nlohmann::json j{{"format_version", StyleModel::kFormatVersion},
                   {"professional", m.professional},
                   {"pools_version", m.pools_version},
                   {"encoder", {{"config", to_json(m.encoder_config)}, {"vocab", m.vocab.to_json()}}},
                   {"clamp_eps", m.clamp_eps},
                   {"params", m.params.to_json()},
                   {"training",
                    {{"seed", m.training.seed},
                     {"clip_count", m.training.clip_count},
                     {"epochs", m.training.epochs},
                     {"mode", m.training.mode},
                     {"gail_config", m.training.gail_config}}}};
  if (m.generator) j["generator"] = m.generator->to_json();
  return j;
}

inline std::string serialize_style_model(const StyleModel& m) { return style_model_to_json(m).dump() + "\n"; }

inline StyleModel style_model_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("format_version"))
    throw std::runtime_error("style model: missing format_version");
  if (j["format_version"].get<int>() != StyleModel::kFormatVersion)
    throw std::runtime_error("style model: unsupported format_version");
  StyleModel m;
  m.professional = j.at("professional").get<std::string>();
  m.pools_version = j.at("pools_version").get<std::string>();
  m.encoder_config = encoder_config_from_json(j.at("encoder").at("config"));
  m.vocab = Vocab::from_json(j.at("encoder").at("vocab"));
  m.clamp_eps = j.at("clamp_eps").get<double>();
  m.params = FrozenParams(ParamStore::from_json(j.at("params")));
  const auto& t = j.at("training");
  m.training = {t.at("seed").get<std::uint64_t>(), t.at("clip_count").get<std::size_t>(),
                t.at("epochs").get<std::size_t>(), t.at("mode").get<std::string>(), t.at("gail_config")};
  if (j.contains("generator")) m.generator = Generator::from_json(j["generator"]);
  return m;
}

inline StyleModel parse_style_model(const std::string& text) { return style_model_from_json(nlohmann::json::parse(text)); }

// Per-timestep D for the scored events of a clip.
inline std::vector<double> discriminator_probs(const StyleModel& m, const Clip& clip) {
  TokenBatch b = tokenize_to_batch(clip, m.vocab, m.encoder_config.max_events);
  return discriminator_probs(m.params.get(), m.encoder_config, b);
}

inline std::vector<double> style_reward(const StyleModel& m, const Clip& clip) {
  return style_rewards(discriminator_probs(m, clip), m.clamp_eps);
}

// Mean style reward over the scored (at most max_events) timesteps.
inline double fit_score(const StyleModel& m, const Clip& clip) { return mean_reward(style_reward(m, clip)); }

// ---------------------------------------------------------------------------
// Training

struct TrainLogEntry {
  std::size_t epoch = 0;
  double d_loss = 0.0;
  std::optional<double> g_loss;
  double holdout_mean_d = 0.0;           // over all held-out clips
  double holdout_mean_d_expert = 0.0;
  double holdout_mean_d_negative = 0.0;
  double holdout_auc = 0.5;
};

inline nlohmann::json to_json(const TrainLogEntry& e) {
  nlohmann::json j{{"epoch", e.epoch},
                   {"d_loss", e.d_loss},
                   {"holdout_mean_D", e.holdout_mean_d},
                   {"holdout_mean_D_expert", e.holdout_mean_d_expert},
                   {"holdout_mean_D_negative", e.holdout_mean_d_negative},
                   {"holdout_auc", e.holdout_auc}};
  if (e.g_loss) j["g_loss"] = *e.g_loss;
  return j;
}

inline std::string train_log_jsonl(const std::vector<TrainLogEntry>& log) {
  std::string out;
  for (const auto& e : log) out += to_json(e).dump() + "\n";
  return out;
}

struct TrainResult {
  StyleModel model;
  std::vector<TrainLogEntry> log;
};

// Each field (team, action, location, weapon, outcome, impact, damage) is
// permuted independently across the clip's events; timestamps stay put.
inline Clip field_shuffled(const Clip& clip, Rng& rng) {
  Clip out = clip;
  const std::size_t n = clip.events.size();
  auto permuted = [&] {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    rng.shuffle(idx);
    return idx;
  };
  auto p = permuted();
  for (std::size_t i = 0; i < n; ++i) out.events[i].team = clip.events[p[i]].team;
  p = permuted();
  for (std::size_t i = 0; i < n; ++i) out.events[i].action = clip.events[p[i]].action;
  p = permuted();
  for (std::size_t i = 0; i < n; ++i) out.events[i].location = clip.events[p[i]].location;
  p = permuted();
  for (std::size_t i = 0; i < n; ++i) out.events[i].weapon = clip.events[p[i]].weapon;
  p = permuted();
  for (std::size_t i = 0; i < n; ++i) out.events[i].outcome = clip.events[p[i]].outcome;
  p = permuted();
  for (std::size_t i = 0; i < n; ++i) out.events[i].impact = clip.events[p[i]].impact;
  p = permuted();
  for (std::size_t i = 0; i < n; ++i) out.events[i].damage = clip.events[p[i]].damage;
  out.clip_id = clip.clip_id + "#shuffled";
  return out;
}

namespace detail {

inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_holdout(std::size_t n, double fraction,
                                                                                   Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  rng.shuffle(idx);
  std::size_t hold = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  if (fraction > 0.0 && hold == 0 && n >= 2) hold = 1;
  std::vector<std::size_t> h(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(hold));
  std::vector<std::size_t> t(idx.begin() + static_cast<std::ptrdiff_t>(hold), idx.end());
  std::sort(h.begin(), h.end());
  std::sort(t.begin(), t.end());
  return {t, h};
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace detail

// Trains one professional's style reward. `negatives` are other players'
// clips (contrast mode; optional in generator mode, where they only feed the
// held-out statistics).
inline TrainResult train_style_model(const std::string& professional, const std::vector<Clip>& expert_clips,
                                     const std::vector<Clip>& negatives, const ValuePools& pools,
                                     const GailConfig& config, const EncoderConfig& encoder_config,
                                     std::uint64_t seed) {
  config.validate();
  encoder_config.validate();
  if (expert_clips.size() < 2) throw std::invalid_argument("train_style_model: need at least 2 expert clips");
  if (config.mode == GailMode::contrast_negatives && negatives.empty() && config.shuffled_fraction <= 0.0)
    throw std::invalid_argument("train_style_model: contrast mode needs negatives or shuffled_fraction > 0");

  Rng rng(seed);
  const Vocab vocab = Vocab::from_pools(pools);
  ParamStore params(seed);
  init_encoder_params(params, encoder_config, vocab, rng);
  init_discriminator_params(params, encoder_config, rng);

  auto [expert_train, expert_hold] = detail::split_holdout(expert_clips.size(), config.holdout_fraction, rng);
  // A negative that is one of the expert clips follows that clip's split.
  std::vector<std::size_t> neg_train, neg_hold;
  {
    std::map<std::string, bool> expert_held;
    for (std::size_t i : expert_hold) expert_held[expert_clips[i].clip_id] = true;
    for (std::size_t i : expert_train) expert_held[expert_clips[i].clip_id] = false;
    std::vector<std::size_t> others;
    for (std::size_t i = 0; i < negatives.size(); ++i) {
      auto it = expert_held.find(negatives[i].clip_id);
      if (it == expert_held.end()) {
        others.push_back(i);
      } else {
        (it->second ? neg_hold : neg_train).push_back(i);
      }
    }
    auto [t, h] = detail::split_holdout(others.size(), config.holdout_fraction, rng);
    for (std::size_t i : t) neg_train.push_back(others[i]);
    for (std::size_t i : h) neg_hold.push_back(others[i]);
    std::sort(neg_train.begin(), neg_train.end());
    std::sort(neg_hold.begin(), neg_hold.end());
  }

  auto batch_of = [&](const Clip& c) { return tokenize_to_batch(c, vocab, encoder_config.max_events); };
  std::vector<TokenBatch> expert_batches, negative_batches;
  for (const auto& c : expert_clips) expert_batches.push_back(batch_of(c));
  for (const auto& c : negatives) negative_batches.push_back(batch_of(c));

  std::optional<Generator> generator;
  if (config.mode == GailMode::learned_generator) {
    std::map<std::string, std::size_t> map_counts;
    std::vector<std::size_t> lengths;
    for (std::size_t i : expert_train) {
      ++map_counts[expert_clips[i].map];
      lengths.push_back(std::min(expert_clips[i].events.size(), encoder_config.max_events));
    }
    std::string map = expert_clips[expert_train.front()].map;
    for (const auto& [m, n] : map_counts)
      if (n > map_counts[map]) map = m;
    generator.emplace(pools, map, config.gen_hidden, lengths, rng);
  }

  const ParamStore* live = &params;
  RewardFn reward_fn = [&](const Clip& clip) {
    TokenBatch b = batch_of(clip);
    Graph g;
    Var cont = g.input(b.continuous);
    EncoderVars enc = encode_graph(g, *live, encoder_config, b, cont);
    Var d = g.clamp(discriminator_graph(g, *live, enc.contextual), config.clamp_eps, 1.0 - config.clamp_eps);
    // sum_t -log(1 - D_t) over live rows
    Var one_minus = g.add(g.constant(Tensor(b.rows(), 1, 1.0)), g.scale(d, -1.0));
    Tensor w(b.rows(), 1);
    for (std::size_t r = 0; r < b.rows(); ++r) w.at(r, 0) = b.mask[r] ? -1.0 : 0.0;
    Var total = g.weighted_sum(g.log(one_minus), w);
    g.backward(total);
    RewardSignal sig;
    sig.rewards = style_rewards(live_values(g.value(d), b.mask), config.clamp_eps);
    const Tensor& cg = g.grad(cont);
    for (std::size_t r = 0; r < b.rows(); ++r)
      if (b.mask[r]) sig.dt_feature_grad.push_back(cg.at(r, 0));
    return sig;
  };

  std::vector<TrainLogEntry> log;
  std::vector<Clip> generated;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order = expert_train;
    rng.shuffle(order);
    double d_loss_sum = 0.0, g_loss_sum = 0.0;
    std::size_t d_updates = 0, g_updates = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      std::vector<TokenBatch> eb;
      for (std::size_t k = start; k < end; ++k) eb.push_back(expert_batches[order[k]]);
      const std::size_t nb = eb.size();

      for (std::size_t step = 0; step < config.d_steps; ++step) {
        std::vector<TokenBatch> nbatch;
        if (config.mode == GailMode::learned_generator) {
          generated.clear();
          for (std::size_t k = 0; k < nb; ++k)
            generated.push_back(generator->sample(rng, "gen_" + std::to_string(k)).clip);
          for (const auto& c : generated) nbatch.push_back(batch_of(c));
        } else {
          for (std::size_t k = 0; k < nb; ++k) {
            const bool shuffled = neg_train.empty() || rng.bernoulli(config.shuffled_fraction);
            if (shuffled) {
              nbatch.push_back(batch_of(field_shuffled(expert_clips[expert_train[rng.below(expert_train.size())]], rng)));
            } else {
              nbatch.push_back(negative_batches[neg_train[rng.below(neg_train.size())]]);
            }
          }
        }
        Graph g;
        Var loss = discriminator_loss_graph(g, params, encoder_config, eb, nbatch, config.clamp_eps);
        const double lv = g.scalar(loss);
        if (!std::isfinite(lv))
          throw NumericError("train_style_model: discriminator loss is non-finite at epoch " + std::to_string(epoch));
        g.backward(loss);
        params.adam_step(g.param_gradients(), config.disc_adam);
        d_loss_sum += lv;
        ++d_updates;
      }
      if (generator) {
        auto st = generator_update(*generator, reward_fn, nb, config, rng);
        g_loss_sum += -st.mean_reward;
        ++g_updates;
      }
    }

    TrainLogEntry entry;
    entry.epoch = epoch;
    entry.d_loss = d_updates ? d_loss_sum / static_cast<double>(d_updates) : 0.0;
    if (generator && g_updates) entry.g_loss = g_loss_sum / static_cast<double>(g_updates);
    std::vector<double> exp_d, neg_d, exp_s, neg_s;
    for (std::size_t i : expert_hold) {
      auto d = discriminator_probs(params, encoder_config, expert_batches[i]);
      exp_d.push_back(detail::mean_of(d));
      exp_s.push_back(mean_reward(style_rewards(d, config.clamp_eps)));
    }
    std::vector<TokenBatch> hold_neg;
    for (std::size_t i : neg_hold) hold_neg.push_back(negative_batches[i]);
    if (generator) {
      Rng eval_rng(derive_seed(seed, "holdout-generated"));
      for (std::size_t k = 0; k < std::max<std::size_t>(2, expert_hold.size()); ++k)
        hold_neg.push_back(batch_of(generator->sample(eval_rng, "hold_gen").clip));
    }
    for (const auto& b : hold_neg) {
      auto d = discriminator_probs(params, encoder_config, b);
      neg_d.push_back(detail::mean_of(d));
      neg_s.push_back(mean_reward(style_rewards(d, config.clamp_eps)));
    }
    entry.holdout_mean_d_expert = detail::mean_of(exp_d);
    entry.holdout_mean_d_negative = detail::mean_of(neg_d);
    std::vector<double> all = exp_d;
    all.insert(all.end(), neg_d.begin(), neg_d.end());
    entry.holdout_mean_d = detail::mean_of(all);
    entry.holdout_auc = pairwise_auc(exp_s, neg_s);
    log.push_back(entry);
  }

  TrainResult out;
  out.model.professional = professional;
  out.model.pools_version = pools.version;
  out.model.encoder_config = encoder_config;
  out.model.vocab = vocab;
  out.model.clamp_eps = config.clamp_eps;
  out.model.params = freeze(std::move(params));
  out.model.generator = std::move(generator);
  out.model.training = {seed, expert_clips.size(), config.epochs, to_string(config.mode), to_json(config)};
  out.log = std::move(log);
  return out;
}

}  // namespace esir
