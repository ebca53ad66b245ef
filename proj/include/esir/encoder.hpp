#pragma once

// Behavior-style encoder. Each event becomes a token built from categorical
// embeddings, multi-hot pool embeddings, and a projected continuous pair
// (time since previous event, damage). A pre-norm Transformer contextualizes
// the tokens; the style vector is the masked mean of the contextual rows.
//
// In fused mode two branches run side by side with separate tables and
// stacks:
//   telemetry  - continuous pair, location, team, equipment (weapons)
//   commentary - map, action, location, outcome, impact
// and their contextual rows are concatenated and projected back to d_model.

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "esir/numerics.hpp"
#include "esir/schema.hpp"

namespace esir {

enum class BranchMode { telemetry_only, commentary_only, fused };

inline std::string to_string(BranchMode m) {
  switch (m) {
    case BranchMode::telemetry_only: return "telemetry_only";
    case BranchMode::commentary_only: return "commentary_only";
    case BranchMode::fused: return "fused";
  }
  return "fused";
}

inline BranchMode branch_mode_from_string(const std::string& s) {
  if (s == "telemetry_only") return BranchMode::telemetry_only;
  if (s == "commentary_only") return BranchMode::commentary_only;
  if (s == "fused") return BranchMode::fused;
  throw std::invalid_argument("unknown branch_mode '" + s + "'");
}

struct EncoderConfig {
  std::size_t d_embed = 16;
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t ffn_multiplier = 2;
  std::size_t max_events = 64;
  BranchMode branch_mode = BranchMode::fused;

  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
      throw std::invalid_argument("EncoderConfig: d_model must be a positive multiple of n_heads");
    if (max_events < 1) throw std::invalid_argument("EncoderConfig: max_events must be >= 1");
    if (d_embed == 0 || ffn_multiplier == 0) throw std::invalid_argument("EncoderConfig: widths must be positive");
  }

  bool uses_telemetry() const { return branch_mode != BranchMode::commentary_only; }
  bool uses_commentary() const { return branch_mode != BranchMode::telemetry_only; }

  bool operator==(const EncoderConfig&) const = default;
};

inline nlohmann::json to_json(const EncoderConfig& c) {
  return {{"d_embed", c.d_embed},   {"d_model", c.d_model},     {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},   {"ffn_multiplier", c.ffn_multiplier}, {"max_events", c.max_events},
          {"branch_mode", to_string(c.branch_mode)}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.d_embed = j.value("d_embed", c.d_embed);
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.ffn_multiplier = j.value("ffn_multiplier", c.ffn_multiplier);
  c.max_events = j.value("max_events", c.max_events);
  c.branch_mode = branch_mode_from_string(j.value("branch_mode", std::string("fused")));
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Vocabulary

// Index 0 of every categorical field is reserved for padding/unknown; pool
// tokens occupy 1..n in pool order. Locations are keyed "map:location" since
// the same name (A_site) denotes different places on different maps.
struct Vocab {
  std::vector<std::string> maps, teams, actions, locations;
  std::vector<std::string> weapons, outcomes, impacts;  // multi-hot, no padding slot

  static Vocab from_pools(const ValuePools& p) {
    Vocab v{p.maps, p.teams, p.actions, {}, p.weapons, p.outcomes, p.impacts};
    for (const auto& m : p.maps)
      for (const auto& loc : p.locations(m)) v.locations.push_back(location_key(m, loc));
    return v;
  }

  static std::string location_key(const std::string& map, const std::string& loc) { return map + ":" + loc; }

  static std::size_t index_in(const std::vector<std::string>& field, const std::string& tok, const char* name) {
    for (std::size_t i = 0; i < field.size(); ++i)
      if (field[i] == tok) return i + 1;
    throw SchemaError(name, "token '" + tok + "' is not in the vocabulary");
  }
  static std::size_t position_in(const std::vector<std::string>& field, const std::string& tok, const char* name) {
    return index_in(field, tok, name) - 1;
  }

  nlohmann::json to_json() const {
    return {{"maps", maps},       {"teams", teams},       {"actions", actions}, {"locations", locations},
            {"weapons", weapons}, {"outcomes", outcomes}, {"impacts", impacts}};
  }
  static Vocab from_json(const nlohmann::json& j) {
    Vocab v;
    j.at("maps").get_to(v.maps);
    j.at("teams").get_to(v.teams);
    j.at("actions").get_to(v.actions);
    j.at("locations").get_to(v.locations);
    j.at("weapons").get_to(v.weapons);
    j.at("outcomes").get_to(v.outcomes);
    j.at("impacts").get_to(v.impacts);
    return v;
  }

  bool operator==(const Vocab&) const = default;
};

// ---------------------------------------------------------------------------
// Tokenization

inline constexpr double kDtScaleSeconds = 4.0;

struct EventTokens {
  std::size_t map = 0, team = 0, action = 0, location = 0;
  std::vector<double> weapon, outcome, impact;  // multi-hot
  double dt = 0.0;          // seconds since the previous event
  double dt_feature = 0.0;  // tanh(dt / 4) in [0, 1)
  double damage_feature = 0.0;  // damage / 100 in [0, 1]
};

inline double dt_feature(double dt) { return std::tanh(dt / kDtScaleSeconds); }

inline std::vector<double> multi_hot(const std::vector<std::string>& field, const std::vector<std::string>& toks,
                                     const char* name) {
  std::vector<double> v(field.size(), 0.0);
  for (const auto& t : toks) v[Vocab::position_in(field, t, name)] = 1.0;
  return v;
}

inline EventTokens tokenize_event(const TrajectoryEvent& e, double prev_timestamp, const std::string& map,
                                  const Vocab& vocab) {
  EventTokens t;
  t.map = Vocab::index_in(vocab.maps, map, "map");
  t.team = Vocab::index_in(vocab.teams, e.team, "team");
  t.action = Vocab::index_in(vocab.actions, e.action, "action");
  t.location = Vocab::index_in(vocab.locations, Vocab::location_key(map, e.location), "location");
  t.weapon = multi_hot(vocab.weapons, e.weapon, "weapon");
  t.outcome = multi_hot(vocab.outcomes, e.outcome, "outcome");
  t.impact = multi_hot(vocab.impacts, e.impact, "impact");
  t.dt = std::max(0.0, e.timestamp - prev_timestamp);
  t.dt_feature = dt_feature(t.dt);
  t.damage_feature = static_cast<double>(e.damage) / 100.0;
  return t;
}

// Columnar token buffer for one clip. Rows beyond the clip length may exist
// (padding); the mask marks the live ones.
struct TokenBatch {
  std::vector<std::size_t> map, team, action, location;
  Tensor weapon, outcome, impact;  // [rows x pool]
  Tensor continuous;               // [rows x 2]: dt_feature, damage_feature
  Mask mask;
  bool truncated = false;

  std::size_t rows() const { return mask.size(); }
  std::size_t live() const { return mask_count(mask); }
};

inline TokenBatch make_token_batch(const std::vector<EventTokens>& toks, const Vocab& vocab, std::size_t rows) {
  if (rows < toks.size()) throw ShapeError("make_token_batch: buffer smaller than token count");
  TokenBatch b;
  b.map.assign(rows, 0);
  b.team.assign(rows, 0);
  b.action.assign(rows, 0);
  b.location.assign(rows, 0);
  b.weapon = Tensor(rows, vocab.weapons.size());
  b.outcome = Tensor(rows, vocab.outcomes.size());
  b.impact = Tensor(rows, vocab.impacts.size());
  b.continuous = Tensor(rows, 2);
  b.mask.assign(rows, 0);
  for (std::size_t r = 0; r < toks.size(); ++r) {
    const auto& t = toks[r];
    b.map[r] = t.map;
    b.team[r] = t.team;
    b.action[r] = t.action;
    b.location[r] = t.location;
    std::copy(t.weapon.begin(), t.weapon.end(), b.weapon.row(r).begin());
    std::copy(t.outcome.begin(), t.outcome.end(), b.outcome.row(r).begin());
    std::copy(t.impact.begin(), t.impact.end(), b.impact.row(r).begin());
    b.continuous.at(r, 0) = t.dt_feature;
    b.continuous.at(r, 1) = t.damage_feature;
    b.mask[r] = 1;
  }
  return b;
}

inline std::vector<EventTokens> tokenize_clip(const Clip& clip, const Vocab& vocab, std::size_t max_events,
                                              bool* truncated = nullptr) {
  const std::size_t n = std::min(clip.events.size(), max_events);
  if (truncated) *truncated = clip.events.size() > max_events;
  std::vector<EventTokens> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double prev = i == 0 ? clip.events[0].timestamp : clip.events[i - 1].timestamp;
    out.push_back(tokenize_event(clip.events[i], prev, clip.map, vocab));
  }
  return out;
}

// Compact buffer (rows = live events) unless pad_to is larger.
inline TokenBatch tokenize_to_batch(const Clip& clip, const Vocab& vocab, std::size_t max_events,
                                    std::size_t pad_to = 0) {
  bool truncated = false;
  auto toks = tokenize_clip(clip, vocab, max_events, &truncated);
  TokenBatch b = make_token_batch(toks, vocab, std::max(pad_to, toks.size()));
  b.truncated = truncated;
  return b;
}

// ---------------------------------------------------------------------------
// Parameters

inline void init_transformer_stack(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.d_model;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = prefix + ".L" + std::to_string(l);
    init_layer_norm(store, p + ".ln1", d);
    init_dense(store, p + ".q", d, d, rng);
    init_dense(store, p + ".k", d, d, rng);
    init_dense(store, p + ".v", d, d, rng);
    init_dense(store, p + ".o", d, d, rng);
    init_layer_norm(store, p + ".ln2", d);
    init_dense(store, p + ".ff1", d, d * cfg.ffn_multiplier, rng);
    init_dense(store, p + ".ff2", d * cfg.ffn_multiplier, d, rng);
  }
  init_layer_norm(store, prefix + ".ln_final", d);
}

inline void init_encoder_params(ParamStore& store, const EncoderConfig& cfg, const Vocab& vocab, Rng& rng) {
  cfg.validate();
  const std::size_t e = cfg.d_embed;
  if (cfg.uses_telemetry()) {
    init_dense(store, "enc.tel.cont", 2, e, rng);
    init_embedding(store, "enc.tel.location", vocab.locations.size() + 1, e, rng);
    init_embedding(store, "enc.tel.team", vocab.teams.size() + 1, e, rng);
    init_embedding(store, "enc.tel.weapon", vocab.weapons.size(), e, rng);
    init_dense(store, "enc.tel.in", 4 * e, cfg.d_model, rng);
    init_transformer_stack(store, "enc.tel", cfg, rng);
  }
  if (cfg.uses_commentary()) {
    init_embedding(store, "enc.com.map", vocab.maps.size() + 1, e, rng);
    init_embedding(store, "enc.com.action", vocab.actions.size() + 1, e, rng);
    init_embedding(store, "enc.com.location", vocab.locations.size() + 1, e, rng);
    init_embedding(store, "enc.com.outcome", vocab.outcomes.size(), e, rng);
    init_embedding(store, "enc.com.impact", vocab.impacts.size(), e, rng);
    init_dense(store, "enc.com.in", 5 * e, cfg.d_model, rng);
    init_transformer_stack(store, "enc.com", cfg, rng);
  }
  if (cfg.branch_mode == BranchMode::fused) init_dense(store, "enc.fuse", 2 * cfg.d_model, cfg.d_model, rng);
}

// ---------------------------------------------------------------------------
// Forward pass

inline Tensor sinusoidal_positions(std::size_t rows, std::size_t d) {
  Tensor pe(rows, d);
  for (std::size_t pos = 0; pos < rows; ++pos)
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      pe.at(pos, i) = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  return pe;
}

// Multi-head self-attention; padded keys are excluded from every softmax row.
inline Var self_attention(Graph& g, const ParamStore& p, const std::string& prefix, Var x, const Mask& mask,
                          std::size_t n_heads) {
  const std::size_t d = g.value(x).cols();
  const std::size_t dh = d / n_heads;
  Var q = g.dense(p, x, prefix + ".q");
  Var k = g.dense(p, x, prefix + ".k");
  Var v = g.dense(p, x, prefix + ".v");
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    Var qh = g.slice_cols(q, h * dh, dh);
    Var kh = g.slice_cols(k, h * dh, dh);
    Var vh = g.slice_cols(v, h * dh, dh);
    Var scores = g.scale(g.matmul(qh, g.transpose(kh)), inv_sqrt);
    heads.push_back(g.matmul(g.masked_softmax(scores, mask), vh));
  }
  Var cat = n_heads == 1 ? heads[0] : g.concat_cols(heads);
  return g.dense(p, cat, prefix + ".o");
}

inline Var layer_norm(Graph& g, const ParamStore& p, Var x, const std::string& prefix) {
  return g.layer_norm(x, g.param(p, prefix + ".gamma"), g.param(p, prefix + ".beta"));
}

inline Var transformer_stack(Graph& g, const ParamStore& p, const std::string& prefix, const EncoderConfig& cfg,
                             Var x, const Mask& mask) {
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string lp = prefix + ".L" + std::to_string(l);
    Var attn = self_attention(g, p, lp, layer_norm(g, p, x, lp + ".ln1"), mask, cfg.n_heads);
    x = g.add(x, attn);
    Var h = layer_norm(g, p, x, lp + ".ln2");
    Var ff = g.dense(p, g.gelu(g.dense(p, h, lp + ".ff1")), lp + ".ff2");
    x = g.add(x, ff);
  }
  return layer_norm(g, p, x, prefix + ".ln_final");
}

struct BranchOutput {
  Var tokens;      // projected input tokens + positions
  Var contextual;  // rows x d_model
};

struct EncoderVars {
  std::vector<BranchOutput> branches;
  Var contextual;
  Var style;
};

// Continuous features enter through `continuous`, so callers that need the
// derivative w.r.t. them can pass an input node.
inline EncoderVars encode_graph(Graph& g, const ParamStore& p, const EncoderConfig& cfg, const TokenBatch& b,
                                std::optional<Var> continuous = std::nullopt) {
  if (b.live() == 0) throw ShapeError("encode: clip has no live events");
  const std::size_t rows = b.rows();
  const Var pos = g.constant(sinusoidal_positions(rows, cfg.d_model));
  EncoderVars out;

  if (cfg.uses_telemetry()) {
    Var cont = continuous ? *continuous : g.constant(b.continuous);
    Var feats = g.concat_cols({g.dense(p, cont, "enc.tel.cont"), g.embedding(g.param(p, "enc.tel.location"), b.location),
                               g.embedding(g.param(p, "enc.tel.team"), b.team),
                               g.matmul(g.constant(b.weapon), g.param(p, "enc.tel.weapon"))});
    Var tok = g.add(g.dense(p, feats, "enc.tel.in"), pos);
    out.branches.push_back({tok, transformer_stack(g, p, "enc.tel", cfg, tok, b.mask)});
  }
  if (cfg.uses_commentary()) {
    Var feats = g.concat_cols({g.embedding(g.param(p, "enc.com.map"), b.map),
                               g.embedding(g.param(p, "enc.com.action"), b.action),
                               g.embedding(g.param(p, "enc.com.location"), b.location),
                               g.matmul(g.constant(b.outcome), g.param(p, "enc.com.outcome")),
                               g.matmul(g.constant(b.impact), g.param(p, "enc.com.impact"))});
    Var tok = g.add(g.dense(p, feats, "enc.com.in"), pos);
    out.branches.push_back({tok, transformer_stack(g, p, "enc.com", cfg, tok, b.mask)});
  }
  if (cfg.branch_mode == BranchMode::fused) {
    out.contextual = g.dense(p, g.concat_cols({out.branches[0].contextual, out.branches[1].contextual}), "enc.fuse");
  } else {
    out.contextual = out.branches[0].contextual;
  }
  out.style = g.mean_over_mask(out.contextual, b.mask);
  return out;
}

// Values of one encoded clip, padded to max_events rows.
struct EncodedClip {
  std::vector<Tensor> token_tensors;  // one per active branch, max_events x d_model
  Mask mask;                          // max_events entries
  Tensor style_vector;                // 1 x d_model
  Tensor contextual;                  // max_events x d_model
  bool truncated = false;
};

inline Tensor pad_rows(const Tensor& t, std::size_t rows) {
  Tensor out(rows, t.cols());
  const std::size_t n = std::min(rows, t.rows());
  std::copy(t.values.begin(), t.values.begin() + static_cast<std::ptrdiff_t>(n * t.cols()), out.values.begin());
  return out;
}

inline EncodedClip encode_clip(const Clip& clip, const EncoderConfig& cfg, const Vocab& vocab, const ParamStore& params) {
  TokenBatch b = tokenize_to_batch(clip, vocab, cfg.max_events);
  Graph g;
  EncoderVars v = encode_graph(g, params, cfg, b);
  EncodedClip out;
  for (const auto& br : v.branches) out.token_tensors.push_back(pad_rows(g.value(br.tokens), cfg.max_events));
  out.mask.assign(cfg.max_events, 0);
  std::fill(out.mask.begin(), out.mask.begin() + static_cast<std::ptrdiff_t>(b.live()), 1);
  out.style_vector = g.value(v.style);
  out.contextual = pad_rows(g.value(v.contextual), cfg.max_events);
  out.truncated = b.truncated;
  return out;
}

// ---------------------------------------------------------------------------
// Frozen parameters

class FrozenError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Read-only view of trained parameters. Shared between scorers; any update
// attempt is refused.
class FrozenParams {
 public:
  FrozenParams() = default;
  explicit FrozenParams(ParamStore params) : params_(std::make_shared<const ParamStore>(std::move(params))) {}

  const ParamStore& get() const {
    if (!params_) throw FrozenError("FrozenParams: empty handle");
    return *params_;
  }
  void adam_step(const Gradients&, const AdamConfig&) const {
    throw FrozenError("FrozenParams: parameters are frozen and cannot be updated");
  }
  nlohmann::json to_json() const { return get().to_json(); }

 private:
  std::shared_ptr<const ParamStore> params_;
};

inline FrozenParams freeze(ParamStore params) { return FrozenParams(std::move(params)); }

}  // namespace esir
