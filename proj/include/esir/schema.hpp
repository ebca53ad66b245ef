#pragma once

// Trajectory data model: value pools, clip parsing/validation, sanitization,
// and manifest-driven corpus ingestion.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "esir/rng.hpp"

namespace esir {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct Violation {
  std::string path;
  std::string message;
};

class SchemaError : public std::runtime_error {
 public:
  explicit SchemaError(std::vector<Violation> violations)
      : std::runtime_error(format(violations)), violations_(std::move(violations)) {}
  SchemaError(std::string path, std::string message)
      : SchemaError(std::vector<Violation>{{std::move(path), std::move(message)}}) {}

  const std::vector<Violation>& violations() const { return violations_; }

 private:
  static std::string format(const std::vector<Violation>& vs) {
    std::string out;
    for (const auto& v : vs) {
      if (!out.empty()) out += "; ";
      out += v.path.empty() ? v.message : v.path + ": " + v.message;
    }
    return out;
  }
  std::vector<Violation> violations_;
};

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------------------
// Value pools

struct ValuePools {
  // Orders are preserved from the source document; vocab indices depend on it.
  std::vector<std::string> maps;
  std::vector<std::string> teams;
  std::vector<std::string> actions;
  std::vector<std::string> weapons;
  std::map<std::string, std::vector<std::string>> locations_by_map;
  std::vector<std::string> outcomes;
  std::vector<std::string> impacts;
  std::string version;

  static bool has(const std::vector<std::string>& pool, const std::string& token) {
    return std::find(pool.begin(), pool.end(), token) != pool.end();
  }
  bool has_map(const std::string& m) const { return has(maps, m); }
  bool has_location(const std::string& map, const std::string& loc) const {
    auto it = locations_by_map.find(map);
    return it != locations_by_map.end() && has(it->second, loc);
  }
  const std::vector<std::string>& locations(const std::string& map) const {
    auto it = locations_by_map.find(map);
    if (it == locations_by_map.end()) throw SchemaError("map", "no LOCATION_POOL entry for '" + map + "'");
    return it->second;
  }

  bool operator==(const ValuePools&) const = default;
};

inline constexpr const char* kPoolKeys[] = {"MAP_POOL",     "TEAM_POOL",    "ACTION_POOL", "WEAPON_POOL",
                                            "LOCATION_POOL", "OUTCOME_POOL", "IMPACT_POOL"};

inline json pools_to_json(const ValuePools& p) {
  json j;
  j["MAP_POOL"] = p.maps;
  j["TEAM_POOL"] = p.teams;
  j["ACTION_POOL"] = p.actions;
  j["WEAPON_POOL"] = p.weapons;
  json locs = json::object();
  for (const auto& m : p.maps)
    if (auto it = p.locations_by_map.find(m); it != p.locations_by_map.end()) locs[m] = it->second;
  j["LOCATION_POOL"] = locs;
  j["OUTCOME_POOL"] = p.outcomes;
  j["IMPACT_POOL"] = p.impacts;
  if (!p.version.empty()) j["version"] = p.version;
  return j;
}

namespace detail {

inline std::vector<std::string> string_list(const json& j, const std::string& path,
                                            std::vector<Violation>& errs) {
  std::vector<std::string> out;
  if (!j.is_array()) {
    errs.push_back({path, "expected a list of strings"});
    return out;
  }
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_string()) {
      errs.push_back({path + "[" + std::to_string(i) + "]", "expected a string"});
      continue;
    }
    out.push_back(j[i].get<std::string>());
  }
  return out;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

inline ValuePools pools_from_json(const json& doc) {
  std::vector<Violation> errs;
  if (!doc.is_object()) throw SchemaError("", "pool document must be a JSON object");
  ValuePools p;
  for (const char* key : kPoolKeys)
    if (!doc.contains(key)) errs.push_back({key, "missing pool section"});
  if (!errs.empty()) throw SchemaError(errs);

  p.maps = detail::string_list(doc["MAP_POOL"], "MAP_POOL", errs);
  p.teams = detail::string_list(doc["TEAM_POOL"], "TEAM_POOL", errs);
  p.actions = detail::string_list(doc["ACTION_POOL"], "ACTION_POOL", errs);
  p.weapons = detail::string_list(doc["WEAPON_POOL"], "WEAPON_POOL", errs);
  p.outcomes = detail::string_list(doc["OUTCOME_POOL"], "OUTCOME_POOL", errs);
  p.impacts = detail::string_list(doc["IMPACT_POOL"], "IMPACT_POOL", errs);
  const json& locs = doc["LOCATION_POOL"];
  if (!locs.is_object()) {
    errs.push_back({"LOCATION_POOL", "expected an object keyed by map"});
  } else {
    for (auto it = locs.begin(); it != locs.end(); ++it) {
      const std::string path = "LOCATION_POOL." + it.key();
      if (!ValuePools::has(p.maps, it.key()))
        errs.push_back({path, "map '" + it.key() + "' is not in MAP_POOL"});
      auto list = detail::string_list(it.value(), path, errs);
      if (list.empty()) errs.push_back({path, "location pool is empty"});
      p.locations_by_map[it.key()] = std::move(list);
    }
  }
  const std::pair<const char*, const std::vector<std::string>*> flat[] = {
      {"MAP_POOL", &p.maps},         {"TEAM_POOL", &p.teams},       {"ACTION_POOL", &p.actions},
      {"WEAPON_POOL", &p.weapons},   {"OUTCOME_POOL", &p.outcomes}, {"IMPACT_POOL", &p.impacts}};
  for (const auto& [name, pool] : flat) {
    if (pool->empty() && doc[name].is_array()) errs.push_back({name, "pool is empty"});
    std::set<std::string> seen(pool->begin(), pool->end());
    if (seen.size() != pool->size()) errs.push_back({name, "duplicate token"});
  }
  if (p.locations_by_map.empty() && locs.is_object()) errs.push_back({"LOCATION_POOL", "pool is empty"});
  for (const auto& m : p.maps)
    if (!p.locations_by_map.contains(m)) errs.push_back({"LOCATION_POOL", "no locations for map '" + m + "'"});
  if (!errs.empty()) throw SchemaError(errs);

  if (doc.contains("version") && doc["version"].is_string()) {
    p.version = doc["version"].get<std::string>();
  } else {
    json canon = pools_to_json(p);
    p.version = "pools-" + detail::hex64(fnv1a(canon.dump()));
  }
  return p;
}

inline ValuePools load_pools(const std::string& document_text) {
  json doc;
  try {
    doc = json::parse(document_text);
  } catch (const json::parse_error& e) {
    throw SchemaError("", std::string("malformed JSON: ") + e.what());
  }
  return pools_from_json(doc);
}

// The pools shipped with the VLM annotation prompt.
inline const ValuePools& default_pools() {
  static const ValuePools pools = [] {
    json doc = {
        {"MAP_POOL", {"de_mirage", "de_inferno"}},
        {"TEAM_POOL", {"CT", "T"}},
        {"ACTION_POOL", {"peek", "throw_grenade", "fire_weapon", "plant_bomb", "defuse_kit", "hold_angle"}},
        {"WEAPON_POOL", {"ak47", "m4a4", "awp", "usp-s", "glock", "grenade", "smoke", "flash", "molly"}},
        {"LOCATION_POOL",
         {{"de_mirage", {"mid", "A_site", "palace", "connector", "B_apps", "catwalk"}},
          {"de_inferno", {"banana", "B_site", "A_site", "long", "short", "apartments"}}}},
        {"OUTCOME_POOL", {"EnemySpotted", "Death", "EnemyDamaged", "FriendDamaged", "Assist"}},
        {"IMPACT_POOL", {"LossControl", "MapInformation", "CT_Depletion", "T_Advantage", "ProjectileLoss"}},
        {"version", "default-v1"},
    };
    return pools_from_json(doc);
  }();
  return pools;
}

// ---------------------------------------------------------------------------
// Clips

struct TrajectoryEvent {
  double timestamp = 0.0;
  std::string player_id;
  std::string team;
  std::string action;
  std::string location;
  std::vector<std::string> weapon;
  std::vector<std::string> outcome;
  std::vector<std::string> impact;
  std::vector<std::string> targets;
  int damage = 0;

  bool operator==(const TrajectoryEvent&) const = default;
};

struct Clip {
  std::string clip_id;
  std::string map;
  std::string player_id;
  std::optional<std::string> archetype_label;
  std::vector<TrajectoryEvent> events;

  bool operator==(const Clip&) const = default;
};

inline json event_to_json(const TrajectoryEvent& e) {
  return json{{"timestamp", e.timestamp}, {"player_id", e.player_id}, {"team", e.team},
              {"action", e.action},       {"location", e.location},   {"weapon", e.weapon},
              {"outcome", e.outcome},     {"impact", e.impact},       {"targets", e.targets},
              {"damage", e.damage}};
}

inline json clip_to_json(const Clip& c) {
  json j;
  j["clip_id"] = c.clip_id;
  j["map"] = c.map;
  j["player_id"] = c.player_id;
  if (c.archetype_label) j["archetype_label"] = *c.archetype_label;
  json events = json::array();
  for (const auto& e : c.events) events.push_back(event_to_json(e));
  j["events"] = std::move(events);
  return j;
}

inline std::string serialize_clip(const Clip& c) { return clip_to_json(c).dump(); }

namespace detail {

inline const std::set<std::string>& clip_keys() {
  static const std::set<std::string> keys = {"clip_id", "match_id", "round", "map",
                                             "player_id", "archetype_label", "events"};
  return keys;
}

inline const std::set<std::string>& event_keys() {
  static const std::set<std::string> keys = {"timestamp", "player_id", "team",    "action", "location", "weapon",
                                             "outcome",   "impact",    "targets", "damage", "result"};
  return keys;
}

inline const std::set<std::string>& result_keys() {
  static const std::set<std::string> keys = {"outcome", "impact", "targets", "weapon", "damage"};
  return keys;
}

struct EventReader {
  const ValuePools& pools;
  const std::string& map;
  std::vector<Violation>& errs;

  std::string token(const json& obj, const char* key, const std::string& path, bool required) {
    if (!obj.contains(key)) {
      if (required) errs.push_back({path + "." + key, "missing field"});
      return {};
    }
    const json& v = obj[key];
    if (!v.is_string()) {
      errs.push_back({path + "." + key, "expected a string"});
      return {};
    }
    return v.get<std::string>();
  }

  std::vector<std::string> tokens(const json& v, const std::string& path, bool allow_scalar) {
    if (allow_scalar && v.is_string()) return {v.get<std::string>()};
    return string_list(v, path, errs);
  }

  void check_pool(const std::vector<std::string>& pool, const std::string& tok, const std::string& path,
                  const std::string& pool_name) {
    if (!ValuePools::has(pool, tok)) errs.push_back({path, "'" + tok + "' is not in " + pool_name});
  }

  void check_subset(const std::vector<std::string>& pool, const std::vector<std::string>& toks,
                    const std::string& path, const std::string& pool_name) {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < toks.size(); ++i) {
      const std::string p = path + "[" + std::to_string(i) + "]";
      check_pool(pool, toks[i], p, pool_name);
      if (!seen.insert(toks[i]).second) errs.push_back({p, "duplicate token '" + toks[i] + "'"});
    }
  }

  TrajectoryEvent read(const json& obj, const std::string& path, const std::string& default_player) {
    TrajectoryEvent e;
    if (!obj.is_object()) {
      errs.push_back({path, "expected an object"});
      return e;
    }
    for (auto it = obj.begin(); it != obj.end(); ++it)
      if (!event_keys().contains(it.key())) errs.push_back({path + "." + it.key(), "unknown key"});

    if (!obj.contains("timestamp")) {
      errs.push_back({path + ".timestamp", "missing field"});
    } else if (!obj["timestamp"].is_number()) {
      errs.push_back({path + ".timestamp", "expected a number"});
    } else {
      e.timestamp = obj["timestamp"].get<double>();
      if (!(e.timestamp >= 0.0) || !std::isfinite(e.timestamp))
        errs.push_back({path + ".timestamp", "must be a non-negative finite number"});
    }
    e.player_id = obj.contains("player_id") ? token(obj, "player_id", path, false) : default_player;
    e.team = token(obj, "team", path, true);
    if (obj.contains("team") && obj["team"].is_string()) check_pool(pools.teams, e.team, path + ".team", "TEAM_POOL");
    e.action = token(obj, "action", path, true);
    if (obj.contains("action") && obj["action"].is_string())
      check_pool(pools.actions, e.action, path + ".action", "ACTION_POOL");
    e.location = token(obj, "location", path, true);
    if (obj.contains("location") && obj["location"].is_string() && pools.has_map(map)) {
      if (!pools.has_location(map, e.location))
        errs.push_back({path + ".location", "'" + e.location + "' is not in LOCATION_POOL[" + map + "]"});
    }

    // Result fields may sit on the event itself or inside a nested "result" object.
    const json* result = nullptr;
    if (obj.contains("result")) {
      if (!obj["result"].is_object()) {
        errs.push_back({path + ".result", "expected an object"});
      } else {
        result = &obj["result"];
        for (auto it = result->begin(); it != result->end(); ++it) {
          if (!result_keys().contains(it.key())) errs.push_back({path + ".result." + it.key(), "unknown key"});
          if (obj.contains(it.key())) errs.push_back({path + ".result." + it.key(), "given twice"});
        }
      }
    }
    auto field = [&](const char* key) -> std::pair<const json*, std::string> {
      if (obj.contains(key)) return {&obj[key], path + "." + key};
      if (result && result->contains(key)) return {&(*result)[key], path + ".result." + key};
      return {nullptr, {}};
    };

    if (auto [v, p] = field("weapon"); v) {
      e.weapon = tokens(*v, p, true);
      for (std::size_t i = 0; i < e.weapon.size(); ++i)
        check_pool(pools.weapons, e.weapon[i], p + "[" + std::to_string(i) + "]", "WEAPON_POOL");
    }
    if (auto [v, p] = field("outcome"); v) {
      e.outcome = tokens(*v, p, false);
      check_subset(pools.outcomes, e.outcome, p, "OUTCOME_POOL");
    }
    if (auto [v, p] = field("impact"); v) {
      e.impact = tokens(*v, p, false);
      check_subset(pools.impacts, e.impact, p, "IMPACT_POOL");
    }
    if (auto [v, p] = field("targets"); v) e.targets = tokens(*v, p, false);
    if (auto [v, p] = field("damage"); v) {
      if (!v->is_number()) {
        errs.push_back({p, "expected an integer"});
      } else {
        const double d = v->get<double>();
        if (d != std::floor(d)) errs.push_back({p, "expected an integer"});
        else if (d < 0 || d > 100) errs.push_back({p, "must be within 0-100"});
        else e.damage = static_cast<int>(d);
      }
    }
    return e;
  }
};

}  // namespace detail

inline Clip clip_from_json(const json& doc, const ValuePools& pools) {
  std::vector<Violation> errs;
  if (!doc.is_object()) throw SchemaError("", "clip must be a JSON object");
  for (auto it = doc.begin(); it != doc.end(); ++it)
    if (!detail::clip_keys().contains(it.key())) errs.push_back({it.key(), "unknown top-level key"});

  Clip c;
  auto str = [&](const char* key, bool required) -> std::string {
    if (!doc.contains(key)) {
      if (required) errs.push_back({key, "missing field"});
      return {};
    }
    if (!doc[key].is_string()) {
      errs.push_back({key, "expected a string"});
      return {};
    }
    return doc[key].get<std::string>();
  };
  c.clip_id = str("clip_id", false);
  c.map = str("map", true);
  if (doc.contains("map") && doc["map"].is_string() && !pools.has_map(c.map))
    errs.push_back({"map", "'" + c.map + "' is not in MAP_POOL"});
  c.player_id = str("player_id", false);
  if (doc.contains("archetype_label")) {
    if (doc["archetype_label"].is_null()) {
    } else if (doc["archetype_label"].is_string()) {
      c.archetype_label = doc["archetype_label"].get<std::string>();
    } else {
      errs.push_back({"archetype_label", "expected a string"});
    }
  }

  if (!doc.contains("events")) {
    errs.push_back({"events", "missing field"});
  } else if (!doc["events"].is_array()) {
    errs.push_back({"events", "expected a list"});
  } else if (doc["events"].empty()) {
    errs.push_back({"events", "clip has no events"});
  } else {
    detail::EventReader reader{pools, c.map, errs};
    const json& events = doc["events"];
    for (std::size_t i = 0; i < events.size(); ++i) {
      const std::string path = "events[" + std::to_string(i) + "]";
      c.events.push_back(reader.read(events[i], path, c.player_id));
      if (i > 0 && c.events[i].timestamp < c.events[i - 1].timestamp)
        errs.push_back({path + ".timestamp", "timestamps must be non-decreasing"});
    }
  }
  if (!errs.empty()) throw SchemaError(errs);
  return c;
}

inline Clip parse_clip(const std::string& document, const ValuePools& pools) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw SchemaError("", std::string("malformed JSON: ") + e.what());
  }
  return clip_from_json(doc, pools);
}

// Replaces every player identifier with "player_N", numbered by first
// appearance (clip owner, then each event's actor and targets in order).
inline Clip sanitize_clip(const Clip& clip) {
  std::unordered_map<std::string, std::string> ids;
  auto synth = [&](const std::string& id) -> std::string {
    if (id.empty()) return id;
    auto [it, inserted] = ids.try_emplace(id, "");
    if (inserted) it->second = "player_" + std::to_string(ids.size());
    return it->second;
  };
  Clip out = clip;
  out.archetype_label.reset();
  out.player_id = synth(clip.player_id);
  for (auto& e : out.events) {
    e.player_id = synth(e.player_id);
    for (auto& t : e.targets) t = synth(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus manifests

struct ManifestEntry {
  std::string clip_id;
  std::string path;
  std::optional<std::string> label;
  std::optional<std::string> media_url;
};

struct CorpusManifest {
  std::vector<ManifestEntry> clips;
  std::string pools_version;
  fs::path base_dir;  // relative clip paths resolve against this

  const ManifestEntry* find(const std::string& clip_id) const {
    for (const auto& e : clips)
      if (e.clip_id == clip_id) return &e;
    return nullptr;
  }
};

inline json manifest_to_json(const CorpusManifest& m) {
  json list = json::array();
  for (const auto& e : m.clips) {
    json j{{"clip_id", e.clip_id}, {"path", e.path}};
    if (e.label) j["label"] = *e.label;
    if (e.media_url) j["media_url"] = *e.media_url;
    list.push_back(std::move(j));
  }
  if (m.pools_version.empty()) return list;
  return json{{"pools_version", m.pools_version}, {"clips", std::move(list)}};
}

inline CorpusManifest manifest_from_json(const json& doc, const fs::path& base_dir = {}) {
  CorpusManifest m;
  m.base_dir = base_dir;
  const json* list = &doc;
  if (doc.is_object()) {
    if (doc.contains("pools_version") && doc["pools_version"].is_string())
      m.pools_version = doc["pools_version"].get<std::string>();
    if (!doc.contains("clips")) throw SchemaError("clips", "missing field");
    list = &doc["clips"];
  }
  if (!list->is_array()) throw SchemaError("", "manifest must be a JSON list");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < list->size(); ++i) {
    const json& e = (*list)[i];
    const std::string path = "[" + std::to_string(i) + "]";
    if (!e.is_object() || !e.contains("clip_id") || !e["clip_id"].is_string() || !e.contains("path") ||
        !e["path"].is_string())
      throw SchemaError(path, "manifest entry needs string clip_id and path");
    ManifestEntry me{e["clip_id"].get<std::string>(), e["path"].get<std::string>(), {}, {}};
    if (e.contains("label") && e["label"].is_string()) me.label = e["label"].get<std::string>();
    if (e.contains("media_url") && e["media_url"].is_string()) me.media_url = e["media_url"].get<std::string>();
    if (!seen.insert(me.clip_id).second) throw SchemaError(path + ".clip_id", "duplicate clip_id '" + me.clip_id + "'");
    m.clips.push_back(std::move(me));
  }
  return m;
}

inline CorpusManifest load_manifest(const fs::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const std::exception& e) {
    throw std::runtime_error("unreadable manifest: " + std::string(e.what()));
  }
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string(), std::string("malformed manifest JSON: ") + e.what());
  }
  return manifest_from_json(doc, path.parent_path());
}

struct IngestReportEntry {
  std::string clip_id;
  std::string message;
};

struct IngestResult {
  std::vector<Clip> clips;
  std::vector<std::optional<std::string>> media_urls;  // parallel to clips
  std::vector<IngestReportEntry> report;
};

inline fs::path resolve_clip_path(const CorpusManifest& m, const ManifestEntry& e) {
  fs::path p(e.path);
  return p.is_absolute() || m.base_dir.empty() ? p : m.base_dir / p;
}

// Reads one manifest entry. A .jsonl path holds one clip per line; the line
// whose clip_id matches the entry is used.
inline Clip load_clip(const CorpusManifest& m, const ManifestEntry& e, const ValuePools& pools) {
  const fs::path path = resolve_clip_path(m, e);
  const std::string text = read_text_file(path);
  Clip clip;
  if (path.extension() == ".jsonl") {
    std::istringstream lines(text);
    std::string line;
    bool found = false;
    std::size_t lineno = 0;
    while (std::getline(lines, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      json doc;
      try {
        doc = json::parse(line);
      } catch (const json::parse_error& err) {
        throw SchemaError("line " + std::to_string(lineno), std::string("malformed JSON: ") + err.what());
      }
      if (doc.is_object() && doc.value("clip_id", std::string{}) == e.clip_id) {
        clip = clip_from_json(doc, pools);
        found = true;
        break;
      }
    }
    if (!found) throw SchemaError("clip_id", "'" + e.clip_id + "' not found in " + path.string());
  } else {
    clip = parse_clip(text, pools);
  }
  if (clip.clip_id.empty()) clip.clip_id = e.clip_id;
  if (clip.clip_id != e.clip_id)
    throw SchemaError("clip_id", "file declares '" + clip.clip_id + "' but manifest says '" + e.clip_id + "'");
  if (!clip.archetype_label && e.label) clip.archetype_label = e.label;
  return clip;
}

inline IngestResult ingest_corpus(const CorpusManifest& manifest, const ValuePools& pools) {
  std::set<std::string> seen;
  for (const auto& e : manifest.clips)
    if (!seen.insert(e.clip_id).second) throw SchemaError("clip_id", "duplicate clip_id '" + e.clip_id + "'");
  IngestResult out;
  for (const auto& e : manifest.clips) {
    try {
      out.clips.push_back(load_clip(manifest, e, pools));
      out.media_urls.push_back(e.media_url);
    } catch (const std::exception& err) {
      out.report.push_back({e.clip_id, err.what()});
    }
  }
  return out;
}

// External program that turns a raw recording into clip JSON on stdout. The
// command receives the input path as its final argument.
class TrajectoryConverter {
 public:
  virtual ~TrajectoryConverter() = default;
  virtual std::string convert(const fs::path& input) = 0;
};

class CommandConverter : public TrajectoryConverter {
 public:
  explicit CommandConverter(std::string command) : command_(std::move(command)) {}

  std::string convert(const fs::path& input) override {
    std::string cmd = command_ + " '" + input.string() + "'";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) throw std::runtime_error("cannot run converter: " + command_);
    std::string out;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
    const int status = pclose(pipe);
    if (status != 0) throw std::runtime_error("converter exited with status " + std::to_string(status));
    return out;
  }

 private:
  std::string command_;
};

inline Clip convert_clip(TrajectoryConverter& converter, const fs::path& input, const ValuePools& pools) {
  return parse_clip(converter.convert(input), pools);
}

}  // namespace esir
