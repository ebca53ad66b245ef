#include <gtest/gtest.h>

#include "esir/schema.hpp"
#include "test_support.hpp"

using namespace esir;
using nlohmann::json;

namespace {

json peek_event() {
  return {{"timestamp", 1.0}, {"player_id", "p"},  {"team", "CT"},  {"action", "peek"}, {"location", "mid"},
          {"weapon", {"ak47"}}, {"outcome", json::array()}, {"impact", json::array()}, {"targets", json::array()},
          {"damage", 0}};
}

json one_event_clip() { return {{"clip_id", "c1"}, {"map", "de_mirage"}, {"player_id", "p"}, {"events", {peek_event()}}}; }

bool mentions(const SchemaError& e, const std::string& needle) {
  for (const auto& v : e.violations())
    if (v.path.find(needle) != std::string::npos || v.message.find(needle) != std::string::npos) return true;
  return false;
}

fs::path temp_dir(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("esir_schema_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(Pools, DefaultMaps) {
  const auto& p = default_pools();
  EXPECT_EQ(p.maps, (std::vector<std::string>{"de_mirage", "de_inferno"}));
  EXPECT_TRUE(p.has_map("de_inferno"));
  EXPECT_FALSE(p.has_map("de_dust2"));
}

TEST(Pools, LocationsForUnknownMapRejected) {
  json doc = pools_to_json(default_pools());
  doc["LOCATION_POOL"]["de_dust2"] = {"long", "short"};
  EXPECT_THROW(pools_from_json(doc), SchemaError);
}

TEST(Pools, ExtendedMapAccepted) {
  json doc = pools_to_json(default_pools());
  doc["MAP_POOL"].push_back("de_dust2");
  doc["LOCATION_POOL"]["de_dust2"] = {"long", "short", "mid", "A_site", "B_site", "tunnels"};
  ValuePools p = pools_from_json(doc);
  EXPECT_TRUE(p.has_map("de_dust2"));
  EXPECT_EQ(p.locations("de_dust2").size(), 6u);
}

TEST(Pools, MissingSectionRejected) {
  json doc = pools_to_json(default_pools());
  doc.erase("IMPACT_POOL");
  EXPECT_THROW(pools_from_json(doc), SchemaError);
}

TEST(Pools, JsonRoundTrip) {
  ValuePools p = pools_from_json(pools_to_json(default_pools()));
  EXPECT_EQ(p.actions, default_pools().actions);
  EXPECT_EQ(p.locations("de_mirage"), default_pools().locations("de_mirage"));
}

TEST(ParseClip, AcceptsMinimalPeek) {
  Clip c = parse_clip(one_event_clip().dump(), default_pools());
  ASSERT_EQ(c.events.size(), 1u);
  EXPECT_EQ(c.events[0].action, "peek");
  EXPECT_TRUE(c.events[0].outcome.empty());
}

TEST(ParseClip, MirageBananaRejectedWithPath) {
  json doc = one_event_clip();
  doc["events"][0]["location"] = "banana";
  try {
    parse_clip(doc.dump(), default_pools());
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_TRUE(mentions(e, "events[0].location"));
  }
}

TEST(ParseClip, UnknownActionNamesPool) {
  json doc = one_event_clip();
  doc["events"][0]["action"] = "wallbang";
  try {
    parse_clip(doc.dump(), default_pools());
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_TRUE(mentions(e, "ACTION_POOL"));
  }
}

TEST(ParseClip, RejectsStructuralProblems) {
  EXPECT_THROW(parse_clip("{not json", default_pools()), SchemaError);
  json empty = one_event_clip();
  empty["events"] = json::array();
  EXPECT_THROW(parse_clip(empty.dump(), default_pools()), SchemaError);
  json extra = one_event_clip();
  extra["commentary"] = "x";
  EXPECT_THROW(parse_clip(extra.dump(), default_pools()), SchemaError);
  json unsorted = one_event_clip();
  unsorted["events"].push_back(peek_event());
  unsorted["events"][1]["timestamp"] = 0.5;
  EXPECT_THROW(parse_clip(unsorted.dump(), default_pools()), SchemaError);
  json dup = one_event_clip();
  dup["events"][0]["outcome"] = {"Death", "Death"};
  EXPECT_THROW(parse_clip(dup.dump(), default_pools()), SchemaError);
  json dmg = one_event_clip();
  dmg["events"][0]["damage"] = 101;
  EXPECT_THROW(parse_clip(dmg.dump(), default_pools()), SchemaError);
}

TEST(ParseClip, MatchIdAccepted) {
  json doc = one_event_clip();
  doc["match_id"] = "m-1";
  EXPECT_NO_THROW(parse_clip(doc.dump(), default_pools()));
}

TEST(ParseClip, ThousandRandomValidClipsParseAndRoundTrip) {
  Rng rng(2024);
  for (int i = 0; i < 1000; ++i) {
    Clip c = fixtures::random_clip(default_pools(), rng, "c" + std::to_string(i));
    Clip back = parse_clip(serialize_clip(c), default_pools());
    ASSERT_EQ(back, c) << i;
  }
}

TEST(ParseClip, EverySingleFieldMutationRejected) {
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    Clip c = fixtures::random_clip(default_pools(), rng, "m", 1, 5);
    for (const auto& [field, doc] : fixtures::out_of_pool_mutations(clip_to_json(c)))
      EXPECT_THROW(clip_from_json(doc, default_pools()), SchemaError) << field;
  }
}

TEST(Sanitize, ReplacesIdsConsistently) {
  json doc = one_event_clip();
  doc["player_id"] = "s1mple-steam64";
  doc["archetype_label"] = "s1mple";
  doc["events"][0]["player_id"] = "s1mple-steam64";
  doc["events"][0]["targets"] = {"victim"};
  doc["events"].push_back(doc["events"][0]);
  Clip s = sanitize_clip(parse_clip(doc.dump(), default_pools()));
  EXPECT_EQ(s.player_id, "player_1");
  EXPECT_FALSE(s.archetype_label);
  EXPECT_EQ(s.events[0].targets[0], s.events[1].targets[0]);
  EXPECT_EQ(s.events[0].targets[0], "player_2");
}

TEST(Sanitize, IdempotentAndContentPreserving) {
  Rng rng(99);
  for (int i = 0; i < 200; ++i) {
    Clip c = fixtures::random_clip(default_pools(), rng, "s");
    Clip s = sanitize_clip(c);
    ASSERT_EQ(sanitize_clip(s), s);
    ASSERT_EQ(s.events.size(), c.events.size());
    for (std::size_t k = 0; k < c.events.size(); ++k) {
      EXPECT_EQ(s.events[k].timestamp, c.events[k].timestamp);
      EXPECT_EQ(s.events[k].action, c.events[k].action);
      EXPECT_EQ(s.events[k].damage, c.events[k].damage);
    }
  }
}

TEST(Ingest, CollectsPerClipErrors) {
  fs::path d = temp_dir("ingest");
  Rng rng(1);
  CorpusManifest m;
  m.base_dir = d;
  for (int i = 0; i < 3; ++i) {
    Clip c = fixtures::random_clip(default_pools(), rng, "c" + std::to_string(i), 1, 4);
    json doc = clip_to_json(c);
    if (i == 1) doc["events"][0]["location"] = "banana", doc["map"] = "de_mirage";
    write_text_file(d / (c.clip_id + ".json"), doc.dump());
    m.clips.push_back({c.clip_id, c.clip_id + ".json", std::nullopt, std::nullopt});
  }
  IngestResult r = ingest_corpus(m, default_pools());
  EXPECT_EQ(r.clips.size(), 2u);
  ASSERT_EQ(r.report.size(), 1u);
  EXPECT_EQ(r.report[0].clip_id, "c1");
}

TEST(Ingest, DuplicateIdsFatal) {
  json doc = json::array({{{"clip_id", "a"}, {"path", "a.json"}}, {{"clip_id", "a"}, {"path", "b.json"}}});
  EXPECT_ANY_THROW(manifest_from_json(doc));
}

TEST(Ingest, UnreadableManifestFatal) {
  EXPECT_ANY_THROW(load_manifest("/nonexistent/manifest.json"));
}

TEST(Manifest, RoundTrip) {
  CorpusManifest m;
  m.pools_version = "v9";
  m.clips.push_back({"a", "a.json", "pro_a", "http://x/a.mp4"});
  CorpusManifest back = manifest_from_json(manifest_to_json(m));
  EXPECT_EQ(back.pools_version, "v9");
  ASSERT_EQ(back.clips.size(), 1u);
  EXPECT_EQ(back.clips[0].label, std::optional<std::string>("pro_a"));
  EXPECT_EQ(back.clips[0].media_url, std::optional<std::string>("http://x/a.mp4"));
}

TEST(Samples, ShippedSampleClipParses) {
  fs::path root = ESIR_SOURCE_DIR;
  ValuePools pools = load_pools(read_text_file(root / "samples/pools.json"));
  CorpusManifest m = load_manifest(root / "samples/manifest.json");
  IngestResult r = ingest_corpus(m, pools);
  EXPECT_FALSE(r.clips.empty());
  EXPECT_TRUE(r.report.empty());
}
