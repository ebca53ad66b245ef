#include <gtest/gtest.h>

#include <thread>

#include "esir/service.hpp"
#include "esir/study.hpp"
#include "esir/vlm.hpp"
#include "test_support.hpp"

using namespace esir;

namespace {

const std::vector<std::string> kAnchors{"pro_a", "pro_b", "pro_c"};

std::vector<Clip> pool_clips(std::size_t n, std::uint64_t seed = 1) {
  Rng rng(seed);
  std::vector<Clip> out;
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "clip_%03zu", i);
    out.push_back(fixtures::random_clip(default_pools(), rng, id, 2, 8));
    out.back().player_id = "real_name_" + std::to_string(i);
    out.back().archetype_label = "pro_a";
  }
  return out;
}

StudyConfig study_config(const std::vector<Clip>& clips) {
  StudyConfig c;
  c.seed = 7;
  c.anchors = kAnchors;
  for (const auto& clip : clips) c.pool.push_back(clip.clip_id);
  return c;
}

nlohmann::json rating(const std::string& pid, const std::string& clip, int a = 10, int b = 50, int c = 90) {
  return {{"participant_id", pid}, {"clip_id", clip}, {"scores", {{"pro_a", a}, {"pro_b", b}, {"pro_c", c}}}};
}

Study::Clock fixed_clock() {
  return [] { return std::string("2026-01-01T00:00:00Z"); };
}

VlmEndpoint endpoint(const std::string& url) {
  VlmEndpoint e;
  e.url = url;
  return e;
}

fs::path fresh_dir(const std::string& name) {
  fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(Study, SessionIsIdempotentAndUnique) {
  auto clips = pool_clips(150);
  Study study(study_config(clips), std::nullopt, fixed_clock());
  Session s1 = study.start_session("p1");
  Session s2 = study.start_session("p1");
  EXPECT_EQ(s1.clip_ids, s2.clip_ids);
  ASSERT_EQ(s1.clip_ids.size(), 50u);
  EXPECT_EQ(std::set<std::string>(s1.clip_ids.begin(), s1.clip_ids.end()).size(), 50u);
  EXPECT_NE(study.start_session("p2").clip_ids, s1.clip_ids);
  EXPECT_EQ(s1.anchors, kAnchors);
  EXPECT_EQ(s1.cursor, 0u);
}

TEST(Study, RejectsUndersizedPoolAndEmptyParticipant) {
  auto clips = pool_clips(10);
  EXPECT_THROW(Study(study_config(clips)), std::invalid_argument);
  auto cfg = study_config(pool_clips(60));
  cfg.anchors = {"only"};
  EXPECT_THROW(Study{cfg}, std::invalid_argument);
  Study ok(study_config(pool_clips(60)));
  EXPECT_THROW(ok.start_session(""), StudyError);
}

TEST(Study, ProgressAndResubmission) {
  auto clips = pool_clips(150);
  Study study(study_config(clips), std::nullopt, fixed_clock());
  Session s = study.start_session("p1");
  EXPECT_EQ(study.progress("p1").done, 0u);
  study.submit(rating("p1", s.clip_ids[0]));
  study.submit(rating("p1", s.clip_ids[1]));
  EXPECT_EQ(study.progress("p1").done, 2u);
  EXPECT_EQ(study.session("p1").cursor, 2u);
  study.submit(rating("p1", s.clip_ids[0], 99, 1, 50));
  EXPECT_EQ(study.progress("p1").done, 2u);
  EXPECT_EQ(study.store().find("p1", s.clip_ids[0])->scores.at("pro_a"), 99);
  EXPECT_EQ(study.store().effective().size(), 2u);
}

TEST(Study, CompletesSession) {
  auto clips = pool_clips(60);
  auto cfg = study_config(clips);
  cfg.session_size = 5;
  Study study(cfg, std::nullopt, fixed_clock());
  Session s = study.start_session("p");
  for (const auto& id : s.clip_ids) study.submit(rating("p", id));
  EXPECT_EQ(study.progress("p").done, 5u);
  EXPECT_EQ(study.session("p").cursor, 5u);
}

TEST(Study, InvalidRatingsRejected) {
  auto clips = pool_clips(150);
  Study study(study_config(clips), std::nullopt, fixed_clock());
  Session s = study.start_session("p1");
  auto expect_invalid = [&](const nlohmann::json& body, const std::string& path) {
    try {
      study.submit(body);
      ADD_FAILURE() << "accepted " << body.dump();
    } catch (const StudyError& e) {
      EXPECT_EQ(e.kind(), StudyError::Kind::invalid);
      bool found = false;
      for (const auto& v : e.violations()) found |= v.path == path;
      EXPECT_TRUE(found) << path;
    }
  };
  expect_invalid(rating("p1", s.clip_ids[0], 0), "scores.pro_a");
  expect_invalid(rating("p1", s.clip_ids[0], 101), "scores.pro_a");
  auto missing = rating("p1", s.clip_ids[0]);
  missing["scores"].erase("pro_c");
  expect_invalid(missing, "scores.pro_c");
  auto extra = rating("p1", s.clip_ids[0]);
  extra["scores"]["pro_z"] = 5;
  expect_invalid(extra, "scores.pro_z");
  auto frac = rating("p1", s.clip_ids[0]);
  frac["scores"]["pro_b"] = 5.5;
  expect_invalid(frac, "scores.pro_b");
  EXPECT_EQ(study.store().effective().size(), 0u);

  std::string outside;
  for (const auto& c : clips)
    if (std::find(s.clip_ids.begin(), s.clip_ids.end(), c.clip_id) == s.clip_ids.end()) outside = c.clip_id;
  try {
    study.submit(rating("p1", outside));
    ADD_FAILURE();
  } catch (const StudyError& e) {
    EXPECT_EQ(e.kind(), StudyError::Kind::not_found);
  }
  EXPECT_THROW(study.submit(rating("ghost", s.clip_ids[0])), StudyError);
}

TEST(Study, ExportIsLongFormAndSorted) {
  auto clips = pool_clips(150);
  Study study(study_config(clips), std::nullopt, fixed_clock());
  Session s = study.start_session("p1");
  study.submit(rating("p1", s.clip_ids[3], 1, 2, 3));
  const std::string csv = study.store().export_csv();
  std::vector<std::string> lines;
  std::istringstream in(csv);
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "participant_id,clip_id,anchor,score");
  EXPECT_EQ(lines[1], "p1," + s.clip_ids[3] + ",pro_a,1");
  EXPECT_EQ(lines[3], "p1," + s.clip_ids[3] + ",pro_c,3");
}

TEST(Study, RestartRestoresStateAndExport) {
  auto clips = pool_clips(150);
  fs::path dir = fresh_dir("esir_study_restart");
  std::string before;
  std::vector<std::string> assigned;
  {
    Study study(study_config(clips), dir, fixed_clock());
    assigned = study.start_session("p1").clip_ids;
    study.start_session("p2");
    for (int i = 0; i < 4; ++i) study.submit(rating("p1", assigned[i], 10 + i));
    study.submit(rating("p1", assigned[0], 77));
    before = study.store().export_csv();
  }
  Study again(study_config(clips), dir, fixed_clock());
  EXPECT_TRUE(again.has_session("p1"));
  EXPECT_TRUE(again.has_session("p2"));
  EXPECT_EQ(again.session("p1").clip_ids, assigned);
  EXPECT_EQ(again.progress("p1").done, 4u);
  EXPECT_EQ(again.store().find("p1", assigned[0])->scores.at("pro_a"), 77);
  EXPECT_EQ(again.store().export_csv(), before);
}

class Http : public ::testing::Test {
 protected:
  void SetUp() override {
    clips_ = pool_clips(150);
    study_ = std::make_unique<Study>(study_config(clips_), std::nullopt, fixed_clock());
    service_ = std::make_unique<RatingService>(*study_, clips_, std::map<std::string, std::string>{{"clip_000", "https://cdn/x.mp4"}},
                                               ServiceConfig{});
    port_ = service_->bind_any_port();
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { service_->listen_after_bind(); });
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }
  void TearDown() override {
    service_->stop();
    thread_.join();
  }

  nlohmann::json get_json(const std::string& path, int expect_status = 200) {
    auto res = client_->Get(path);
    EXPECT_TRUE(res);
    if (!res) return {};
    EXPECT_EQ(res->status, expect_status) << path << ": " << res->body;
    return nlohmann::json::parse(res->body);
  }

  httplib::Result post(const nlohmann::json& body) { return client_->Post("/api/rating", body.dump(), "application/json"); }

  std::vector<Clip> clips_;
  std::unique_ptr<Study> study_;
  std::unique_ptr<RatingService> service_;
  std::unique_ptr<httplib::Client> client_;
  std::thread thread_;
  int port_ = 0;
};

TEST_F(Http, SessionFlow) {
  auto s = get_json("/api/session?participant=p1");
  ASSERT_EQ(s["clip_ids"].size(), 50u);
  EXPECT_EQ(s["done"], 0);
  EXPECT_EQ(get_json("/api/session?participant=p1")["clip_ids"], s["clip_ids"]);
  const std::string first = s["clip_ids"][0];
  auto res = post(rating("p1", first));
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  auto j = nlohmann::json::parse(res->body);
  EXPECT_EQ(j["done"], 1);
  EXPECT_EQ(j["total"], 50);
  EXPECT_EQ(j["next_clip_id"], s["clip_ids"][1]);
  auto p = get_json("/api/progress?participant=p1");
  EXPECT_EQ(p["done"], 1);
  EXPECT_EQ(p["cursor"], 1);
}

TEST_F(Http, ClipIsSanitized) {
  auto j = get_json("/api/clip/clip_001");
  EXPECT_EQ(j["clip"]["player_id"], "player_1");
  EXPECT_FALSE(j["clip"].contains("archetype_label"));
  EXPECT_TRUE(j["media_url"].is_null());
  EXPECT_EQ(get_json("/api/clip/clip_000")["media_url"], "https://cdn/x.mp4");
  const std::string body = client_->Get("/api/clip/clip_001")->body;
  EXPECT_EQ(body.find("real_name"), std::string::npos);
  get_json("/api/clip/nope", 404);
}

TEST_F(Http, ErrorsCarryViolations) {
  auto s = get_json("/api/session?participant=p1");
  auto res = post(rating("p1", s["clip_ids"][0], 0));
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  auto j = nlohmann::json::parse(res->body);
  ASSERT_FALSE(j["violations"].empty());
  EXPECT_EQ(j["violations"][0]["path"], "scores.pro_a");
  auto bad = client_->Post("/api/rating", "{not json", "application/json");
  EXPECT_EQ(bad->status, 400);
  get_json("/api/session", 400);
  get_json("/api/progress?participant=ghost", 404);
}

TEST_F(Http, ExportAndPlaceholder) {
  auto s = get_json("/api/session?participant=p1");
  post(rating("p1", s["clip_ids"][0], 5, 6, 7));
  auto res = client_->Get("/api/export");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->body, study_->store().export_csv());
  EXPECT_NE(res->get_header_value("Content-Type").find("text/csv"), std::string::npos);
  auto root = client_->Get("/");
  ASSERT_TRUE(root);
  EXPECT_EQ(root->status, 200);
  EXPECT_NE(root->body.find("/api/"), std::string::npos);
}

TEST(HttpUi, ServesBundleWhenPresent) {
  auto clips = pool_clips(60);
  Study study(study_config(clips));
  fs::path ui = fresh_dir("esir_ui_bundle");
  write_text_file(ui / "index.html", "<html>bundle</html>");
  ServiceConfig cfg;
  cfg.ui_dir = ui;
  RatingService service(study, clips, {}, cfg);
  const int port = service.bind_any_port();
  std::thread t([&] { service.listen_after_bind(); });
  httplib::Client cli("127.0.0.1", port);
  auto res = cli.Get("/");
  service.stop();
  t.join();
  ASSERT_TRUE(res);
  EXPECT_EQ(res->body, "<html>bundle</html>");
}

TEST(HttpUi, PoolClipWithoutDataRejected) {
  auto clips = pool_clips(60);
  Study study(study_config(clips));
  clips.pop_back();
  EXPECT_THROW(RatingService(study, clips, {}, ServiceConfig{}), std::invalid_argument);
}

TEST(Vlm, FencesAreStripped) {
  EXPECT_EQ(strip_markdown_fences("```json\n{\"a\":1}\n```"), "{\"a\":1}");
  EXPECT_EQ(strip_markdown_fences("  ```\n{}\n```  "), "{}");
  EXPECT_EQ(strip_markdown_fences("{\"b\":2}\n"), "{\"b\":2}");
}

TEST(Vlm, PromptListsPools) {
  const auto& pools = default_pools();
  const std::string p = annotation_prompt(pools);
  for (const auto& a : pools.actions) EXPECT_NE(p.find("\"" + a + "\""), std::string::npos) << a;
  for (const auto& m : pools.maps)
    for (const auto& l : pools.locations(m)) EXPECT_NE(p.find("\"" + l + "\""), std::string::npos) << l;
}

TEST(Vlm, FencedAnswerParses) {
  const std::string doc = read_text_file(fs::path(ESIR_SOURCE_DIR) / "samples/clips/mirage_entry_01.json");
  StubProvider stub({"```json\n" + doc + "\n```"});
  Clip c = vlm_annotate("media.mp4", default_pools(), stub, "vlm_1");
  EXPECT_EQ(c.clip_id, "vlm_1");
  EXPECT_EQ(c.map, "de_mirage");
  EXPECT_EQ(stub.prompts().size(), 1u);
}

TEST(Vlm, RetryThenSuccess) {
  const std::string doc = read_text_file(fs::path(ESIR_SOURCE_DIR) / "samples/clips/mirage_entry_01.json");
  auto bad = nlohmann::json::parse(doc);
  bad["events"][0]["action"] = "moonwalk";
  StubProvider stub({bad.dump(), doc});
  Clip c = vlm_annotate("m", default_pools(), stub, "vlm_2");
  EXPECT_FALSE(c.events.empty());
  ASSERT_EQ(stub.prompts().size(), 2u);
  EXPECT_NE(stub.prompts()[1].find("events[0].action"), std::string::npos);
}

TEST(Vlm, SecondFailureArchivesAndThrows) {
  const std::string doc = read_text_file(fs::path(ESIR_SOURCE_DIR) / "samples/clips/mirage_entry_01.json");
  auto bad = nlohmann::json::parse(doc);
  bad["events"][0]["location"] = "banana";
  StubProvider stub({bad.dump()});
  fs::path dir = fresh_dir("esir_vlm_archive");
  try {
    vlm_annotate("m", default_pools(), stub, "vlm_3", dir);
    FAIL() << "expected VlmError";
  } catch (const VlmError& e) {
    EXPECT_EQ(stub.prompts().size(), 2u);
    ASSERT_FALSE(e.archived().empty());
    EXPECT_EQ(read_text_file(e.archived()), bad.dump());
  }
  StubProvider garbage({"I think the player went mid."});
  EXPECT_THROW(vlm_annotate("m", default_pools(), garbage, "vlm_4"), VlmError);
}

TEST(Vlm, HttpProviderRequiresPlainHttp) {
  EXPECT_THROW(HttpJsonProvider(endpoint("https://example.com/v1")), std::invalid_argument);
  EXPECT_NO_THROW(HttpJsonProvider(endpoint("http://127.0.0.1:1/v1")));
}

TEST(Vlm, HttpProviderReadsTextField) {
  httplib::Server srv;
  nlohmann::json seen;
  srv.Post("/v1", [&](const httplib::Request& req, httplib::Response& res) {
    seen = nlohmann::json::parse(req.body);
    res.set_content(R"({"text":"hello"})", "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread t([&] { srv.listen_after_bind(); });
  HttpJsonProvider p(VlmEndpoint{"http://127.0.0.1:" + std::to_string(port) + "/v1", "ESIR_TEST_NO_TOKEN", "m1"});
  const std::string out = p.complete("prompt", "clip.mp4");
  srv.stop();
  t.join();
  EXPECT_EQ(out, "hello");
  EXPECT_EQ(seen["media_url"], "clip.mp4");
  EXPECT_EQ(seen["model"], "m1");
}
