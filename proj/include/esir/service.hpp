#pragma once

// HTTP front of the rating study.
//
//   GET  /api/session?participant=ID   start or resume a session
//   GET  /api/clip/{id}                sanitized clip + media_url
//   POST /api/rating                   {participant_id, clip_id, scores}
//   GET  /api/progress?participant=ID
//   GET  /api/export                   long-form ratings CSV
//   GET  /                             UI bundle (or a placeholder page)
//   GET  /media/...                    files under the media root

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "httplib.h"
#include "esir/schema.hpp"
#include "esir/study.hpp"

namespace esir {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<fs::path> ui_dir;
  std::optional<fs::path> media_root;
};

inline constexpr const char* kPlaceholderPage =
    "<!doctype html><html><head><meta charset=\"utf-8\"><title>Rating study</title></head>"
    "<body><h1>Rating study</h1><p>The rating UI bundle is not installed. The JSON API is available under "
    "<code>/api/</code>.</p></body></html>";

class RatingService {
 public:
  // Clips are sanitized here, so nothing identifying can reach a rater.
  RatingService(Study& study, const std::vector<Clip>& clips, std::map<std::string, std::string> media_urls,
                ServiceConfig config)
      : study_(study), media_urls_(std::move(media_urls)), config_(std::move(config)) {
    for (const auto& c : clips) clips_[c.clip_id] = sanitize_clip(c);
    for (const auto& id : study_.config().pool)
      if (!clips_.contains(id)) throw std::invalid_argument("service: pool clip '" + id + "' has no clip data");
    routes();
  }

  httplib::Server& server() { return server_; }

  // Blocks until stop().
  bool listen() { return server_.listen(config_.host, config_.port); }

  // Binds an ephemeral port; serve with listen_after_bind().
  int bind_any_port() { return server_.bind_to_any_port(config_.host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }

  void stop() { server_.stop(); }

  std::optional<std::string> media_url(const std::string& clip_id) const {
    if (auto it = media_urls_.find(clip_id); it != media_urls_.end()) return it->second;
    if (config_.media_root)
      for (const char* ext : {".mp4", ".webm"})
        if (fs::exists(*config_.media_root / (clip_id + ext))) return "/media/" + clip_id + ext;
    return std::nullopt;
  }

 private:
  static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& msg,
                         const std::vector<Violation>& v = {}) {
    nlohmann::json vs = nlohmann::json::array();
    for (const auto& x : v) vs.push_back({{"path", x.path}, {"message", x.message}});
    send_json(res, status, {{"error", msg}, {"violations", vs}});
  }

  template <typename F>
  void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const StudyError& e) {
      send_error(res, e.kind() == StudyError::Kind::not_found ? 404 : 400, e.what(), e.violations());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  }

  nlohmann::json progress_json(const std::string& pid) const {
    Session s = study_.session(pid);
    Progress p = study_.progress(pid);
    return {{"participant_id", pid},
            {"done", p.done},
            {"total", p.total},
            {"cursor", s.cursor},
            {"next_clip_id", s.cursor < s.clip_ids.size() ? nlohmann::json(s.clip_ids[s.cursor]) : nlohmann::json(nullptr)}};
  }

  void routes() {
    server_.Get("/api/session", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string pid = req.get_param_value("participant");
        if (pid.empty()) return send_error(res, 400, "missing participant parameter");
        nlohmann::json j = to_json(study_.start_session(pid));
        j["done"] = study_.progress(pid).done;
        send_json(res, 200, j);
      });
    });

    server_.Get(R"(/api/clip/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string id = req.matches[1];
        auto it = clips_.find(id);
        if (it == clips_.end()) return send_error(res, 404, "unknown clip '" + id + "'");
        auto url = media_url(id);
        send_json(res, 200, {{"clip_id", id}, {"clip", clip_to_json(it->second)},
                             {"media_url", url ? nlohmann::json(*url) : nlohmann::json(nullptr)}});
      });
    });

    server_.Post("/api/rating", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded()) return send_error(res, 400, "body is not valid JSON");
        Progress p = study_.submit(body);
        nlohmann::json j = progress_json(body["participant_id"].get<std::string>());
        j["done"] = p.done;
        j["total"] = p.total;
        send_json(res, 200, j);
      });
    });

    server_.Get("/api/progress", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string pid = req.get_param_value("participant");
        if (pid.empty()) return send_error(res, 400, "missing participant parameter");
        send_json(res, 200, progress_json(pid));
      });
    });

    server_.Get("/api/export", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { res.set_content(study_.store().export_csv(), "text/csv"); });
    });

    if (config_.media_root) server_.set_mount_point("/media", config_.media_root->string());
    const bool has_ui = config_.ui_dir && fs::exists(*config_.ui_dir / "index.html");
    if (has_ui) {
      server_.set_mount_point("/", config_.ui_dir->string());
    } else {
      server_.Get("/", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(kPlaceholderPage, "text/html");
      });
    }
  }

  Study& study_;
  std::map<std::string, Clip> clips_;
  std::map<std::string, std::string> media_urls_;
  ServiceConfig config_;
  httplib::Server server_;
};

}  // namespace esir
