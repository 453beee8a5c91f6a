#include "sage/review_http.hpp"

#include <thread>

#include <httplib.h>

#include "sage/error.hpp"
#include "sage/serialization.hpp"

namespace sage {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view kind, const std::string& message) {
  send_json(res, status, {{"error", kind}, {"message", message}});
}

int status_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::NotFound: return 404;
    case ErrorKind::Conflict: return 409;
    case ErrorKind::InvalidArgument:
    case ErrorKind::ProtocolError: return 400;
    default: return 500;
  }
}

template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    send_error(res, status_for(e.kind()), to_string(e.kind()), e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, "invalid-argument", std::string("bad JSON body: ") + e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

}  // namespace

struct ReviewServer::Impl {
  explicit Impl(ReviewService& s) : service(s) {}
  ReviewService& service;
  httplib::Server server;
  std::thread thread;
};

ReviewServer::ReviewServer(ReviewService& service, std::optional<std::filesystem::path> static_dir)
    : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  auto& svc = impl_->service;

  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type, X-Reviewer-Id");
    res.status = 204;
  });

  srv.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"ok", true}}); });

  srv.Get("/config", [&svc](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      const auto& cfg = svc.config();
      send_json(res, 200,
                {{"default_refinement_text", cfg.session.standard_refinement_text},
                 {"allow_multiple_refinements", cfg.allow_multiple_refinements},
                 {"goals", cfg.goals}});
    });
  });

  srv.Get("/sessions", [&svc](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      json out = json::array();
      for (const auto& s : svc.list_sessions()) out.push_back(summary_to_json(s));
      send_json(res, 200, out);
    });
  });

  srv.Get(R"(/sessions/([^/]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.get_session(req.matches[1])); });
  });

  srv.Post(R"(/sessions/([^/]+)/decision)", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      ReviewDecision d;
      d.session_id = req.matches[1];
      d.reviewer_id = req.get_header_value("X-Reviewer-Id");
      if (d.reviewer_id.empty()) throw Error(ErrorKind::InvalidArgument, "X-Reviewer-Id header is required");
      const auto body = json::parse(req.body);
      if (!body.is_object() || !body.contains("verdict") || !body["verdict"].is_string()) {
        throw Error(ErrorKind::InvalidArgument, "body must be an object with a string verdict");
      }
      d.verdict = verdict_from_string(body["verdict"].get<std::string>());
      if (body.contains("refinement_text") && body["refinement_text"].is_string()) {
        d.refinement_text = body["refinement_text"].get<std::string>();
      }
      const int status = d.verdict == Verdict::Refine ? 202 : 200;
      send_json(res, status, summary_to_json(svc.submit_decision(std::move(d))));
    });
  });

  if (static_dir && !srv.set_mount_point("/", static_dir->string())) {
    throw Error(ErrorKind::IoError, "cannot serve static files from " + static_dir->string());
  }
}

ReviewServer::~ReviewServer() { stop(); }

int ReviewServer::start(const std::string& host, int port) {
  auto& srv = impl_->server;
  const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(ErrorKind::IoError, "cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([&srv] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  return bound;
}

void ReviewServer::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw Error(ErrorKind::IoError, "cannot listen on " + host + ":" + std::to_string(port));
}

void ReviewServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace sage
