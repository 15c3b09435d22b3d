#include <httplib.h>
#include <json.hpp>

#include "vrcli/annotation.h"
#include "vrcli/errors.h"

namespace vrcli {

using nlohmann::json;

struct AnnotationServer::Impl {
  Impl(AnnotationStore& s, ServerOptions o) : store(s), options(std::move(o)) {}

  AnnotationStore& store;
  ServerOptions options;
  httplib::Server server;
  std::thread thread;
  int port = 0;

  void routes();
  int bind();
};

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

}  // namespace

void AnnotationServer::Impl::routes() {
  server.Get("/api/task", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string annotator = req.get_param_value("annotator");
    if (annotator.empty()) return reply(res, 400, {{"error", "missing annotator parameter"}});
    const auto task = store.next_task(annotator);
    if (!task) {
      res.status = 204;
      res.set_header("Retry-After", "60");
      return;
    }
    res.status = 200;
    res.set_content(task_view_json(*task), "application/json");
  });

  server.Post("/api/submission", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const QualityFlags flags = store.submit(submission_from_json(req.body));
      reply(res, 200, {{"status", "ok"},
                       {"flags", {{"short_duration", flags.short_duration},
                                  {"short_justification", flags.short_justification}}}});
    } catch (const NotFoundError& e) {
      reply(res, 404, {{"error", e.what()}});
    } catch (const ConflictError& e) {
      reply(res, 409, {{"error", e.what()}});
    } catch (const std::invalid_argument& e) {
      reply(res, 400, {{"error", e.what()}});
    }
  });

  server.Get("/api/export", [this](const httplib::Request& req, httplib::Response& res) {
    const bool strict = req.get_param_value("quality") == "strict";
    const ExportResult ex = store.export_judgments(strict);
    json arr = json::array();
    for (const auto& j : ex.judgments) arr.push_back(json::parse(judgment_to_json(j)));
    reply(res, 200, {{"judgments", arr},
                     {"submissions", ex.submissions},
                     {"excluded_submissions", ex.excluded_submissions}});
  });

  server.Get("/api/progress", [this](const httplib::Request&, httplib::Response& res) {
    const Progress p = store.progress();
    reply(res, 200, {{"tasks", p.tasks},
                     {"completed_tasks", p.completed_tasks},
                     {"submissions", p.submissions},
                     {"flagged_submissions", p.flagged_submissions},
                     {"active_leases", p.active_leases}});
  });

  if (!options.static_dir.empty() && std::filesystem::is_directory(options.static_dir))
    server.set_mount_point("/", options.static_dir.string());
}

int AnnotationServer::Impl::bind() {
  routes();
  if (options.port == 0) {
    port = server.bind_to_any_port(options.host);
  } else {
    port = server.bind_to_port(options.host, options.port) ? options.port : -1;
  }
  if (port <= 0)
    throw InvalidArgument("cannot bind " + options.host + ":" + std::to_string(options.port));
  return port;
}

AnnotationServer::AnnotationServer(AnnotationStore& store, ServerOptions options)
    : impl_(std::make_unique<Impl>(store, std::move(options))) {}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::start() {
  const int port = impl_->bind();
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void AnnotationServer::run() {
  impl_->bind();
  impl_->server.listen_after_bind();
}

void AnnotationServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace vrcli
