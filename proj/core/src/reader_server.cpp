#include "bpeq/reader_server.hpp"

#include <httplib.h>

#include <charconv>
#include <thread>

namespace bpeq {

using nlohmann::json;

namespace {

void send_error(httplib::Response& res, int status, const std::string& error, const std::string& rule = {}) {
  json body = {{"error", error}};
  if (!rule.empty()) body["rule"] = rule;
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

bool tokens_equal(const std::string& a, const std::string& b) {
  unsigned char diff = a.size() == b.size() ? 0 : 1;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff |= static_cast<unsigned char>(a[i] ^ (i < b.size() ? b[i] : 0));
  }
  return diff == 0;
}

}  // namespace

struct ReaderServer::Impl {
  ReaderStudy& study;
  httplib::Server server;
  std::thread thread;
  bool bound = false;

  explicit Impl(ReaderStudy& s) : study(s) { install_routes(); }

  void install_routes() {
    server.Get("/api/cases", [this](const httplib::Request&, httplib::Response& res) {
      json cases = json::array();
      for (const auto& c : study.cases()) {
        cases.push_back({{"case_id", c.case_id}, {"slices", c.slices}, {"width", c.width}, {"height", c.height}});
      }
      res.set_content(json{{"cases", cases}, {"layers", {"original", "middle", "right"}}}.dump(),
                      "application/json");
    });

    server.Get(R"(/api/case/([^/]+)/slice/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string case_id = req.matches[1];
      const std::string z_text = req.matches[2];
      std::int64_t z = 0;
      const auto [end, ec] = std::from_chars(z_text.data(), z_text.data() + z_text.size(), z);
      if (ec != std::errc() || end != z_text.data() + z_text.size()) {
        send_error(res, 404, "slice out of range");
        return;
      }
      try {
        const Layer layer = parse_layer(req.has_param("layer") ? req.get_param_value("layer") : "original");
        res.set_content(encode_png(study.render_slice(case_id, layer, z)), "image/png");
      } catch (const NotFound& e) {
        send_error(res, 404, e.what());
      }
    });

    server.Post("/api/score", [this](const httplib::Request& req, httplib::Response& res) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::parse_error&) {
        send_error(res, 400, "request body is not valid JSON", rules::kMalformed);
        return;
      }
      try {
        const StoredRecord stored = study.submit(ReaderRecord::from_json(body));
        res.status = 201;
        res.set_content(json{{"record_id", stored.sequence}, {"version", stored.version}}.dump(),
                        "application/json");
      } catch (const ValidationError& e) {
        send_error(res, e.rule() == rules::kUnknownCase ? 404 : 422, "validation failed", e.rule());
      }
    });

    server.Get("/api/export", [this](const httplib::Request& req, httplib::Response& res) {
      if (!tokens_equal(req.get_header_value("X-Study-Token"), study.config().token)) {
        send_error(res, 401, "missing or invalid study token");
        return;
      }
      res.set_content(study.export_csv(), "text/csv");
    });

    // Internal details (file paths can carry method names) never reach the
    // client.
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
      send_error(res, 500, "internal error");
    });
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) {
        send_error(res, res.status, res.status == 404 ? "not found" : "request failed");
      }
    });
  }
};

ReaderServer::ReaderServer(ReaderStudy& study) : impl_(std::make_unique<Impl>(study)) {}

ReaderServer::~ReaderServer() { stop(); }

int ReaderServer::bind(const std::string& host, int port) {
  int bound_port = port;
  if (port == 0) {
    bound_port = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound_port = -1;
  }
  if (bound_port <= 0) {
    throw IoError("cannot listen on " + host + ":" + std::to_string(port));
  }
  impl_->bound = true;
  return bound_port;
}

void ReaderServer::serve() {
  if (!impl_->bound) throw InvalidArgument("ReaderServer::serve before bind");
  impl_->server.listen_after_bind();
}

void ReaderServer::start() {
  if (!impl_->bound) throw InvalidArgument("ReaderServer::start before bind");
  impl_->thread = std::thread([this]() { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void ReaderServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace bpeq
