#pragma once

// Request processing shared by the HTTP service and the CLI, plus the HTTP
// routes themselves.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "sigcloud/aggregation.hpp"
#include "sigcloud/codec.hpp"
#include "sigcloud/error.hpp"
#include "sigcloud/raster.hpp"
#include "sigcloud/store.hpp"
#include "sigcloud/verification.hpp"

namespace sigcloud {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string store = "sigstore";
  DecisionThresholds thresholds;
  AggregationOptions aggregation;
  bool learn_on_accept = true;
  int binarize_threshold = kDefaultBinarizeThreshold;
  std::optional<std::string> backup_target;  // base URL of the primary, for `backup`

  void validate() const {
    if (host.empty()) fail(ErrorCode::Validation, "listen: host is empty");
    if (port < 0 || port > 65535) fail(ErrorCode::Validation, "listen: port out of range");
    if (store.empty()) fail(ErrorCode::Validation, "store: path is empty");
    thresholds.validate();
    if (aggregation.m < 2) fail(ErrorCode::Validation, "aggregation.m must be >= 2");
    if (aggregation.profile_samples < 2) fail(ErrorCode::Validation, "aggregation.profile_samples must be >= 2");
    if (!(aggregation.neighbor_step > 0.0)) fail(ErrorCode::Validation, "aggregation.neighbor_step must be > 0");
    aggregation.sa.validate();
    if (binarize_threshold < 0 || binarize_threshold > 255) {
      fail(ErrorCode::Validation, "binarize_threshold must be in 0..255");
    }
  }

  LearningOptions learning() const { return {aggregation, learn_on_accept}; }
};

namespace detail {

template <class T>
void read_field(const nlohmann::json& j, const char* key, const std::string& path, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::Validation, path + key + ": wrong type");
  }
}

}  // namespace detail

/// Overlays the keys present in `j` onto `cfg`. Unknown keys are rejected.
inline void apply_config_json(const nlohmann::json& j, ServiceConfig& cfg) {
  if (!j.is_object()) fail(ErrorCode::Validation, "config must be a JSON object");
  static const std::set<std::string> known{"listen", "store", "thresholds", "aggregation",
                                           "learn_on_accept", "binarize_threshold", "backup_target"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) fail(ErrorCode::Validation, "unknown config field '" + key + "'");
  }
  if (j.contains("listen")) {
    std::string listen;
    detail::read_field(j, "listen", "", listen);
    const auto colon = listen.rfind(':');
    if (colon == std::string::npos) fail(ErrorCode::Validation, "listen: expected host:port");
    cfg.host = listen.substr(0, colon);
    try {
      cfg.port = std::stoi(listen.substr(colon + 1));
    } catch (const std::exception&) {
      fail(ErrorCode::Validation, "listen: invalid port");
    }
  }
  detail::read_field(j, "store", "", cfg.store);
  detail::read_field(j, "learn_on_accept", "", cfg.learn_on_accept);
  detail::read_field(j, "binarize_threshold", "", cfg.binarize_threshold);
  if (j.contains("backup_target")) {
    std::string target;
    detail::read_field(j, "backup_target", "", target);
    cfg.backup_target = target;
  }
  if (j.contains("thresholds")) {
    const auto& t = j.at("thresholds");
    if (!t.is_object()) fail(ErrorCode::Validation, "thresholds: expected an object");
    detail::read_field(t, "accept_below", "thresholds.", cfg.thresholds.accept_below);
    detail::read_field(t, "reject_at_or_above", "thresholds.", cfg.thresholds.reject_at_or_above);
  }
  if (j.contains("aggregation")) {
    const auto& a = j.at("aggregation");
    if (!a.is_object()) fail(ErrorCode::Validation, "aggregation: expected an object");
    detail::read_field(a, "m", "aggregation.", cfg.aggregation.m);
    detail::read_field(a, "profile_samples", "aggregation.", cfg.aggregation.profile_samples);
    detail::read_field(a, "neighbor_step", "aggregation.", cfg.aggregation.neighbor_step);
    if (a.contains("sa")) from_json(a.at("sa"), cfg.aggregation.sa);
  }
}

inline nlohmann::json config_to_json(const ServiceConfig& c) {
  nlohmann::json j{{"listen", c.host + ":" + std::to_string(c.port)},
                   {"store", c.store},
                   {"thresholds",
                    {{"accept_below", c.thresholds.accept_below},
                     {"reject_at_or_above", c.thresholds.reject_at_or_above}}},
                   {"aggregation",
                    {{"m", c.aggregation.m},
                     {"profile_samples", c.aggregation.profile_samples},
                     {"neighbor_step", c.aggregation.neighbor_step},
                     {"sa", c.aggregation.sa}}},
                   {"learn_on_accept", c.learn_on_accept},
                   {"binarize_threshold", c.binarize_threshold}};
  if (c.backup_target) j["backup_target"] = *c.backup_target;
  return j;
}

inline ServiceConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot read config file " + path);
  ServiceConfig cfg;
  try {
    apply_config_json(nlohmann::json::parse(in), cfg);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::Validation, std::string("config file is not valid JSON: ") + e.what());
  }
  return cfg;
}

/// Summary returned by enrollment and learning.
inline nlohmann::json template_summary(const AggregatedTemplate& tpl) {
  nlohmann::json fitness = nlohmann::json::array();
  for (const auto& v : tpl.variants) fitness.push_back(v.fitness);
  return {{"client_id", tpl.client_id},
          {"version", tpl.version},
          {"m", tpl.m},
          {"created_from", tpl.created_from},
          {"variants", tpl.variants.size()},
          {"fitness", std::move(fitness)}};
}

/// Outcome as sent to callers: escalations carry the candidate curve.
inline nlohmann::json outcome_payload(const VerificationOutcome& o) {
  return outcome_to_json(o, o.decision == Decision::Escalated);
}

/// The processing server's operations over one store. HTTP handlers and CLI
/// commands both go through this class.
class Core {
 public:
  Core(KnowledgeStore& store, ServiceConfig config) : store_(store), config_(std::move(config)) {
    config_.validate();
  }

  KnowledgeStore& store() noexcept { return store_; }
  const ServiceConfig& config() const noexcept { return config_; }

  RasterSignature decode_image(std::string_view bytes) const {
    return load_signature(bytes, config_.binarize_threshold);
  }

  AggregatedTemplate enroll(const std::string& client, std::span<const RasterSignature> signatures,
                            std::optional<std::size_t> m = std::nullopt,
                            std::optional<AnnealingConfig> sa = std::nullopt, bool reenroll = false) {
    AggregationOptions options = config_.aggregation;
    if (m) options.m = *m;
    if (sa) options.sa = *sa;
    return store_.enroll(client, signatures, options, reenroll);
  }

  VerificationOutcome verify(const std::string& client, const RasterSignature& signature) {
    const AggregatedTemplate tpl = store_.active_template(client);
    VerificationOutcome outcome =
        sigcloud::verify(signature, tpl, config_.thresholds, {}, config_.aggregation.profile_samples);
    return store_.record_verification(std::move(outcome), signature, config_.learning());
  }

  ReviewItem decide_review(const std::string& request_id, ReviewStatus decision, const std::string& supervisor) {
    return store_.decide_review(request_id, decision, supervisor, config_.aggregation);
  }

  nlohmann::json health() const {
    const HealthReport h = store_.health();
    nlohmann::json versions = nlohmann::json::object();
    for (const auto& [id, c] : h.manifest.clients) versions[id] = c.active_version;
    nlohmann::json j{{"status", h.manifest_ok ? "ok" : "degraded"},
                     {"manifest_ok", h.manifest_ok},
                     {"clients", h.manifest.clients.size()},
                     {"template_versions", std::move(versions)},
                     {"pending_reviews", h.manifest.pending_reviews()},
                     {"outcomes", h.manifest.outcomes},
                     {"snapshots", h.snapshots}};
    if (!h.manifest_ok) j["problem"] = h.problem;
    return j;
  }

 private:
  KnowledgeStore& store_;
  ServiceConfig config_;
};

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::Format:
    case ErrorCode::InsufficientData:
    case ErrorCode::Domain:
    case ErrorCode::Validation:
    case ErrorCode::EnrollmentRejected: return 400;
    case ErrorCode::NotFound: return 404;
    case ErrorCode::Conflict: return 409;
    case ErrorCode::ContractViolation: return 422;
    case ErrorCode::Network: return 502;
    case ErrorCode::Integrity:
    case ErrorCode::Io: return 500;
  }
  return 500;
}

inline nlohmann::json error_body(ErrorCode code, const std::string& message) {
  return {{"error", {{"code", to_string(code)}, {"message", message}}}};
}

/// Inverse of http_status for clients reading the error envelope.
inline ErrorCode error_code_from_body(const std::string& body, int status) {
  try {
    const auto j = nlohmann::json::parse(body);
    const std::string code = j.at("error").at("code").get<std::string>();
    for (ErrorCode c : {ErrorCode::Format, ErrorCode::InsufficientData, ErrorCode::Domain, ErrorCode::Validation,
                        ErrorCode::EnrollmentRejected, ErrorCode::Conflict, ErrorCode::NotFound,
                        ErrorCode::Integrity, ErrorCode::ContractViolation, ErrorCode::Io, ErrorCode::Network}) {
      if (to_string(c) == code) return c;
    }
  } catch (const std::exception&) {
  }
  if (status == 404) return ErrorCode::NotFound;
  if (status == 409) return ErrorCode::Conflict;
  if (status >= 400 && status < 500) return ErrorCode::Validation;
  return ErrorCode::Network;
}

namespace detail {

inline nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object()) fail(ErrorCode::Validation, "request body must be a JSON object");
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::Validation, std::string("request body is not valid JSON: ") + e.what());
  }
}

inline void reply(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <class F>
httplib::Server::Handler guarded(F&& f) {
  return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      reply(res, http_status(e.code()), error_body(e.code(), e.what()));
    } catch (const nlohmann::json::exception& e) {
      reply(res, 400, error_body(ErrorCode::Validation, e.what()));
    } catch (const std::exception& e) {
      reply(res, 500, error_body(ErrorCode::Io, e.what()));
    }
  };
}

inline thread_local std::chrono::steady_clock::time_point request_start;

}  // namespace detail

/// Installs every endpoint on `server`. Request logs (one JSON object per
/// line) go to `log` when it is non-null.
inline void install_routes(httplib::Server& server, Core& core, std::ostream* log = nullptr) {
  using detail::guarded;
  using detail::parse_body;
  using detail::reply;

  auto log_mutex = std::make_shared<std::mutex>();
  server.set_pre_routing_handler([](const httplib::Request&, httplib::Response&) {
    detail::request_start = std::chrono::steady_clock::now();
    return httplib::Server::HandlerResponse::Unhandled;
  });
  if (log) {
    server.set_logger([log, log_mutex](const httplib::Request& req, const httplib::Response& res) {
      const double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - detail::request_start).count();
      nlohmann::json line{{"method", req.method}, {"path", req.path}, {"status", res.status}, {"latency_ms", ms}};
      if (res.has_header("X-Request-Id")) line["request_id"] = res.get_header_value("X-Request-Id");
      std::lock_guard lock(*log_mutex);
      *log << line.dump() << '\n' << std::flush;
    });
  }

  server.Post(R"(/clients/([^/]+)/enroll)", guarded([&core](const httplib::Request& req, httplib::Response& res) {
    const std::string client = req.matches[1];
    const auto body = parse_body(req);
    if (!body.contains("signatures") || !body.at("signatures").is_array()) {
      fail(ErrorCode::Validation, "body.signatures must be an array of base64 PBM images");
    }
    std::vector<RasterSignature> sigs;
    for (const auto& s : body.at("signatures")) sigs.push_back(core.decode_image(base64_decode(s.get<std::string>())));
    std::optional<std::size_t> m;
    if (body.contains("m")) m = body.at("m").get<std::size_t>();
    std::optional<AnnealingConfig> sa;
    if (body.contains("sa")) {
      AnnealingConfig cfg = core.config().aggregation.sa;
      from_json(body.at("sa"), cfg);
      sa = cfg;
    }
    const bool reenroll = body.value("reenroll", false);
    reply(res, 201, template_summary(core.enroll(client, sigs, m, sa, reenroll)));
  }));

  server.Post(R"(/clients/([^/]+)/verify)", guarded([&core](const httplib::Request& req, httplib::Response& res) {
    const std::string client = req.matches[1];
    const auto body = parse_body(req);
    if (!body.contains("signature") || !body.at("signature").is_string()) {
      fail(ErrorCode::Validation, "body.signature must be a base64 PBM image");
    }
    const auto outcome = core.verify(client, core.decode_image(base64_decode(body.at("signature").get<std::string>())));
    res.set_header("X-Request-Id", outcome.request_id);
    reply(res, 200, outcome_payload(outcome));
  }));

  server.Get(R"(/clients/([^/]+)/template)", guarded([&core](const httplib::Request& req, httplib::Response& res) {
    reply(res, 200, nlohmann::json(core.store().active_template(req.matches[1])));
  }));

  server.Get(R"(/clients/([^/]+)/enrollment/(\d+))",
             guarded([&core](const httplib::Request& req, httplib::Response& res) {
               const auto n = static_cast<std::size_t>(std::stoul(req.matches[2]));
               res.status = 200;
               res.set_content(core.store().enrollment_image(req.matches[1], n), "image/x-portable-bitmap");
             }));

  server.Get("/reviews", guarded([&core](const httplib::Request& req, httplib::Response& res) {
    std::optional<ReviewStatus> status;
    if (req.has_param("status")) status = review_status_from_string(req.get_param_value("status"));
    nlohmann::json items = nlohmann::json::array();
    for (const auto& r : core.store().reviews(status)) items.push_back(review_to_json(r, false));
    reply(res, 200, {{"reviews", std::move(items)}});
  }));

  server.Get(R"(/reviews/([^/]+))", guarded([&core](const httplib::Request& req, httplib::Response& res) {
    const ReviewItem item = core.store().review(req.matches[1]);
    reply(res, 200,
          {{"review", review_to_json(item, false)},
           {"thresholds",
            {{"accept_below", core.config().thresholds.accept_below},
             {"reject_at_or_above", core.config().thresholds.reject_at_or_above}}},
           {"template", nlohmann::json(core.store().template_version(item.client_id, item.template_version))}});
  }));

  server.Post(R"(/reviews/([^/]+))", guarded([&core](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    const std::string decision = body.value("decision", "");
    ReviewStatus status;
    if (decision == "approve") {
      status = ReviewStatus::Approved;
    } else if (decision == "deny") {
      status = ReviewStatus::Denied;
    } else {
      fail(ErrorCode::Validation, "body.decision must be \"approve\" or \"deny\"");
    }
    const ReviewItem item = core.decide_review(req.matches[1], status, body.value("supervisor", ""));
    res.set_header("X-Request-Id", item.request_id);
    reply(res, 200,
          {{"review", review_to_json(item, false)},
           {"template_version", core.store().active_template(item.client_id).version}});
  }));

  server.Post("/admin/snapshot", guarded([&core](const httplib::Request&, httplib::Response& res) {
    reply(res, 201, {{"snapshot_id", core.store().snapshot()}});
  }));

  server.Post("/admin/restore", guarded([&core](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    const std::string id = body.value("snapshot_id", "");
    core.store().restore(id);
    reply(res, 200, {{"restored", id}});
  }));

  server.Get("/admin/snapshots", guarded([&core](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, {{"snapshots", core.store().snapshots()}});
  }));

  server.Get(R"(/admin/snapshots/([^/]+))", guarded([&core](const httplib::Request& req, httplib::Response& res) {
    reply(res, 200, bundle_to_json(core.store().export_snapshot(req.matches[1])));
  }));

  server.Post("/admin/import", guarded([&core](const httplib::Request& req, httplib::Response& res) {
    reply(res, 201, {{"snapshot_id", core.store().import_snapshot(bundle_from_json(parse_body(req)))}});
  }));

  server.Get("/healthz", guarded([&core](const httplib::Request&, httplib::Response& res) {
    auto h = core.health();
    reply(res, h.at("manifest_ok").get<bool>() ? 200 : 503, h);
  }));

  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      const ErrorCode code = res.status == 404 ? ErrorCode::NotFound : ErrorCode::Validation;
      detail::reply(res, res.status, error_body(code, "no such endpoint"));
    }
  });
}

}  // namespace sigcloud
