// sigcloud: command-line front end for the signature verification service.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "sigcloud/demo.hpp"
#include "sigcloud/service.hpp"

namespace {

using namespace sigcloud;
using nlohmann::json;

enum Exit : int {
  kOk = 0,
  kUsage = 1,
  kInvalidInput = 2,
  kNotFound = 3,
  kConflict = 4,
  kStoreError = 5,
  kNetworkError = 6,
};

constexpr const char* kExitCodes =
    "Exit codes:\n"
    "  0  success\n"
    "  1  usage error or unexpected failure\n"
    "  2  invalid input (bad image, bad config, contract violation)\n"
    "  3  not found (client not enrolled, unknown review or snapshot)\n"
    "  4  conflict (already enrolled, review already decided)\n"
    "  5  store failure (integrity or I/O)\n"
    "  6  network failure talking to --server\n";

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::Format:
    case ErrorCode::InsufficientData:
    case ErrorCode::Domain:
    case ErrorCode::Validation:
    case ErrorCode::EnrollmentRejected:
    case ErrorCode::ContractViolation: return kInvalidInput;
    case ErrorCode::NotFound: return kNotFound;
    case ErrorCode::Conflict: return kConflict;
    case ErrorCode::Integrity:
    case ErrorCode::Io: return kStoreError;
    case ErrorCode::Network: return kNetworkError;
  }
  return kUsage;
}

struct Options {
  std::string store;
  std::string config_file;
  std::string server;
  bool json_output = false;
  std::optional<double> accept_below;
  std::optional<double> reject_at;
};

ServiceConfig make_config(const Options& o) {
  ServiceConfig cfg = o.config_file.empty() ? ServiceConfig{} : load_config_file(o.config_file);
  if (!o.store.empty()) cfg.store = o.store;
  if (o.accept_below) cfg.thresholds.accept_below = *o.accept_below;
  if (o.reject_at) cfg.thresholds.reject_at_or_above = *o.reject_at;
  cfg.validate();
  return cfg;
}

std::string read_image(const std::string& path) { return sigcloud::detail::read_file(path); }

// Talks to a running service. Errors come back as sigcloud::Error.
class Remote {
 public:
  explicit Remote(const std::string& url) : client_(url) {
    client_.set_connection_timeout(5);
    client_.set_read_timeout(120);
  }

  json get(const std::string& path) { return check(client_.Get(path), path); }

  json post(const std::string& path, const json& body) {
    return check(client_.Post(path, body.dump(), "application/json"), path);
  }

 private:
  json check(const httplib::Result& r, const std::string& path) {
    if (!r) fail(ErrorCode::Network, "request to " + path + " failed: " + httplib::to_string(r.error()));
    if (r->status >= 400) {
      std::string message = r->body;
      try {
        message = json::parse(r->body).at("error").at("message").get<std::string>();
      } catch (const std::exception&) {
      }
      fail(error_code_from_body(r->body, r->status), message);
    }
    return json::parse(r->body);
  }

  httplib::Client client_;
};

void emit(const Options& o, const json& payload, const std::string& human) {
  if (o.json_output) {
    std::cout << payload.dump() << '\n';
  } else {
    std::cout << human << '\n';
  }
}

std::string outcome_line(const json& o) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", o.at("score").get<double>());
  return o.at("request_id").get<std::string>() + " " + o.at("decision").get<std::string>() + " score=" + buf +
         " variant=" + std::to_string(o.at("variant").get<std::size_t>()) +
         " template_version=" + std::to_string(o.at("template_version").get<std::uint64_t>());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Signature enrollment and verification against aggregated templates"};
  app.footer(kExitCodes);
  app.require_subcommand(1);

  Options opt;
  app.add_option("--store", opt.store, "Knowledge store directory (default: ./sigstore)");
  app.add_option("--config", opt.config_file, "JSON config file");
  app.add_option("--server", opt.server, "Send requests to a running service at this base URL");
  app.add_flag("--json", opt.json_output, "Print machine-readable JSON");
  app.add_option("--accept-below", opt.accept_below, "Accept threshold override");
  app.add_option("--reject-at", opt.reject_at, "Reject threshold override");

  std::string client;
  std::vector<std::string> images;
  std::optional<std::size_t> m;
  bool reenroll = false;
  auto* enroll = app.add_subcommand("enroll", "Enroll a client from signature images (PBM/PGM)");
  enroll->add_option("client", client, "Client id")->required();
  enroll->add_option("images", images, "Signature images")->required();
  enroll->add_option("--m", m, "Basis point count");
  enroll->add_flag("--reenroll", reenroll, "Replace an existing enrollment");

  std::string image;
  auto* verify = app.add_subcommand("verify", "Verify a signature against a client's template");
  verify->add_option("client", client, "Client id")->required();
  verify->add_option("image", image, "Signature image")->required();

  auto* tmpl = app.add_subcommand("template", "Print a client's active template");
  tmpl->add_option("client", client, "Client id")->required();

  auto* reviews = app.add_subcommand("reviews", "Supervisor review queue");
  reviews->require_subcommand(1);
  std::string status_filter = "pending";
  auto* reviews_list = reviews->add_subcommand("list", "List reviews");
  reviews_list->add_option("--status", status_filter, "pending|approved|denied|all")
      ->check(CLI::IsMember({"pending", "approved", "denied", "all"}));
  std::string request_id;
  std::string supervisor;
  auto* approve = reviews->add_subcommand("approve", "Approve an escalated verification");
  approve->add_option("request_id", request_id)->required();
  approve->add_option("--supervisor", supervisor, "Supervisor id")->required();
  auto* deny = reviews->add_subcommand("deny", "Deny an escalated verification");
  deny->add_option("request_id", request_id)->required();
  deny->add_option("--supervisor", supervisor, "Supervisor id")->required();

  auto* snapshot = app.add_subcommand("snapshot", "Snapshot the store");
  auto* snapshots = app.add_subcommand("snapshots", "List snapshots");
  std::string snapshot_id;
  auto* restore = app.add_subcommand("restore", "Restore the store from a snapshot");
  restore->add_option("snapshot_id", snapshot_id)->required();

  std::string backup_from;
  auto* backup = app.add_subcommand("backup", "Pull a fresh snapshot from a primary service and restore it here");
  backup->add_option("--from", backup_from, "Primary base URL (default: backup_target from config)");

  std::string listen;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--listen", listen, "host:port (port 0 picks a free port)");

  std::string demo_out = "demo-output";
  DemoOptions demo_opt;
  auto* demo = app.add_subcommand("demo", "Render the enrollment pipeline on synthetic signatures");
  demo->add_option("--out", demo_out, "Output directory");
  demo->add_option("--samples", demo_opt.samples, "Number of synthetic signatures")->check(CLI::Range(1, 50));
  demo->add_option("--seed", demo_opt.seed, "Synthetic signature seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    ServiceConfig cfg = make_config(opt);

    if (*demo) {
      demo_opt.aggregation = cfg.aggregation;
      const json summary = run_demo(demo_out, demo_opt);
      emit(opt, summary,
           "wrote " + std::to_string(summary.at("files").size()) + " files to " + demo_out + " (" +
               std::to_string(summary.at("variants").get<std::size_t>()) + " variants)");
      return kOk;
    }

    if (*backup) {
      const std::string from = backup_from.empty() ? cfg.backup_target.value_or("") : backup_from;
      if (from.empty()) fail(ErrorCode::Validation, "backup needs --from or backup_target in the config");
      Remote primary(from);
      const std::string id = primary.post("/admin/snapshot", json::object()).at("snapshot_id").get<std::string>();
      const SnapshotBundle bundle = bundle_from_json(primary.get("/admin/snapshots/" + id));
      KnowledgeStore store(cfg.store);
      store.import_snapshot(bundle);
      store.restore(id);
      emit(opt, {{"restored", id}, {"from", from}}, "restored " + id + " from " + from);
      return kOk;
    }

    if (!opt.server.empty()) {
      Remote remote(opt.server);
      if (*enroll) {
        json body{{"signatures", json::array()}, {"reenroll", reenroll}};
        for (const auto& path : images) body["signatures"].push_back(base64_encode(read_image(path)));
        if (m) body["m"] = *m;
        const json r = remote.post("/clients/" + client + "/enroll", body);
        emit(opt, r, "enrolled " + client + " template v" + std::to_string(r.at("version").get<std::uint64_t>()));
      } else if (*verify) {
        const json r = remote.post("/clients/" + client + "/verify", {{"signature", base64_encode(read_image(image))}});
        emit(opt, r, outcome_line(r));
      } else if (*tmpl) {
        const json r = remote.get("/clients/" + client + "/template");
        emit(opt, r, r.dump(2));
      } else if (*reviews_list) {
        const json r = remote.get(status_filter == "all" ? "/reviews" : "/reviews?status=" + status_filter);
        std::string human;
        for (const auto& item : r.at("reviews")) {
          human += item.at("request_id").get<std::string>() + " " + item.at("client_id").get<std::string>() + " " +
                   item.at("status").get<std::string>() + "\n";
        }
        emit(opt, r, human.empty() ? "no reviews" : human.substr(0, human.size() - 1));
      } else if (*approve || *deny) {
        const json r = remote.post("/reviews/" + request_id,
                                   {{"decision", *approve ? "approve" : "deny"}, {"supervisor", supervisor}});
        emit(opt, r, request_id + " " + r.at("review").at("status").get<std::string>());
      } else if (*snapshot) {
        const json r = remote.post("/admin/snapshot", json::object());
        emit(opt, r, r.at("snapshot_id").get<std::string>());
      } else if (*snapshots) {
        const json r = remote.get("/admin/snapshots");
        std::string human;
        for (const auto& s : r.at("snapshots")) human += s.get<std::string>() + "\n";
        emit(opt, r, human.empty() ? "no snapshots" : human.substr(0, human.size() - 1));
      } else if (*restore) {
        const json r = remote.post("/admin/restore", {{"snapshot_id", snapshot_id}});
        emit(opt, r, "restored " + snapshot_id);
      } else {
        fail(ErrorCode::Validation, "this command cannot run against --server");
      }
      return kOk;
    }

    if (*serve) {
      if (!listen.empty()) apply_config_json({{"listen", listen}}, cfg);
      KnowledgeStore store(cfg.store);
      Core core(store, cfg);
      httplib::Server server;
      install_routes(server, core, &std::cerr);
      int port = cfg.port;
      if (port == 0) {
        port = server.bind_to_any_port(cfg.host);
      } else if (!server.bind_to_port(cfg.host, port)) {
        port = -1;
      }
      if (port < 0) fail(ErrorCode::Network, "cannot listen on " + cfg.host + ":" + std::to_string(cfg.port));
      std::cerr << json{{"event", "listening"}, {"host", cfg.host}, {"port", port}, {"store", cfg.store}}.dump()
                << std::endl;
      server.listen_after_bind();
      return kOk;
    }

    KnowledgeStore store(cfg.store);
    Core core(store, cfg);

    if (*enroll) {
      std::vector<RasterSignature> sigs;
      for (const auto& path : images) sigs.push_back(core.decode_image(read_image(path)));
      const auto tpl = core.enroll(client, sigs, m, std::nullopt, reenroll);
      emit(opt, template_summary(tpl), "enrolled " + client + " template v" + std::to_string(tpl.version));
    } else if (*verify) {
      const json r = outcome_payload(core.verify(client, core.decode_image(read_image(image))));
      emit(opt, r, outcome_line(r));
    } else if (*tmpl) {
      const json r = store.active_template(client);
      emit(opt, r, r.dump(2));
    } else if (*reviews_list) {
      std::optional<ReviewStatus> status;
      if (status_filter != "all") status = review_status_from_string(status_filter);
      json items = json::array();
      std::string human;
      for (const auto& item : store.reviews(status)) {
        items.push_back(review_to_json(item, false));
        char score[32];
        std::snprintf(score, sizeof score, "%.6f", item.score);
        human += item.request_id + " " + item.client_id + " " + std::string(to_string(item.status)) +
                 " score=" + score + " submitted_at=" + item.submitted_at + "\n";
      }
      emit(opt, {{"reviews", items}}, human.empty() ? "no reviews" : human.substr(0, human.size() - 1));
    } else if (*approve || *deny) {
      const auto item =
          core.decide_review(request_id, *approve ? ReviewStatus::Approved : ReviewStatus::Denied, supervisor);
      const json r{{"review", review_to_json(item, false)},
                   {"template_version", store.active_template(item.client_id).version}};
      emit(opt, r, request_id + " " + std::string(to_string(item.status)));
    } else if (*snapshot) {
      const std::string id = store.snapshot();
      emit(opt, {{"snapshot_id", id}}, id);
    } else if (*snapshots) {
      const auto ids = store.snapshots();
      std::string human;
      for (const auto& s : ids) human += s + "\n";
      emit(opt, {{"snapshots", ids}}, human.empty() ? "no snapshots" : human.substr(0, human.size() - 1));
    } else if (*restore) {
      store.restore(snapshot_id);
      emit(opt, {{"restored", snapshot_id}}, "restored " + snapshot_id);
    }
    return kOk;
  } catch (const Error& e) {
    if (opt.json_output) std::cout << error_body(e.code(), e.what()).dump() << '\n';
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    if (opt.json_output) std::cout << error_body(ErrorCode::Io, e.what()).dump() << '\n';
    std::cerr << "error: " << e.what() << '\n';
    return kStoreError;
  }
}
