#include <gtest/gtest.h>

#include <atomic>
#include <sstream>
#include <thread>
#include <unistd.h>

#include "sigcloud/codec.hpp"
#include "sigcloud/service.hpp"
#include "sigcloud/synthetic.hpp"

using namespace sigcloud;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path temp_path() {
  static std::atomic<int> counter{0};
  auto p = fs::temp_directory_path() /
           ("sigcloud-service-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(p);
  return p;
}

std::string encoded(const RasterSignature& sig) { return base64_encode(save_pbm(sig, false)); }

json enroll_body(std::uint64_t first_seed, const synthetic::Style& style = {}) {
  json sigs = json::array();
  for (std::uint64_t s = 0; s < 3; ++s) sigs.push_back(encoded(synthetic::render(style, first_seed + s)));
  return {{"signatures", sigs}, {"sa", {{"it", 30}}}};
}

class Server {
 public:
  explicit Server(ServiceConfig cfg = {}) : dir_(temp_path()), store_(dir_), core_(store_, std::move(cfg)) {
    install_routes(server_, core_, &log_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~Server() {
    server_.stop();
    thread_.join();
    fs::remove_all(dir_);
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(60);
    return c;
  }
  httplib::Result post(const std::string& path, const json& body) const {
    return client().Post(path, body.dump(), "application/json");
  }
  httplib::Result get(const std::string& path) const { return client().Get(path); }

  KnowledgeStore& store() { return store_; }
  std::string log() const { return log_.str(); }

 private:
  fs::path dir_;
  KnowledgeStore store_;
  Core core_;
  httplib::Server server_;
  std::ostringstream log_;
  int port_ = 0;
  std::thread thread_;
};

std::string error_code_of(const httplib::Result& r) { return json::parse(r->body).at("error").at("code"); }

ServiceConfig escalate_everything() {
  ServiceConfig cfg;
  cfg.thresholds = {0.0, 10.0};
  return cfg;
}

}  // namespace

TEST(Config, ParsesAllFields) {
  ServiceConfig cfg;
  apply_config_json(json::parse(R"({
    "listen": "0.0.0.0:9000", "store": "/tmp/x",
    "thresholds": {"accept_below": 0.05, "reject_at_or_above": 0.2},
    "aggregation": {"m": 24, "sa": {"t0": 2.0, "it": 10}},
    "learn_on_accept": false, "binarize_threshold": 100
  })"),
                    cfg);
  EXPECT_EQ(cfg.host, "0.0.0.0");
  EXPECT_EQ(cfg.port, 9000);
  EXPECT_EQ(cfg.thresholds.reject_at_or_above, 0.2);
  EXPECT_EQ(cfg.aggregation.m, 24u);
  EXPECT_EQ(cfg.aggregation.sa.t0, 2.0);
  EXPECT_EQ(cfg.aggregation.sa.r, AnnealingConfig{}.r);
  EXPECT_FALSE(cfg.learn_on_accept);
  ServiceConfig again;
  apply_config_json(config_to_json(cfg), again);
  EXPECT_EQ(config_to_json(again), config_to_json(cfg));
}

TEST(Config, ErrorsNameTheField) {
  const auto message_for = [](const char* text) -> std::string {
    ServiceConfig cfg;
    try {
      apply_config_json(json::parse(text), cfg);
      cfg.validate();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::Validation);
      return e.what();
    }
    return "";
  };
  EXPECT_NE(message_for(R"({"aggregation": {"sa": {"r": 1.5}}})").find("r"), std::string::npos);
  EXPECT_NE(message_for(R"({"thresholds": {"accept_below": "low"}})").find("thresholds.accept_below"),
            std::string::npos);
  EXPECT_NE(message_for(R"({"thresholds": {"accept_below": 0.5, "reject_at_or_above": 0.1}})")
                .find("thresholds.accept_below"),
            std::string::npos);
  EXPECT_NE(message_for(R"({"listen": "nohost"})").find("listen"), std::string::npos);
  EXPECT_NE(message_for(R"({"colour": 1})").find("colour"), std::string::npos);
  EXPECT_NE(message_for(R"({"aggregation": {"m": 1}})").find("m"), std::string::npos);
}

TEST(HttpStatus, Mapping) {
  EXPECT_EQ(http_status(ErrorCode::Format), 400);
  EXPECT_EQ(http_status(ErrorCode::Validation), 400);
  EXPECT_EQ(http_status(ErrorCode::NotFound), 404);
  EXPECT_EQ(http_status(ErrorCode::Conflict), 409);
  EXPECT_EQ(http_status(ErrorCode::ContractViolation), 422);
  EXPECT_EQ(error_code_from_body(error_body(ErrorCode::Conflict, "x").dump(), 409), ErrorCode::Conflict);
}

TEST(Http, EnrollVerifyAndTemplate) {
  Server srv;
  auto r = srv.post("/clients/alice/enroll", enroll_body(10));
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 201) << r->body;
  const auto summary = json::parse(r->body);
  EXPECT_EQ(summary.at("version"), 1);
  EXPECT_EQ(summary.at("variants"), 4);

  r = srv.post("/clients/alice/verify", {{"signature", encoded(synthetic::render(synthetic::Style{}, 10))}});
  ASSERT_EQ(r->status, 200) << r->body;
  const auto outcome = json::parse(r->body);
  EXPECT_EQ(outcome.at("decision"), "accepted");
  EXPECT_EQ(outcome.at("request_id"), "req-00000001");
  EXPECT_EQ(r->get_header_value("X-Request-Id"), "req-00000001");
  EXPECT_FALSE(outcome.contains("candidate_curve"));

  synthetic::Style forged;
  forged.freq1 = 2.1;
  forged.phase1 = 0.9;
  r = srv.post("/clients/alice/verify", {{"signature", encoded(synthetic::render(forged, 11))}});
  EXPECT_EQ(json::parse(r->body).at("decision"), "rejected");

  r = srv.get("/clients/alice/template");
  ASSERT_EQ(r->status, 200);
  EXPECT_EQ(json::parse(r->body).get<AggregatedTemplate>(), srv.store().active_template("alice"));

  r = srv.get("/clients/alice/enrollment/1");
  ASSERT_EQ(r->status, 200);
  EXPECT_EQ(load_pbm(r->body), synthetic::render(synthetic::Style{}, 10));

  const auto log = srv.log();
  EXPECT_NE(log.find(R"("path":"/clients/alice/verify")"), std::string::npos);
  EXPECT_NE(log.find(R"("request_id":"req-00000001")"), std::string::npos);
}

TEST(Http, ErrorEnvelope) {
  Server srv;
  auto r = srv.post("/clients/ghost/verify", {{"signature", encoded(synthetic::render(synthetic::Style{}, 1))}});
  EXPECT_EQ(r->status, 404);
  EXPECT_EQ(error_code_of(r), "not_found");

  r = srv.client().Post("/clients/alice/enroll", "{not json", "application/json");
  EXPECT_EQ(r->status, 400);
  r = srv.post("/clients/alice/enroll", {{"signatures", {base64_encode("P1\n2 2\n1")}}});
  EXPECT_EQ(r->status, 400);
  EXPECT_EQ(error_code_of(r), "format_error");

  ASSERT_EQ(srv.post("/clients/alice/enroll", enroll_body(10))->status, 201);
  r = srv.post("/clients/alice/enroll", enroll_body(20));
  EXPECT_EQ(r->status, 409);
  EXPECT_EQ(error_code_of(r), "conflict");
  auto again = enroll_body(20);
  again["reenroll"] = true;
  EXPECT_EQ(srv.post("/clients/alice/enroll", again)->status, 201);

  r = srv.post("/clients/alice/verify", {{"signature", encoded(RasterSignature(30, 30))}});
  EXPECT_EQ(r->status, 400);

  r = srv.get("/no/such/thing");
  EXPECT_EQ(r->status, 404);
  EXPECT_TRUE(json::parse(r->body).contains("error"));
}

TEST(Http, EscalationCreatesOnePendingReviewAndDoubleDecisionConflicts) {
  Server srv(escalate_everything());
  ASSERT_EQ(srv.post("/clients/alice/enroll", enroll_body(10))->status, 201);
  auto r = srv.post("/clients/alice/verify", {{"signature", encoded(synthetic::render(synthetic::Style{}, 40))}});
  const auto outcome = json::parse(r->body);
  ASSERT_EQ(outcome.at("decision"), "escalated");
  EXPECT_TRUE(outcome.contains("candidate_curve"));
  const std::string id = outcome.at("request_id");

  r = srv.get("/reviews?status=pending");
  const auto list = json::parse(r->body).at("reviews");
  ASSERT_EQ(list.size(), 1u);
  EXPECT_EQ(list[0].at("request_id"), id);

  r = srv.get("/reviews/" + id);
  ASSERT_EQ(r->status, 200);
  const auto detail = json::parse(r->body);
  EXPECT_EQ(detail.at("review").at("candidate_curve").size(), kDefaultProfileSamples);
  EXPECT_EQ(detail.at("template").at("version"), 1);
  EXPECT_EQ(detail.at("thresholds").at("reject_at_or_above"), 10.0);

  EXPECT_EQ(srv.post("/reviews/" + id, {{"decision", "maybe"}, {"supervisor", "s"}})->status, 400);
  EXPECT_EQ(srv.post("/reviews/" + id, {{"decision", "approve"}})->status, 400);

  r = srv.post("/reviews/" + id, {{"decision", "approve"}, {"supervisor", "sup-1"}});
  ASSERT_EQ(r->status, 200) << r->body;
  EXPECT_EQ(json::parse(r->body).at("template_version"), 2);
  r = srv.post("/reviews/" + id, {{"decision", "deny"}, {"supervisor", "sup-2"}});
  EXPECT_EQ(r->status, 409);
  EXPECT_EQ(error_code_of(r), "conflict");
  EXPECT_EQ(srv.post("/reviews/req-77777777", {{"decision", "deny"}, {"supervisor", "s"}})->status, 404);
  EXPECT_TRUE(json::parse(srv.get("/reviews?status=pending")->body).at("reviews").empty());
}

TEST(Http, HealthAndSnapshots) {
  Server srv;
  auto r = srv.get("/healthz");
  ASSERT_EQ(r->status, 200);
  EXPECT_EQ(json::parse(r->body).at("status"), "ok");

  ASSERT_EQ(srv.post("/clients/alice/enroll", enroll_body(10))->status, 201);
  r = srv.post("/admin/snapshot", json::object());
  ASSERT_EQ(r->status, 201);
  const std::string id = json::parse(r->body).at("snapshot_id");
  EXPECT_EQ(json::parse(srv.get("/admin/snapshots")->body).at("snapshots"), json::array({id}));

  ASSERT_EQ(srv.post("/clients/bob/enroll", enroll_body(30))->status, 201);
  EXPECT_EQ(json::parse(srv.get("/healthz")->body).at("clients"), 2);
  ASSERT_EQ(srv.post("/admin/restore", {{"snapshot_id", id}})->status, 200);
  EXPECT_EQ(json::parse(srv.get("/healthz")->body).at("clients"), 1);
  EXPECT_EQ(srv.post("/admin/restore", {{"snapshot_id", "snap-nope"}})->status, 404);

  r = srv.get("/admin/snapshots/" + id);
  ASSERT_EQ(r->status, 200);
  Server backup;
  ASSERT_EQ(backup.client().Post("/admin/import", r->body, "application/json")->status, 201);
  ASSERT_EQ(backup.post("/admin/restore", {{"snapshot_id", id}})->status, 200);
  EXPECT_EQ(backup.store().active_template("alice"), srv.store().active_template("alice"));
}

TEST(Http, ConcurrentVerifications) {
  Server srv;
  ASSERT_EQ(srv.post("/clients/alice/enroll", enroll_body(10))->status, 201);
  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      auto r = srv.post("/clients/alice/verify", {{"signature", encoded(synthetic::render(synthetic::Style{}, 300 + t))}});
      if (r && r->status == 200) ++ok;
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(ok.load(), 8);
  EXPECT_EQ(srv.store().manifest().outcomes, 8u);
  EXPECT_EQ(srv.store().manifest().next_request_seq, 9u);
  EXPECT_TRUE(srv.store().health().manifest_ok);
}
