#pragma once

// File-backed knowledge store: templates, enrollment images, verification
// outcomes and supervisor reviews under one root directory, with snapshot /
// restore for the backup role.
//
// Layout under the root:
//   manifest.json                          format version, counters, checksums
//   clients/<id>/template-v<N>.json
//   clients/<id>/enrollment/<n>.pbm
//   reviews/<request_id>.json
//   outcomes/<request_id>.json
//   snapshots/<snapshot_id>/...            full copies, each with a manifest
//
// Every mutation is a journaled transaction. New file contents are staged in
// .txn/, a COMMIT journal is renamed into place, and only then are staged
// files moved over the live tree. Opening a store rolls a committed journal
// forward and discards an uncommitted one, so an interrupted mutation is
// either fully applied or not at all.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sigcloud/aggregation.hpp"
#include "sigcloud/codec.hpp"
#include "sigcloud/error.hpp"
#include "sigcloud/raster.hpp"
#include "sigcloud/verification.hpp"

namespace sigcloud {

namespace fs = std::filesystem;

inline constexpr int kStoreFormatVersion = 1;

enum class ReviewStatus { Pending, Approved, Denied };

inline std::string_view to_string(ReviewStatus s) {
  switch (s) {
    case ReviewStatus::Pending: return "pending";
    case ReviewStatus::Approved: return "approved";
    case ReviewStatus::Denied: return "denied";
  }
  return "unknown";
}

inline ReviewStatus review_status_from_string(std::string_view s) {
  if (s == "pending") return ReviewStatus::Pending;
  if (s == "approved") return ReviewStatus::Approved;
  if (s == "denied") return ReviewStatus::Denied;
  fail(ErrorCode::Validation, "unknown review status '" + std::string(s) + "'");
}

struct ReviewItem {
  std::string request_id;
  std::string client_id;
  double score = 0.0;
  ProfileCurve candidate_curve;
  std::uint64_t template_version = 0;
  std::string submitted_at;
  ReviewStatus status = ReviewStatus::Pending;
  std::optional<std::string> decided_by;
  std::optional<std::string> decided_at;
  std::string signature_pbm;  // raw P4 bytes of the verified image
};

inline nlohmann::json review_to_json(const ReviewItem& r, bool include_signature = true) {
  nlohmann::json j{{"request_id", r.request_id},
                   {"client_id", r.client_id},
                   {"score", r.score},
                   {"candidate_curve", curve_to_json(r.candidate_curve)},
                   {"template_version", r.template_version},
                   {"submitted_at", r.submitted_at},
                   {"status", to_string(r.status)},
                   {"decided_by", r.decided_by ? nlohmann::json(*r.decided_by) : nlohmann::json(nullptr)},
                   {"decided_at", r.decided_at ? nlohmann::json(*r.decided_at) : nlohmann::json(nullptr)}};
  if (include_signature) j["signature_pbm"] = base64_encode(r.signature_pbm);
  return j;
}

inline ReviewItem review_from_json(const nlohmann::json& j) {
  ReviewItem r;
  try {
    r.request_id = j.at("request_id").get<std::string>();
    r.client_id = j.at("client_id").get<std::string>();
    r.score = j.at("score").get<double>();
    r.candidate_curve = curve_from_json(j.at("candidate_curve"));
    r.template_version = j.at("template_version").get<std::uint64_t>();
    r.submitted_at = j.at("submitted_at").get<std::string>();
    r.status = review_status_from_string(j.at("status").get<std::string>());
    if (j.contains("decided_by") && !j.at("decided_by").is_null()) r.decided_by = j.at("decided_by").get<std::string>();
    if (j.contains("decided_at") && !j.at("decided_at").is_null()) r.decided_at = j.at("decided_at").get<std::string>();
    if (j.contains("signature_pbm")) r.signature_pbm = base64_decode(j.at("signature_pbm").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Validation, std::string("review JSON: ") + e.what());
  }
  return r;
}

struct ClientEntry {
  std::uint64_t active_version = 0;
  std::vector<std::uint64_t> versions;
  std::size_t enrollment = 0;  // number of stored enrollment images

  friend bool operator==(const ClientEntry&, const ClientEntry&) = default;
};

struct Manifest {
  int format_version = kStoreFormatVersion;
  std::uint64_t next_request_seq = 1;
  std::map<std::string, ClientEntry> clients;
  std::map<std::string, std::string> reviews;  // request_id -> status
  std::size_t outcomes = 0;
  std::map<std::string, std::string> files;  // relative path -> sha256

  std::size_t pending_reviews() const {
    return static_cast<std::size_t>(
        std::count_if(reviews.begin(), reviews.end(), [](const auto& kv) { return kv.second == "pending"; }));
  }

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

inline nlohmann::json manifest_to_json(const Manifest& m) {
  nlohmann::json clients = nlohmann::json::object();
  std::size_t templates = 0;
  for (const auto& [id, c] : m.clients) {
    clients[id] = {{"active_version", c.active_version}, {"versions", c.versions}, {"enrollment", c.enrollment}};
    templates += c.versions.size();
  }
  return {{"format_version", m.format_version},
          {"next_request_seq", m.next_request_seq},
          {"clients", std::move(clients)},
          {"reviews", m.reviews},
          {"outcomes", m.outcomes},
          {"counts",
           {{"clients", m.clients.size()},
            {"templates", templates},
            {"reviews", m.reviews.size()},
            {"pending_reviews", m.pending_reviews()},
            {"outcomes", m.outcomes}}},
          {"files", m.files}};
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
  Manifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    m.next_request_seq = j.at("next_request_seq").get<std::uint64_t>();
    for (const auto& [id, c] : j.at("clients").items()) {
      m.clients[id] = {c.at("active_version").get<std::uint64_t>(), c.at("versions").get<std::vector<std::uint64_t>>(),
                       c.at("enrollment").get<std::size_t>()};
    }
    m.reviews = j.at("reviews").get<std::map<std::string, std::string>>();
    m.outcomes = j.at("outcomes").get<std::size_t>();
    m.files = j.at("files").get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Integrity, std::string("manifest: ") + e.what());
  }
  if (m.format_version != kStoreFormatVersion) {
    fail(ErrorCode::Integrity, "unsupported store format version " + std::to_string(m.format_version));
  }
  for (const auto& [id, c] : m.clients) {
    for (std::size_t i = 0; i < c.versions.size(); ++i) {
      if (c.versions[i] != i + 1) fail(ErrorCode::Integrity, "template versions of '" + id + "' are not gapless");
    }
    if (c.versions.empty() || c.active_version != c.versions.back()) {
      fail(ErrorCode::Integrity, "active template of '" + id + "' is not the highest version");
    }
  }
  return m;
}

/// A snapshot's files keyed by relative path, including manifest.json.
struct SnapshotBundle {
  std::string id;
  std::map<std::string, std::string> files;
};

inline nlohmann::json bundle_to_json(const SnapshotBundle& b) {
  nlohmann::json files = nlohmann::json::object();
  for (const auto& [path, bytes] : b.files) files[path] = base64_encode(bytes);
  return {{"id", b.id}, {"files", std::move(files)}};
}

inline SnapshotBundle bundle_from_json(const nlohmann::json& j) {
  SnapshotBundle b;
  try {
    b.id = j.at("id").get<std::string>();
    for (const auto& [path, data] : j.at("files").items()) b.files[path] = base64_decode(data.get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Validation, std::string("snapshot bundle: ") + e.what());
  }
  return b;
}

struct HealthReport {
  bool manifest_ok = false;
  std::string problem;  // first integrity problem, when !manifest_ok
  Manifest manifest;
  std::size_t snapshots = 0;
};

/// Settings for store mutations that re-run aggregation.
struct LearningOptions {
  AggregationOptions aggregation;
  bool learn_on_accept = true;
};

/// Called with a write-point name before each step of a mutation. Tests
/// throw from it to simulate a crash at that point.
using FaultHook = std::function<void(std::string_view point)>;

namespace detail {

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, std::string_view bytes) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) fail(ErrorCode::Io, "short write to " + p.string());
}

inline std::string utc_timestamp(const char* format) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, format, &tm);
  return buf;
}

inline bool safe_relative_path(const std::string& p) {
  if (p.empty() || p.front() == '/' || p.find('\\') != std::string::npos) return false;
  for (const auto& part : fs::path(p)) {
    if (part == ".." || part == ".") return false;
  }
  return true;
}

}  // namespace detail

inline void validate_client_id(const std::string& id) {
  const bool ok = !id.empty() && id.size() <= 64 && id != "." && id != ".." &&
                  std::all_of(id.begin(), id.end(), [](char c) {
                    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                           c == '-' || c == '_' || c == '.';
                  });
  if (!ok) fail(ErrorCode::Validation, "invalid client id '" + id + "' (allowed: [A-Za-z0-9._-], 1-64 chars)");
}

inline bool is_snapshot_id(const std::string& id) {
  // snap-YYYYMMDDTHHMMSSZ-xxxxxxxx
  if (id.size() != 5 + 16 + 1 + 8 || id.rfind("snap-", 0) != 0 || id[21] != '-') return false;
  return std::all_of(id.begin() + 22, id.end(), [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

class KnowledgeStore {
 public:
  /// Opens the store at `root`, creating an empty one if needed. Recovers an
  /// interrupted transaction and verifies every manifest checksum.
  explicit KnowledgeStore(fs::path root) : root_(std::move(root)) {
    fs::create_directories(root_);
    recover();
    if (!fs::exists(root_ / "manifest.json")) {
      commit(Transaction{}, Manifest{});
    }
    manifest_ = load_manifest(root_);
    if (auto problem = verify_checksums(root_, manifest_)) fail(ErrorCode::Integrity, *problem);
  }

  KnowledgeStore(const KnowledgeStore&) = delete;
  KnowledgeStore& operator=(const KnowledgeStore&) = delete;

  const fs::path& root() const noexcept { return root_; }

  void set_fault_hook(FaultHook hook) {
    std::unique_lock lock(mutex_);
    fault_hook_ = std::move(hook);
  }

  // Reads

  Manifest manifest() const {
    std::shared_lock lock(mutex_);
    return manifest_;
  }

  std::string manifest_bytes() const {
    std::shared_lock lock(mutex_);
    return detail::read_file(root_ / "manifest.json");
  }

  bool is_enrolled(const std::string& client) const {
    std::shared_lock lock(mutex_);
    return manifest_.clients.count(client) > 0;
  }

  std::vector<std::string> clients() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, _] : manifest_.clients) out.push_back(id);
    return out;
  }

  AggregatedTemplate active_template(const std::string& client) const {
    std::shared_lock lock(mutex_);
    return load_template(client, entry(client).active_version);
  }

  AggregatedTemplate template_version(const std::string& client, std::uint64_t version) const {
    std::shared_lock lock(mutex_);
    const ClientEntry& e = entry(client);
    if (version < 1 || version > e.active_version) {
      fail(ErrorCode::NotFound, "client '" + client + "' has no template v" + std::to_string(version));
    }
    return load_template(client, version);
  }

  std::vector<RasterSignature> enrollment(const std::string& client) const {
    std::shared_lock lock(mutex_);
    return load_enrollment(client);
  }

  /// Raw PBM bytes of enrollment image n (1-based).
  std::string enrollment_image(const std::string& client, std::size_t n) const {
    std::shared_lock lock(mutex_);
    if (n < 1 || n > entry(client).enrollment) {
      fail(ErrorCode::NotFound, "client '" + client + "' has no enrollment image " + std::to_string(n));
    }
    return detail::read_file(root_ / enrollment_path(client, n));
  }

  ReviewItem review(const std::string& request_id) const {
    std::shared_lock lock(mutex_);
    if (!manifest_.reviews.count(request_id)) fail(ErrorCode::NotFound, "no review '" + request_id + "'");
    return load_review(request_id);
  }

  /// Reviews in submission order, optionally filtered by status.
  std::vector<ReviewItem> reviews(std::optional<ReviewStatus> status = std::nullopt) const {
    std::shared_lock lock(mutex_);
    std::vector<ReviewItem> out;
    for (const auto& [id, s] : manifest_.reviews) {
      if (status && s != to_string(*status)) continue;
      out.push_back(load_review(id));
    }
    return out;
  }

  std::vector<ReviewItem> pending_reviews() const { return reviews(ReviewStatus::Pending); }

  VerificationOutcome outcome(const std::string& request_id) const {
    std::shared_lock lock(mutex_);
    const std::string rel = outcome_path(request_id);
    if (!manifest_.files.count(rel)) fail(ErrorCode::NotFound, "no outcome '" + request_id + "'");
    return outcome_from_json(nlohmann::json::parse(detail::read_file(root_ / rel)));
  }

  std::vector<std::string> snapshots() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> out;
    const fs::path dir = root_ / "snapshots";
    if (!fs::exists(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
      const std::string name = e.path().filename().string();
      if (e.is_directory() && is_snapshot_id(name)) out.push_back(name);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  HealthReport health() const {
    std::shared_lock lock(mutex_);
    HealthReport h;
    h.manifest = manifest_;
    const auto problem = verify_checksums(root_, manifest_);
    h.manifest_ok = !problem;
    if (problem) h.problem = *problem;
    const fs::path dir = root_ / "snapshots";
    if (fs::exists(dir)) {
      for (const auto& e : fs::directory_iterator(dir))
        if (is_snapshot_id(e.path().filename().string())) ++h.snapshots;
    }
    return h;
  }

  // Mutations

  /// Stores the raw signatures and template v1 (or the next version when
  /// re-enrolling, which replaces the enrollment set).
  AggregatedTemplate enroll(const std::string& client, std::span<const RasterSignature> signatures,
                            const AggregationOptions& options, bool reenroll = false) {
    validate_client_id(client);
    std::unique_lock lock(mutex_);
    const auto existing = manifest_.clients.find(client);
    if (existing != manifest_.clients.end() && !reenroll) {
      fail(ErrorCode::Conflict, "client '" + client + "' is already enrolled");
    }
    AggregatedTemplate tpl = aggregate(signatures, options, client);

    Transaction txn;
    Manifest next = manifest_;
    ClientEntry& e = next.clients[client];
    for (std::size_t n = signatures.size() + 1; n <= e.enrollment; ++n) txn.deletes.insert(enrollment_path(client, n));
    for (std::size_t j = 0; j < signatures.size(); ++j) {
      txn.writes[enrollment_path(client, j + 1)] = save_pbm(signatures[j], false);
    }
    tpl.version = e.active_version + 1;
    txn.writes[template_path(client, tpl.version)] = template_bytes(tpl);
    e.active_version = tpl.version;
    e.versions.push_back(tpl.version);
    e.enrollment = signatures.size();
    commit(std::move(txn), std::move(next));
    return tpl;
  }

  /// Adds an accepted (or supervisor-approved) signature to the client's
  /// enrollment set and re-aggregates into the next template version.
  AggregatedTemplate learn(const std::string& client, const VerificationOutcome& outcome,
                           const RasterSignature& signature, const AggregationOptions& options) {
    std::unique_lock lock(mutex_);
    if (outcome.client_id != client) {
      fail(ErrorCode::ContractViolation, "outcome belongs to client '" + outcome.client_id + "'");
    }
    if (outcome.decision == Decision::Rejected) {
      fail(ErrorCode::ContractViolation, "cannot learn from a rejected verification");
    }
    if (outcome.decision == Decision::Escalated) {
      const auto r = manifest_.reviews.find(outcome.request_id);
      if (r == manifest_.reviews.end() || r->second != "approved") {
        fail(ErrorCode::ContractViolation, "escalated verification '" + outcome.request_id +
                                               "' has not been approved by a supervisor");
      }
    }
    Transaction txn;
    Manifest next = manifest_;
    AggregatedTemplate tpl = learn_into(client, signature, options, txn, next);
    commit(std::move(txn), std::move(next));
    return tpl;
  }

  /// Persists a verification outcome under a fresh request id. Escalated
  /// outcomes enqueue a pending review; accepted ones are learned when
  /// `learning.learn_on_accept` is set.
  VerificationOutcome record_verification(VerificationOutcome outcome, const RasterSignature& signature,
                                          const LearningOptions& learning) {
    std::unique_lock lock(mutex_);
    entry(outcome.client_id);
    Transaction txn;
    Manifest next = manifest_;
    outcome.request_id = request_id_for(next.next_request_seq++);
    txn.writes[outcome_path(outcome.request_id)] = outcome_to_json(outcome).dump(2) + "\n";
    ++next.outcomes;
    if (outcome.decision == Decision::Escalated) {
      ReviewItem item;
      item.request_id = outcome.request_id;
      item.client_id = outcome.client_id;
      item.score = outcome.score;
      item.candidate_curve = outcome.candidate_curve;
      item.template_version = outcome.template_version;
      item.submitted_at = detail::utc_timestamp("%Y-%m-%dT%H:%M:%SZ");
      item.signature_pbm = save_pbm(signature, false);
      stage_review(item, txn, next);
    } else if (outcome.decision == Decision::Accepted && learning.learn_on_accept) {
      learn_into(outcome.client_id, signature, learning.aggregation, txn, next);
    }
    commit(std::move(txn), std::move(next));
    return outcome;
  }

  /// Adds a pending review. Fails with Conflict if the id is taken.
  std::string enqueue_review(const ReviewItem& item) {
    if (item.status != ReviewStatus::Pending) fail(ErrorCode::Validation, "new reviews must be pending");
    if (item.request_id.empty()) fail(ErrorCode::Validation, "review needs a request id");
    std::unique_lock lock(mutex_);
    entry(item.client_id);
    if (manifest_.reviews.count(item.request_id)) {
      fail(ErrorCode::Conflict, "review '" + item.request_id + "' already exists");
    }
    Transaction txn;
    Manifest next = manifest_;
    stage_review(item, txn, next);
    commit(std::move(txn), std::move(next));
    return item.request_id;
  }

  /// Moves a pending review to Approved or Denied. Approval learns the
  /// reviewed signature.
  ReviewItem decide_review(const std::string& request_id, ReviewStatus decision, const std::string& supervisor,
                           const AggregationOptions& options) {
    if (decision == ReviewStatus::Pending) fail(ErrorCode::Validation, "decision must be approve or deny");
    if (supervisor.empty()) fail(ErrorCode::Validation, "supervisor id is required");
    std::unique_lock lock(mutex_);
    const auto it = manifest_.reviews.find(request_id);
    if (it == manifest_.reviews.end()) fail(ErrorCode::NotFound, "no review '" + request_id + "'");
    if (it->second != "pending") {
      fail(ErrorCode::Conflict, "review '" + request_id + "' was already " + it->second);
    }
    ReviewItem item = load_review(request_id);
    item.status = decision;
    item.decided_by = supervisor;
    item.decided_at = detail::utc_timestamp("%Y-%m-%dT%H:%M:%SZ");

    Transaction txn;
    Manifest next = manifest_;
    stage_review(item, txn, next);
    if (decision == ReviewStatus::Approved) {
      learn_into(item.client_id, load_pbm(item.signature_pbm), options, txn, next);
    }
    commit(std::move(txn), std::move(next));
    return item;
  }

  /// Copies the live store into snapshots/<id>/. Identical content within
  /// the same second yields the same id.
  std::string snapshot() {
    std::unique_lock lock(mutex_);
    const std::string manifest_text = detail::read_file(root_ / "manifest.json");
    const std::string id =
        "snap-" + detail::utc_timestamp("%Y%m%dT%H%M%SZ") + "-" + sha256_hex(manifest_text).substr(0, 8);
    const fs::path final_dir = root_ / "snapshots" / id;
    if (fs::exists(final_dir)) return id;

    const fs::path staging = root_ / "snapshots" / (".tmp-" + id);
    fs::remove_all(staging);
    for (const auto& [rel, _] : manifest_.files) {
      fault("snapshot.copy " + rel);
      detail::write_file(staging / rel, detail::read_file(root_ / rel));
    }
    detail::write_file(staging / "manifest.json", manifest_text);
    fault("snapshot.publish");
    fs::rename(staging, final_dir);
    return id;
  }

  /// Replaces the live content with the snapshot's. The snapshot is verified
  /// first; on any mismatch the live store is untouched.
  void restore(const std::string& snapshot_id) {
    std::unique_lock lock(mutex_);
    const fs::path dir = root_ / "snapshots" / snapshot_id;
    if (!is_snapshot_id(snapshot_id) || !fs::is_directory(dir)) {
      fail(ErrorCode::NotFound, "no snapshot '" + snapshot_id + "'");
    }
    const std::string manifest_text = detail::read_file(dir / "manifest.json");
    const Manifest target = parse_manifest(manifest_text);
    if (auto problem = verify_checksums(dir, target)) {
      fail(ErrorCode::Integrity, "snapshot " + snapshot_id + ": " + *problem);
    }
    Transaction txn;
    for (const auto& [rel, _] : target.files) txn.writes[rel] = detail::read_file(dir / rel);
    for (const auto& [rel, _] : manifest_.files)
      if (!target.files.count(rel)) txn.deletes.insert(rel);
    commit_raw(std::move(txn), manifest_text);
    manifest_ = target;
  }

  SnapshotBundle export_snapshot(const std::string& snapshot_id) const {
    std::shared_lock lock(mutex_);
    const fs::path dir = root_ / "snapshots" / snapshot_id;
    if (!is_snapshot_id(snapshot_id) || !fs::is_directory(dir)) {
      fail(ErrorCode::NotFound, "no snapshot '" + snapshot_id + "'");
    }
    SnapshotBundle b{snapshot_id, {}};
    b.files["manifest.json"] = detail::read_file(dir / "manifest.json");
    const Manifest m = parse_manifest(b.files["manifest.json"]);
    for (const auto& [rel, _] : m.files) b.files[rel] = detail::read_file(dir / rel);
    return b;
  }

  /// Stores a bundle fetched from another store as a local snapshot.
  std::string import_snapshot(const SnapshotBundle& bundle) {
    if (!is_snapshot_id(bundle.id)) fail(ErrorCode::Validation, "invalid snapshot id '" + bundle.id + "'");
    const auto mit = bundle.files.find("manifest.json");
    if (mit == bundle.files.end()) fail(ErrorCode::Validation, "snapshot bundle has no manifest.json");
    const Manifest m = parse_manifest(mit->second);
    for (const auto& [rel, sum] : m.files) {
      const auto f = bundle.files.find(rel);
      if (f == bundle.files.end()) fail(ErrorCode::Integrity, "snapshot bundle is missing " + rel);
      if (sha256_hex(f->second) != sum) fail(ErrorCode::Integrity, "checksum mismatch for " + rel + " in bundle");
    }
    for (const auto& [rel, _] : bundle.files) {
      if (!detail::safe_relative_path(rel)) fail(ErrorCode::Validation, "unsafe path in bundle: " + rel);
      if (rel != "manifest.json" && !m.files.count(rel)) {
        fail(ErrorCode::Validation, "bundle file not listed in its manifest: " + rel);
      }
    }

    std::unique_lock lock(mutex_);
    const fs::path final_dir = root_ / "snapshots" / bundle.id;
    if (fs::exists(final_dir)) return bundle.id;
    const fs::path staging = root_ / "snapshots" / (".tmp-" + bundle.id);
    fs::remove_all(staging);
    for (const auto& [rel, bytes] : bundle.files) detail::write_file(staging / rel, bytes);
    fs::rename(staging, final_dir);
    return bundle.id;
  }

  static std::string request_id_for(std::uint64_t seq) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "req-%08llu", static_cast<unsigned long long>(seq));
    return buf;
  }

 private:
  struct Transaction {
    std::map<std::string, std::string> writes;  // relative path -> content
    std::set<std::string> deletes;
  };

  static std::string template_path(const std::string& client, std::uint64_t version) {
    return "clients/" + client + "/template-v" + std::to_string(version) + ".json";
  }
  static std::string enrollment_path(const std::string& client, std::size_t n) {
    return "clients/" + client + "/enrollment/" + std::to_string(n) + ".pbm";
  }
  static std::string review_path(const std::string& id) { return "reviews/" + id + ".json"; }
  static std::string outcome_path(const std::string& id) { return "outcomes/" + id + ".json"; }

  static std::string template_bytes(const AggregatedTemplate& tpl) { return nlohmann::json(tpl).dump(2) + "\n"; }

  static Manifest parse_manifest(const std::string& text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::Integrity, std::string("manifest is not valid JSON: ") + e.what());
    }
    return manifest_from_json(j);
  }

  static Manifest load_manifest(const fs::path& dir) { return parse_manifest(detail::read_file(dir / "manifest.json")); }

  static std::optional<std::string> verify_checksums(const fs::path& dir, const Manifest& m) {
    for (const auto& [rel, sum] : m.files) {
      const fs::path p = dir / rel;
      if (!fs::exists(p)) return "missing file " + rel;
      if (sha256_hex(detail::read_file(p)) != sum) return "checksum mismatch for " + rel;
    }
    return std::nullopt;
  }

  const ClientEntry& entry(const std::string& client) const {
    const auto it = manifest_.clients.find(client);
    if (it == manifest_.clients.end()) fail(ErrorCode::NotFound, "client not enrolled: " + client);
    return it->second;
  }

  AggregatedTemplate load_template(const std::string& client, std::uint64_t version) const {
    AggregatedTemplate tpl;
    from_json(nlohmann::json::parse(detail::read_file(root_ / template_path(client, version))), tpl);
    return tpl;
  }

  std::vector<RasterSignature> load_enrollment(const std::string& client) const {
    const ClientEntry& e = entry(client);
    std::vector<RasterSignature> out;
    out.reserve(e.enrollment);
    for (std::size_t n = 1; n <= e.enrollment; ++n) {
      out.push_back(load_pbm(detail::read_file(root_ / enrollment_path(client, n))));
    }
    return out;
  }

  ReviewItem load_review(const std::string& id) const {
    return review_from_json(nlohmann::json::parse(detail::read_file(root_ / review_path(id))));
  }

  void stage_review(const ReviewItem& item, Transaction& txn, Manifest& next) const {
    txn.writes[review_path(item.request_id)] = review_to_json(item).dump(2) + "\n";
    next.reviews[item.request_id] = std::string(to_string(item.status));
  }

  // Stages the next template version built from the enrollment set plus
  // `signature`. Keeps the active template's basis point count.
  AggregatedTemplate learn_into(const std::string& client, const RasterSignature& signature,
                                AggregationOptions options, Transaction& txn, Manifest& next) const {
    const ClientEntry& current = entry(client);
    std::vector<RasterSignature> samples = load_enrollment(client);
    samples.push_back(signature);
    options.m = load_template(client, current.active_version).m;
    AggregatedTemplate tpl = aggregate(samples, options, client);

    ClientEntry& e = next.clients[client];
    tpl.version = e.active_version + 1;
    txn.writes[enrollment_path(client, e.enrollment + 1)] = save_pbm(signature, false);
    txn.writes[template_path(client, tpl.version)] = template_bytes(tpl);
    e.enrollment += 1;
    e.active_version = tpl.version;
    e.versions.push_back(tpl.version);
    return tpl;
  }

  void fault(const std::string& point) const {
    if (fault_hook_) fault_hook_(point);
  }

  void commit(Transaction txn, Manifest next) {
    for (const auto& rel : txn.deletes) next.files.erase(rel);
    for (const auto& [rel, bytes] : txn.writes) next.files[rel] = sha256_hex(bytes);
    const std::string manifest_text = manifest_to_json(next).dump(2) + "\n";
    commit_raw(std::move(txn), manifest_text);
    manifest_ = std::move(next);
  }

  void commit_raw(Transaction txn, const std::string& manifest_text) {
    for (const auto& [rel, _] : txn.writes) txn.deletes.erase(rel);
    const fs::path txn_dir = root_ / ".txn";
    fault("txn.begin");
    fs::remove_all(txn_dir);
    fs::create_directories(txn_dir / "data");

    nlohmann::json journal{{"writes", nlohmann::json::array()}, {"deletes", txn.deletes}};
    std::size_t n = 0;
    const auto stage = [&](const std::string& rel, const std::string& bytes) {
      const std::string staged = std::to_string(n++);
      fault("txn.stage " + rel);
      detail::write_file(txn_dir / "data" / staged, bytes);
      journal["writes"].push_back({{"path", rel}, {"staged", staged}});
    };
    for (const auto& [rel, bytes] : txn.writes) stage(rel, bytes);
    stage("manifest.json", manifest_text);

    detail::write_file(txn_dir / "journal.tmp", journal.dump());
    fault("txn.commit");
    fs::rename(txn_dir / "journal.tmp", txn_dir / "COMMIT");
    apply_journal();
  }

  // Idempotent: a staged file that is already gone was moved by an earlier,
  // interrupted apply.
  void apply_journal() {
    const fs::path txn_dir = root_ / ".txn";
    const auto journal = nlohmann::json::parse(detail::read_file(txn_dir / "COMMIT"));
    for (const auto& w : journal.at("writes")) {
      const std::string rel = w.at("path").get<std::string>();
      fault("txn.apply " + rel);
      const fs::path src = txn_dir / "data" / w.at("staged").get<std::string>();
      if (!fs::exists(src)) continue;
      const fs::path dst = root_ / rel;
      fs::create_directories(dst.parent_path());
      fs::rename(src, dst);
    }
    for (const auto& d : journal.at("deletes")) {
      const std::string rel = d.get<std::string>();
      fault("txn.delete " + rel);
      fs::remove(root_ / rel);
    }
    fault("txn.cleanup");
    fs::remove_all(txn_dir);
  }

  void recover() {
    const fs::path txn_dir = root_ / ".txn";
    if (fs::exists(txn_dir / "COMMIT")) {
      apply_journal();
    } else {
      fs::remove_all(txn_dir);
    }
    const fs::path snaps = root_ / "snapshots";
    if (fs::exists(snaps)) {
      std::vector<fs::path> stale;
      for (const auto& e : fs::directory_iterator(snaps))
        if (e.path().filename().string().rfind(".tmp-", 0) == 0) stale.push_back(e.path());
      for (const auto& p : stale) fs::remove_all(p);
    }
  }

  fs::path root_;
  Manifest manifest_;
  FaultHook fault_hook_;
  mutable std::shared_mutex mutex_;
};

}  // namespace sigcloud
