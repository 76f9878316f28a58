#pragma once

// Scoring a candidate signature against a template and the three-way
// accept / escalate / reject decision.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>

#include <json.hpp>

#include "sigcloud/aggregation.hpp"
#include "sigcloud/error.hpp"
#include "sigcloud/profile.hpp"
#include "sigcloud/raster.hpp"

namespace sigcloud {

/// Scores below accept_below are accepted, scores at or above
/// reject_at_or_above are rejected, anything between escalates.
struct DecisionThresholds {
  double accept_below = 0.06;
  double reject_at_or_above = 0.14;

  void validate() const {
    if (!(accept_below >= 0.0)) fail(ErrorCode::Validation, "thresholds.accept_below must be >= 0");
    if (!(reject_at_or_above >= 0.0)) {
      fail(ErrorCode::Validation, "thresholds.reject_at_or_above must be >= 0");
    }
    if (accept_below > reject_at_or_above) {
      fail(ErrorCode::Validation, "thresholds.accept_below must not exceed reject_at_or_above");
    }
  }

  friend bool operator==(const DecisionThresholds&, const DecisionThresholds&) = default;
};

enum class Decision { Accepted, Rejected, Escalated };

inline std::string_view to_string(Decision d) {
  switch (d) {
    case Decision::Accepted: return "accepted";
    case Decision::Rejected: return "rejected";
    case Decision::Escalated: return "escalated";
  }
  return "unknown";
}

inline Decision decision_from_string(std::string_view s) {
  if (s == "accepted") return Decision::Accepted;
  if (s == "rejected") return Decision::Rejected;
  if (s == "escalated") return Decision::Escalated;
  fail(ErrorCode::Validation, "unknown decision '" + std::string(s) + "'");
}

struct VerificationOutcome {
  std::string request_id;
  std::string client_id;
  double score = 0.0;
  std::size_t best_variant_index = 0;
  Decision decision = Decision::Rejected;
  ProfileCurve candidate_curve;
  std::uint64_t template_version = 0;
};

struct ScoreResult {
  double score = 0.0;
  std::size_t variant_index = 0;
};

/// RMS vertical deviation between candidate and one variant's main line,
/// taken at the variant's basis point x positions.
inline double variant_score(const CurveEvaluator& candidate, const TemplateVariant& variant) {
  const auto& pts = variant.main_line.points();
  double sum = 0.0;
  for (const auto& p : pts) {
    const double d = candidate(p.x) - p.y;
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(pts.size()));
}

/// Minimum variant score and the index of the variant attaining it.
inline ScoreResult score(const ProfileCurve& candidate, const AggregatedTemplate& tpl) {
  if (tpl.variants.empty()) fail(ErrorCode::Validation, "template has no variants");
  if (candidate.size() < 2) fail(ErrorCode::Validation, "candidate curve needs at least 2 points");
  const CurveEvaluator eval(candidate);
  ScoreResult best{std::numeric_limits<double>::infinity(), 0};
  for (std::size_t v = 0; v < tpl.variants.size(); ++v) {
    if (tpl.variants[v].main_line.empty()) fail(ErrorCode::Validation, "template variant is empty");
    const double s = variant_score(eval, tpl.variants[v]);
    if (s < best.score) best = {s, v};
  }
  return best;
}

inline Decision decide(double score, const DecisionThresholds& thresholds) {
  if (score < thresholds.accept_below) return Decision::Accepted;
  if (score >= thresholds.reject_at_or_above) return Decision::Rejected;
  return Decision::Escalated;
}

/// simplify -> interpolate -> normalize -> score -> decide.
inline VerificationOutcome verify(const RasterSignature& sig, const AggregatedTemplate& tpl,
                                  const DecisionThresholds& thresholds, std::string request_id,
                                  std::size_t profile_samples = kDefaultProfileSamples) {
  thresholds.validate();
  const ProfileCurve simplified = simplify(sig);
  if (simplified.size() < 2) {
    fail(ErrorCode::Validation, "signature has fewer than 2 inked columns");
  }
  VerificationOutcome out;
  out.request_id = std::move(request_id);
  out.client_id = tpl.client_id;
  out.candidate_curve = normalize(interpolate(simplified, profile_samples));
  const ScoreResult s = score(out.candidate_curve, tpl);
  out.score = s.score;
  out.best_variant_index = s.variant_index;
  out.decision = decide(s.score, thresholds);
  out.template_version = tpl.version;
  return out;
}

/// Wire form. The candidate curve is only included for escalation payloads.
inline nlohmann::json outcome_to_json(const VerificationOutcome& o, bool include_candidate = false) {
  nlohmann::json j{{"request_id", o.request_id},
                   {"client_id", o.client_id},
                   {"score", o.score},
                   {"decision", to_string(o.decision)},
                   {"template_version", o.template_version},
                   {"variant", o.best_variant_index}};
  if (include_candidate) j["candidate_curve"] = curve_to_json(o.candidate_curve);
  return j;
}

inline VerificationOutcome outcome_from_json(const nlohmann::json& j) {
  VerificationOutcome o;
  try {
    o.request_id = j.at("request_id").get<std::string>();
    o.client_id = j.at("client_id").get<std::string>();
    o.score = j.at("score").get<double>();
    o.decision = decision_from_string(j.at("decision").get<std::string>());
    o.template_version = j.at("template_version").get<std::uint64_t>();
    o.best_variant_index = j.at("variant").get<std::size_t>();
    if (j.contains("candidate_curve")) o.candidate_curve = curve_from_json(j.at("candidate_curve"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Validation, std::string("outcome JSON: ") + e.what());
  }
  return o;
}

}  // namespace sigcloud
