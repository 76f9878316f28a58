#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sigcloud/synthetic.hpp"
#include "sigcloud/verification.hpp"

using namespace sigcloud;

namespace {

AggregatedTemplate genuine_template(std::uint64_t first_seed = 500) {
  std::vector<RasterSignature> samples;
  for (std::uint64_t s = 0; s < 4; ++s) samples.push_back(synthetic::render(synthetic::Style{}, first_seed + s));
  return aggregate(samples, AggregationOptions{}, "alice");
}

AggregatedTemplate template_of(std::vector<std::vector<oracle::Point>> variants) {
  AggregatedTemplate tpl;
  tpl.client_id = "c";
  for (std::size_t v = 0; v < variants.size(); ++v) {
    std::vector<CurvePoint> pts;
    for (const auto& [x, y] : variants[v]) pts.push_back({x, y});
    tpl.variants.push_back({v, 0.0, ProfileCurve(std::move(pts))});
  }
  return tpl;
}

std::vector<oracle::Point> points_of(const ProfileCurve& c) {
  std::vector<oracle::Point> out;
  for (const auto& p : c.points()) out.push_back({p.x, p.y});
  return out;
}

}  // namespace

TEST(Score, IdenticalCurveScoresZero) {
  const auto tpl = template_of({{{0, 0.2}, {0.5, 0.7}, {1, 0.4}}});
  const auto s = score(tpl.variants[0].main_line, tpl);
  EXPECT_EQ(s.score, 0.0);
  EXPECT_EQ(s.variant_index, 0u);
}

TEST(Score, ConstantShiftScoresShift) {
  const auto tpl = template_of({{{0, 0.2}, {0.5, 0.2}, {1, 0.2}}});
  for (double d : {0.01, 0.05, 0.3}) {
    EXPECT_NEAR(score(ProfileCurve({{0, 0.2 + d}, {1, 0.2 + d}}), tpl).score, d, 1e-12);
  }
}

TEST(Score, PicksClosestVariant) {
  const auto tpl = template_of({{{0, 0.9}, {1, 0.9}}, {{0, 0.1}, {1, 0.1}}, {{0, 0.5}, {1, 0.5}}});
  const auto s = score(ProfileCurve({{0, 0.15}, {1, 0.15}}), tpl);
  EXPECT_EQ(s.variant_index, 1u);
  EXPECT_NEAR(s.score, 0.05, 1e-12);
}

TEST(Score, MatchesMinRmsOracle) {
  Rng rng(51);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::vector<oracle::Point>> variants;
    const std::size_t n = 1 + rng.index(5);
    for (std::size_t v = 0; v < n; ++v) variants.push_back(oracle::random_polyline(rng, 2 + rng.index(30)));
    const auto candidate = oracle::random_polyline(rng, 2 + rng.index(40));
    std::vector<CurvePoint> cpts;
    for (const auto& [x, y] : candidate) cpts.push_back({x, y});
    const auto got = score(ProfileCurve(cpts), template_of(variants));
    const auto [expected, index] = oracle::min_rms(candidate, variants);
    EXPECT_NEAR(got.score, expected, 1e-12);
    EXPECT_EQ(got.variant_index, index);
  }
}

TEST(Decide, Boundaries) {
  const DecisionThresholds t;
  EXPECT_EQ(decide(0.0, t), Decision::Accepted);
  EXPECT_EQ(decide(0.0599, t), Decision::Accepted);
  EXPECT_EQ(decide(0.06, t), Decision::Escalated);
  EXPECT_EQ(decide(0.1399, t), Decision::Escalated);
  EXPECT_EQ(decide(0.14, t), Decision::Rejected);
  EXPECT_EQ(decide(3.0, t), Decision::Rejected);
  const DecisionThresholds collapsed{0.1, 0.1};
  EXPECT_EQ(decide(0.0999, collapsed), Decision::Accepted);
  EXPECT_EQ(decide(0.1, collapsed), Decision::Rejected);
  EXPECT_THROW((DecisionThresholds{0.2, 0.1}.validate()), Error);
}

TEST(Decide, MonotoneInScore) {
  const DecisionThresholds t;
  int prev = 0;
  for (int i = 0; i <= 1000; ++i) {
    const Decision d = decide(i * 0.0005, t);
    const int rank = d == Decision::Accepted ? 0 : d == Decision::Escalated ? 1 : 2;
    EXPECT_GE(rank, prev);
    prev = rank;
  }
}

TEST(Verify, ReplayScoresBelowMirroredImage) {
  const auto tpl = genuine_template();
  const auto replay = synthetic::render(synthetic::Style{}, 500);
  const auto a = verify(replay, tpl, DecisionThresholds{}, "r1");
  const auto b = verify(synthetic::mirror_vertical(replay), tpl, DecisionThresholds{}, "r2");
  EXPECT_LT(a.score, b.score);
  EXPECT_EQ(a.decision, Decision::Accepted);
  EXPECT_EQ(b.decision, Decision::Rejected);
  EXPECT_EQ(a.request_id, "r1");
  EXPECT_EQ(a.client_id, "alice");
  EXPECT_EQ(a.candidate_curve.size(), kDefaultProfileSamples);
}

TEST(Verify, BlankImageIsValidationError) {
  const auto tpl = genuine_template();
  try {
    verify(RasterSignature(50, 50), tpl, DecisionThresholds{}, "r");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Validation);
  }
}

TEST(Verify, Deterministic) {
  const auto tpl = genuine_template();
  const auto sig = synthetic::render(synthetic::Style{}, 900);
  const auto a = verify(sig, tpl, DecisionThresholds{}, "x");
  const auto b = verify(sig, tpl, DecisionThresholds{}, "x");
  EXPECT_EQ(a.score, b.score);
  EXPECT_EQ(a.candidate_curve, b.candidate_curve);
}

TEST(Verify, PixelDoublingBarelyMovesScore) {
  const auto tpl = genuine_template();
  for (std::uint64_t seed : {901u, 902u, 903u}) {
    const auto sig = synthetic::render(synthetic::Style{}, seed);
    const double s1 = verify(sig, tpl, DecisionThresholds{}, "a").score;
    const double s2 = verify(synthetic::upscale(sig, 2), tpl, DecisionThresholds{}, "b").score;
    EXPECT_NEAR(s1, s2, 0.02);
  }
}

TEST(Verify, CandidateCurveMatchesPipeline) {
  const auto tpl = genuine_template();
  const auto sig = synthetic::render(synthetic::Style{}, 904);
  const auto out = verify(sig, tpl, DecisionThresholds{}, "a");
  EXPECT_EQ(out.candidate_curve, to_profile(sig));
  const auto [expected, index] = oracle::min_rms(points_of(out.candidate_curve), [&] {
    std::vector<std::vector<oracle::Point>> v;
    for (const auto& var : tpl.variants) v.push_back(points_of(var.main_line));
    return v;
  }());
  EXPECT_NEAR(out.score, expected, 1e-12);
  EXPECT_EQ(out.best_variant_index, index);
}

TEST(OutcomeJson, RoundTrip) {
  const auto tpl = genuine_template();
  auto o = verify(synthetic::render(synthetic::Style{}, 905), tpl, DecisionThresholds{}, "req-1");
  o.template_version = 7;
  const auto j = outcome_to_json(o, true);
  EXPECT_EQ(j.at("decision"), "accepted");
  const auto back = outcome_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.request_id, o.request_id);
  EXPECT_EQ(back.score, o.score);
  EXPECT_EQ(back.decision, o.decision);
  EXPECT_EQ(back.template_version, 7u);
  EXPECT_EQ(back.candidate_curve, o.candidate_curve);
  EXPECT_FALSE(outcome_to_json(o).contains("candidate_curve"));
  EXPECT_THROW(outcome_from_json(nlohmann::json{{"decision", "maybe"}}), Error);
  EXPECT_THROW(decision_from_string("maybe"), Error);
}
