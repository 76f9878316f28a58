#pragma once

// Template aggregation: combine a client's profile curves into an envelope,
// place basis points inside it with Simulated Annealing, and connect them in
// x order into the template's main lines.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <future>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sigcloud/annealing.hpp"
#include "sigcloud/error.hpp"
#include "sigcloud/profile.hpp"
#include "sigcloud/raster.hpp"
#include "sigcloud/rng.hpp"

namespace sigcloud {

inline constexpr std::size_t kDefaultBasisPoints = 32;
inline constexpr double kDefaultNeighborStep = 0.05;

/// Per-x [lower, upper] band containing all resampled source curves.
struct CombinedArea {
  std::vector<double> grid_x;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<std::vector<double>> curves;  // k curves, each sampled at grid_x

  std::size_t m() const noexcept { return grid_x.size(); }
  std::size_t k() const noexcept { return curves.size(); }
};

struct BasisSolution {
  std::vector<double> y;

  friend bool operator==(const BasisSolution&, const BasisSolution&) = default;
};

struct BasisResult {
  BasisSolution solution;
  double fitness = 0.0;
};

struct TemplateVariant {
  std::uint64_t seed_offset = 0;
  double fitness = 0.0;
  ProfileCurve main_line;

  friend bool operator==(const TemplateVariant&, const TemplateVariant&) = default;
};

struct Envelope {
  std::vector<double> grid_x;
  std::vector<double> lower;
  std::vector<double> upper;

  friend bool operator==(const Envelope&, const Envelope&) = default;
};

/// The stored knowledge unit for one client.
struct AggregatedTemplate {
  std::string client_id;
  std::uint64_t version = 1;
  std::size_t m = 0;
  std::size_t created_from = 0;
  std::vector<TemplateVariant> variants;
  Envelope envelope;

  friend bool operator==(const AggregatedTemplate&, const AggregatedTemplate&) = default;
};

namespace detail {

inline bool is_normalized(const ProfileCurve& c) {
  if (c.front().x != 0.0 || c.back().x != 1.0) return false;
  return std::all_of(c.points().begin(), c.points().end(), [](const CurvePoint& p) {
    return p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0;
  });
}

}  // namespace detail

inline CombinedArea combine(std::span<const ProfileCurve> samples, std::size_t m) {
  if (samples.empty()) fail(ErrorCode::Validation, "combine needs at least one sample");
  if (m < 2) fail(ErrorCode::Validation, "basis point count m must be >= 2");

  CombinedArea area;
  area.curves.reserve(samples.size());
  for (std::size_t j = 0; j < samples.size(); ++j) {
    if (samples[j].size() < 2) {
      fail(ErrorCode::Validation, "sample " + std::to_string(j) + " has fewer than 2 points");
    }
    if (!detail::is_normalized(samples[j])) {
      fail(ErrorCode::Validation, "sample " + std::to_string(j) + " is not normalized to [0,1]");
    }
    const ProfileCurve resampled = interpolate(samples[j], m);
    std::vector<double> ys(m);
    for (std::size_t i = 0; i < m; ++i) ys[i] = resampled[i].y;
    if (j == 0) {
      area.grid_x.resize(m);
      for (std::size_t i = 0; i < m; ++i) area.grid_x[i] = resampled[i].x;
      area.lower = ys;
      area.upper = ys;
    } else {
      for (std::size_t i = 0; i < m; ++i) {
        area.lower[i] = std::min(area.lower[i], ys[i]);
        area.upper[i] = std::max(area.upper[i], ys[i]);
      }
    }
    area.curves.push_back(std::move(ys));
  }
  return area;
}

/// Sum over source curves and basis points of squared vertical distance.
inline double basis_fitness(const BasisSolution& solution, const CombinedArea& area) {
  if (solution.y.size() != area.m()) {
    fail(ErrorCode::Validation, "solution has " + std::to_string(solution.y.size()) +
                                    " coordinates, area has m = " + std::to_string(area.m()));
  }
  double total = 0.0;
  for (const auto& curve : area.curves) {
    for (std::size_t i = 0; i < curve.size(); ++i) {
      const double d = solution.y[i] - curve[i];
      total += d * d;
    }
  }
  return total;
}

/// Basis point placement as an annealing problem. Every solution it produces
/// lies inside the envelope: the initial draw is uniform per coordinate and a
/// neighbor moves one coordinate by at most `step`, clamped to the band.
class BasisProblem {
 public:
  using Solution = BasisSolution;

  BasisProblem(const CombinedArea& area, double step) : area_(&area), step_(step) {}

  double fitness(const BasisSolution& s) const { return basis_fitness(s, *area_); }

  BasisSolution initial(Rng& rng) const {
    BasisSolution s{std::vector<double>(area_->m())};
    for (std::size_t i = 0; i < s.y.size(); ++i) s.y[i] = rng.uniform(area_->lower[i], area_->upper[i]);
    return s;
  }

  BasisSolution neighbor(const BasisSolution& s, Rng& rng) const {
    BasisSolution next = s;
    const std::size_t i = rng.index(next.y.size());
    const double moved = next.y[i] + rng.uniform(-step_, step_);
    next.y[i] = std::clamp(moved, area_->lower[i], area_->upper[i]);
    return next;
  }

 private:
  const CombinedArea* area_;
  double step_;
};

/// Best solution of one annealing run over the area.
inline BasisResult find_basis_points(const CombinedArea& area, const AnnealingConfig& config,
                                     double step = kDefaultNeighborStep) {
  if (area.m() == 0 || area.curves.empty()) fail(ErrorCode::Validation, "empty combined area");
  const auto run = anneal(BasisProblem(area, step), config);
  return {run.best_solution, run.best_fitness};
}

/// Connects points by ascending x (stable) into a main line.
inline ProfileCurve connect_points(std::vector<CurvePoint> points) {
  std::stable_sort(points.begin(), points.end(),
                   [](const CurvePoint& a, const CurvePoint& b) { return a.x < b.x; });
  return ProfileCurve(std::move(points));
}

inline ProfileCurve connect(const BasisSolution& solution, const CombinedArea& area) {
  if (solution.y.size() != area.m()) fail(ErrorCode::Validation, "solution dimension mismatch");
  std::vector<CurvePoint> points(area.m());
  for (std::size_t i = 0; i < area.m(); ++i) points[i] = {area.grid_x[i], solution.y[i]};
  return connect_points(std::move(points));
}

struct AggregationOptions {
  std::size_t m = kDefaultBasisPoints;
  AnnealingConfig sa;
  std::size_t profile_samples = kDefaultProfileSamples;
  double neighbor_step = kDefaultNeighborStep;
};

/// Aggregates profile curves that already went through the simplification
/// pipeline. Produces k + 1 variants with seeds sa.seed, sa.seed + 1, ...
inline AggregatedTemplate aggregate_profiles(std::span<const ProfileCurve> profiles,
                                             const AggregationOptions& options,
                                             std::string client_id = {}) {
  options.sa.validate();
  const CombinedArea area = combine(profiles, options.m);

  const std::size_t variant_count = profiles.size() + 1;
  std::vector<std::future<BasisResult>> runs;
  runs.reserve(variant_count);
  for (std::size_t t = 0; t < variant_count; ++t) {
    AnnealingConfig cfg = options.sa;
    cfg.seed = options.sa.seed + t;
    runs.push_back(std::async(std::launch::async, [&area, cfg, step = options.neighbor_step] {
      return find_basis_points(area, cfg, step);
    }));
  }

  AggregatedTemplate tpl;
  tpl.client_id = std::move(client_id);
  tpl.m = options.m;
  tpl.created_from = profiles.size();
  tpl.envelope = {area.grid_x, area.lower, area.upper};
  for (std::size_t t = 0; t < variant_count; ++t) {
    BasisResult result = runs[t].get();
    tpl.variants.push_back({t, result.fitness, connect(result.solution, area)});
  }
  return tpl;
}

/// Full enrollment aggregation from raw images.
inline AggregatedTemplate aggregate(std::span<const RasterSignature> samples,
                                    const AggregationOptions& options, std::string client_id = {}) {
  if (samples.empty()) fail(ErrorCode::EnrollmentRejected, "no signatures supplied");
  std::vector<ProfileCurve> profiles;
  profiles.reserve(samples.size());
  for (std::size_t j = 0; j < samples.size(); ++j) {
    const ProfileCurve simplified = simplify(samples[j]);
    if (simplified.size() < 2) {
      fail(ErrorCode::EnrollmentRejected,
           "sample " + std::to_string(j) + " has fewer than 2 inked columns");
    }
    profiles.push_back(normalize(interpolate(simplified, options.profile_samples)));
  }
  return aggregate_profiles(profiles, options, std::move(client_id));
}

// JSON

inline nlohmann::json curve_to_json(const ProfileCurve& c) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : c.points()) pts.push_back({p.x, p.y});
  return pts;
}

inline ProfileCurve curve_from_json(const nlohmann::json& j) {
  if (!j.is_array()) fail(ErrorCode::Validation, "curve must be an array of [x, y] pairs");
  std::vector<CurvePoint> pts;
  pts.reserve(j.size());
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      fail(ErrorCode::Validation, "curve point must be [x, y]");
    }
    pts.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return ProfileCurve(std::move(pts));
}

inline void to_json(nlohmann::json& j, const AggregatedTemplate& t) {
  nlohmann::json variants = nlohmann::json::array();
  for (const auto& v : t.variants) {
    variants.push_back({{"seed_offset", v.seed_offset}, {"fitness", v.fitness}, {"points", curve_to_json(v.main_line)}});
  }
  j = nlohmann::json{{"client_id", t.client_id},
                     {"version", t.version},
                     {"m", t.m},
                     {"created_from", t.created_from},
                     {"variants", std::move(variants)},
                     {"envelope",
                      {{"grid_x", t.envelope.grid_x}, {"lower", t.envelope.lower}, {"upper", t.envelope.upper}}}};
}

inline void from_json(const nlohmann::json& j, AggregatedTemplate& t) {
  try {
    t.client_id = j.at("client_id").get<std::string>();
    t.version = j.at("version").get<std::uint64_t>();
    t.m = j.at("m").get<std::size_t>();
    t.created_from = j.at("created_from").get<std::size_t>();
    t.variants.clear();
    for (const auto& v : j.at("variants")) {
      t.variants.push_back({v.at("seed_offset").get<std::uint64_t>(), v.at("fitness").get<double>(),
                            curve_from_json(v.at("points"))});
    }
    const auto& env = j.at("envelope");
    t.envelope.grid_x = env.at("grid_x").get<std::vector<double>>();
    t.envelope.lower = env.at("lower").get<std::vector<double>>();
    t.envelope.upper = env.at("upper").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Validation, std::string("template JSON: ") + e.what());
  }
  if (t.version < 1) fail(ErrorCode::Validation, "template version must be >= 1");
  if (t.variants.empty()) fail(ErrorCode::Validation, "template has no variants");
  for (const auto& v : t.variants) {
    if (v.main_line.size() != t.m) fail(ErrorCode::Validation, "variant point count differs from m");
  }
}

}  // namespace sigcloud
