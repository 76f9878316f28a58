#pragma once

// Profile curves: the simplified one-dimensional form of a signature image.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sigcloud/error.hpp"
#include "sigcloud/raster.hpp"

namespace sigcloud {

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

/// Ordered samples with strictly increasing x. May be empty.
class ProfileCurve {
 public:
  ProfileCurve() = default;

  explicit ProfileCurve(std::vector<CurvePoint> points) : points_(std::move(points)) {
    for (std::size_t i = 1; i < points_.size(); ++i) {
      if (!(points_[i].x > points_[i - 1].x)) {
        fail(ErrorCode::Validation, "profile curve x values must be strictly increasing (index " +
                                        std::to_string(i) + ")");
      }
    }
  }

  const std::vector<CurvePoint>& points() const noexcept { return points_; }
  std::size_t size() const noexcept { return points_.size(); }
  bool empty() const noexcept { return points_.empty(); }
  const CurvePoint& operator[](std::size_t i) const { return points_[i]; }
  const CurvePoint& front() const { return points_.front(); }
  const CurvePoint& back() const { return points_.back(); }

  friend bool operator==(const ProfileCurve&, const ProfileCurve&) = default;

 private:
  std::vector<CurvePoint> points_;
};

enum class InterpolationMethod {
  Linear,
  MonotoneCubic,  // Fritsch-Carlson; not used by the default pipeline
};

inline constexpr std::size_t kDefaultProfileSamples = 256;

/// Column-mean reduction: one point per inked column at the mean black row.
inline ProfileCurve simplify(const RasterSignature& sig) {
  std::vector<CurvePoint> points;
  for (int c = 0; c < sig.width(); ++c) {
    long sum = 0;
    long count = 0;
    for (int r = 0; r < sig.height(); ++r) {
      if (sig.is_black(c, r)) {
        sum += r;
        ++count;
      }
    }
    if (count > 0) {
      points.push_back({static_cast<double>(c), static_cast<double>(sum) / static_cast<double>(count)});
    }
  }
  return ProfileCurve(std::move(points));
}

/// n equally spaced values over [lo, hi]; both endpoints exact.
inline std::vector<double> equally_spaced(double lo, double hi, std::size_t n) {
  std::vector<double> xs(n);
  if (n == 1) {
    xs[0] = lo;
    return xs;
  }
  const double span = hi - lo;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    xs[i] = lo + span * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  xs[n - 1] = hi;
  return xs;
}

namespace detail {

inline void require_points(const ProfileCurve& curve, std::size_t n, const char* what) {
  if (curve.size() < n) {
    fail(ErrorCode::InsufficientData, std::string(what) + " needs at least " + std::to_string(n) +
                                          " points, got " + std::to_string(curve.size()));
  }
}

// Fritsch-Carlson tangents for monotone cubic Hermite interpolation.
inline std::vector<double> monotone_tangents(const std::vector<CurvePoint>& p) {
  const std::size_t n = p.size();
  std::vector<double> secant(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) secant[i] = (p[i + 1].y - p[i].y) / (p[i + 1].x - p[i].x);

  std::vector<double> m(n);
  m[0] = secant[0];
  m[n - 1] = secant[n - 2];
  for (std::size_t i = 1; i + 1 < n; ++i) {
    m[i] = (secant[i - 1] * secant[i] <= 0.0) ? 0.0 : 0.5 * (secant[i - 1] + secant[i]);
  }
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (secant[i] == 0.0) {
      m[i] = m[i + 1] = 0.0;
      continue;
    }
    const double a = m[i] / secant[i];
    const double b = m[i + 1] / secant[i];
    const double s = a * a + b * b;
    if (s > 9.0) {
      const double t = 3.0 / std::sqrt(s);
      m[i] = t * a * secant[i];
      m[i + 1] = t * b * secant[i];
    }
  }
  return m;
}

}  // namespace detail

/// Evaluates the interpolant through the curve's points at x. Outside the
/// curve's x-range the nearest endpoint value is returned.
class CurveEvaluator {
 public:
  explicit CurveEvaluator(const ProfileCurve& curve,
                          InterpolationMethod method = InterpolationMethod::Linear)
      : points_(curve.points()), method_(method) {
    detail::require_points(curve, 2, "interpolation");
    if (method_ == InterpolationMethod::MonotoneCubic) tangents_ = detail::monotone_tangents(points_);
  }

  double operator()(double x) const {
    if (x <= points_.front().x) return points_.front().y;
    if (x >= points_.back().x) return points_.back().y;
    const auto it = std::upper_bound(points_.begin(), points_.end(), x,
                                     [](double v, const CurvePoint& p) { return v < p.x; });
    const std::size_t hi = static_cast<std::size_t>(it - points_.begin());
    const std::size_t lo = hi - 1;
    const CurvePoint& a = points_[lo];
    const CurvePoint& b = points_[hi];
    const double h = b.x - a.x;
    const double t = (x - a.x) / h;
    if (method_ == InterpolationMethod::Linear) return a.y + t * (b.y - a.y);

    const double t2 = t * t;
    const double t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * a.y + (t3 - 2 * t2 + t) * h * tangents_[lo] +
           (-2 * t3 + 3 * t2) * b.y + (t3 - t2) * h * tangents_[hi];
  }

 private:
  std::vector<CurvePoint> points_;
  std::vector<double> tangents_;
  InterpolationMethod method_;
};

/// Values of the curve's interpolant at each of xs.
inline std::vector<double> resample(const ProfileCurve& curve, std::span<const double> xs,
                                    InterpolationMethod method = InterpolationMethod::Linear) {
  const CurveEvaluator eval(curve, method);
  std::vector<double> ys;
  ys.reserve(xs.size());
  for (double x : xs) ys.push_back(eval(x));
  return ys;
}

/// sample_count points at equally spaced x over the curve's x-range.
inline ProfileCurve interpolate(const ProfileCurve& curve, std::size_t sample_count,
                                InterpolationMethod method = InterpolationMethod::Linear) {
  detail::require_points(curve, 2, "interpolate");
  if (sample_count < 2) fail(ErrorCode::InsufficientData, "interpolate needs sample_count >= 2");
  const auto xs = equally_spaced(curve.front().x, curve.back().x, sample_count);
  const auto ys = resample(curve, xs, method);
  std::vector<CurvePoint> out(sample_count);
  for (std::size_t i = 0; i < sample_count; ++i) out[i] = {xs[i], ys[i]};
  // Endpoints are reproduced exactly.
  out.front().y = curve.front().y;
  out.back().y = curve.back().y;
  return ProfileCurve(std::move(out));
}

/// Affine map of x and y onto [0, 1]. A flat curve maps y to 0.5.
inline ProfileCurve normalize(const ProfileCurve& curve) {
  detail::require_points(curve, 2, "normalize");
  const auto& p = curve.points();
  const double x0 = p.front().x;
  const double xspan = p.back().x - x0;
  const auto [ymin_it, ymax_it] =
      std::minmax_element(p.begin(), p.end(), [](const CurvePoint& a, const CurvePoint& b) { return a.y < b.y; });
  const double y0 = ymin_it->y;
  const double yspan = ymax_it->y - y0;

  std::vector<CurvePoint> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    out[i].x = (p[i].x - x0) / xspan;
    out[i].y = yspan > 0.0 ? (p[i].y - y0) / yspan : 0.5;
  }
  out.front().x = 0.0;
  out.back().x = 1.0;
  return ProfileCurve(std::move(out));
}

/// The full simplification pipeline applied to every sample before
/// aggregation or verification.
inline ProfileCurve to_profile(const RasterSignature& sig,
                               std::size_t samples = kDefaultProfileSamples) {
  return normalize(interpolate(simplify(sig), samples));
}

}  // namespace sigcloud
