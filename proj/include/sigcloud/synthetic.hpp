#pragma once

// Synthetic signatures and raster rendering of curves. Used by the demo and
// by tests that need realistic enrollment/forgery material.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "sigcloud/profile.hpp"
#include "sigcloud/raster.hpp"
#include "sigcloud/rng.hpp"

namespace sigcloud::synthetic {

/// Ink height as a sum of two sinusoids over x in [0, 1], in units of the
/// image height.
struct Style {
  double center = 0.5;
  double amp1 = 0.22;
  double freq1 = 1.5;
  double phase1 = 0.0;
  double amp2 = 0.08;
  double freq2 = 4.0;
  double phase2 = 0.7;

  double operator()(double x) const {
    constexpr double tau = 2.0 * std::numbers::pi;
    return center + amp1 * std::sin(tau * freq1 * x + phase1) + amp2 * std::sin(tau * freq2 * x + phase2);
  }
};

struct Canvas {
  int width = 240;
  int height = 120;
  int stroke = 3;  // stroke thickness in pixels
};

/// Per-sample variation applied to a style.
struct Noise {
  double amplitude_jitter = 0.04;  // relative
  double phase_jitter = 0.08;      // radians
  double wobble = 0.01;            // smooth vertical drift, fraction of height
};

/// Renders a style with deterministic per-sample noise.
inline RasterSignature render(const Style& style, const Canvas& canvas, const Noise& noise,
                              std::uint64_t seed) {
  Rng rng(seed);
  Style s = style;
  s.amp1 *= 1.0 + rng.uniform(-noise.amplitude_jitter, noise.amplitude_jitter);
  s.amp2 *= 1.0 + rng.uniform(-noise.amplitude_jitter, noise.amplitude_jitter);
  s.phase1 += rng.uniform(-noise.phase_jitter, noise.phase_jitter);
  s.phase2 += rng.uniform(-noise.phase_jitter, noise.phase_jitter);
  const double wobble_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double wobble_amp = rng.uniform(-noise.wobble, noise.wobble);

  RasterSignature sig(canvas.width, canvas.height);
  const int margin = canvas.width / 20;
  for (int c = margin; c < canvas.width - margin; ++c) {
    const double x = static_cast<double>(c - margin) / static_cast<double>(canvas.width - 2 * margin - 1);
    const double h = s(x) + wobble_amp * std::sin(2.0 * std::numbers::pi * x + wobble_phase);
    const int center = static_cast<int>(std::lround(h * (canvas.height - 1)));
    for (int d = -(canvas.stroke / 2); d <= canvas.stroke / 2; ++d) {
      const int r = std::clamp(center + d, 0, canvas.height - 1);
      sig.set(c, r, true);
    }
  }
  return sig;
}

inline RasterSignature render(const Style& style, std::uint64_t seed) {
  return render(style, Canvas{}, Noise{}, seed);
}

/// Copy with rows reversed.
inline RasterSignature mirror_vertical(const RasterSignature& sig) {
  RasterSignature out(sig.width(), sig.height());
  for (const Pixel& p : sig.black_pixels()) out.set(p.col, sig.height() - 1 - p.row, true);
  return out;
}

/// Every pixel replicated into a factor x factor block.
inline RasterSignature upscale(const RasterSignature& sig, int factor) {
  RasterSignature out(sig.width() * factor, sig.height() * factor);
  for (const Pixel& p : sig.black_pixels())
    for (int dc = 0; dc < factor; ++dc)
      for (int dr = 0; dr < factor; ++dr) out.set(p.col * factor + dc, p.row * factor + dr, true);
  return out;
}

inline void draw_line(RasterSignature& img, int c0, int r0, int c1, int r1) {
  const int dc = std::abs(c1 - c0);
  const int dr = -std::abs(r1 - r0);
  const int sc = c0 < c1 ? 1 : -1;
  const int sr = r0 < r1 ? 1 : -1;
  int err = dc + dr;
  for (;;) {
    if (img.contains(c0, r0)) img.set(c0, r0, true);
    if (c0 == c1 && r0 == r1) return;
    const int e2 = 2 * err;
    if (e2 >= dr) {
      err += dr;
      c0 += sc;
    }
    if (e2 <= dc) {
      err += dc;
      r0 += sr;
    }
  }
}

/// Draws a normalized curve (x, y in [0, 1]) as a polyline. When `marker` is
/// positive, each point also gets a square of that half-size.
inline void draw_curve(RasterSignature& img, const ProfileCurve& curve, int marker = 0) {
  const auto to_px = [&](const CurvePoint& p) {
    return std::pair{static_cast<int>(std::lround(p.x * (img.width() - 1))),
                     static_cast<int>(std::lround(p.y * (img.height() - 1)))};
  };
  for (std::size_t i = 0; i + 1 < curve.size(); ++i) {
    const auto [c0, r0] = to_px(curve[i]);
    const auto [c1, r1] = to_px(curve[i + 1]);
    draw_line(img, c0, r0, c1, r1);
  }
  if (marker <= 0) return;
  for (const auto& p : curve.points()) {
    const auto [c, r] = to_px(p);
    for (int dc = -marker; dc <= marker; ++dc)
      for (int dr = -marker; dr <= marker; ++dr)
        if (img.contains(c + dc, r + dr)) img.set(c + dc, r + dr, true);
  }
}

}  // namespace sigcloud::synthetic
