#pragma once

// End-to-end walk through enrollment on synthetic signatures, writing a PBM
// rendering of every stage:
//   input/       the raw signatures
//   simplified/  their profile curves
//   aggregated/  each variant's main line with basis points, plus the envelope
// along with the template JSON and the annealing trace of the first variant.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "sigcloud/aggregation.hpp"
#include "sigcloud/annealing.hpp"
#include "sigcloud/raster.hpp"
#include "sigcloud/store.hpp"
#include "sigcloud/synthetic.hpp"

namespace sigcloud {

struct DemoOptions {
  std::size_t samples = 4;
  std::uint64_t seed = 7;
  AggregationOptions aggregation;
};

inline nlohmann::json run_demo(const std::filesystem::path& out_dir, const DemoOptions& options = {}) {
  namespace fs = std::filesystem;
  const synthetic::Canvas canvas;
  const synthetic::Style style;

  std::vector<RasterSignature> inputs;
  std::vector<ProfileCurve> profiles;
  for (std::size_t i = 0; i < options.samples; ++i) {
    inputs.push_back(synthetic::render(style, canvas, synthetic::Noise{}, options.seed + i));
    profiles.push_back(to_profile(inputs.back(), options.aggregation.profile_samples));
  }

  nlohmann::json written = nlohmann::json::array();
  const auto write = [&](const std::string& rel, const std::string& bytes) {
    detail::write_file(out_dir / rel, bytes);
    written.push_back(rel);
  };

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::string name = "sample-" + std::to_string(i + 1) + ".pbm";
    write("input/" + name, save_pbm(inputs[i], false));
    RasterSignature simplified(canvas.width, canvas.height);
    synthetic::draw_curve(simplified, profiles[i]);
    write("simplified/" + name, save_pbm(simplified, false));
  }

  const AggregatedTemplate tpl = aggregate_profiles(profiles, options.aggregation, "demo");
  RasterSignature envelope(canvas.width, canvas.height);
  std::vector<CurvePoint> lower;
  std::vector<CurvePoint> upper;
  for (std::size_t i = 0; i < tpl.envelope.grid_x.size(); ++i) {
    lower.push_back({tpl.envelope.grid_x[i], tpl.envelope.lower[i]});
    upper.push_back({tpl.envelope.grid_x[i], tpl.envelope.upper[i]});
  }
  synthetic::draw_curve(envelope, ProfileCurve(lower));
  synthetic::draw_curve(envelope, ProfileCurve(upper));

  for (const auto& v : tpl.variants) {
    RasterSignature main_line(canvas.width, canvas.height);
    synthetic::draw_curve(main_line, v.main_line, 1);
    synthetic::draw_curve(envelope, v.main_line);
    write("aggregated/variant-" + std::to_string(v.seed_offset + 1) + ".pbm", save_pbm(main_line, false));
  }
  write("aggregated/envelope.pbm", save_pbm(envelope, false));
  write("aggregated/template.json", nlohmann::json(tpl).dump(2) + "\n");

  const CombinedArea area = combine(profiles, options.aggregation.m);
  const auto run = anneal(BasisProblem(area, options.aggregation.neighbor_step), options.aggregation.sa);
  write("aggregated/trace.csv", trace_csv(run.trace));

  nlohmann::json fitness = nlohmann::json::array();
  for (const auto& v : tpl.variants) fitness.push_back(v.fitness);
  return {{"output", out_dir.string()},
          {"samples", options.samples},
          {"variants", tpl.variants.size()},
          {"fitness", std::move(fitness)},
          {"files", std::move(written)}};
}

}  // namespace sigcloud
