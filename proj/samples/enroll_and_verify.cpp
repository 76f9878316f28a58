// Enrolls a synthetic client in memory and verifies a genuine signature and a
// forgery against the resulting template.

#include <cstdio>
#include <vector>

#include "sigcloud/aggregation.hpp"
#include "sigcloud/synthetic.hpp"
#include "sigcloud/verification.hpp"

int main() {
  using namespace sigcloud;

  const synthetic::Style genuine;
  std::vector<RasterSignature> enrollment;
  for (std::uint64_t i = 0; i < 4; ++i) enrollment.push_back(synthetic::render(genuine, 10 + i));

  const AggregatedTemplate tpl = aggregate(enrollment, AggregationOptions{}, "alice");
  std::printf("template: %zu variants of %zu basis points\n", tpl.variants.size(), tpl.m);

  synthetic::Style forged = genuine;
  forged.freq1 = 2.1;
  forged.phase1 = 0.9;

  const DecisionThresholds thresholds;
  for (const auto& [label, sig] : {std::pair{"genuine", synthetic::render(genuine, 99)},
                                   std::pair{"forgery", synthetic::render(forged, 99)}}) {
    const auto outcome = verify(sig, tpl, thresholds, label);
    std::printf("%-8s score=%.4f decision=%s\n", label, outcome.score,
                std::string(to_string(outcome.decision)).c_str());
  }
}
