#pragma once

// Simulated Annealing engine.
//
// Minimizes a problem's fitness. At outer iteration k (k = 0..it) the engine
// evaluates k + 1 neighbor proposals at temperature T_k, then cools
// geometrically: T_{k+1} = r * T_k. A proposal that lowers fitness is always
// taken; otherwise it is taken when a uniform gamma in (0, 1) satisfies
// gamma < exp(-delta / T).

#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sigcloud/error.hpp"
#include "sigcloud/rng.hpp"

namespace sigcloud {

struct AnnealingConfig {
  double t0 = 1.0;      // initial temperature
  double r = 0.90;      // cooling rate, (0, 1]
  int it = 80;          // last outer iteration index
  double t_min = 0.0;   // stop once T_k < t_min; 0 disables
  std::uint64_t seed = 1;

  void validate() const {
    if (!(t0 > 0.0) || !std::isfinite(t0)) fail(ErrorCode::Validation, "sa.t0 must be > 0");
    if (!(r > 0.0 && r <= 1.0)) fail(ErrorCode::Validation, "sa.r must be in (0, 1]");
    if (it < 1) fail(ErrorCode::Validation, "sa.it must be >= 1");
    if (!(t_min >= 0.0)) fail(ErrorCode::Validation, "sa.t_min must be >= 0");
  }

  friend bool operator==(const AnnealingConfig&, const AnnealingConfig&) = default;
};

inline void to_json(nlohmann::json& j, const AnnealingConfig& c) {
  j = nlohmann::json{{"t0", c.t0}, {"r", c.r}, {"it", c.it}, {"t_min", c.t_min}, {"seed", c.seed}};
}

/// Missing keys keep their defaults; present keys must have the right type.
inline void from_json(const nlohmann::json& j, AnnealingConfig& c) {
  if (!j.is_object()) fail(ErrorCode::Validation, "sa config must be a JSON object");
  try {
    if (j.contains("t0")) c.t0 = j.at("t0").get<double>();
    if (j.contains("r")) c.r = j.at("r").get<double>();
    if (j.contains("it")) c.it = j.at("it").get<int>();
    if (j.contains("t_min")) c.t_min = j.at("t_min").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Validation, std::string("sa config: ") + e.what());
  }
}

/// exp(-delta / temperature), unclamped.
inline double acceptance_probability(double delta, double temperature) {
  if (!(temperature > 0.0)) fail(ErrorCode::Domain, "temperature must be positive");
  return std::exp(-delta / temperature);
}

inline bool accept(double delta, double temperature, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) fail(ErrorCode::Domain, "gamma must lie in (0, 1)");
  if (!(temperature > 0.0)) fail(ErrorCode::Domain, "temperature must be positive");
  if (delta < 0.0) return true;
  return gamma < acceptance_probability(delta, temperature);
}

inline double cool(double temperature, double rate) { return rate * temperature; }

template <class P>
concept AnnealingProblem = requires(const P& p, const typename P::Solution& s, Rng& rng) {
  typename P::Solution;
  { p.fitness(s) } -> std::convertible_to<double>;
  { p.neighbor(s, rng) } -> std::same_as<typename P::Solution>;
  { p.initial(rng) } -> std::same_as<typename P::Solution>;
};

struct TraceEntry {
  int k = 0;
  double temperature = 0.0;
  double current_fitness = 0.0;
  double best_fitness = 0.0;

  friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

template <class Solution>
struct AnnealingRun {
  Solution initial_solution;
  Solution final_solution;  // x after the last iteration
  Solution best_solution;
  double initial_fitness = 0.0;
  double final_fitness = 0.0;
  double best_fitness = 0.0;
  std::vector<TraceEntry> trace;  // one entry per completed outer iteration
  std::uint64_t proposals_evaluated = 0;
};

template <AnnealingProblem P>
AnnealingRun<typename P::Solution> anneal(const P& problem, const AnnealingConfig& config) {
  config.validate();
  Rng rng(config.seed);

  AnnealingRun<typename P::Solution> run;
  run.initial_solution = problem.initial(rng);
  auto current = run.initial_solution;
  double current_fitness = problem.fitness(current);
  run.initial_fitness = current_fitness;
  run.best_solution = current;
  run.best_fitness = current_fitness;
  run.trace.reserve(static_cast<std::size_t>(config.it) + 1);

  double temperature = config.t0;
  for (int k = 0; k <= config.it; ++k) {
    if (temperature < config.t_min) break;
    for (int i = 0; i <= k; ++i) {
      auto proposal = problem.neighbor(current, rng);
      const double proposal_fitness = problem.fitness(proposal);
      ++run.proposals_evaluated;
      const double delta = proposal_fitness - current_fitness;
      const bool take = delta < 0.0 || accept(delta, temperature, rng.open_unit());
      if (!take) continue;
      current = std::move(proposal);
      current_fitness = proposal_fitness;
      if (current_fitness < run.best_fitness) {
        run.best_fitness = current_fitness;
        run.best_solution = current;
      }
    }
    run.trace.push_back({k, temperature, current_fitness, run.best_fitness});
    temperature = cool(temperature, config.r);
  }

  run.final_solution = std::move(current);
  run.final_fitness = current_fitness;
  return run;
}

/// Adapter for problems given as three callables.
template <class S>
struct FunctionProblem {
  using Solution = S;

  std::function<double(const S&)> fitness_fn;
  std::function<S(const S&, Rng&)> neighbor_fn;
  std::function<S(Rng&)> initial_fn;

  double fitness(const S& s) const { return fitness_fn(s); }
  S neighbor(const S& s, Rng& rng) const { return neighbor_fn(s, rng); }
  S initial(Rng& rng) const { return initial_fn(rng); }
};

/// Trace as CSV with header "k,T,current_fitness,best_fitness".
inline std::string trace_csv(const std::vector<TraceEntry>& trace) {
  std::string out = "k,T,current_fitness,best_fitness\n";
  char line[128];
  for (const auto& e : trace) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g\n", e.k, e.temperature, e.current_fitness,
                  e.best_fitness);
    out += line;
  }
  return out;
}

}  // namespace sigcloud
