#pragma once

#include <filesystem>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "opq/ode.hpp"
#include "opq/system.hpp"

namespace opq {

struct PathSample {
  double t = 0.0;
  double theta = 0.0;
  double p = 0.0;
  double S = 0.0;
};

/// One solution of Hamilton's equations sampled on a uniform output grid,
/// with the action accumulated as an extra state variable.
struct OptimalPath {
  SystemSpec system;
  std::vector<PathSample> samples;
  double energy = 0.0;            // H at t = 0
  double max_energy_drift = 0.0;  // max_t |H(t) - energy|
  double rtol = 0.0;
  double atol = 0.0;

  double duration() const { return samples.empty() ? 0.0 : samples.back().t; }
  const PathSample& front() const { return samples.front(); }
  const PathSample& back() const { return samples.back(); }
  PhasePoint start() const { return {front().theta, front().p}; }
  PhasePoint end() const { return {back().theta, back().p}; }
};

struct IntegrateOptions {
  double rtol = 1e-10;
  double atol = 1e-12;
  std::size_t n_samples = 2000;  // output grid including both endpoints
  // Accepted drift is energy_tol * (1 + |E|).
  double energy_tol = 1e-8;
};

/// Integrates the optimal path starting at `start` up to `t_final`.
/// Throws StepUnderflow (with the time reached) when the step controller
/// stalls and EnergyDrift when the conserved energy is not honoured.
OptimalPath integrate(const SystemSpec& spec, PhasePoint start, double t_final,
                      const IntegrateOptions& opts = {});

/// End state (theta, p, S) only; the hot path of manifold evolution.
struct EndState {
  double theta = 0.0;
  double p = 0.0;
  double S = 0.0;
};
EndState integrate_end(const SystemSpec& spec, PhasePoint start, double t_final,
                       double rtol = 1e-10, double atol = 1e-12);

/// |S(T) - (E T - integral of p dtheta)| with the line integral evaluated
/// by composite Simpson quadrature of p * dtheta/dt over the samples.
double action_consistency(const OptimalPath& path);

/// max over samples of |dtheta/dt (finite difference) - (2 p a + b)|.
double trajectory_residual(const OptimalPath& path);

/// Composite Simpson rule over uniformly spaced values (3/8 rule on the
/// tail when the interval count is odd).
double simpson_uniform(const std::vector<double>& values, double h);

/// Fourth-order finite-difference derivative of uniformly spaced values.
std::vector<double> derivative_uniform(const std::vector<double>& values, double h);

void write_path_csv(const OptimalPath& path, const std::filesystem::path& file);
nlohmann::json path_sidecar(const OptimalPath& path);

}  // namespace opq
