#include "opq/optimal_path.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "opq/error.hpp"
#include "opq/io.hpp"

namespace opq {

namespace {

using State = std::array<double, 3>;  // theta, p, S

auto augmented_rhs(const SystemSpec& spec) {
  return [&spec](double, const State& y, State& dy) {
    const auto k = coefficients(spec, y[0]);
    const double p = y[1];
    dy[0] = 2.0 * p * k.a + k.b;
    dy[1] = -(p * p - 1.0) * k.da - p * k.db;
    dy[2] = -(1.0 + p * p) * k.a;
  };
}

}  // namespace

OptimalPath integrate(const SystemSpec& spec, PhasePoint start, double t_final,
                      const IntegrateOptions& opts) {
  spec.validate();
  if (!(t_final > 0.0) || !std::isfinite(t_final)) {
    throw Error(ErrorKind::Usage, "t_final must be positive");
  }
  const std::size_t n = std::max<std::size_t>(opts.n_samples, 2);
  std::vector<double> grid(n);
  for (std::size_t i = 0; i < n; ++i) {
    grid[i] = t_final * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  grid.back() = t_final;

  OptimalPath path;
  path.system = spec;
  path.rtol = opts.rtol;
  path.atol = opts.atol;
  path.energy = hamiltonian(spec, start);
  path.samples.resize(n);

  ode::Options o;
  o.rtol = opts.rtol;
  o.atol = opts.atol;
  ode::integrate<3>(augmented_rhs(spec), State{start.theta, start.p, 0.0}, grid, o,
                    [&](std::size_t i, double t, const State& y) {
                      path.samples[i] = {t, y[0], y[1], y[2]};
                      const double e = hamiltonian(spec, {y[0], y[1]});
                      path.max_energy_drift =
                          std::max(path.max_energy_drift, std::abs(e - path.energy));
                    });

  if (path.max_energy_drift > opts.energy_tol * (1.0 + std::abs(path.energy))) {
    throw Error(ErrorKind::EnergyDrift,
                "energy drift " + io::format_double(path.max_energy_drift),
                path.max_energy_drift);
  }
  return path;
}

EndState integrate_end(const SystemSpec& spec, PhasePoint start, double t_final,
                       double rtol, double atol) {
  if (t_final == 0.0) return {start.theta, start.p, 0.0};
  const double grid[2] = {0.0, t_final};
  ode::Options o;
  o.rtol = rtol;
  o.atol = atol;
  EndState end;
  ode::integrate<3>(augmented_rhs(spec), State{start.theta, start.p, 0.0}, grid, o,
                    [&](std::size_t, double, const State& y) { end = {y[0], y[1], y[2]}; });
  return end;
}

double simpson_uniform(const std::vector<double>& f, double h) {
  const std::size_t n = f.size();
  if (n < 2) return 0.0;
  if (n == 2) return 0.5 * h * (f[0] + f[1]);
  if (n == 3) return h / 3.0 * (f[0] + 4.0 * f[1] + f[2]);
  const std::size_t intervals = n - 1;
  // Simpson over an even number of intervals, 3/8 rule on the last three if odd.
  const std::size_t m = intervals % 2 == 0 ? intervals : intervals - 3;
  double sum = 0.0;
  for (std::size_t i = 0; i + 2 <= m; i += 2) {
    sum += h / 3.0 * (f[i] + 4.0 * f[i + 1] + f[i + 2]);
  }
  if (m != intervals) {
    sum += 3.0 * h / 8.0 * (f[m] + 3.0 * f[m + 1] + 3.0 * f[m + 2] + f[m + 3]);
  }
  return sum;
}

std::vector<double> derivative_uniform(const std::vector<double>& f, double h) {
  const std::size_t n = f.size();
  std::vector<double> d(n, 0.0);
  if (n < 5) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t lo = i == 0 ? 0 : i - 1;
      const std::size_t hi = i + 1 < n ? i + 1 : n - 1;
      if (hi > lo) d[i] = (f[hi] - f[lo]) / (h * static_cast<double>(hi - lo));
    }
    return d;
  }
  for (std::size_t i = 2; i + 2 < n; ++i) {
    d[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * h);
  }
  // One-sided fourth-order stencils at the ends.
  auto fwd = [&](std::size_t i) {
    return (-25.0 * f[i] + 48.0 * f[i + 1] - 36.0 * f[i + 2] + 16.0 * f[i + 3] -
            3.0 * f[i + 4]) /
           (12.0 * h);
  };
  auto bwd = [&](std::size_t i) {
    return (25.0 * f[i] - 48.0 * f[i - 1] + 36.0 * f[i - 2] - 16.0 * f[i - 3] +
            3.0 * f[i - 4]) /
           (12.0 * h);
  };
  auto skew_fwd = [&](std::size_t i) {
    return (-3.0 * f[i - 1] - 10.0 * f[i] + 18.0 * f[i + 1] - 6.0 * f[i + 2] + f[i + 3]) /
           (12.0 * h);
  };
  auto skew_bwd = [&](std::size_t i) {
    return (3.0 * f[i + 1] + 10.0 * f[i] - 18.0 * f[i - 1] + 6.0 * f[i - 2] - f[i - 3]) /
           (12.0 * h);
  };
  d[0] = fwd(0);
  d[1] = skew_fwd(1);
  d[n - 2] = skew_bwd(n - 2);
  d[n - 1] = bwd(n - 1);
  return d;
}

double action_consistency(const OptimalPath& path) {
  const auto& s = path.samples;
  if (s.size() < 2) return 0.0;
  const double h = s[1].t - s[0].t;
  std::vector<double> integrand(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    integrand[i] = s[i].p * hamilton_rhs(path.system, {s[i].theta, s[i].p}).dtheta_dt;
  }
  const double p_dtheta = simpson_uniform(integrand, h);
  return std::abs(s.back().S - (path.energy * path.duration() - p_dtheta));
}

double trajectory_residual(const OptimalPath& path) {
  const auto& s = path.samples;
  if (s.size() < 2) return 0.0;
  const double h = s[1].t - s[0].t;
  std::vector<double> theta(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) theta[i] = s[i].theta;
  const auto d = derivative_uniform(theta, h);
  double worst = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double f = hamilton_rhs(path.system, {s[i].theta, s[i].p}).dtheta_dt;
    worst = std::max(worst, std::abs(d[i] - f));
  }
  return worst;
}

void write_path_csv(const OptimalPath& path, const std::filesystem::path& file) {
  io::CsvWriter csv(file, {"t", "theta", "p", "S"});
  for (const auto& s : path.samples) {
    csv << s.t << s.theta << s.p << s.S;
    csv.end_row();
  }
}

nlohmann::json path_sidecar(const OptimalPath& path) {
  return {{"system", path.system},
          {"energy", path.energy},
          {"max_energy_drift", path.max_energy_drift},
          {"tolerances", {{"rtol", path.rtol}, {"atol", path.atol}}}};
}

}  // namespace opq
