#include "opq/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <set>

#include <nlohmann/json.hpp>

#include "opq/error.hpp"
#include "opq/io.hpp"

namespace opq {

const char* to_string(Formulation f) {
  return f == Formulation::SmeIto ? "sme_ito" : "bayesian_stratonovich";
}

Formulation formulation_from_string(const std::string& name) {
  if (name == "bayesian_stratonovich") return Formulation::BayesianStratonovich;
  if (name == "sme_ito") return Formulation::SmeIto;
  throw Error(ErrorKind::Usage, "unknown formulation '" + name + "'");
}

void SimConfig::validate() const {
  system.validate();
  if (!(t_final > 0.0) || !std::isfinite(t_final)) {
    throw Error(ErrorKind::InvalidSpec, "t_final must be positive");
  }
  if (!(dt > 0.0) || dt > system.min_tau() / 100.0 * (1.0 + 1e-12)) {
    throw Error(ErrorKind::InvalidSpec, "dt must satisfy 0 < dt <= min(tau) / 100");
  }
  if (n_trajectories < 1) throw Error(ErrorKind::InvalidSpec, "n_trajectories must be >= 1");
  if (purity_guard < 0.0) throw Error(ErrorKind::InvalidSpec, "purity_guard must be >= 0");
}

std::size_t SimConfig::steps() const {
  return static_cast<std::size_t>(std::max(1.0, std::round(t_final / dt)));
}

std::size_t SimConfig::stride() const {
  if (record_stride > 0) return record_stride;
  return std::max<std::size_t>(1, steps() / 200);
}

double SimConfig::guard() const {
  if (purity_guard > 0.0) return purity_guard;
  // Euler-Maruyama leaves the sphere by x^2 (dW^2 - dt) / tau per step, a
  // zero-mean O(dt) wobble; the Bayesian step stays on the sphere.
  return formulation == Formulation::SmeIto ? 0.1 : 1e-3;
}

NoiseStream::NoiseStream(std::uint64_t seed, std::uint64_t id, double dt)
    : sqrt_dt_(std::sqrt(dt)) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id), static_cast<std::uint32_t>(id >> 32)};
  gen_.seed(seq);
}

namespace {

// Per-system constants hoisted out of the step loop.
struct Kernel {
  bool two;
  double delta;
  double sx, sz;      // sqrt(tau_x), sqrt(tau_z) (sz = sqrt(tau) when driven)
  double ix, iz;      // 1 / tau_x, 1 / tau_z
  double isx, isz;    // 1 / sqrt(tau)
  double gx, gz, gy;  // Ito dephasing rates of x, z and y

  explicit Kernel(const SystemSpec& spec) : two(spec.kind == SystemKind::TwoObservable), delta(spec.delta) {
    const double tx = two ? spec.tau_x : spec.tau;
    const double tz = two ? spec.tau_z : spec.tau;
    sx = std::sqrt(tx);
    sz = std::sqrt(tz);
    ix = 1.0 / tx;
    iz = 1.0 / tz;
    isx = 1.0 / sx;
    isz = 1.0 / sz;
    if (two) {
      gx = 0.5 * iz;
      gz = 0.5 * ix;
      gy = 0.5 * (ix + iz);
    } else {
      gx = gy = 0.5 * iz;
      gz = 0.0;
    }
  }

  BlochState ito(const BlochState& s, double dWx, double dWz, double dt) const {
    const double x = s.x, y = s.y, z = s.z;
    const double az = dWz * isz;
    if (two) {
      const double ax = dWx * isx;
      return {x - gx * x * dt + (1.0 - x * x) * ax - x * z * az,
              y - gy * y * dt - y * (x * ax + z * az),
              z - gz * z * dt + (1.0 - z * z) * az - x * z * ax};
    }
    return {x - gx * x * dt - x * z * az, y + (delta * z - gy * y) * dt - y * z * az,
            z - delta * y * dt + (1.0 - z * z) * az};
  }

  Readouts readouts(const BlochState& s, double dWx, double dWz, double dt) const {
    return two ? Readouts{s.x + sx * dWx / dt, s.z + sz * dWz / dt}
               : Readouts{0.0, s.z + sz * dWz / dt};
  }

  // Bayesian equations with readouts r = q + sqrt(tau) xi, already multiplied by dt.
  BlochVelocity increment(const BlochState& s, double nx, double nz, double dt) const {
    const double x = s.x, y = s.y, z = s.z;
    const double fz = (z * dt + sz * nz) * iz;
    if (two) {
      const double fx = (x * dt + sx * nx) * ix;
      return {(1.0 - x * x) * fx - x * z * fz, -y * (z * fz + x * fx),
              (1.0 - z * z) * fz - x * z * fx};
    }
    return {-x * z * fz, delta * z * dt - y * z * fz, -delta * y * dt + (1.0 - z * z) * fz};
  }

  BlochState bayesian(const BlochState& s, double dWx, double dWz, double dt) const {
    const auto k1 = increment(s, dWx, dWz, dt);
    const BlochState pred{s.x + k1.dx_dt, s.y + k1.dy_dt, s.z + k1.dz_dt};
    const auto k2 = increment(pred, dWx, dWz, dt);
    double dx = 0.5 * (k1.dx_dt + k2.dx_dt);
    double dy = 0.5 * (k1.dy_dt + k2.dy_dt);
    double dz = 0.5 * (k1.dz_dt + k2.dz_dt);
    // Move along the great circle in the direction of the tangent part of
    // the Heun increment.
    const double radial = dx * s.x + dy * s.y + dz * s.z;
    dx -= radial * s.x;
    dy -= radial * s.y;
    dz -= radial * s.z;
    const double phi2 = dx * dx + dy * dy + dz * dz;
    double c, sn;
    if (phi2 < 0.01) {
      // Taylor series; truncation error below phi^8 / 40320 < 3e-13.
      c = 1.0 - phi2 / 2.0 * (1.0 - phi2 / 12.0 * (1.0 - phi2 / 30.0));
      sn = 1.0 - phi2 / 6.0 * (1.0 - phi2 / 20.0 * (1.0 - phi2 / 42.0));
    } else {
      const double phi = std::sqrt(phi2);
      c = std::cos(phi);
      sn = std::sin(phi) / phi;
    }
    return {c * s.x + sn * dx, c * s.y + sn * dy, c * s.z + sn * dz};
  }
};

}  // namespace

BlochState sme_ito_step(const SystemSpec& spec, const BlochState& s, double dWx, double dWz,
                        double dt) {
  return Kernel(spec).ito(s, dWx, dWz, dt);
}

Readouts noisy_readouts(const SystemSpec& spec, const BlochState& s, double dWx, double dWz,
                        double dt) {
  return Kernel(spec).readouts(s, dWx, dWz, dt);
}

BlochState bayesian_step(const SystemSpec& spec, const BlochState& s, double dWx, double dWz,
                         double dt) {
  return Kernel(spec).bayesian(s, dWx, dWz, dt);
}

namespace {

TrajectoryRecord run_one(const SimConfig& cfg, std::uint64_t id, std::size_t n_steps,
                         std::size_t stride, std::size_t n_records, double dt, double guard) {
  const auto& spec = cfg.system;
  const Kernel kernel(spec);
  const bool two = kernel.two;
  NoiseStream noise(cfg.seed, id, dt);
  TrajectoryRecord rec;
  rec.id = id;
  rec.theta.reserve(n_records);
  if (cfg.record_bloch) {
    rec.bloch.reserve(n_records);
    rec.readouts.reserve(n_records);
  }
  BlochState s = bloch_from_theta(spec, cfg.theta_i);
  double theta = cfg.theta_i;
  rec.theta.push_back(static_cast<float>(theta));
  if (cfg.record_bloch) {
    rec.bloch.push_back(s);
    rec.readouts.push_back({});
  }
  for (std::size_t k = 1; k <= n_steps; ++k) {
    double dWx = two ? noise.next() : 0.0;
    double dWz = noise.next();
    if (cfg.noiseless) dWx = dWz = 0.0;
    const BlochState next = cfg.formulation == Formulation::SmeIto
                                ? kernel.ito(s, dWx, dWz, dt)
                                : kernel.bayesian(s, dWx, dWz, dt);
    const double n2 = next.norm2();
    const double drift = std::abs(n2 - 1.0);
    rec.max_purity_drift = std::max(rec.max_purity_drift, drift);
    if (!(drift <= guard)) {
      throw Error(ErrorKind::UnstableStep,
                  "purity drift " + io::format_double(drift) + " in one step; reduce dt",
                  static_cast<double>(k) * dt);
    }
    const double inv = 1.0 / std::sqrt(n2);
    const BlochState prev = s;
    s = {next.x * inv, next.y * inv, next.z * inv};
    const bool record = k % stride == 0 || k == n_steps;
    // Unwrapping every few steps is safe: theta moves ~0.1 rad in 8 steps.
    if (record || k % 8 == 0) theta += angle_difference(theta_from_bloch(spec, s), theta);
    if (record) {
      rec.theta.push_back(static_cast<float>(theta));
      if (cfg.record_bloch) {
        rec.bloch.push_back(s);
        rec.readouts.push_back(kernel.readouts(prev, dWx, dWz, dt));
      }
    }
  }
  rec.final_state = s;
  rec.theta_final = theta;
  return rec;
}

}  // namespace

Ensemble simulate_ensemble(const SimConfig& config) {
  config.validate();
  Ensemble e;
  e.config = config;
  const std::size_t n_steps = config.steps();
  const double dt = config.t_final / static_cast<double>(n_steps);
  const std::size_t stride = config.stride();
  for (std::size_t k = 0; k <= n_steps; k += stride) e.times.push_back(static_cast<double>(k) * dt);
  if (n_steps % stride != 0) e.times.push_back(config.t_final);
  e.times.back() = config.t_final;
  const double guard = config.guard();

  e.trajectories.resize(config.n_trajectories);
  std::exception_ptr failure;
  const auto n = static_cast<long>(config.n_trajectories);
  const bool parallel = config.execution == Execution::Parallel;
#pragma omp parallel for schedule(dynamic, 16) if (parallel)
  for (long i = 0; i < n; ++i) {
    try {
      e.trajectories[i] = run_one(config, static_cast<std::uint64_t>(i), n_steps, stride,
                                  e.times.size(), dt, guard);
    } catch (...) {
#pragma omp critical(opq_sim_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  for (const auto& r : e.trajectories) e.max_purity_drift = std::max(e.max_purity_drift, r.max_purity_drift);
  return e;
}

Ensemble postselect(const Ensemble& ensemble, double theta_f, double tol) {
  if (!(tol > 0.0)) throw Error(ErrorKind::Usage, "tol_theta must be positive");
  Ensemble out;
  out.config = ensemble.config;
  out.times = ensemble.times;
  for (const auto& r : ensemble.trajectories) {
    if (std::abs(angle_difference(r.theta_final, theta_f)) <= tol) {
      out.trajectories.push_back(r);
      out.max_purity_drift = std::max(out.max_purity_drift, r.max_purity_drift);
    }
  }
  if (out.trajectories.empty()) {
    throw Error(ErrorKind::EmptySelection, "no trajectory ends within tol of theta_f", 0.0);
  }
  return out;
}

double acceptance_fraction(const Ensemble& full, const Ensemble& selected) {
  return static_cast<double>(selected.trajectories.size()) /
         static_cast<double>(full.trajectories.size());
}

double track_theta(const Ensemble& e, const TrajectoryRecord& r, double t) {
  const auto& ts = e.times;
  if (t <= ts.front()) return r.theta.front();
  if (t >= ts.back()) return r.theta.back();
  const auto it = std::upper_bound(ts.begin(), ts.end(), t);
  const std::size_t j = static_cast<std::size_t>(it - ts.begin());
  const double f = (t - ts[j - 1]) / (ts[j] - ts[j - 1]);
  return (1.0 - f) * r.theta[j - 1] + f * r.theta[j];
}

double DensityHistogram::t_center(std::size_t it) const {
  return t_min + (t_max - t_min) * (static_cast<double>(it) + 0.5) / static_cast<double>(n_time);
}

double DensityHistogram::theta_center(std::size_t ith) const {
  return theta_min +
         (theta_max - theta_min) * (static_cast<double>(ith) + 0.5) / static_cast<double>(n_theta);
}

long DensityHistogram::theta_bin(double theta) const {
  if (!(theta >= theta_min && theta < theta_max)) return -1;
  const auto b = static_cast<long>((theta - theta_min) / (theta_max - theta_min) *
                                   static_cast<double>(n_theta));
  return std::min<long>(b, static_cast<long>(n_theta) - 1);
}

DensityHistogram density_histogram(const Ensemble& selected, std::size_t n_time,
                                   std::size_t n_theta) {
  const double c = selected.config.theta_i;
  return density_histogram(selected, n_time, n_theta, c - kPi, c + kPi);
}

DensityHistogram density_histogram(const Ensemble& selected, std::size_t n_time,
                                   std::size_t n_theta, double theta_min, double theta_max) {
  if (selected.trajectories.empty()) throw Error(ErrorKind::EmptySelection, "empty ensemble");
  if (n_time == 0 || n_theta == 0 || !(theta_max > theta_min)) {
    throw Error(ErrorKind::Usage, "histogram needs positive bin counts and range");
  }
  DensityHistogram h;
  h.n_time = n_time;
  h.n_theta = n_theta;
  h.t_min = selected.times.front();
  h.t_max = selected.times.back();
  h.theta_min = theta_min;
  h.theta_max = theta_max;
  h.counts.assign(n_time * n_theta, 0.0);
  for (const auto& r : selected.trajectories) {
    for (std::size_t it = 0; it < n_time; ++it) {
      const long b = h.theta_bin(track_theta(selected, r, h.t_center(it)));
      if (b >= 0) h.counts[it * n_theta + static_cast<std::size_t>(b)] += 1.0;
    }
  }
  const double peak = *std::max_element(h.counts.begin(), h.counts.end());
  h.values.resize(h.counts.size());
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    h.values[i] = peak > 0.0 ? h.counts[i] / peak : 0.0;
  }
  return h;
}

std::vector<bool> ridge_bins(const DensityHistogram& h, std::size_t it, const RidgeOptions& opts) {
  std::vector<bool> ridge(h.n_theta, false);
  double col_max = 0.0;
  for (std::size_t k = 0; k < h.n_theta; ++k) col_max = std::max(col_max, h.at(it, k));
  if (col_max <= 0.0) return ridge;
  const auto n = static_cast<long>(h.n_theta);
  const auto w = static_cast<long>(opts.ridge_halfwidth);
  for (long k = 0; k < n; ++k) {
    const double v = h.at(it, static_cast<std::size_t>(k));
    if (v < opts.ridge_level * col_max) continue;
    bool top = true;
    for (long j = std::max(0L, k - w); j <= std::min(n - 1, k + w) && top; ++j) {
      top = h.at(it, static_cast<std::size_t>(j)) <= v;
    }
    ridge[static_cast<std::size_t>(k)] = top;
  }
  return ridge;
}

namespace {

double path_theta(const OptimalPath& path, double t) {
  const auto& s = path.samples;
  if (t <= s.front().t) return s.front().theta;
  if (t >= s.back().t) return s.back().theta;
  const double h = s[1].t - s[0].t;
  const auto j = std::min(static_cast<std::size_t>(t / h), s.size() - 2);
  const double f = (t - s[j].t) / h;
  return (1.0 - f) * s[j].theta + f * s[j + 1].theta;
}

}  // namespace

double ridge_fraction(const DensityHistogram& h, const OptimalPath& path,
                      const RidgeOptions& opts) {
  std::size_t hits = 0;
  const auto w = static_cast<long>(opts.window);
  for (std::size_t it = 0; it < h.n_time; ++it) {
    const long b = h.theta_bin(path_theta(path, h.t_center(it)));
    if (b < 0) continue;
    const auto ridge = ridge_bins(h, it, opts);
    for (long j = std::max(0L, b - w); j <= std::min<long>(h.n_theta - 1, b + w); ++j) {
      if (ridge[static_cast<std::size_t>(j)]) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(h.n_time);
}

BranchCounts branch_count_check(const Ensemble& selected, const MultipathSolution& solution) {
  constexpr std::size_t kPoints = 100;
  const std::size_t nb = solution.branches.size();
  BranchCounts out;
  out.counts.assign(nb, 0);
  out.fractions.assign(nb, 0.0);
  out.fractions_mlp_only.assign(nb, 0.0);
  if (nb == 0 || selected.trajectories.empty()) return out;
  const double T = selected.times.back();
  std::vector<double> ts(kPoints);
  for (std::size_t k = 0; k < kPoints; ++k) ts[k] = T * static_cast<double>(k) / (kPoints - 1);
  std::vector<std::vector<double>> ref(nb, std::vector<double>(kPoints));
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t k = 0; k < kPoints; ++k) ref[b][k] = path_theta(solution.branches[b].path, ts[k]);
  }
  std::vector<double> track(kPoints);
  for (const auto& r : selected.trajectories) {
    for (std::size_t k = 0; k < kPoints; ++k) track[k] = track_theta(selected, r, ts[k]);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < nb; ++b) {
      double d = 0.0;
      for (std::size_t k = 0; k < kPoints; ++k) d += (track[k] - ref[b][k]) * (track[k] - ref[b][k]);
      if (d < best_d) {
        best_d = d;
        best = b;
      }
    }
    ++out.counts[best];
  }
  const auto total = static_cast<double>(selected.trajectories.size());
  double mlp_total = 0.0;
  auto counted = [&](std::size_t b) {
    const auto k = solution.branches[b].kind;
    return k == BranchKind::MLP || k == BranchKind::Unclassified;
  };
  for (std::size_t b = 0; b < nb; ++b) {
    out.fractions[b] = static_cast<double>(out.counts[b]) / total;
    if (counted(b)) mlp_total += static_cast<double>(out.counts[b]);
  }
  for (std::size_t b = 0; b < nb; ++b) {
    if (counted(b) && mlp_total > 0.0) {
      out.fractions_mlp_only[b] = static_cast<double>(out.counts[b]) / mlp_total;
    }
  }
  return out;
}

double terminal_l1_distance(const Ensemble& a, const Ensemble& b, std::size_t bins) {
  auto hist = [bins](const Ensemble& e) {
    std::vector<double> h(bins, 0.0);
    for (const auto& r : e.trajectories) {
      auto k = static_cast<std::size_t>(wrap_angle(r.theta_final) / kTwoPi * static_cast<double>(bins));
      h[std::min(k, bins - 1)] += 1.0;
    }
    for (auto& v : h) v /= static_cast<double>(e.trajectories.size());
    return h;
  };
  const auto ha = hist(a);
  const auto hb = hist(b);
  double d = 0.0;
  for (std::size_t k = 0; k < bins; ++k) d += std::abs(ha[k] - hb[k]);
  return d;
}

void write_tracks_csv(const Ensemble& e, const std::filesystem::path& file,
                      std::size_t max_trajectories, std::size_t decimate) {
  io::CsvWriter csv(file, {"traj_id", "t", "theta"});
  const std::size_t n = std::min(max_trajectories, e.trajectories.size());
  decimate = std::max<std::size_t>(decimate, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = e.trajectories[i];
    for (std::size_t k = 0; k < e.times.size(); ++k) {
      if (k % decimate != 0 && k + 1 != e.times.size()) continue;
      csv << static_cast<long long>(r.id) << e.times[k] << static_cast<double>(r.theta[k]);
      csv.end_row();
    }
  }
}

void write_histogram(const DensityHistogram& h, const std::filesystem::path& csv_file,
                     const std::filesystem::path& json_file, const nlohmann::json& config) {
  io::CsvWriter csv(csv_file, {"t", "theta", "count", "density"});
  for (std::size_t it = 0; it < h.n_time; ++it) {
    for (std::size_t k = 0; k < h.n_theta; ++k) {
      csv << h.t_center(it) << h.theta_center(k) << h.counts[it * h.n_theta + k] << h.at(it, k);
      csv.end_row();
    }
  }
  io::write_json(json_file,
                 {{"bins",
                   {{"n_time", h.n_time},
                    {"n_theta", h.n_theta},
                    {"t_range", {h.t_min, h.t_max}},
                    {"theta_range", {h.theta_min, h.theta_max}}}},
                  {"normalization", "max"},
                  {"config", config}});
}

void to_json(nlohmann::json& j, const SimConfig& c) {
  j = {{"system", c.system},
       {"dt", c.dt},
       {"t_final", c.t_final},
       {"n_trajectories", c.n_trajectories},
       {"seed", c.seed},
       {"formulation", to_string(c.formulation)},
       {"theta_i", c.theta_i},
       {"record_stride", c.record_stride},
       {"record_bloch", c.record_bloch},
       {"noiseless", c.noiseless},
       {"purity_guard", c.purity_guard}};
}

void from_json(const nlohmann::json& j, SimConfig& c) {
  if (!j.is_object()) throw Error(ErrorKind::Usage, "simulation config must be an object");
  static const std::set<std::string> known = {
      "system", "dt", "t_final", "n_trajectories", "seed", "formulation",
      "theta_i", "record_stride", "record_bloch", "noiseless", "purity_guard"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw Error(ErrorKind::Usage, "unknown simulation key '" + key + "'");
  }
  if (!j.contains("system")) throw Error(ErrorKind::Usage, "simulation config needs 'system'");
  c.system = j.at("system").get<SystemSpec>();
  if (j.contains("dt")) c.dt = j.at("dt").get<double>();
  if (j.contains("t_final")) c.t_final = j.at("t_final").get<double>();
  if (j.contains("n_trajectories")) c.n_trajectories = j.at("n_trajectories").get<std::size_t>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("formulation")) c.formulation = formulation_from_string(j.at("formulation").get<std::string>());
  if (j.contains("theta_i")) c.theta_i = j.at("theta_i").get<double>();
  if (j.contains("record_stride")) c.record_stride = j.at("record_stride").get<std::size_t>();
  if (j.contains("record_bloch")) c.record_bloch = j.at("record_bloch").get<bool>();
  if (j.contains("noiseless")) c.noiseless = j.at("noiseless").get<bool>();
  if (j.contains("purity_guard")) c.purity_guard = j.at("purity_guard").get<double>();
}

}  // namespace opq
