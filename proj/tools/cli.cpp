#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "opq/classifier.hpp"
#include "opq/error.hpp"
#include "opq/io.hpp"
#include "opq/limits.hpp"
#include "opq/manifold.hpp"
#include "opq/optimal_path.hpp"
#include "opq/phase.hpp"
#include "opq/system.hpp"
#include "opq/trajectory.hpp"
#include "opq/verify.hpp"

namespace opq::cli {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

// Reads or writes the fields of a parameter block; the same field list
// serves parsing and the emitted resolved config.
struct Binder {
  const json* in = nullptr;
  json* out = nullptr;
  std::string where;
  std::set<std::string> known;

  template <class T>
  void operator()(const char* key, T& value) {
    known.insert(key);
    if (in && in->contains(key)) {
      try {
        value = in->at(key).get<T>();
      } catch (const json::exception& e) {
        throw Error(ErrorKind::Usage, fmt::format("{}.{}: {}", where, key, e.what()));
      }
    }
    if (out) (*out)[key] = value;
  }

  void reject_unknown() const {
    if (!in) return;
    for (const auto& item : in->items()) {
      if (!known.contains(item.key())) {
        throw Error(ErrorKind::Usage, fmt::format("unknown key '{}' in {}", item.key(), where));
      }
    }
  }
};

template <class P>
void read_block(const json& root, const std::string& name, P& params) {
  if (!root.contains(name)) return;
  const auto& block = root.at(name);
  if (!block.is_object()) throw Error(ErrorKind::Usage, name + " must be a JSON object");
  Binder b{&block, nullptr, name, {}};
  params.fields(b);
  b.reject_unknown();
}

template <class P>
json write_block(P params) {
  json out = json::object();
  Binder b{nullptr, &out, "", {}};
  params.fields(b);
  return out;
}

struct PortraitParams {
  double theta_min = 0.0, theta_max = kTwoPi;
  std::size_t n_theta = 200;
  double p_min = -3.0, p_max = 3.0;
  std::size_t n_p = 200;
  std::vector<double> energies;  // empty: spread around the separatrix energy

  template <class B>
  void fields(B& b) {
    b("theta_min", theta_min);
    b("theta_max", theta_max);
    b("n_theta", n_theta);
    b("p_min", p_min);
    b("p_max", p_max);
    b("n_p", n_p);
    b("energies", energies);
  }
};

struct PeriodsParams {
  std::size_t n = 50;
  std::vector<double> energies;  // empty: island grid, or +-0.9 |E*| for the drive

  template <class B>
  void fields(B& b) {
    b("n", n);
    b("energies", energies);
  }
};

struct OnsetParams {
  bool bisection = true;

  template <class B>
  void fields(B& b) {
    b("bisection", bisection);
  }
};

struct ManifoldParams {
  std::vector<double> times = {0.0, 3.15, 6.32, 9.0, 18.0, 27.0};
  std::vector<double> p_range;  // empty: default search range
  std::size_t initial_points = 512;
  std::size_t max_points = 400'000;

  template <class B>
  void fields(B& b) {
    b("times", times);
    b("p_range", p_range);
    b("initial_points", initial_points);
    b("max_points", max_points);
  }
};

struct MultipathParams {
  std::vector<double> p_range;
  long max_winding = 8;
  double theta_tol = 1e-8;
  std::size_t path_samples = 4001;

  template <class B>
  void fields(B& b) {
    b("p_range", p_range);
    b("max_winding", max_winding);
    b("theta_tol", theta_tol);
    b("path_samples", path_samples);
  }
};

struct ClassifyParams {
  double p_i = 0.0;
  std::size_t path_samples = 4001;

  template <class B>
  void fields(B& b) {
    b("p_i", p_i);
    b("path_samples", path_samples);
  }
};

struct SimulateParams {
  double dt = 1e-3;
  std::size_t n_trajectories = 1000;
  std::string formulation = "bayesian_stratonovich";
  std::size_t record_stride = 0;
  std::size_t max_tracks = 200;
  std::size_t decimate = 1;
  bool postselect = false;
  double tol = 0.05;

  template <class B>
  void fields(B& b) {
    b("dt", dt);
    b("n_trajectories", n_trajectories);
    b("formulation", formulation);
    b("record_stride", record_stride);
    b("max_tracks", max_tracks);
    b("decimate", decimate);
    b("postselect", postselect);
    b("tol", tol);
  }
};

struct DensifyParams {
  double dt = 1e-3;
  std::size_t n_trajectories = 100'000;
  std::string formulation = "bayesian_stratonovich";
  double tol = 0.05;
  std::size_t n_time = 60;
  std::size_t n_theta = 60;
  std::size_t max_tracks = 200;

  template <class B>
  void fields(B& b) {
    b("dt", dt);
    b("n_trajectories", n_trajectories);
    b("formulation", formulation);
    b("tol", tol);
    b("n_time", n_time);
    b("n_theta", n_theta);
    b("max_tracks", max_tracks);
  }
};

struct LimitsParams {
  std::vector<double> taus = {10.0, 25.0, 50.0, 100.0};
  double wrapped_tau = 1.0;
  std::size_t n_grid = 360;
  int n_windings = 5;

  template <class B>
  void fields(B& b) {
    b("taus", taus);
    b("wrapped_tau", wrapped_tau);
    b("n_grid", n_grid);
    b("n_windings", n_windings);
  }
};

struct VerifyParams {
  bool stochastic = true;
  std::size_t n_trajectories = 100'000;

  template <class B>
  void fields(B& b) {
    b("stochastic", stochastic);
    b("n_trajectories", n_trajectories);
  }
};

const std::vector<std::string> kCommands = {"portrait", "periods", "onset",    "manifold",
                                            "multipath", "classify", "simulate", "densify",
                                            "limits",   "verify"};

struct Flags {
  std::optional<std::string> system;
  std::optional<double> tau_x, tau_z, tau, delta, theta_i, theta_f, t;
  std::optional<std::string> config, out_dir;
  std::optional<std::uint64_t> seed;
  std::string format = "csv";
  std::optional<int> threads;

  // Command-specific overrides.
  std::optional<double> p_i, dt;
  std::optional<std::size_t> n_trajectories;
  std::optional<std::string> formulation;
  bool quick = false;
  bool strict = false;
};

// Common fields of every run; the command block is resolved separately.
struct RunConfig {
  SystemSpec system = SystemSpec::two_observable(1.0, 2.0);
  double theta_i = kPi - 0.5;
  double theta_f = 3.5;
  double t = 9.0;
  std::uint64_t seed = 7;
  std::string out_dir = "opq_out";
  json root = json::object();  // the --config document

  json common() const {
    return {{"system", system}, {"theta_i", theta_i}, {"theta_f", theta_f},
            {"t", t},           {"seed", seed},       {"out_dir", out_dir}};
  }
};

template <class T>
void take(const json& j, const char* key, T& value) {
  if (!j.contains(key)) return;
  try {
    value = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Usage, fmt::format("{}: {}", key, e.what()));
  }
}

RunConfig resolve(const Flags& f) {
  RunConfig c;
  if (f.config) {
    c.root = io::read_json(*f.config);
    if (!c.root.is_object()) throw Error(ErrorKind::Usage, "config must be a JSON object");
    const std::set<std::string> common = {"system", "theta_i", "theta_f", "t", "seed", "out_dir"};
    for (const auto& item : c.root.items()) {
      const bool is_command =
          std::find(kCommands.begin(), kCommands.end(), item.key()) != kCommands.end();
      if (!common.contains(item.key()) && !is_command) {
        throw Error(ErrorKind::Usage, "unknown config key '" + item.key() + "'");
      }
    }
    if (c.root.contains("system")) c.system = c.root.at("system").get<SystemSpec>();
    take(c.root, "theta_i", c.theta_i);
    take(c.root, "theta_f", c.theta_f);
    take(c.root, "t", c.t);
    take(c.root, "seed", c.seed);
    take(c.root, "out_dir", c.out_dir);
  }
  if (f.system) {
    if (*f.system == "two_observable") {
      if (c.system.kind != SystemKind::TwoObservable) c.system = SystemSpec::two_observable(1.0, 2.0);
    } else if (*f.system == "driven_z") {
      if (c.system.kind != SystemKind::DrivenZ) c.system = SystemSpec::driven_z(1.0, 1.0);
    } else {
      throw Error(ErrorKind::Usage, "unknown --system '" + *f.system + "'");
    }
  }
  const bool two = c.system.kind == SystemKind::TwoObservable;
  if ((f.tau_x || f.tau_z) && !two) throw Error(ErrorKind::Usage, "--tau-x/--tau-z need two_observable");
  if ((f.tau || f.delta) && two) throw Error(ErrorKind::Usage, "--tau/--delta need driven_z");
  if (f.tau_x) c.system.tau_x = *f.tau_x;
  if (f.tau_z) c.system.tau_z = *f.tau_z;
  if (f.tau) c.system.tau = *f.tau;
  if (f.delta) c.system.delta = *f.delta;
  c.system.validate();
  if (f.theta_i) c.theta_i = *f.theta_i;
  if (f.theta_f) c.theta_f = *f.theta_f;
  if (f.t) c.t = *f.t;
  if (f.seed) c.seed = *f.seed;
  if (f.out_dir) c.out_dir = *f.out_dir;
  return c;
}

json with_block(const RunConfig& c, const std::string& name, const json& block) {
  json j = c.common();
  j[name] = block;
  return j;
}

std::pair<double, double> range_or_default(const std::vector<double>& r, const SystemSpec& spec,
                                           double theta_i) {
  if (r.empty()) return default_search_range(spec, theta_i);
  if (r.size() != 2 || !(r[0] < r[1])) throw Error(ErrorKind::Usage, "p_range must be [lo, hi] with lo < hi");
  return {r[0], r[1]};
}

Execution execution_for(const Flags& f) {
  return f.threads && *f.threads == 1 ? Execution::Serial : Execution::Parallel;
}

double reference_energy(const SystemSpec& spec) {
  if (spec.kind == SystemKind::DrivenZ) return driven_separatrix_energy(spec);
  if (const auto isl = island_spec(spec)) return isl->E_c;
  return -0.5 / spec.tau_x;
}

struct Io {
  std::ostream& out;
  std::ostream& err;
  const Flags& flags;
  bool json_out() const { return flags.format == "json"; }
};

int cmd_portrait(const RunConfig& c, const Io& io) {
  PortraitParams p;
  read_block(c.root, "portrait", p);
  if (p.energies.empty()) {
    const double e = std::abs(reference_energy(c.system));
    for (int k = -6; k <= 6; ++k) p.energies.push_back(e * k / 4.0);
  }
  const fs::path dir = c.out_dir;
  {
    io::CsvWriter csv(dir / "portrait_contours.csv", {"E", "theta", "branch", "p"});
    for (double E : p.energies) {
      for (std::size_t i = 0; i < p.n_theta; ++i) {
        const double th = p.theta_min + (p.theta_max - p.theta_min) * i / (p.n_theta - 1.0);
        if (discriminant(c.system, th, E) < 0.0) continue;
        try {
          const auto br = p_branches(c.system, th, E);
          csv << E << th << 1 << br.p_plus;
          csv.end_row();
          csv << E << th << -1 << br.p_minus;
          csv.end_row();
        } catch (const Error&) {
          // a = 0: the contour is vertical there and has no momentum value
        }
      }
    }
  }
  write_sdot_csv(sample_field(c.system, p.theta_min, p.theta_max, p.n_theta, p.p_min, p.p_max, p.n_p),
                 dir / "sdot.csv");
  json doc = {{"config", with_block(c, "portrait", write_block(p))},
              {"reference_energy", reference_energy(c.system)},
              {"files", {"portrait_contours.csv", "sdot.csv"}}};
  if (const auto isl = island_spec(c.system)) {
    doc["island"] = {{"E_c", isl->E_c},
                     {"E_m", isl->E_m},
                     {"center_theta", isl->center_theta},
                     {"hyperbolic_theta", isl->hyperbolic_theta}};
  }
  if (c.system.kind == SystemKind::DrivenZ) {
    const auto fp = driven_fixed_point(c.system);
    doc["fixed_point"] = {{"theta", fp.theta}, {"p", fp.p}};
  }
  io::write_json(dir / "portrait.json", doc);
  if (io.json_out()) {
    io.out << doc.dump(2) << "\n";
  } else {
    io.out << "reference_energy\n" << io::format_double(reference_energy(c.system)) << "\n";
  }
  return 0;
}

int cmd_periods(const RunConfig& c, const Io& io) {
  PeriodsParams p;
  read_block(c.root, "periods", p);
  const fs::path dir = c.out_dir;
  json doc;
  if (c.system.kind == SystemKind::DrivenZ) {
    if (p.energies.empty()) {
      const double es = driven_separatrix_energy(c.system);
      for (std::size_t i = 0; i < p.n; ++i) p.energies.push_back(0.9 * es * (1.0 - 2.0 * i / (p.n - 1.0)));
    }
    const auto rows = scan_T2pi_and_S(c.system, p.energies, c.theta_i);
    write_scan_csv(rows, dir / "t2pi_action.csv");
    const auto best = std::max_element(rows.begin(), rows.end(),
                                       [](const auto& a, const auto& b) { return a.S < b.S; });
    doc = {{"config", with_block(c, "periods", write_block(p))},
           {"file", "t2pi_action.csv"},
           {"argmax_S", {{"E", best->E}, {"T_2pi", best->T_2pi}, {"S", best->S}}}};
    if (!io.json_out()) {
      io.out << "E_argmax,T_2pi,S\n"
             << io::format_double(best->E) << "," << io::format_double(best->T_2pi) << ","
             << io::format_double(best->S) << "\n";
    }
  } else {
    if (p.energies.empty()) p.energies = island_energy_grid(c.system, p.n);
    const auto rows = scan_periods(c.system, p.energies);
    write_periods_csv(rows, dir / "periods.csv");
    doc = {{"config", with_block(c, "periods", write_block(p))},
           {"file", "periods.csv"},
           {"linear_period", kTwoPi / island_linear_frequency(c.system)}};
    if (!io.json_out()) io.out << "rows\n" << rows.size() << "\n";
  }
  io::write_json(dir / "periods.json", doc);
  if (io.json_out()) io.out << doc.dump(2) << "\n";
  return 0;
}

int cmd_onset(const RunConfig& c, const Io& io) {
  OnsetParams p;
  read_block(c.root, "onset", p);
  json doc = {{"config", with_block(c, "onset", write_block(p))}};
  const double onset = caustic_onset(c.system, c.theta_i);
  doc["onset"] = onset;
  if (p.bisection) {
    RefinementOptions r;
    doc["onset_bisection"] = caustic_onset_bisection(c.system, c.theta_i, r);
  }
  io::write_json(fs::path(c.out_dir) / "onset.json", doc);
  if (io.json_out()) {
    io.out << doc.dump(2) << "\n";
  } else {
    io.out << "onset\n" << io::format_double(onset) << "\n";
  }
  return 0;
}

int cmd_manifold(const RunConfig& c, const Io& io, Execution exec) {
  ManifoldParams p;
  read_block(c.root, "manifold", p);
  const auto [lo, hi] = range_or_default(p.p_range, c.system, c.theta_i);
  RefinementOptions r;
  r.initial_points = p.initial_points;
  r.max_points = p.max_points;
  r.execution = exec;
  json snaps = json::array();
  const fs::path dir = c.out_dir;
  for (std::size_t k = 0; k < p.times.size(); ++k) {
    const auto snap = evolve_manifold(c.system, c.theta_i, lo, hi, p.times[k], r);
    const std::string file = fmt::format("manifold_{}.csv", k);
    write_snapshot_csv(snap, dir / file);
    snaps.push_back({{"t", p.times[k]},
                     {"file", file},
                     {"points", snap.points.size()},
                     {"fold_markers", snap.fold_markers.size()},
                     {"unresolved_segments", snap.unresolved_segments}});
  }
  json doc = {{"config", with_block(c, "manifold", write_block(p))},
              {"p_range", {lo, hi}},
              {"snapshots", snaps}};
  io::write_json(dir / "manifold.json", doc);
  if (io.json_out()) {
    io.out << doc.dump(2) << "\n";
  } else {
    io.out << "t,points,fold_markers\n";
    for (const auto& s : snaps) {
      io.out << io::format_double(s["t"].get<double>()) << "," << s["points"] << "," << s["fold_markers"] << "\n";
    }
  }
  return 0;
}

int cmd_multipath(const RunConfig& c, const Io& io, Execution exec) {
  MultipathParams p;
  read_block(c.root, "multipath", p);
  MultipathOptions o;
  if (!p.p_range.empty()) o.p_range = range_or_default(p.p_range, c.system, c.theta_i);
  o.max_winding = p.max_winding;
  o.theta_tol = p.theta_tol;
  o.path_samples = p.path_samples;
  o.refinement.execution = exec;
  const auto sol = find_multipaths(c.system, c.theta_i, c.theta_f, c.t, o);
  write_solution(sol, c.out_dir, with_block(c, "multipath", write_block(p)));
  if (io.json_out()) {
    io.out << io::read_json(fs::path(c.out_dir) / "multipath.json").dump(2) << "\n";
  } else {
    io.out << "p_i,winding,S,kind,weight,weight_mlp_only\n";
    for (const auto& b : sol.branches) {
      io.out << io::format_double(b.p_i) << "," << b.winding << "," << io::format_double(b.S) << ","
             << to_string(b.kind) << "," << io::format_double(b.weight) << ","
             << io::format_double(b.weight_mlp_only) << "\n";
    }
  }
  return 0;
}

int cmd_classify(const RunConfig& c, const Io& io) {
  ClassifyParams p;
  read_block(c.root, "classify", p);
  if (io.flags.p_i) p.p_i = *io.flags.p_i;
  IntegrateOptions o;
  o.n_samples = p.path_samples;
  const auto path = integrate(c.system, {c.theta_i, p.p_i}, c.t, o);
  const auto rep = classify(path);
  const fs::path dir = c.out_dir;
  write_path_csv(path, dir / "path.csv");
  json doc = {{"config", with_block(c, "classify", write_block(p))},
              {"kind", to_string(rep.kind)},
              {"delta2_sine", rep.delta2_sine},
              {"delta2_poly", rep.delta2_poly},
              {"probes_disagree", rep.probes_disagree},
              {"theta_T", path.back().theta},
              {"S", path.back().S},
              {"path", path_sidecar(path)}};
  io::write_json(dir / "classify.json", doc);
  if (io.json_out()) {
    io.out << doc.dump(2) << "\n";
  } else {
    io.out << "kind,delta2_sine,delta2_poly\n"
           << to_string(rep.kind) << "," << io::format_double(rep.delta2_sine) << ","
           << io::format_double(rep.delta2_poly) << "\n";
  }
  return 0;
}

SimConfig sim_config(const RunConfig& c, double dt, std::size_t n, const std::string& formulation,
                     Execution exec) {
  SimConfig s;
  s.system = c.system;
  s.dt = dt;
  s.t_final = c.t;
  s.n_trajectories = n;
  s.seed = c.seed;
  s.theta_i = c.theta_i;
  s.execution = exec;
  try {
    s.formulation = formulation_from_string(formulation);
  } catch (const Error& e) {
    throw Error(ErrorKind::Usage, e.what());
  }
  return s;
}

int cmd_simulate(const RunConfig& c, const Io& io, Execution exec) {
  SimulateParams p;
  read_block(c.root, "simulate", p);
  if (io.flags.dt) p.dt = *io.flags.dt;
  if (io.flags.n_trajectories) p.n_trajectories = *io.flags.n_trajectories;
  if (io.flags.formulation) p.formulation = *io.flags.formulation;
  auto s = sim_config(c, p.dt, p.n_trajectories, p.formulation, exec);
  s.record_stride = p.record_stride;
  const auto ensemble = simulate_ensemble(s);
  const fs::path dir = c.out_dir;
  json doc = {{"config", with_block(c, "simulate", write_block(p))},
              {"trajectories", ensemble.trajectories.size()},
              {"max_purity_drift", ensemble.max_purity_drift},
              {"file", "tracks.csv"}};
  if (p.postselect) {
    const auto sel = postselect(ensemble, c.theta_f, p.tol);
    doc["selected"] = sel.trajectories.size();
    doc["acceptance_fraction"] = acceptance_fraction(ensemble, sel);
    write_tracks_csv(sel, dir / "tracks.csv", p.max_tracks, p.decimate);
  } else {
    write_tracks_csv(ensemble, dir / "tracks.csv", p.max_tracks, p.decimate);
  }
  {
    io::CsvWriter csv(dir / "final_theta.csv", {"traj_id", "theta_final"});
    for (const auto& r : ensemble.trajectories) {
      csv << static_cast<long long>(r.id) << r.theta_final;
      csv.end_row();
    }
  }
  io::write_json(dir / "simulate.json", doc);
  if (io.json_out()) {
    io.out << doc.dump(2) << "\n";
  } else {
    io.out << "trajectories,max_purity_drift\n"
           << ensemble.trajectories.size() << "," << io::format_double(ensemble.max_purity_drift) << "\n";
  }
  return 0;
}

int cmd_densify(const RunConfig& c, const Io& io, Execution exec) {
  DensifyParams p;
  read_block(c.root, "densify", p);
  if (io.flags.dt) p.dt = *io.flags.dt;
  if (io.flags.n_trajectories) p.n_trajectories = *io.flags.n_trajectories;
  if (io.flags.formulation) p.formulation = *io.flags.formulation;
  const auto s = sim_config(c, p.dt, p.n_trajectories, p.formulation, exec);
  const auto ensemble = simulate_ensemble(s);
  const auto sel = postselect(ensemble, c.theta_f, p.tol);
  const auto h = density_histogram(sel, p.n_time, p.n_theta);
  const fs::path dir = c.out_dir;
  const json config = with_block(c, "densify", write_block(p));
  write_histogram(h, dir / "density.csv", dir / "density.json", config);
  write_tracks_csv(sel, dir / "tracks.csv", p.max_tracks);
  const double acc = acceptance_fraction(ensemble, sel);
  if (io.json_out()) {
    io.out << io::read_json(dir / "density.json").dump(2) << "\n";
  } else {
    io.out << "selected,acceptance_fraction\n" << sel.trajectories.size() << "," << io::format_double(acc) << "\n";
  }
  return 0;
}

int cmd_limits(const RunConfig& c, const Io& io) {
  LimitsParams p;
  read_block(c.root, "limits", p);
  if (c.system.kind != SystemKind::DrivenZ) {
    throw Error(ErrorKind::Usage, "limits needs --system driven_z");
  }
  const fs::path dir = c.out_dir;
  const double delta = c.system.delta;
  const RabiLimitInputs here{delta, c.system.tau, c.theta_i, c.theta_f};
  bool warned = false;
  auto warn_if_small = [&](const RabiLimitInputs& in) {
    if (!in.in_asymptotic_regime() && !warned) {
      io.err << "warning: delta tau below 10, the large-drive expansions are inaccurate\n";
      warned = true;
    }
  };
  warn_if_small(here);
  {
    io::CsvWriter csv(dir / "rabi_limits.csv",
                      {"tau", "delta_tau", "T_approx", "T_numeric", "S_A_approx", "S_numeric"});
    for (double tau : p.taus) {
      const RabiLimitInputs in{delta, tau, c.theta_i, c.theta_f};
      warn_if_small(in);
      const auto num = traversal_action(SystemSpec::driven_z(tau, delta), c.theta_i, c.theta_f, 0.0);
      csv << tau << in.delta_tau() << rabi_time_approx(in) << num.T << rabi_action_A(in) << num.S;
      csv.end_row();
    }
  }
  std::vector<double> grid(p.n_grid);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = kTwoPi * i / static_cast<double>(grid.size());
  const auto dens = wrapped_gaussian(c.theta_i, p.wrapped_tau, c.t, grid, p.n_windings);
  {
    io::CsvWriter csv(dir / "wrapped_gaussian.csv", {"theta", "density"});
    for (std::size_t i = 0; i < grid.size(); ++i) {
      csv << grid[i] << dens[i];
      csv.end_row();
    }
  }
  json doc = {{"config", with_block(c, "limits", write_block(p))},
              {"files", {"rabi_limits.csv", "wrapped_gaussian.csv"}}};
  try {
    doc["S_C"] = rabi_action_C(here);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::PoleDivergence) throw;
    doc["S_C"] = nullptr;
    doc["S_C_error"] = e.what();
  }
  io::write_json(dir / "limits.json", doc);
  if (io.json_out()) {
    io.out << doc.dump(2) << "\n";
  } else {
    io.out << "rabi_time_approx,rabi_action_A\n"
           << io::format_double(rabi_time_approx(here)) << "," << io::format_double(rabi_action_A(here))
           << "\n";
  }
  return 0;
}

int cmd_verify(const RunConfig& c, const Io& io, Execution exec) {
  VerifyParams p;
  read_block(c.root, "verify", p);
  if (io.flags.quick) p.stochastic = false;
  if (io.flags.n_trajectories) p.n_trajectories = *io.flags.n_trajectories;
  VerifyOptions o;
  o.stochastic = p.stochastic;
  o.n_trajectories = p.n_trajectories;
  o.seed = c.seed;
  o.execution = exec;
  const bool text = !io.json_out();
  const auto results = run_acceptance(o, [&](const CheckResult& r) {
    if (text) io.out << format_check(r) << std::endl;
  });
  json checks = json::array();
  std::size_t passed = 0, failed = 0;
  for (const auto& r : results) {
    checks.push_back({{"name", r.name},
                      {"status", r.skipped ? "SKIP" : (r.pass ? "PASS" : "FAIL")},
                      {"seconds", r.seconds},
                      {"detail", r.detail}});
    if (!r.skipped) (r.pass ? passed : failed) += 1;
  }
  json doc = {{"config", with_block(c, "verify", write_block(p))},
              {"passed", passed},
              {"failed", failed},
              {"checks", checks}};
  io::write_json(fs::path(c.out_dir) / "verify.json", doc);
  if (text) {
    io.out << fmt::format("{} passed, {} failed, {} skipped\n", passed, failed,
                          results.size() - passed - failed);
  } else {
    io.out << doc.dump(2) << "\n";
  }
  return io.flags.strict && failed > 0 ? 3 : 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Optimal paths, multipaths and trajectory statistics of monitored qubits", "opq"};
  app.require_subcommand(1);
  Flags f;
  app.add_option("--system", f.system, "two_observable or driven_z")->check(CLI::IsMember({"two_observable", "driven_z"}));
  app.add_option("--tau-x", f.tau_x, "x measurement time (us)");
  app.add_option("--tau-z", f.tau_z, "z measurement time (us)");
  app.add_option("--tau", f.tau, "z measurement time of the driven system (us)");
  app.add_option("--delta", f.delta, "Rabi frequency (MHz)");
  app.add_option("--theta-i", f.theta_i, "initial angle (rad)");
  app.add_option("--theta-f", f.theta_f, "final angle (rad)");
  app.add_option("--t", f.t, "duration (us)");
  app.add_option("--config", f.config, "JSON run configuration");
  app.add_option("--out-dir", f.out_dir, "output directory");
  app.add_option("--seed", f.seed, "master seed");
  app.add_option("--format", f.format, "stdout format")->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--threads", f.threads, "worker cap (1 runs the serial kernels)")->check(CLI::PositiveNumber);
  app.set_help_all_flag("--help-all");

  // Subcommands inherit this, so global flags may follow the command name.
  app.fallthrough();
  std::map<std::string, CLI::App*> subs;
  for (const auto& name : kCommands) subs[name] = app.add_subcommand(name);
  subs["classify"]->add_option("--p-i", f.p_i, "initial momentum");
  for (const char* name : {"simulate", "densify"}) {
    subs[name]->add_option("--dt", f.dt, "time step (us)");
    subs[name]->add_option("--formulation", f.formulation, "bayesian_stratonovich or sme_ito");
  }
  for (const char* name : {"simulate", "densify", "verify"}) {
    subs[name]->add_option("--n", f.n_trajectories, "number of trajectories");
  }
  subs["verify"]->add_flag("--quick", f.quick, "skip the Monte-Carlo checks");
  subs["verify"]->add_flag("--strict", f.strict, "exit 3 when a check fails");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  }

  try {
#ifdef _OPENMP
    if (f.threads) omp_set_num_threads(*f.threads);
#endif
    const auto c = resolve(f);
    const Io io{out, err, f};
    const Execution exec = execution_for(f);
    const auto* sub = app.get_subcommands().front();
    const std::string cmd = sub->get_name();
    if (cmd == "portrait") return cmd_portrait(c, io);
    if (cmd == "periods") return cmd_periods(c, io);
    if (cmd == "onset") return cmd_onset(c, io);
    if (cmd == "manifold") return cmd_manifold(c, io, exec);
    if (cmd == "multipath") return cmd_multipath(c, io, exec);
    if (cmd == "classify") return cmd_classify(c, io);
    if (cmd == "simulate") return cmd_simulate(c, io, exec);
    if (cmd == "densify") return cmd_densify(c, io, exec);
    if (cmd == "limits") return cmd_limits(c, io);
    return cmd_verify(c, io, exec);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.is_domain_error() ? 2 : 1;
  } catch (const json::exception& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace opq::cli
