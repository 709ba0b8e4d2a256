#pragma once

// Monte-Carlo diffusive quantum trajectories in two equivalent forms:
// Euler-Maruyama on the Ito stochastic master equation, and Heun on the
// Bayesian (Stratonovich) readout equations. Both draw the same Wiener
// increments for a given (seed, trajectory id), so their ensembles can be
// compared path by path.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <boost/random/normal_distribution.hpp>
#include <nlohmann/json_fwd.hpp>

#include "opq/manifold.hpp"
#include "opq/system.hpp"

namespace opq {

enum class Formulation { BayesianStratonovich, SmeIto };

const char* to_string(Formulation f);
Formulation formulation_from_string(const std::string& name);

struct SimConfig {
  SystemSpec system;
  double dt = 1e-3;
  double t_final = 1.0;
  std::size_t n_trajectories = 1000;
  std::uint64_t seed = 1;
  Formulation formulation = Formulation::BayesianStratonovich;
  double theta_i = 0.0;
  // Steps between recorded samples; 0 keeps about 200 samples per trajectory.
  std::size_t record_stride = 0;
  bool record_bloch = false;  // also keep Bloch vectors and readouts
  bool noiseless = false;     // all increments zero: the deterministic limit
  // Largest accepted one-step deviation of |r|^2 from 1; 0 picks the
  // formulation default (see guard()).
  double purity_guard = 0.0;
  Execution execution = Execution::Parallel;

  /// Throws InvalidSpec unless dt <= min(tau) / 100, t_final > 0 and
  /// n_trajectories >= 1.
  void validate() const;
  std::size_t steps() const;
  std::size_t stride() const;
  double guard() const;
};

struct TrajectoryRecord {
  std::uint64_t id = 0;
  BlochState final_state;
  double theta_final = 0.0;  // unwrapped
  double max_purity_drift = 0.0;
  std::vector<float> theta;  // unwrapped, at Ensemble::times
  std::vector<BlochState> bloch;
  std::vector<Readouts> readouts;  // readouts of the step ending at each sample (0 at t = 0)
};

struct Ensemble {
  SimConfig config;
  std::vector<double> times;
  std::vector<TrajectoryRecord> trajectories;
  double max_purity_drift = 0.0;
};

/// Wiener increments N(0, dt) of one trajectory, drawn x channel first then
/// z channel each step (z only for the driven system). The generator is
/// seeded from (seed, id) alone, so a trajectory's noise does not depend on
/// which worker runs it or in what order.
class NoiseStream {
 public:
  NoiseStream(std::uint64_t seed, std::uint64_t id, double dt);
  double next() { return sqrt_dt_ * normal_(gen_); }

 private:
  std::mt19937_64 gen_;
  boost::random::normal_distribution<double> normal_;
  double sqrt_dt_;
};

/// One Euler-Maruyama step of the Ito SME (before renormalization).
BlochState sme_ito_step(const SystemSpec& spec, const BlochState& s, double dWx, double dWz,
                        double dt);

/// Readouts r_i = q_i + sqrt(tau_i) dW_i / dt for the state s.
Readouts noisy_readouts(const SystemSpec& spec, const BlochState& s, double dWx, double dWz,
                        double dt);

/// One Heun step of the Bayesian equations with the averaged increment
/// applied along the sphere's geodesic (before renormalization).
BlochState bayesian_step(const SystemSpec& spec, const BlochState& s, double dWx, double dWz,
                         double dt);

Ensemble simulate_ensemble(const SimConfig& config);

/// Trajectories whose wrapped final angle is within tol of theta_f. Throws
/// EmptySelection (detail = acceptance fraction, i.e. 0).
Ensemble postselect(const Ensemble& ensemble, double theta_f, double tol = 0.05);

double acceptance_fraction(const Ensemble& full, const Ensemble& selected);

/// Linear interpolation of a recorded track at time t.
double track_theta(const Ensemble& e, const TrajectoryRecord& r, double t);

struct DensityHistogram {
  std::size_t n_time = 0;
  std::size_t n_theta = 0;
  double t_min = 0.0, t_max = 0.0;
  double theta_min = 0.0, theta_max = 0.0;
  std::vector<double> counts;  // row-major, time outer
  std::vector<double> values;  // counts / max(counts)

  double at(std::size_t it, std::size_t ith) const { return values[it * n_theta + ith]; }
  double t_center(std::size_t it) const;
  double theta_center(std::size_t ith) const;
  long theta_bin(double theta) const;  // -1 outside the range
};

/// Max-normalized 2-D histogram of theta(t): each trajectory contributes
/// one count per time column, taken at the column center. The default
/// theta window is [theta_i - pi, theta_i + pi].
DensityHistogram density_histogram(const Ensemble& selected, std::size_t n_time = 60,
                                   std::size_t n_theta = 60);
DensityHistogram density_histogram(const Ensemble& selected, std::size_t n_time,
                                   std::size_t n_theta, double theta_min, double theta_max);

struct RidgeOptions {
  std::size_t window = 2;        // bins allowed between path and ridge
  std::size_t ridge_halfwidth = 3;  // a ridge bin is the maximum of +-halfwidth bins
  double ridge_level = 0.25;     // ... and at least this fraction of its column max
};

/// Whether each theta bin of time column it is a ridge (robust local maximum).
std::vector<bool> ridge_bins(const DensityHistogram& h, std::size_t it,
                             const RidgeOptions& opts = {});

/// Fraction of the path's column samples lying within opts.window bins of a
/// ridge bin; samples outside the theta window count as misses.
double ridge_fraction(const DensityHistogram& h, const OptimalPath& path,
                      const RidgeOptions& opts = {});

struct BranchCounts {
  std::vector<std::size_t> counts;
  std::vector<double> fractions;           // over all assigned trajectories
  std::vector<double> fractions_mlp_only;  // LLP and SP assignments discarded
};

/// Assigns each trajectory to the branch with the smallest discrete L2
/// distance in theta(t) over 100 uniformly resampled times.
BranchCounts branch_count_check(const Ensemble& selected, const MultipathSolution& solution);

/// Ito-vs-Stratonovich comparison: L1 distance of two normalized histograms
/// of wrapped final angles on [0, 2 pi).
double terminal_l1_distance(const Ensemble& a, const Ensemble& b, std::size_t bins = 60);

void write_tracks_csv(const Ensemble& e, const std::filesystem::path& file,
                      std::size_t max_trajectories = 200, std::size_t decimate = 1);
void write_histogram(const DensityHistogram& h, const std::filesystem::path& csv,
                     const std::filesystem::path& json, const nlohmann::json& config);

void to_json(nlohmann::json& j, const SimConfig& c);
/// Strict: unknown keys rejected; "system" required.
void from_json(const nlohmann::json& j, SimConfig& c);

}  // namespace opq
