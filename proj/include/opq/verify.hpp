#pragma once

// Built-in acceptance suite: one check per headline result, each printing a
// single PASS/FAIL line with the measured numbers. Shared by `opq verify`
// and the acceptance test binary.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "opq/manifold.hpp"

namespace opq {

struct CheckResult {
  explicit CheckResult(std::string n = {}) : name(std::move(n)) {}

  std::string name;
  bool pass = false;
  bool skipped = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  bool stochastic = true;  // the Monte-Carlo checks take a few minutes
  std::size_t n_trajectories = 100'000;
  std::uint64_t seed = 7;
  Execution execution = Execution::Parallel;
};

std::vector<CheckResult> run_acceptance(const VerifyOptions& opts = {},
                                        const std::function<void(const CheckResult&)>& on_result = {});

/// "PASS  name  [1.2 s]  detail"
std::string format_check(const CheckResult& r);

/// Period of the island orbit of energy E found by integrating Hamilton's
/// equations from the island center until the orbit closes.
double full_orbit_period(const SystemSpec& spec, double E);

/// Kolmogorov-Smirnov statistic of samples against a continuous CDF.
double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf);

}  // namespace opq
