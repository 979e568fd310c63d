#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfcn/model.hpp"

namespace dfcn {

struct GradcheckOptions {
  /// Central difference step.
  double step = 1e-4;
  /// Maximum accepted relative error.
  double tolerance = 1e-5;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-4;
  /// Spatial size of the probe inputs.
  std::int64_t height = 9;
  std::int64_t width = 9;
  /// Coordinates probed per network tensor (0 = all).
  std::int64_t network_coords_per_tensor = 24;
  std::uint64_t seed = 1;
};

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  /// Analytic and numeric values at the worst coordinate.
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::int64_t checked = 0;
  /// Coordinates whose perturbation flipped a ReLU or changed a branch.
  std::int64_t skipped = 0;
  bool pass = true;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;

  bool pass() const;
  double max_rel_error() const;
};

double relative_error(double analytic, double numeric, double floor);

/// Layer-wise backward passes against central differences in 64-bit mode.
GradcheckReport gradcheck_layers(const GradcheckOptions& options);
/// End-to-end network gradient (eval and train mode) for `config`.
GradcheckReport gradcheck_network(const NetworkConfig& config, const GradcheckOptions& options);
/// Both suites.
GradcheckReport gradcheck_all(const NetworkConfig& config, const GradcheckOptions& options);

/// A small network used when no configuration is given.
NetworkConfig gradcheck_default_config();

}  // namespace dfcn
