#include "pb4u/control.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "pb4u/error.hpp"

namespace pb4u {

ControlConfig calibrate(int k_base, double l_base) {
  if (k_base < 1) fail(ErrorKind::kInvalidArgument, "k_base must be >= 1");
  if (!(l_base > 0.0) || !std::isfinite(l_base)) {
    fail(ErrorKind::kInvalidArgument, "l_base must be finite and > 0");
  }
  return {k_base, l_base, static_cast<double>(k_base) * l_base};
}

int propagation_steps(const ControlConfig& config, double mean_edge) {
  if (!(mean_edge > 0.0) || !std::isfinite(mean_edge)) {
    fail(ErrorKind::kInvalidArgument, "mean edge length must be finite and > 0, got " +
                                          std::to_string(mean_edge));
  }
  constexpr double eps = std::numeric_limits<double>::epsilon();
  const double ratio = (config.distance / mean_edge) * (1.0 + 4.0 * eps);
  const double k = std::floor(ratio);
  if (k >= static_cast<double>(std::numeric_limits<int>::max())) {
    fail(ErrorKind::kInvalidArgument, "propagation step count overflows");
  }
  const int steps = static_cast<int>(k);
  return config.distance > 0.0 ? std::max(steps, 1) : std::max(steps, 0);
}

}  // namespace pb4u
