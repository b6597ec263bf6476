#pragma once

namespace pb4u {

// Propagation depth calibrated at the base (training) resolution. The
// physical propagation distance is k_base * l_base.
struct ControlConfig {
  int k_base = 8;
  double l_base = 0.0;  // meters
  double distance = 0.0;  // meters

  bool operator==(const ControlConfig&) const = default;
};

ControlConfig calibrate(int k_base, double l_base);

// floor(distance / mean_edge), guarded against rounding just below an exact
// integer, and clamped to at least 1.
int propagation_steps(const ControlConfig& config, double mean_edge);

}  // namespace pb4u
