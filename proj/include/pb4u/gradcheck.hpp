#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pb4u {

struct EnergyCheck {
  std::string term;
  double max_relative_error = 0.0;
};

inline constexpr double kEnergyGradTolerance = 1e-4;

// Central-difference check (h = 1e-6, double) of each of the six energies on a
// randomly perturbed 5x5 grid with random contacts, in loss-term order.
std::vector<EnergyCheck> energy_gradcheck(std::uint64_t seed, double h = 1e-6);

}  // namespace pb4u
