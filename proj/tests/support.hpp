#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pb4u/error.hpp"
#include "pb4u/network.hpp"

namespace pb4u::test {

// Kind of the pb4u::Error thrown by fn, or nullopt if it returned normally.
inline std::optional<ErrorKind> error_kind(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("pb4u_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string operator/(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Narrow network for tests that do not depend on the production width.
inline NetworkConfig small_network(int depth = 1) {
  NetworkConfig c;
  c.latent_dim = 16;
  c.processor_depth = depth;
  return c;
}

// Copy of params with every tensor perturbed so biases are non-zero too.
inline ModelParams jitter_params(ModelParams p, std::uint64_t seed, float amount) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-amount, amount);
  for (auto& [name, t] : p.tensors) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += u(rng);
  }
  return p;
}

// Parameters whose decoded x-acceleration is gain * v_x + push, with every
// other path zeroed, so velocities grow geometrically and eventually overflow.
inline ModelParams unstable_params(const NetworkConfig& config, float gain, float push) {
  ModelParams p = init_params(config, 0);
  for (auto& [name, t] : p.tensors) t.setZero();
  // Hidden units 0 and 1 carry relu(a) and relu(-a), so a passes through exactly.
  auto pass = [&](const std::string& prefix, float out_scale) {
    p.tensors.at(prefix + ".l0.w")(0, 0) = 1.0f;
    p.tensors.at(prefix + ".l0.w")(0, 1) = -1.0f;
    p.tensors.at(prefix + ".l1.w")(0, 0) = 1.0f;
    p.tensors.at(prefix + ".l1.w")(1, 1) = 1.0f;
    p.tensors.at(prefix + ".l2.w")(0, 0) = out_scale;
    p.tensors.at(prefix + ".l2.w")(1, 0) = -out_scale;
  };
  pass("vertex_encoder", 1.0f);
  pass("update", 1.0f);
  pass("decoder", gain);
  p.tensors.at("decoder.l2.b")(0, 0) = push;
  return p;
}

}  // namespace pb4u::test
