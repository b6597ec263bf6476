#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pb4u/network.hpp"
#include "pb4u/physics.hpp"
#include "pb4u/scene.hpp"

namespace pb4u {

struct RolloutOptions {
  int frames = 30;
  // false forces K = K_base.
  bool adaptive_k = true;
  // false forces S = 1.
  bool update_scaling = true;
  // Overrides both of the above for K when set.
  std::optional<int> forced_k;
  LossWeights weights;
};

struct FrameRecord {
  int frame = 0;
  Points positions;
  LossBreakdown loss;
  double latency_ms = 0.0;
};

struct RolloutResult {
  int k = 0;
  std::vector<FrameRecord> frames;
  bool diverged = false;
  std::string error;
};

// Propagation depth the rollout would use for this scene.
int rollout_k(const Model& model, const Scene& scene, const RolloutOptions& options);

// Autoregressive rollout from the scene's initial state in double precision.
// A numeric divergence stops the rollout and is reported in the result; the
// frames completed so far are kept. `on_frame` runs after every frame.
RolloutResult rollout(const Model& model, const Scene& scene, const RolloutOptions& options,
                      const std::function<void(const FrameRecord&)>& on_frame = {});

}  // namespace pb4u
