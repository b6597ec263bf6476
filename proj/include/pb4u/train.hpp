#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pb4u/network.hpp"
#include "pb4u/physics.hpp"
#include "pb4u/scene.hpp"

namespace pb4u {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

struct TrainConfig {
  int iterations = 500;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  std::vector<SceneSpec> scenes;
  // Directory that relative OBJ paths in `scenes` resolve against.
  std::string base_dir;
  AdamConfig adam;
  NetworkConfig network;
  int k_base = 8;
  LossWeights weights;
  // Differentiable steps unrolled per sample.
  int rollout_steps = 1;
  double clip_norm = 1.0;
  bool update_scaling = true;
  // Iterations between model re-rolls of the experience buffer; 0 disables.
  int refresh_interval = 50;
  int refresh_frames = 30;
  // Re-rolled frames are kept only up to the first one whose largest relative
  // edge length change exceeds this bound.
  double refresh_max_strain = 0.25;
  // Ballistic frames that seed the buffer; the probe set is drawn from them.
  int bootstrap_frames = 10;
  // Directory for the diagnostic dump written on a non-finite loss.
  std::string dump_dir;

  void validate() const;
};

struct TrainLogRow {
  int iter = 0;
  LossBreakdown loss;
};

struct TrainResult {
  Model model;
  std::vector<TrainLogRow> log;
  // Mean total loss over the fixed probe frames before and after training.
  double initial_probe_loss = 0.0;
  double final_probe_loss = 0.0;
  int refreshes = 0;
  int rejected_refreshes = 0;
};

// Free fall of the garment from the initial state with rest edge lengths
// enforced by projection and vertices pushed outside the analytic body
// surface. Returns `frames` states starting at t = 0.
std::vector<SimState> bootstrap_frames(const Scene& scene, int frames);

// Largest |l / l_rest - 1| over the mesh edges.
double max_edge_strain(const Points& positions, const TriMesh& mesh);

// Uniform draw from the buffer. Throws invalid-state if it is empty.
const SimState& sample_frame(const std::vector<SimState>& buffer, std::mt19937_64& rng);

// Mean weighted total loss of one model step from each frame.
double probe_loss(const Model& model, const Scene& scene, const std::vector<SimState>& frames,
                  const LossWeights& weights);

TrainResult train(const TrainConfig& config, const std::function<void(const TrainLogRow&)>& on_iter = {});

}  // namespace pb4u
