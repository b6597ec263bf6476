#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pb4u/autodiff.hpp"
#include "pb4u/control.hpp"
#include "pb4u/graph.hpp"
#include "pb4u/mesh.hpp"

namespace pb4u {

struct NetworkConfig {
  double gamma = 0.9;
  int processor_depth = 3;
  int latent_dim = 128;

  void validate() const;
  bool operator==(const NetworkConfig&) const = default;
};

// Named float tensors. Every MLP `p` owns p.l0.w, p.l0.b, p.l1.w, p.l1.b,
// p.l2.w, p.l2.b with weights stored fan_in x fan_out.
struct ModelParams {
  std::map<std::string, ad::Matrix<float>> tensors;

  const ad::Matrix<float>& at(const std::string& name) const;
  std::size_t scalar_count() const;
  bool operator==(const ModelParams&) const = default;
};

// Expected tensor shapes for a configuration, keyed by name.
std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> param_shapes(const NetworkConfig& config);

// Glorot-uniform weights, zero biases, unit layer-norm gain.
ModelParams init_params(const NetworkConfig& config, std::uint64_t seed);

// A trained network plus the resolution calibration it was trained with.
struct Model {
  NetworkConfig network;
  ControlConfig control;
  // Whether S was applied during training.
  bool update_scaling = true;
  ModelParams params;
};

// Parameters placed on a tape, as trainable variables or as constants.
template <typename T>
struct BoundParams {
  ad::Tape<T>* tape = nullptr;
  std::map<std::string, ad::Var<T>> vars;

  static BoundParams bind(ad::Tape<T>& tape, const ModelParams& params, bool trainable);
  const ad::Var<T>& at(const std::string& name) const;
};

template <typename T>
struct LatentGraph {
  ad::Var<T> v;
  ad::Var<T> e;
  ad::Var<T> h;
};

// Two hidden ReLU layers. The first layer acts on the column-wise concat of
// `parts`; a part with an index list is gathered to rows first.
template <typename T>
struct MlpInput {
  ad::Var<T> x;
  ad::IndexList rows;
};

template <typename T>
ad::Var<T> mlp(const BoundParams<T>& p, const std::string& prefix, const std::vector<MlpInput<T>>& parts);

template <typename T>
LatentGraph<T> encode(const BoundParams<T>& p, const FeatureMatrix& vertex_features,
                      const FeatureMatrix& edge_features);

// K rounds of h <- gamma * h + LayerNorm(sum_j f_m(h_i, h_j, e_ij)).
template <typename T>
ad::Var<T> propagate(const BoundParams<T>& p, const LatentGraph<T>& latent, const ad::IndexList& receivers,
                     const ad::IndexList& senders, int k, double gamma);

template <typename T>
ad::Var<T> update(const BoundParams<T>& p, const ad::Var<T>& v, const ad::Var<T>& h);

template <typename T>
struct ProcessOutput {
  ad::Var<T> v;
  ad::Var<T> e;
};

template <typename T>
ProcessOutput<T> process(const BoundParams<T>& p, const ad::Var<T>& v, const ad::Var<T>& e,
                         const ad::IndexList& receivers, const ad::IndexList& senders, int depth);

template <typename T>
struct Accelerations {
  ad::Var<T> raw;     // decoder output
  ad::Var<T> scaled;  // raw scaled by s_i per vertex
};

// Decodes the first garment_count rows only.
template <typename T>
Accelerations<T> decode_and_scale(const BoundParams<T>& p, const ad::Var<T>& v, std::int32_t garment_count,
                                  const ScaleFactors& scale);

struct StepContext {
  const TriMesh* garment = nullptr;
  const TriMesh* body = nullptr;
  ScaleFactors scale;
  double world_radius = 0.0;
  // Garment vertices held fixed.
  std::vector<std::int32_t> pinned;
};

template <typename T>
struct StepForward {
  ad::Var<T> accel;
  ad::Var<T> accel_raw;
  ad::Var<T> velocity;  // U_{t+1}
  ad::Var<T> position;  // X_{t+1}
  SimGraph graph;
};

// One differentiable step. The graph is built from `state`; `position` and
// `velocity` enter the Euler update so multi-step unrolls stay connected.
template <typename T>
StepForward<T> forward_step(const BoundParams<T>& p, const NetworkConfig& config, const SimState& state,
                            const ad::Var<T>& position, const ad::Var<T>& velocity, const StepContext& ctx,
                            int k);

// Advances the state by one step without gradients. The body moves to
// `next_body_pos`. Throws numeric-divergence on non-finite output.
template <typename T>
SimState step(const ModelParams& params, const NetworkConfig& config, const SimState& state,
              const Points& next_body_pos, const StepContext& ctx, int k, Points* accel_out = nullptr,
              Points* accel_raw_out = nullptr);

}  // namespace pb4u
