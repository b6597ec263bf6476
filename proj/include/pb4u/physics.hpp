#pragma once

#include <cstdint>
#include <vector>

#include "pb4u/autodiff.hpp"
#include "pb4u/graph.hpp"
#include "pb4u/mesh.hpp"

namespace pb4u {

using RowMatrix4 = Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor>;

// Per-mesh constants for the elastic energies.
struct RestGeometry {
  std::int32_t vertex_count = 0;
  // Triangle corners.
  ad::IndexList tri_a, tri_b, tri_c;
  // Rest metric of each triangle: |e1|^2, e1.e2, |e2|^2 with e1 = b - a, e2 = c - a.
  RowMatrix4 rest_metric;
  // Inverse of the 2x2 rest shape matrix, entries (00, 01, 10, 11).
  RowMatrix4 inv_rest;
  Eigen::VectorXd areas;
  // Hinges over interior edges: (v0, v1) is the shared edge, v2 and v3 the
  // opposite vertices of the faces on either side.
  ad::IndexList hinge_v0, hinge_v1, hinge_v2, hinge_v3;
  Eigen::VectorXd rest_angle;
  Eigen::VectorXd hinge_weight;
  Eigen::VectorXd masses;

  static RestGeometry build(const TriMesh& mesh);
  std::size_t hinge_count() const { return hinge_v0 ? hinge_v0->size() : 0; }
};

// Signed dihedral angle of every hinge; zero when both faces are coplanar.
Eigen::VectorXd hinge_angles(const Points& positions, const RestGeometry& rest);

// Garment vertices paired with one body vertex and its unit normal.
struct BodyPairs {
  std::vector<std::int32_t> garment;
  Points body_pos;
  Points body_normal;

  std::size_t size() const { return garment.size(); }
};

// For each garment vertex, the nearest body vertex strictly within radius
// (ties resolved to the lower body index).
BodyPairs nearest_body_pairs(const Points& garment_pos, const Points& body_pos,
                             const Points& body_normals, double radius);

// Subset of `pairs` whose signed distance n . (x_g - x_b) is below margin.
BodyPairs contacts_within(const BodyPairs& pairs, const Points& garment_pos, double margin);

struct LossWeights {
  double stretch = 1.0;
  double bending = 1.0;
  double collision = 1.0;
  double gravity = 1.0;
  double friction = 1.0;
  double inertia = 1.0;

  bool operator==(const LossWeights&) const = default;
};

// Per-frame energies, each divided by the garment vertex count. `total` is
// the weighted sum of the six terms.
struct LossBreakdown {
  double stretch = 0.0;
  double bending = 0.0;
  double collision = 0.0;
  double gravity = 0.0;
  double friction = 0.0;
  double inertia = 0.0;
  double total = 0.0;

  bool all_finite() const;
};

double weighted_total(const LossBreakdown& terms, const LossWeights& weights);

// Everything the composite loss needs besides the predicted positions.
struct LossContext {
  const RestGeometry* rest = nullptr;
  MaterialParams material;
  Points current;           // x_t
  Points inertial_target;   // x_t + dt * u_t
  BodyPairs collision;      // predicted garment vs. body at t+1
  BodyPairs friction;       // contacts at t
  double gravity = 9.81;
  double time_step = 1.0 / 30.0;
  double collision_margin = 2e-3;
};

// Collision pairs are found against `predicted`, friction contacts against
// the state at t.
LossContext make_loss_context(const RestGeometry& rest, const MaterialParams& material,
                              const SimState& state, const Points& predicted,
                              const Points& next_body_pos, const Points& next_body_normals,
                              const Points& body_normals, double radius, double collision_margin,
                              double gravity);

template <typename T>
ad::Var<T> stretch_energy(const ad::Var<T>& x, const RestGeometry& rest, const MaterialParams& material);
template <typename T>
ad::Var<T> bending_energy(const ad::Var<T>& x, const RestGeometry& rest, const MaterialParams& material);
template <typename T>
ad::Var<T> collision_penalty(const ad::Var<T>& x, const BodyPairs& pairs, double margin);
template <typename T>
ad::Var<T> gravity_energy(const ad::Var<T>& x, const Eigen::VectorXd& masses, double g);
template <typename T>
ad::Var<T> friction_penalty(const ad::Var<T>& x, const Points& previous, const BodyPairs& contacts,
                            const Eigen::VectorXd& masses, double friction_coeff, double dt);
template <typename T>
ad::Var<T> inertia_term(const ad::Var<T>& x, const Points& inertial_target,
                        const Eigen::VectorXd& masses, double dt);

template <typename T>
struct LossTerms {
  ad::Var<T> stretch, bending, collision, gravity, friction, inertia, total;

  LossBreakdown values(const LossWeights& weights) const;
};

template <typename T>
LossTerms<T> total_loss(const ad::Var<T>& predicted, const LossContext& ctx, const LossWeights& weights);

// Double-precision evaluation without gradients. Throws numeric-divergence
// if any term is non-finite.
LossBreakdown evaluate_loss(const Points& predicted, const LossContext& ctx,
                            const LossWeights& weights = {});

}  // namespace pb4u
