#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "pb4u/autodiff.hpp"
#include "pb4u/mesh.hpp"

namespace pb4u {

// Garment and body configuration at time t plus one step of history.
struct SimState {
  Points garment_pos;
  Points garment_vel;
  Points garment_pos_prev;
  Points body_pos;
  Points body_pos_prev;
  double time_step = 1.0 / 30.0;
  double time = 0.0;

  // Throws invalid-argument on size mismatch or non-positive time step.
  void validate(std::int32_t garment_vertices, std::int32_t body_vertices) const;
};

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Vertex features: velocity(3) mass(1) normal(3) material(5) type one-hot(2).
inline constexpr int kVertexFeatureWidth = 14;
// Edge features: current relative vector(3) rest relative vector(3) length ratio(1).
inline constexpr int kEdgeFeatureWidth = 7;

// World edge as (garment index, body index); body indices are local to the body mesh.
using WorldEdge = std::pair<std::int32_t, std::int32_t>;

// Directed edges as (receiver, sender) pairs in parallel arrays. Receiver i
// aggregates the message from sender j along edge (i, j).
struct DirectedEdges {
  std::vector<std::int32_t> receivers;
  std::vector<std::int32_t> senders;

  std::size_t size() const { return receivers.size(); }
};

// Per-timestep graph. Vertices 0..garment_count-1 are garment vertices, the
// rest are body vertices offset by garment_count. The first mesh_edge_count
// edges are garment mesh edges (both directions), the remainder are
// body->garment world edges.
struct SimGraph {
  std::int32_t garment_count = 0;
  std::int32_t body_count = 0;
  std::size_t mesh_edge_count = 0;
  ad::IndexList receivers;
  ad::IndexList senders;
  FeatureMatrix vertex_features;
  FeatureMatrix edge_features;

  std::int32_t vertex_count() const { return garment_count + body_count; }
  std::size_t edge_count() const { return receivers ? receivers->size() : 0; }
};

// All (garment, body) pairs with distance strictly below radius, sorted.
// Uses a uniform spatial hash with cell size equal to the radius.
std::vector<WorldEdge> build_world_edges(const Points& garment_pos, const Points& body_pos,
                                         double radius);

// Both directions of every undirected mesh edge, in mesh edge order.
DirectedEdges mesh_directed_edges(const TriMesh& mesh);

FeatureMatrix vertex_features(const SimState& state, const TriMesh& garment, const TriMesh& body,
                              const Points& garment_normals, const Points& body_normals);

// Features for directed edges over one point set with a rest configuration.
FeatureMatrix edge_features(const Points& positions, const Points& rest_positions,
                            const DirectedEdges& edges);

// World-edge features: the rest vector is the current vector rescaled to the
// world-edge radius, so the ratio slot holds distance / radius.
FeatureMatrix world_edge_features(const Points& garment_pos, const Points& body_pos,
                                  const std::vector<WorldEdge>& world_edges, double radius);

SimGraph build_graph(const SimState& state, const TriMesh& garment, const TriMesh& body,
                     double world_radius);

}  // namespace pb4u
