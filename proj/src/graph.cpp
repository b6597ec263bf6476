#include "pb4u/graph.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "pb4u/error.hpp"

namespace pb4u {

void SimState::validate(std::int32_t garment_vertices, std::int32_t body_vertices) const {
  if (!(time_step > 0.0)) fail(ErrorKind::kInvalidArgument, "time step must be > 0");
  auto check = [](const Points& p, std::int32_t n, const char* name) {
    if (p.rows() != n) {
      fail(ErrorKind::kInvalidArgument, std::string(name) + " has " + std::to_string(p.rows()) +
                                            " rows, expected " + std::to_string(n));
    }
  };
  check(garment_pos, garment_vertices, "garment_pos");
  check(garment_vel, garment_vertices, "garment_vel");
  check(garment_pos_prev, garment_vertices, "garment_pos_prev");
  check(body_pos, body_vertices, "body_pos");
  check(body_pos_prev, body_vertices, "body_pos_prev");
}

namespace {

using Cell = std::array<std::int64_t, 3>;

Cell cell_of(const Points& p, Eigen::Index i, double inv_size) {
  return {static_cast<std::int64_t>(std::floor(p(i, 0) * inv_size)),
          static_cast<std::int64_t>(std::floor(p(i, 1) * inv_size)),
          static_cast<std::int64_t>(std::floor(p(i, 2) * inv_size))};
}

}  // namespace

std::vector<WorldEdge> build_world_edges(const Points& garment_pos, const Points& body_pos,
                                         double radius) {
  if (!(radius > 0.0)) fail(ErrorKind::kInvalidArgument, "world-edge radius must be > 0");
  const double inv = 1.0 / radius;
  const double r2 = radius * radius;

  // Sorted (cell, body index) table; lookups by binary search keep iteration
  // order independent of hashing.
  std::vector<std::pair<Cell, std::int32_t>> table;
  table.reserve(static_cast<std::size_t>(body_pos.rows()));
  for (Eigen::Index b = 0; b < body_pos.rows(); ++b) {
    table.emplace_back(cell_of(body_pos, b, inv), static_cast<std::int32_t>(b));
  }
  std::sort(table.begin(), table.end());

  std::vector<WorldEdge> out;
  std::vector<std::int32_t> hits;
  for (Eigen::Index g = 0; g < garment_pos.rows(); ++g) {
    const Cell c = cell_of(garment_pos, g, inv);
    hits.clear();
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          const Cell key{c[0] + dx, c[1] + dy, c[2] + dz};
          auto lo = std::lower_bound(table.begin(), table.end(), std::make_pair(key, std::int32_t{-1}));
          for (auto it = lo; it != table.end() && it->first == key; ++it) {
            const double d2 = (garment_pos.row(g) - body_pos.row(it->second)).squaredNorm();
            if (d2 < r2) hits.push_back(it->second);
          }
        }
      }
    }
    std::sort(hits.begin(), hits.end());
    for (std::int32_t b : hits) out.emplace_back(static_cast<std::int32_t>(g), b);
  }
  return out;
}

DirectedEdges mesh_directed_edges(const TriMesh& mesh) {
  DirectedEdges out;
  out.receivers.reserve(mesh.edges().size() * 2);
  out.senders.reserve(mesh.edges().size() * 2);
  for (const Edge& e : mesh.edges()) {
    out.receivers.push_back(e[0]);
    out.senders.push_back(e[1]);
    out.receivers.push_back(e[1]);
    out.senders.push_back(e[0]);
  }
  return out;
}

namespace {

void write_material(FeatureMatrix& f, Eigen::Index row, const MaterialParams& m) {
  // log1p keeps Pa-scale moduli and kg/m^2-scale densities in a common range.
  f(row, 7) = std::log1p(m.lame_mu);
  f(row, 8) = std::log1p(m.lame_lambda);
  f(row, 9) = std::log1p(m.bending_coeff);
  f(row, 10) = std::log1p(m.mass_density);
  f(row, 11) = std::log1p(m.friction_coeff);
}

}  // namespace

FeatureMatrix vertex_features(const SimState& state, const TriMesh& garment, const TriMesh& body,
                              const Points& garment_normals, const Points& body_normals) {
  const std::int32_t ng = garment.vertex_count();
  const std::int32_t nb = body.vertex_count();
  state.validate(ng, nb);
  if (garment_normals.rows() != ng || body_normals.rows() != nb) {
    fail(ErrorKind::kInvalidArgument, "normal arrays do not match mesh sizes");
  }
  FeatureMatrix f = FeatureMatrix::Zero(ng + nb, kVertexFeatureWidth);
  const Eigen::VectorXd mass = lumped_masses(garment);
  for (std::int32_t i = 0; i < ng; ++i) {
    f.block<1, 3>(i, 0) = state.garment_vel.row(i);
    f(i, 3) = mass[i];
    f.block<1, 3>(i, 4) = garment_normals.row(i);
    write_material(f, i, garment.material());
    f(i, 12) = 1.0;
  }
  const double inv_dt = 1.0 / state.time_step;
  for (std::int32_t b = 0; b < nb; ++b) {
    const Eigen::Index r = ng + b;
    f.block<1, 3>(r, 0) = (state.body_pos.row(b) - state.body_pos_prev.row(b)) * inv_dt;
    f.block<1, 3>(r, 4) = body_normals.row(b);
    f(r, 13) = 1.0;
  }
  return f;
}

FeatureMatrix edge_features(const Points& positions, const Points& rest_positions,
                            const DirectedEdges& edges) {
  if (positions.rows() != rest_positions.rows()) {
    fail(ErrorKind::kInvalidArgument, "current and rest positions differ in size");
  }
  FeatureMatrix f(static_cast<Eigen::Index>(edges.size()), kEdgeFeatureWidth);
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const std::int32_t i = edges.receivers[k];
    const std::int32_t j = edges.senders[k];
    const Eigen::RowVector3d cur = positions.row(j) - positions.row(i);
    const Eigen::RowVector3d rest = rest_positions.row(j) - rest_positions.row(i);
    const double rest_len = rest.norm();
    if (!(rest_len > 0.0)) {
      fail(ErrorKind::kInvalidMesh, "edge (" + std::to_string(i) + ", " + std::to_string(j) +
                                        ") has zero rest length");
    }
    const Eigen::Index r = static_cast<Eigen::Index>(k);
    f.block<1, 3>(r, 0) = cur;
    f.block<1, 3>(r, 3) = rest;
    f(r, 6) = cur.norm() / rest_len;
  }
  return f;
}

FeatureMatrix world_edge_features(const Points& garment_pos, const Points& body_pos,
                                  const std::vector<WorldEdge>& world_edges, double radius) {
  FeatureMatrix f(static_cast<Eigen::Index>(world_edges.size()), kEdgeFeatureWidth);
  for (std::size_t k = 0; k < world_edges.size(); ++k) {
    const auto [g, b] = world_edges[k];
    // Receiver is the garment vertex, sender the body vertex.
    const Eigen::RowVector3d cur = body_pos.row(b) - garment_pos.row(g);
    const double len = cur.norm();
    Eigen::RowVector3d rest(0.0, radius, 0.0);
    if (len > 0.0) rest = cur * (radius / len);
    const Eigen::Index r = static_cast<Eigen::Index>(k);
    f.block<1, 3>(r, 0) = cur;
    f.block<1, 3>(r, 3) = rest;
    f(r, 6) = len / radius;
  }
  return f;
}

SimGraph build_graph(const SimState& state, const TriMesh& garment, const TriMesh& body,
                     double world_radius) {
  const std::int32_t ng = garment.vertex_count();
  const std::int32_t nb = body.vertex_count();
  state.validate(ng, nb);

  const Points gn = vertex_normals(state.garment_pos, garment);
  const Points bn = vertex_normals(state.body_pos, body);

  DirectedEdges mesh_edges = mesh_directed_edges(garment);
  const std::vector<WorldEdge> world = build_world_edges(state.garment_pos, state.body_pos, world_radius);

  SimGraph g;
  g.garment_count = ng;
  g.body_count = nb;
  g.mesh_edge_count = mesh_edges.size();
  g.vertex_features = vertex_features(state, garment, body, gn, bn);

  const FeatureMatrix mesh_f = edge_features(state.garment_pos, garment.rest_positions(), mesh_edges);
  const FeatureMatrix world_f = world_edge_features(state.garment_pos, state.body_pos, world, world_radius);
  g.edge_features.resize(mesh_f.rows() + world_f.rows(), kEdgeFeatureWidth);
  g.edge_features.topRows(mesh_f.rows()) = mesh_f;
  g.edge_features.bottomRows(world_f.rows()) = world_f;

  std::vector<std::int32_t> recv = std::move(mesh_edges.receivers);
  std::vector<std::int32_t> send = std::move(mesh_edges.senders);
  recv.reserve(recv.size() + world.size());
  send.reserve(send.size() + world.size());
  for (const auto& [gi, bi] : world) {
    recv.push_back(gi);
    send.push_back(ng + bi);
  }
  g.receivers = ad::make_index(std::move(recv));
  g.senders = ad::make_index(std::move(send));
  return g;
}

}  // namespace pb4u
