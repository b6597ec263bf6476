#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace pb4u {

using Vec3 = Eigen::Vector3d;
// One row per vertex.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Triangle = std::array<std::int32_t, 3>;
// Undirected edge stored as (lo, hi).
using Edge = std::array<std::int32_t, 2>;

struct MaterialParams {
  double lame_mu = 23600.0;        // Pa
  double lame_lambda = 44400.0;    // Pa
  double bending_coeff = 3.9625e-5;  // N*m
  double mass_density = 0.20022;   // kg/m^2
  double friction_coeff = 0.5;

  void validate() const;
  bool operator==(const MaterialParams&) const = default;
};

// Rest-state triangle mesh. Edges, rest lengths and adjacency are derived
// from the triangle list at construction and never change afterwards.
class TriMesh {
 public:
  TriMesh() = default;
  TriMesh(Points rest_positions, std::vector<Triangle> triangles,
          MaterialParams material = {});

  std::int32_t vertex_count() const {
    return static_cast<std::int32_t>(rest_positions_.rows());
  }
  const Points& rest_positions() const { return rest_positions_; }
  const std::vector<Triangle>& triangles() const { return triangles_; }
  // Sorted lexicographically by (lo, hi).
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<double>& rest_edge_lengths() const { return rest_edge_lengths_; }
  const std::vector<double>& rest_triangle_areas() const { return rest_areas_; }
  // Sorted neighbour indices of vertex i.
  std::span<const std::int32_t> neighbors(std::int32_t i) const;
  // Edge indices incident to vertex i, parallel to neighbors(i).
  std::span<const std::int32_t> incident_edges(std::int32_t i) const;
  const MaterialParams& material() const { return material_; }
  void set_material(const MaterialParams& material);

  // Index of the undirected edge (a, b), or -1.
  std::int32_t find_edge(std::int32_t a, std::int32_t b) const;

 private:
  Points rest_positions_;
  std::vector<Triangle> triangles_;
  std::vector<Edge> edges_;
  std::vector<double> rest_edge_lengths_;
  std::vector<double> rest_areas_;
  std::vector<std::int32_t> adjacency_offsets_;
  std::vector<std::int32_t> adjacency_;
  std::vector<std::int32_t> adjacency_edges_;
  MaterialParams material_;
};

// Per-vertex mean of incident rest edge lengths.
struct ScaleFactors {
  Eigen::VectorXd s;

  static ScaleFactors ones(Eigen::Index n) { return {Eigen::VectorXd::Ones(n)}; }
};

// n x n grid centred at the origin in the x-z plane, counter-clockwise seen
// from +y, every quad split along its (i, j)-(i+1, j+1) diagonal.
TriMesh make_grid_cloth(int n, double side, const MaterialParams& material = {});

// 1-to-4 midpoint split. Original vertices keep their indices; the midpoint of
// edge e becomes vertex `vertex_count() + e`.
TriMesh subdivide_midpoint(const TriMesh& mesh);

// Triangulated sphere of the given radius centred at the origin, built from an
// icosahedron by repeated midpoint subdivision and projection. Outward winding.
TriMesh make_icosphere(double radius, int subdivisions);

double mean_edge_length(const TriMesh& mesh);

ScaleFactors rest_scale_factors(const TriMesh& mesh);

// Area-weighted vertex normals. Vertices whose weighted sum vanishes get +y.
Points vertex_normals(const Points& positions, const TriMesh& mesh);

// Lumped vertex masses: density times one third of the incident rest areas.
Eigen::VectorXd lumped_masses(const TriMesh& mesh);

TriMesh read_obj(std::istream& in, const MaterialParams& material = {});
TriMesh read_obj(const std::string& path, const MaterialParams& material = {});
void write_obj(std::ostream& out, const Points& positions,
               const std::vector<Triangle>& triangles);
void write_obj(const std::string& path, const Points& positions,
               const std::vector<Triangle>& triangles);

}  // namespace pb4u
