#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Geometry>

#include "pb4u/graph.hpp"
#include "support.hpp"

using namespace pb4u;
using pb4u::test::error_kind;

namespace {

Points random_points(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Points p(n, 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
  return p;
}

std::vector<WorldEdge> all_pairs(const Points& g, const Points& b, double r) {
  std::vector<WorldEdge> out;
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      if ((g.row(i) - b.row(j)).norm() < r) out.emplace_back(i, j);
    }
  }
  return out;
}

SimState rest_state(const TriMesh& garment, const TriMesh& body) {
  SimState s;
  s.garment_pos = garment.rest_positions();
  s.garment_vel = Points::Zero(garment.vertex_count(), 3);
  s.garment_pos_prev = s.garment_pos;
  s.body_pos = body.rest_positions();
  s.body_pos_prev = s.body_pos;
  return s;
}

}  // namespace

TEST_SUITE("graph") {

TEST_CASE("world edges at a threshold") {
  Points g(1, 3), b(1, 3);
  g << 0, 0, 0;
  b << 0, 0.5, 0;
  CHECK(build_world_edges(g, b, 0.4).empty());
  const auto e = build_world_edges(g, b, 0.6);
  REQUIRE(e.size() == 1);
  CHECK(e[0] == WorldEdge{0, 0});
  // Strictly below the radius.
  CHECK(build_world_edges(g, b, 0.5).empty());
  CHECK(error_kind([&] { build_world_edges(g, b, 0.0); }) == ErrorKind::kInvalidArgument);
}

TEST_CASE("world edges equal the all-pairs oracle") {
  std::mt19937_64 rng(11);
  const Points g = random_points(100, rng);
  const Points b = random_points(100, rng);
  CHECK(build_world_edges(g, b, 0.2) == all_pairs(g, b, 0.2));
  std::uniform_real_distribution<double> radius(0.01, 0.6);
  for (int trial = 0; trial < 5; ++trial) {
    const double r = radius(rng);
    CHECK(build_world_edges(g, b, r) == all_pairs(g, b, r));
  }
  // Negative coordinates and far-apart clusters.
  const Points g2 = (random_points(50, rng).array() * 4.0 - 2.0).matrix();
  const Points b2 = (random_points(50, rng).array() * 4.0 - 2.0).matrix();
  CHECK(build_world_edges(g2, b2, 0.5) == all_pairs(g2, b2, 0.5));
}

TEST_CASE("vertex features at rest") {
  const TriMesh garment = make_grid_cloth(3, 1.0);
  const TriMesh body = make_icosphere(0.2, 1);
  const SimState s = rest_state(garment, body);
  const Points gn = vertex_normals(s.garment_pos, garment);
  const Points bn = vertex_normals(s.body_pos, body);
  const FeatureMatrix f = vertex_features(s, garment, body, gn, bn);
  REQUIRE(f.rows() == garment.vertex_count() + body.vertex_count());
  REQUIRE(f.cols() == kVertexFeatureWidth);
  for (std::int32_t i = 0; i < garment.vertex_count(); ++i) {
    CHECK(f.block<1, 3>(i, 0).isZero(0.0));
    CHECK(f.block<1, 3>(i, 4) == Eigen::RowVector3d(0, 1, 0));
    CHECK(f(i, 12) == 1.0);
    CHECK(f(i, 13) == 0.0);
  }
  for (std::int32_t b = 0; b < body.vertex_count(); ++b) {
    const Eigen::Index r = garment.vertex_count() + b;
    CHECK(f(r, 3) == 0.0);
    CHECK(f(r, 12) == 0.0);
    CHECK(f(r, 13) == 1.0);
  }
}

TEST_CASE("vertex mass feature") {
  MaterialParams mat;
  mat.mass_density = 0.3;
  const TriMesh garment = make_grid_cloth(3, 1.0, mat);
  const TriMesh body = make_icosphere(0.2, 0);
  const SimState s = rest_state(garment, body);
  const FeatureMatrix f = vertex_features(s, garment, body, vertex_normals(s.garment_pos, garment),
                                          vertex_normals(s.body_pos, body));
  double area = 0.0;
  for (std::size_t t = 0; t < garment.triangles().size(); ++t) {
    const Triangle& tri = garment.triangles()[t];
    if (std::find(tri.begin(), tri.end(), 4) == tri.end()) continue;
    const Eigen::Vector3d a = garment.rest_positions().row(tri[0]);
    const Eigen::Vector3d b = garment.rest_positions().row(tri[1]);
    const Eigen::Vector3d c = garment.rest_positions().row(tri[2]);
    area += 0.5 * ((b - a).cross(c - a)).norm();
  }
  CHECK(f(4, 3) == doctest::Approx(0.3 * area / 3).epsilon(1e-15));
}

TEST_CASE("vertex features ignore translation") {
  const TriMesh garment = make_grid_cloth(4, 1.0);
  const TriMesh body = make_icosphere(0.2, 1);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 0.1);
  SimState s = rest_state(garment, body);
  for (Eigen::Index i = 0; i < s.garment_vel.size(); ++i) s.garment_vel.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < s.body_pos.size(); ++i) s.body_pos.data()[i] += n(rng);
  SimState t = s;
  const Eigen::RowVector3d d(5, 5, 5);
  t.garment_pos.rowwise() += d;
  t.garment_pos_prev.rowwise() += d;
  t.body_pos.rowwise() += d;
  t.body_pos_prev.rowwise() += d;
  const FeatureMatrix a = vertex_features(s, garment, body, vertex_normals(s.garment_pos, garment),
                                          vertex_normals(s.body_pos, body));
  const FeatureMatrix b = vertex_features(t, garment, body, vertex_normals(t.garment_pos, garment),
                                          vertex_normals(t.body_pos, body));
  // Body velocity is a difference of translated positions; compare to rounding.
  CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(a.topRows(garment.vertex_count()) == b.topRows(garment.vertex_count()));

  SimState bad = s;
  bad.garment_vel = Points::Zero(3, 3);
  CHECK(error_kind([&] {
          vertex_features(bad, garment, body, vertex_normals(s.garment_pos, garment),
                          vertex_normals(s.body_pos, body));
        }) == ErrorKind::kInvalidArgument);
}

TEST_CASE("edge features") {
  const TriMesh m = make_grid_cloth(3, 1.0);
  const DirectedEdges edges = mesh_directed_edges(m);
  REQUIRE(edges.size() == 2 * m.edges().size());

  const FeatureMatrix rest = edge_features(m.rest_positions(), m.rest_positions(), edges);
  REQUIRE(rest.cols() == kEdgeFeatureWidth);
  CHECK(rest.leftCols(3) == rest.middleCols(3, 3));
  CHECK((rest.col(6).array() == 1.0).all());

  const Points doubled = 2.0 * m.rest_positions();
  const FeatureMatrix twice = edge_features(doubled, m.rest_positions(), edges);
  CHECK(twice.leftCols(3) == 2.0 * twice.middleCols(3, 3));
  CHECK((twice.col(6).array() == 2.0).all());

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  Points x = m.rest_positions();
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] += u(rng);
  const FeatureMatrix f = edge_features(x, m.rest_positions(), edges);
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const std::int32_t i = edges.receivers[k], j = edges.senders[k];
    const double cur = (x.row(j) - x.row(i)).norm();
    const double r = (m.rest_positions().row(j) - m.rest_positions().row(i)).norm();
    CHECK(std::abs(f(k, 6) - cur / r) <= 1e-12);
  }

  Points dup = m.rest_positions();
  DirectedEdges degenerate;
  degenerate.receivers = {0};
  degenerate.senders = {0};
  CHECK(error_kind([&] { edge_features(dup, dup, degenerate); }) == ErrorKind::kInvalidMesh);
}

TEST_CASE("world edge features encode distance over radius") {
  Points g(1, 3), b(1, 3);
  g << 0, 0, 0;
  b << 0, 0.3, 0;
  const std::vector<WorldEdge> w{{0, 0}};
  const FeatureMatrix f = world_edge_features(g, b, w, 0.6);
  CHECK(f(0, 6) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(f.block<1, 3>(0, 3).norm() == doctest::Approx(0.6).epsilon(1e-15));
}

TEST_CASE("graph is translation invariant and resolution independent in width") {
  const TriMesh garment = make_grid_cloth(6, 1.0);
  const TriMesh body = make_icosphere(0.3, 2);
  SimState s = rest_state(garment, body);
  s.garment_pos.col(1).array() += 0.31;
  s.garment_pos_prev = s.garment_pos;
  SimState t = s;
  const Eigen::RowVector3d d(17.3, -4.2, 8.9);
  t.garment_pos.rowwise() += d;
  t.garment_pos_prev.rowwise() += d;
  t.body_pos.rowwise() += d;
  t.body_pos_prev.rowwise() += d;
  const TriMesh garment_t(garment.rest_positions().rowwise() + d, garment.triangles());
  const SimGraph a = build_graph(s, garment, body, 0.35);
  const SimGraph b = build_graph(t, garment_t, body, 0.35);
  REQUIRE(a.edge_count() == b.edge_count());
  CHECK(a.edge_count() > a.mesh_edge_count);
  CHECK(*a.receivers == *b.receivers);
  CHECK(*a.senders == *b.senders);
  CHECK((a.vertex_features - b.vertex_features).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((a.edge_features - b.edge_features).cwiseAbs().maxCoeff() <= 1e-12);

  const TriMesh fine = subdivide_midpoint(garment);
  SimState sf = rest_state(fine, body);
  const SimGraph c = build_graph(sf, fine, body, 0.35);
  CHECK(c.vertex_features.cols() == a.vertex_features.cols());
  CHECK(c.edge_features.cols() == a.edge_features.cols());
}

}
