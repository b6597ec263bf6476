#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <Eigen/Geometry>

#include "pb4u/mesh.hpp"
#include "support.hpp"

using namespace pb4u;
using pb4u::test::error_kind;

namespace {

// Brute-force s_i from a single pass over the edge list.
Eigen::VectorXd scale_oracle(const TriMesh& m) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(m.vertex_count());
  Eigen::VectorXd count = Eigen::VectorXd::Zero(m.vertex_count());
  const auto& e = m.edges();
  const auto& l = m.rest_edge_lengths();
  for (std::size_t k = 0; k < e.size(); ++k) {
    for (std::int32_t v : e[k]) {
      sum[v] += l[k];
      count[v] += 1.0;
    }
  }
  return sum.cwiseQuotient(count);
}

double edge_length(const TriMesh& m, std::int32_t a, std::int32_t b) {
  const std::int32_t e = m.find_edge(a, b);
  REQUIRE(e >= 0);
  return m.rest_edge_lengths()[e];
}

}  // namespace

TEST_SUITE("mesh") {

TEST_CASE("grid cloth counts") {
  const TriMesh m2 = make_grid_cloth(2, 1.0);
  CHECK(m2.vertex_count() == 4);
  CHECK(m2.triangles().size() == 2);
  CHECK(m2.edges().size() == 5);

  const TriMesh m3 = make_grid_cloth(3, 1.0);
  CHECK(m3.vertex_count() == 9);
  CHECK(m3.triangles().size() == 8);
  CHECK(m3.edges().size() == 16);

  const TriMesh m24 = make_grid_cloth(24, 1.0);
  CHECK(m24.triangles().size() == 23u * 23u * 2u);
  CHECK(edge_length(m24, 0, 1) == doctest::Approx(1.0 / 23.0).epsilon(1e-14));
  CHECK(edge_length(m24, 0, 24) == doctest::Approx(1.0 / 23.0).epsilon(1e-14));
}

TEST_CASE("grid cloth rejects bad arguments") {
  CHECK(error_kind([] { make_grid_cloth(1, 1.0); }) == ErrorKind::kInvalidArgument);
  CHECK(error_kind([] { make_grid_cloth(4, 0.0); }) == ErrorKind::kInvalidArgument);
  CHECK(error_kind([] { make_grid_cloth(4, -1.0); }) == ErrorKind::kInvalidArgument);
}

TEST_CASE("mesh invariants") {
  const TriMesh m = make_grid_cloth(7, 1.3);
  std::set<std::pair<int, int>> seen;
  for (const Edge& e : m.edges()) {
    CHECK(e[0] < e[1]);
    CHECK(seen.insert({e[0], e[1]}).second);
  }
  for (double l : m.rest_edge_lengths()) CHECK(l > 0.0);
  for (std::int32_t i = 0; i < m.vertex_count(); ++i) {
    for (std::int32_t j : m.neighbors(i)) {
      const auto back = m.neighbors(j);
      CHECK(std::find(back.begin(), back.end(), i) != back.end());
    }
  }
  CHECK(error_kind([] {
          Points p(3, 3);
          p << 0, 0, 0, 1, 0, 0, 2, 0, 0;
          TriMesh(p, {Triangle{0, 1, 2}});
        }) == ErrorKind::kInvalidMesh);
  CHECK(error_kind([] {
          Points p(3, 3);
          p << 0, 0, 0, 1, 0, 0, 0, 0, 1;
          TriMesh(p, {Triangle{0, 1, 3}});
        }) == ErrorKind::kInvalidMesh);
}

TEST_CASE("subdivision splits triangles and halves edges") {
  const TriMesh m = subdivide_midpoint(make_grid_cloth(2, 1.0));
  CHECK(m.triangles().size() == 8);
  CHECK(m.vertex_count() == 9);

  // Spacing 0.25 is dyadic, so halves are exact.
  const TriMesh parent = make_grid_cloth(5, 1.0);
  const TriMesh child = subdivide_midpoint(parent);
  for (std::size_t e = 0; e < parent.edges().size(); ++e) {
    const auto [a, b] = parent.edges()[e];
    const std::int32_t mid = parent.vertex_count() + static_cast<std::int32_t>(e);
    CHECK(edge_length(child, a, mid) == parent.rest_edge_lengths()[e] / 2);
    CHECK(edge_length(child, mid, b) == parent.rest_edge_lengths()[e] / 2);
  }

  // Spacing 0.1: axis-aligned child edges are 0.05 up to coordinate rounding.
  const TriMesh tenth = subdivide_midpoint(make_grid_cloth(11, 1.0));
  for (std::size_t e = 0; e < tenth.edges().size(); ++e) {
    const auto [a, b] = tenth.edges()[e];
    const Eigen::RowVector3d d = tenth.rest_positions().row(b) - tenth.rest_positions().row(a);
    if (d.x() == 0.0 || d.z() == 0.0) CHECK(tenth.rest_edge_lengths()[e] == doctest::Approx(0.05).epsilon(1e-12));
  }
}

TEST_CASE("mean edge length") {
  const TriMesh m3 = make_grid_cloth(3, 1.0);
  const double expected = (12 * 0.5 + 4 * 0.5 * std::sqrt(2.0)) / 16;
  CHECK(mean_edge_length(m3) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(mean_edge_length(m3) == doctest::Approx(0.5518).epsilon(1e-4));

  // Child edges of the n=3 grid: 40 of length 0.25 and 16 of length 0.25 * sqrt(2).
  const TriMesh child = subdivide_midpoint(m3);
  REQUIRE(child.edges().size() == 56);
  double brute = 0.0;
  for (double l : child.rest_edge_lengths()) brute += l;
  brute /= 56.0;
  CHECK(mean_edge_length(child) == doctest::Approx(brute).epsilon(1e-15));
  CHECK(mean_edge_length(child) == doctest::Approx((40 * 0.25 + 16 * 0.25 * std::sqrt(2.0)) / 56).epsilon(1e-15));

  // All edges equal: a regular tetrahedron surface.
  Points p(4, 3);
  p << 1, 1, 1, 1, -1, -1, -1, 1, -1, -1, -1, 1;
  const TriMesh tet(p, {Triangle{0, 1, 2}, Triangle{0, 3, 1}, Triangle{0, 2, 3}, Triangle{1, 3, 2}});
  CHECK(mean_edge_length(tet) == doctest::Approx(std::sqrt(8.0)).epsilon(1e-15));
  CHECK(mean_edge_length(subdivide_midpoint(tet)) == doctest::Approx(mean_edge_length(tet) / 2).epsilon(1e-15));

  CHECK(error_kind([] { mean_edge_length(TriMesh()); }) == ErrorKind::kInvalidArgument);
}

TEST_CASE("rest scale factors") {
  const TriMesh m3 = make_grid_cloth(3, 1.0);
  const ScaleFactors s = rest_scale_factors(m3);
  CHECK(s.s[0] == doctest::Approx((1.0 + 0.5 * std::sqrt(2.0)) / 3).epsilon(1e-15));
  CHECK(s.s[0] == doctest::Approx(0.56904).epsilon(1e-5));
  CHECK((s.s.array() == scale_oracle(m3).array()).all());

  const TriMesh sub = subdivide_midpoint(make_grid_cloth(6, 0.7));
  CHECK((rest_scale_factors(sub).s.array() == scale_oracle(sub).array()).all());

  Points p(4, 3);
  p << 1, 1, 1, 1, -1, -1, -1, 1, -1, -1, -1, 1;
  const TriMesh tet(p, {Triangle{0, 1, 2}, Triangle{0, 3, 1}, Triangle{0, 2, 3}, Triangle{1, 3, 2}});
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(rest_scale_factors(tet).s[i] == doctest::Approx(std::sqrt(8.0)));

  Points q(4, 3);
  q << 0, 0, 0, 1, 0, 0, 0, 0, 1, 5, 5, 5;
  const TriMesh isolated(q, {Triangle{0, 2, 1}});
  CHECK(error_kind([&] { rest_scale_factors(isolated); }) == ErrorKind::kInvalidMesh);
}

TEST_CASE("scale factors are permutation equivariant") {
  const TriMesh m = make_grid_cloth(5, 1.0);
  std::vector<std::int32_t> perm(m.vertex_count());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(7);
  std::shuffle(perm.begin(), perm.end(), rng);
  Points p(m.vertex_count(), 3);
  for (std::int32_t i = 0; i < m.vertex_count(); ++i) p.row(perm[i]) = m.rest_positions().row(i);
  std::vector<Triangle> tris;
  for (const Triangle& t : m.triangles()) tris.push_back({perm[t[0]], perm[t[1]], perm[t[2]]});
  const TriMesh relabeled(p, tris);
  const ScaleFactors a = rest_scale_factors(m);
  const ScaleFactors b = rest_scale_factors(relabeled);
  for (std::int32_t i = 0; i < m.vertex_count(); ++i) CHECK(b.s[perm[i]] == doctest::Approx(a.s[i]).epsilon(1e-15));
}

TEST_CASE("vertex normals") {
  const TriMesh m = make_grid_cloth(4, 1.0);
  const Points n = vertex_normals(m.rest_positions(), m);
  for (Eigen::Index i = 0; i < n.rows(); ++i) CHECK(n.row(i) == Eigen::RowVector3d(0, 1, 0));

  const Points shifted = m.rest_positions().rowwise() + Eigen::RowVector3d(3.25, -1.5, 8.0);
  CHECK(vertex_normals(shifted, m) == n);

  Points lifted = m.rest_positions();
  lifted(5, 1) = 0.2;
  const Points got = vertex_normals(lifted, m);
  Points oracle = Points::Zero(m.vertex_count(), 3);
  for (const Triangle& t : m.triangles()) {
    const Eigen::Vector3d a = lifted.row(t[0]), b = lifted.row(t[1]), c = lifted.row(t[2]);
    // |cross| is twice the area, so the raw cross product is area-weighted.
    const Eigen::Vector3d w = (b - a).cross(c - a);
    for (std::int32_t v : t) oracle.row(v) += w.transpose();
  }
  for (Eigen::Index i = 0; i < oracle.rows(); ++i) {
    oracle.row(i).normalize();
    CHECK((got.row(i) - oracle.row(i)).cwiseAbs().maxCoeff() <= 1e-12);
  }

  Points q(3, 3);
  q << 0, 0, 0, 1, 0, 0, 0, 0, 1;
  const TriMesh tri(q, {Triangle{0, 2, 1}});
  Points flat_line(3, 3);
  flat_line << 0, 0, 0, 1, 0, 0, 2, 0, 0;
  const Points fallback = vertex_normals(flat_line, tri);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(fallback.row(i) == Eigen::RowVector3d(0, 1, 0));
}

TEST_CASE("lumped masses") {
  MaterialParams mat;
  mat.mass_density = 0.3;
  const TriMesh m = make_grid_cloth(3, 1.0, mat);
  const Eigen::VectorXd mass = lumped_masses(m);
  CHECK(mass[4] == doctest::Approx(0.3 * 6 * 0.125 / 3).epsilon(1e-15));
  CHECK(mass.sum() == doctest::Approx(0.3).epsilon(1e-14));
}

TEST_CASE("obj round trip") {
  const TriMesh m = subdivide_midpoint(make_grid_cloth(3, 0.8));
  std::stringstream ss;
  write_obj(ss, m.rest_positions(), m.triangles());
  const std::string text = ss.str();
  CHECK(text.find('\r') == std::string::npos);
  CHECK(text.rfind("v ", 0) == 0);
  const TriMesh back = read_obj(ss);
  CHECK(back.rest_positions() == m.rest_positions());
  CHECK(back.triangles() == m.triangles());

  std::stringstream bad("v 0 0 0\nv 1 0 0\nf 1 2 3\n");
  CHECK(error_kind([&] { read_obj(bad); }) == ErrorKind::kFormat);
  std::stringstream junk("v 0 zero 0\n");
  CHECK(error_kind([&] { read_obj(junk); }) == ErrorKind::kFormat);
  CHECK(error_kind([] { read_obj(std::string("/nonexistent/mesh.obj")); }) == ErrorKind::kIo);
}

TEST_CASE("icosphere") {
  const TriMesh s = make_icosphere(0.3, 2);
  CHECK(s.triangles().size() == 20u * 16u);
  for (Eigen::Index i = 0; i < s.rest_positions().rows(); ++i) {
    CHECK(s.rest_positions().row(i).norm() == doctest::Approx(0.3).epsilon(1e-14));
  }
  const Points n = vertex_normals(s.rest_positions(), s);
  for (Eigen::Index i = 0; i < n.rows(); ++i) CHECK(n.row(i).dot(s.rest_positions().row(i)) > 0.0);
}

}
