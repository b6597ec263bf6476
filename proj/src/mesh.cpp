#include "pb4u/mesh.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/Geometry>

#include "pb4u/error.hpp"

namespace pb4u {

void MaterialParams::validate() const {
  if (!(lame_mu > 0.0) || !(lame_lambda >= 0.0) || !(bending_coeff >= 0.0) ||
      !(mass_density >= 0.0) || !(friction_coeff >= 0.0)) {
    fail(ErrorKind::kInvalidArgument,
         "material parameters must be nonnegative with lame_mu > 0");
  }
}

namespace {

Vec3 row(const Points& p, std::int32_t i) { return p.row(i).transpose(); }

}  // namespace

TriMesh::TriMesh(Points rest_positions, std::vector<Triangle> triangles,
                 MaterialParams material)
    : rest_positions_(std::move(rest_positions)),
      triangles_(std::move(triangles)),
      material_(material) {
  material_.validate();
  const std::int32_t n = vertex_count();
  if (!rest_positions_.allFinite()) {
    fail(ErrorKind::kInvalidMesh, "rest positions must be finite");
  }

  rest_areas_.reserve(triangles_.size());
  edges_.reserve(triangles_.size() * 3);
  for (std::size_t t = 0; t < triangles_.size(); ++t) {
    const Triangle& tri = triangles_[t];
    for (std::int32_t v : tri) {
      if (v < 0 || v >= n) {
        fail(ErrorKind::kInvalidMesh, "triangle " + std::to_string(t) +
                                          " references vertex " + std::to_string(v) +
                                          " outside [0, " + std::to_string(n) + ")");
      }
    }
    const Vec3 a = row(rest_positions_, tri[0]);
    const double area =
        0.5 * (row(rest_positions_, tri[1]) - a).cross(row(rest_positions_, tri[2]) - a).norm();
    if (!(area > 0.0)) {
      fail(ErrorKind::kInvalidMesh, "triangle " + std::to_string(t) + " has zero rest area");
    }
    rest_areas_.push_back(area);
    for (int k = 0; k < 3; ++k) {
      const std::int32_t u = tri[k];
      const std::int32_t v = tri[(k + 1) % 3];
      edges_.push_back({std::min(u, v), std::max(u, v)});
    }
  }
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());

  rest_edge_lengths_.reserve(edges_.size());
  std::vector<std::int32_t> degree(static_cast<std::size_t>(n), 0);
  for (const Edge& e : edges_) {
    rest_edge_lengths_.push_back((row(rest_positions_, e[1]) - row(rest_positions_, e[0])).norm());
    ++degree[e[0]];
    ++degree[e[1]];
  }

  adjacency_offsets_.assign(static_cast<std::size_t>(n) + 1, 0);
  for (std::int32_t i = 0; i < n; ++i) {
    adjacency_offsets_[i + 1] = adjacency_offsets_[i] + degree[i];
  }
  adjacency_.resize(adjacency_offsets_.back());
  adjacency_edges_.resize(adjacency_offsets_.back());
  std::vector<std::int32_t> cursor(adjacency_offsets_.begin(), adjacency_offsets_.end() - 1);
  // Edges are sorted, so each vertex's list comes out sorted by neighbour:
  // lower neighbours arrive (as e[1] == i) before higher ones (as e[0] == i).
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const auto [a, b] = edges_[e];
    adjacency_[cursor[b]] = a;
    adjacency_edges_[cursor[b]++] = static_cast<std::int32_t>(e);
  }
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const auto [a, b] = edges_[e];
    adjacency_[cursor[a]] = b;
    adjacency_edges_[cursor[a]++] = static_cast<std::int32_t>(e);
  }
}

std::span<const std::int32_t> TriMesh::neighbors(std::int32_t i) const {
  return {adjacency_.data() + adjacency_offsets_[i],
          static_cast<std::size_t>(adjacency_offsets_[i + 1] - adjacency_offsets_[i])};
}

std::span<const std::int32_t> TriMesh::incident_edges(std::int32_t i) const {
  return {adjacency_edges_.data() + adjacency_offsets_[i],
          static_cast<std::size_t>(adjacency_offsets_[i + 1] - adjacency_offsets_[i])};
}

void TriMesh::set_material(const MaterialParams& material) {
  material.validate();
  material_ = material;
}

std::int32_t TriMesh::find_edge(std::int32_t a, std::int32_t b) const {
  const Edge key{std::min(a, b), std::max(a, b)};
  auto it = std::lower_bound(edges_.begin(), edges_.end(), key);
  if (it == edges_.end() || *it != key) return -1;
  return static_cast<std::int32_t>(it - edges_.begin());
}

TriMesh make_grid_cloth(int n, double side, const MaterialParams& material) {
  if (n < 2) fail(ErrorKind::kInvalidArgument, "grid resolution must be >= 2");
  if (!(side > 0.0)) fail(ErrorKind::kInvalidArgument, "grid side must be > 0");
  const double h = side / (n - 1);
  Points p(n * n, 3);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      p.row(i * n + j) << j * h - 0.5 * side, 0.0, i * h - 0.5 * side;
    }
  }
  std::vector<Triangle> tris;
  tris.reserve(static_cast<std::size_t>(2 * (n - 1) * (n - 1)));
  for (int i = 0; i + 1 < n; ++i) {
    for (int j = 0; j + 1 < n; ++j) {
      const std::int32_t v00 = i * n + j;
      const std::int32_t v01 = v00 + 1;
      const std::int32_t v10 = v00 + n;
      const std::int32_t v11 = v10 + 1;
      tris.push_back({v00, v10, v11});
      tris.push_back({v00, v11, v01});
    }
  }
  return TriMesh(std::move(p), std::move(tris), material);
}

TriMesh subdivide_midpoint(const TriMesh& mesh) {
  const std::int32_t n = mesh.vertex_count();
  const auto& edges = mesh.edges();
  const Points& rest = mesh.rest_positions();
  Points p(n + static_cast<Eigen::Index>(edges.size()), 3);
  p.topRows(n) = rest;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    p.row(n + static_cast<Eigen::Index>(e)) = 0.5 * (rest.row(edges[e][0]) + rest.row(edges[e][1]));
  }
  auto mid = [&](std::int32_t a, std::int32_t b) { return n + mesh.find_edge(a, b); };
  std::vector<Triangle> tris;
  tris.reserve(mesh.triangles().size() * 4);
  for (const Triangle& t : mesh.triangles()) {
    const std::int32_t ab = mid(t[0], t[1]);
    const std::int32_t bc = mid(t[1], t[2]);
    const std::int32_t ca = mid(t[2], t[0]);
    tris.push_back({t[0], ab, ca});
    tris.push_back({ab, t[1], bc});
    tris.push_back({ca, bc, t[2]});
    tris.push_back({ab, bc, ca});
  }
  return TriMesh(std::move(p), std::move(tris), mesh.material());
}

TriMesh make_icosphere(double radius, int subdivisions) {
  if (!(radius > 0.0)) fail(ErrorKind::kInvalidArgument, "sphere radius must be > 0");
  if (subdivisions < 0) fail(ErrorKind::kInvalidArgument, "subdivisions must be >= 0");
  const double t = 0.5 * (1.0 + std::sqrt(5.0));
  Points p(12, 3);
  p << -1, t, 0, 1, t, 0, -1, -t, 0, 1, -t, 0,  //
      0, -1, t, 0, 1, t, 0, -1, -t, 0, 1, -t,   //
      t, 0, -1, t, 0, 1, -t, 0, -1, -t, 0, 1;
  std::vector<Triangle> tris = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  TriMesh mesh(p.rowwise().normalized(), std::move(tris));
  for (int s = 0; s < subdivisions; ++s) {
    TriMesh fine = subdivide_midpoint(mesh);
    mesh = TriMesh(fine.rest_positions().rowwise().normalized(), fine.triangles());
  }
  return TriMesh(radius * mesh.rest_positions(), mesh.triangles());
}

double mean_edge_length(const TriMesh& mesh) {
  const auto& lengths = mesh.rest_edge_lengths();
  if (lengths.empty()) fail(ErrorKind::kInvalidArgument, "mesh has no edges");
  double sum = 0.0;
  for (double l : lengths) sum += l;
  return sum / static_cast<double>(lengths.size());
}

ScaleFactors rest_scale_factors(const TriMesh& mesh) {
  const std::int32_t n = mesh.vertex_count();
  const auto& lengths = mesh.rest_edge_lengths();
  ScaleFactors out{Eigen::VectorXd(n)};
  for (std::int32_t i = 0; i < n; ++i) {
    auto incident = mesh.incident_edges(i);
    if (incident.empty()) {
      fail(ErrorKind::kInvalidMesh, "vertex " + std::to_string(i) + " has no incident edges");
    }
    double sum = 0.0;
    for (std::int32_t e : incident) sum += lengths[e];
    out.s[i] = sum / static_cast<double>(incident.size());
  }
  return out;
}

Points vertex_normals(const Points& positions, const TriMesh& mesh) {
  if (positions.rows() != mesh.vertex_count()) {
    fail(ErrorKind::kInvalidArgument, "positions do not match mesh vertex count");
  }
  Points acc = Points::Zero(positions.rows(), 3);
  for (const Triangle& t : mesh.triangles()) {
    const Vec3 a = row(positions, t[0]);
    // |cross| is twice the face area, so summing raw cross products is the
    // area-weighted sum of unit face normals.
    const Vec3 n = (row(positions, t[1]) - a).cross(row(positions, t[2]) - a);
    for (std::int32_t v : t) acc.row(v) += n.transpose();
  }
  for (Eigen::Index i = 0; i < acc.rows(); ++i) {
    const double len = acc.row(i).norm();
    if (len > 0.0) {
      acc.row(i) /= len;
    } else {
      acc.row(i) << 0.0, 1.0, 0.0;
    }
  }
  return acc;
}

Eigen::VectorXd lumped_masses(const TriMesh& mesh) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(mesh.vertex_count());
  const double density = mesh.material().mass_density;
  const auto& areas = mesh.rest_triangle_areas();
  for (std::size_t t = 0; t < mesh.triangles().size(); ++t) {
    for (std::int32_t v : mesh.triangles()[t]) m[v] += density * areas[t] / 3.0;
  }
  return m;
}

namespace {

std::int32_t parse_face_index(const std::string& token, std::int32_t vertex_count,
                              std::size_t line_no) {
  const std::string head = token.substr(0, token.find('/'));
  long value = 0;
  auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), value);
  if (ec != std::errc() || ptr != head.data() + head.size() || value == 0) {
    fail(ErrorKind::kFormat, "line " + std::to_string(line_no) + ": bad face index '" + token + "'");
  }
  // Negative indices are relative to the end of the current vertex list.
  const long idx = value > 0 ? value - 1 : vertex_count + value;
  if (idx < 0 || idx >= vertex_count) {
    fail(ErrorKind::kFormat,
         "line " + std::to_string(line_no) + ": face index " + token + " out of range");
  }
  return static_cast<std::int32_t>(idx);
}

void append_number(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

}  // namespace

TriMesh read_obj(std::istream& in, const MaterialParams& material) {
  std::vector<Vec3> verts;
  std::vector<Triangle> tris;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ls >> p.x() >> p.y() >> p.z())) {
        fail(ErrorKind::kFormat, "line " + std::to_string(line_no) + ": malformed vertex");
      }
      verts.push_back(p);
    } else if (tag == "f") {
      std::vector<std::string> tokens;
      for (std::string tok; ls >> tok;) tokens.push_back(tok);
      if (tokens.size() != 3) {
        fail(ErrorKind::kFormat, "line " + std::to_string(line_no) +
                                     ": only triangular faces are supported");
      }
      Triangle t{};
      for (int k = 0; k < 3; ++k) {
        t[k] = parse_face_index(tokens[k], static_cast<std::int32_t>(verts.size()), line_no);
      }
      tris.push_back(t);
    }
  }
  if (tris.empty()) fail(ErrorKind::kFormat, "OBJ contains no faces");
  Points p(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) p.row(static_cast<Eigen::Index>(i)) = verts[i];
  try {
    return TriMesh(std::move(p), std::move(tris), material);
  } catch (const Error& e) {
    fail(ErrorKind::kFormat, std::string("invalid OBJ mesh: ") + e.what());
  }
}

TriMesh read_obj(const std::string& path, const MaterialParams& material) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path);
  return read_obj(in, material);
}

void write_obj(std::ostream& out, const Points& positions,
               const std::vector<Triangle>& triangles) {
  std::string buf;
  buf.reserve(static_cast<std::size_t>(positions.rows()) * 48 + triangles.size() * 24);
  for (Eigen::Index i = 0; i < positions.rows(); ++i) {
    buf += 'v';
    for (int k = 0; k < 3; ++k) {
      buf += ' ';
      append_number(buf, positions(i, k));
    }
    buf += '\n';
  }
  for (const Triangle& t : triangles) {
    buf += 'f';
    for (std::int32_t v : t) {
      buf += ' ';
      buf += std::to_string(v + 1);
    }
    buf += '\n';
  }
  out << buf;
}

void write_obj(const std::string& path, const Points& positions,
               const std::vector<Triangle>& triangles) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path);
  write_obj(out, positions, triangles);
  if (!out) fail(ErrorKind::kIo, "write failed for " + path);
}

}  // namespace pb4u
