#include "pb4u/physics.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>

#include <Eigen/Geometry>

#include "pb4u/error.hpp"

namespace pb4u {

namespace {

template <typename T, typename Derived>
ad::Matrix<T> as_matrix(const Eigen::MatrixBase<Derived>& m) {
  return m.template cast<T>();
}

// Signed dihedral angle per hinge, built from tape primitives so the rest
// angles and the energy use the exact same arithmetic.
template <typename T>
ad::Var<T> hinge_theta(const ad::Var<T>& x, const RestGeometry& rest) {
  const auto x0 = ad::gather(x, rest.hinge_v0);
  const auto x1 = ad::gather(x, rest.hinge_v1);
  const auto x2 = ad::gather(x, rest.hinge_v2);
  const auto x3 = ad::gather(x, rest.hinge_v3);
  const auto e = x1 - x0;
  const auto na = ad::cross3(e, x2 - x0);
  const auto nb = ad::cross3(x0 - x1, x3 - x1);
  // atan2(|na||nb||e| sin, |na||nb||e| cos) with the edge length folded into
  // the cosine term instead of normalising e.
  const auto s = ad::dot(ad::cross3(na, nb), e);
  const auto c = ad::dot(na, nb) * ad::sqrt(ad::dot(e, e));
  return ad::atan2(s, c);
}

}  // namespace

RestGeometry RestGeometry::build(const TriMesh& mesh) {
  RestGeometry r;
  const Points& x = mesh.rest_positions();
  r.vertex_count = mesh.vertex_count();
  const auto& tris = mesh.triangles();
  const Eigen::Index nt = static_cast<Eigen::Index>(tris.size());

  std::vector<std::int32_t> ia, ib, ic;
  ia.reserve(tris.size());
  ib.reserve(tris.size());
  ic.reserve(tris.size());
  r.rest_metric.resize(nt, 4);
  r.inv_rest.resize(nt, 4);
  r.areas.resize(nt);
  for (Eigen::Index t = 0; t < nt; ++t) {
    const Triangle& tri = tris[static_cast<std::size_t>(t)];
    ia.push_back(tri[0]);
    ib.push_back(tri[1]);
    ic.push_back(tri[2]);
    const Vec3 e1 = (x.row(tri[1]) - x.row(tri[0])).transpose();
    const Vec3 e2 = (x.row(tri[2]) - x.row(tri[0])).transpose();
    const double l1 = e1.norm();
    const double d00 = l1;
    const double d01 = e1.dot(e2) / l1;
    const double d11 = e1.cross(e2).norm() / l1;
    r.rest_metric.row(t) << e1.dot(e1), e1.dot(e2), e2.dot(e2), 0.0;
    r.inv_rest.row(t) << 1.0 / d00, -d01 / (d00 * d11), 0.0, 1.0 / d11;
    r.areas[t] = mesh.rest_triangle_areas()[static_cast<std::size_t>(t)];
  }
  r.tri_a = ad::make_index(std::move(ia));
  r.tri_b = ad::make_index(std::move(ib));
  r.tri_c = ad::make_index(std::move(ic));

  // (from, to, opposite vertex, triangle) for every directed triangle edge.
  std::vector<std::tuple<std::int32_t, std::int32_t, std::int32_t, std::int32_t>> half;
  half.reserve(tris.size() * 3);
  for (std::size_t t = 0; t < tris.size(); ++t) {
    const Triangle& tri = tris[t];
    for (int k = 0; k < 3; ++k) {
      half.emplace_back(tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3], static_cast<std::int32_t>(t));
    }
  }
  std::sort(half.begin(), half.end());
  for (std::size_t k = 1; k < half.size(); ++k) {
    if (std::get<0>(half[k]) == std::get<0>(half[k - 1]) &&
        std::get<1>(half[k]) == std::get<1>(half[k - 1])) {
      fail(ErrorKind::kInvalidMesh,
           "edge (" + std::to_string(std::get<0>(half[k])) + ", " +
               std::to_string(std::get<1>(half[k])) +
               ") is used twice in the same direction; mesh is non-manifold or inconsistently oriented");
    }
  }
  auto find_half = [&](std::int32_t u, std::int32_t v) {
    auto it = std::lower_bound(half.begin(), half.end(), std::make_tuple(u, v, INT32_MIN, INT32_MIN));
    if (it != half.end() && std::get<0>(*it) == u && std::get<1>(*it) == v) return it;
    return half.end();
  };

  std::vector<std::int32_t> h0, h1, h2, h3;
  std::vector<double> weights;
  for (std::size_t e = 0; e < mesh.edges().size(); ++e) {
    const auto [lo, hi] = mesh.edges()[e];
    auto fwd = find_half(lo, hi);
    auto bwd = find_half(hi, lo);
    if (fwd == half.end() || bwd == half.end()) continue;
    h0.push_back(lo);
    h1.push_back(hi);
    h2.push_back(std::get<2>(*fwd));
    h3.push_back(std::get<2>(*bwd));
    const double area_sum = mesh.rest_triangle_areas()[static_cast<std::size_t>(std::get<3>(*fwd))] +
                            mesh.rest_triangle_areas()[static_cast<std::size_t>(std::get<3>(*bwd))];
    weights.push_back(mesh.rest_edge_lengths()[e] / area_sum);
  }
  r.hinge_v0 = ad::make_index(std::move(h0));
  r.hinge_v1 = ad::make_index(std::move(h1));
  r.hinge_v2 = ad::make_index(std::move(h2));
  r.hinge_v3 = ad::make_index(std::move(h3));
  r.hinge_weight = Eigen::Map<const Eigen::VectorXd>(weights.data(), static_cast<Eigen::Index>(weights.size()));
  r.masses = lumped_masses(mesh);
  r.rest_angle = hinge_angles(x, r);
  return r;
}

Eigen::VectorXd hinge_angles(const Points& positions, const RestGeometry& rest) {
  if (rest.hinge_count() == 0) return Eigen::VectorXd(0);
  ad::Tape<double> tape;
  const auto theta = hinge_theta(tape.constant(positions), rest);
  return theta.value().col(0);
}

BodyPairs nearest_body_pairs(const Points& garment_pos, const Points& body_pos,
                             const Points& body_normals, double radius) {
  const std::vector<WorldEdge> candidates = build_world_edges(garment_pos, body_pos, radius);
  BodyPairs out;
  std::vector<std::int32_t> chosen;
  for (std::size_t k = 0; k < candidates.size();) {
    const std::int32_t g = candidates[k].first;
    std::int32_t best = candidates[k].second;
    double best_d2 = (garment_pos.row(g) - body_pos.row(best)).squaredNorm();
    std::size_t j = k + 1;
    for (; j < candidates.size() && candidates[j].first == g; ++j) {
      const double d2 = (garment_pos.row(g) - body_pos.row(candidates[j].second)).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = candidates[j].second;
      }
    }
    out.garment.push_back(g);
    chosen.push_back(best);
    k = j;
  }
  out.body_pos.resize(static_cast<Eigen::Index>(chosen.size()), 3);
  out.body_normal.resize(static_cast<Eigen::Index>(chosen.size()), 3);
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    out.body_pos.row(static_cast<Eigen::Index>(k)) = body_pos.row(chosen[k]);
    out.body_normal.row(static_cast<Eigen::Index>(k)) = body_normals.row(chosen[k]);
  }
  return out;
}

BodyPairs contacts_within(const BodyPairs& pairs, const Points& garment_pos, double margin) {
  std::vector<Eigen::Index> keep;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const Eigen::Index r = static_cast<Eigen::Index>(k);
    const double d = pairs.body_normal.row(r).dot(garment_pos.row(pairs.garment[k]) - pairs.body_pos.row(r));
    if (d < margin) keep.push_back(r);
  }
  BodyPairs out;
  out.body_pos.resize(static_cast<Eigen::Index>(keep.size()), 3);
  out.body_normal.resize(static_cast<Eigen::Index>(keep.size()), 3);
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.garment.push_back(pairs.garment[static_cast<std::size_t>(keep[k])]);
    out.body_pos.row(static_cast<Eigen::Index>(k)) = pairs.body_pos.row(keep[k]);
    out.body_normal.row(static_cast<Eigen::Index>(k)) = pairs.body_normal.row(keep[k]);
  }
  return out;
}

bool LossBreakdown::all_finite() const {
  return std::isfinite(stretch) && std::isfinite(bending) && std::isfinite(collision) &&
         std::isfinite(gravity) && std::isfinite(friction) && std::isfinite(inertia) &&
         std::isfinite(total);
}

double weighted_total(const LossBreakdown& t, const LossWeights& w) {
  return w.stretch * t.stretch + w.bending * t.bending + w.collision * t.collision +
         w.gravity * t.gravity + w.friction * t.friction + w.inertia * t.inertia;
}

LossContext make_loss_context(const RestGeometry& rest, const MaterialParams& material,
                              const SimState& state, const Points& predicted,
                              const Points& next_body_pos, const Points& next_body_normals,
                              const Points& body_normals, double radius, double collision_margin,
                              double gravity) {
  LossContext ctx;
  ctx.rest = &rest;
  ctx.material = material;
  ctx.current = state.garment_pos;
  ctx.inertial_target = state.garment_pos + state.time_step * state.garment_vel;
  ctx.collision = nearest_body_pairs(predicted, next_body_pos, next_body_normals, radius);
  ctx.friction = contacts_within(
      nearest_body_pairs(state.garment_pos, state.body_pos, body_normals, radius), state.garment_pos,
      collision_margin);
  ctx.gravity = gravity;
  ctx.time_step = state.time_step;
  ctx.collision_margin = collision_margin;
  return ctx;
}

template <typename T>
ad::Var<T> stretch_energy(const ad::Var<T>& x, const RestGeometry& rest, const MaterialParams& material) {
  ad::Tape<T>& tape = *x.tape();
  const auto xa = ad::gather(x, rest.tri_a);
  const auto d1 = ad::gather(x, rest.tri_b) - xa;
  const auto d2 = ad::gather(x, rest.tri_c) - xa;
  // Metric change M = Ds^T Ds - Dm^T Dm, exactly zero at rest.
  const auto m11 = ad::dot(d1, d1) - tape.constant(as_matrix<T>(rest.rest_metric.col(0)));
  const auto m12 = ad::dot(d1, d2) - tape.constant(as_matrix<T>(rest.rest_metric.col(1)));
  const auto m22 = ad::dot(d2, d2) - tape.constant(as_matrix<T>(rest.rest_metric.col(2)));

  // Green strain G = 1/2 P^T M P with P the inverse rest shape matrix.
  const auto p = rest.inv_rest.col(0).array();
  const auto q = rest.inv_rest.col(1).array();
  const auto r = rest.inv_rest.col(2).array();
  const auto s = rest.inv_rest.col(3).array();
  auto coef = [&](const Eigen::ArrayXd& v) { return tape.constant(as_matrix<T>((0.5 * v).matrix())); };
  const auto g11 = m11 * coef(p * p) + m12 * coef(2.0 * p * r) + m22 * coef(r * r);
  const auto g12 = m11 * coef(p * q) + m12 * coef(p * s + q * r) + m22 * coef(r * s);
  const auto g22 = m11 * coef(q * q) + m12 * coef(2.0 * q * s) + m22 * coef(s * s);

  const auto norm2 = g11 * g11 + ad::scale(g12 * g12, T(2)) + g22 * g22;
  const auto tr = g11 + g22;
  const auto density = ad::scale(norm2, T(material.lame_mu)) +
                       ad::scale(tr * tr, T(0.5 * material.lame_lambda));
  return ad::sum(density * tape.constant(as_matrix<T>(rest.areas)));
}

template <typename T>
ad::Var<T> bending_energy(const ad::Var<T>& x, const RestGeometry& rest, const MaterialParams& material) {
  ad::Tape<T>& tape = *x.tape();
  if (rest.hinge_count() == 0) return tape.scalar(T(0));
  const auto diff = hinge_theta(x, rest) - tape.constant(as_matrix<T>(rest.rest_angle));
  const auto w = tape.constant(as_matrix<T>((material.bending_coeff * rest.hinge_weight).eval()));
  return ad::sum(w * diff * diff);
}

template <typename T>
ad::Var<T> collision_penalty(const ad::Var<T>& x, const BodyPairs& pairs, double margin) {
  ad::Tape<T>& tape = *x.tape();
  if (pairs.size() == 0) return tape.scalar(T(0));
  const auto xg = ad::gather(x, ad::make_index(pairs.garment));
  const auto d = ad::dot(xg - tape.constant(as_matrix<T>(pairs.body_pos)),
                         tape.constant(as_matrix<T>(pairs.body_normal)));
  const auto depth = ad::clamp_min(ad::add_scalar(ad::scale(d, T(-1)), T(margin)), T(0));
  return ad::sum(ad::pow3(depth));
}

template <typename T>
ad::Var<T> gravity_energy(const ad::Var<T>& x, const Eigen::VectorXd& masses, double g) {
  ad::Tape<T>& tape = *x.tape();
  if (masses.size() != x.rows()) fail(ErrorKind::kInvalidArgument, "gravity: mass count mismatch");
  ad::Matrix<T> weight = ad::Matrix<T>::Zero(x.rows(), 3);
  weight.col(1) = (masses * g).cast<T>();
  return ad::sum(ad::dot(x, tape.constant(std::move(weight))));
}

template <typename T>
ad::Var<T> friction_penalty(const ad::Var<T>& x, const Points& previous, const BodyPairs& contacts,
                            const Eigen::VectorXd& masses, double friction_coeff, double dt) {
  ad::Tape<T>& tape = *x.tape();
  if (contacts.size() == 0) return tape.scalar(T(0));
  Points prev(static_cast<Eigen::Index>(contacts.size()), 3);
  Eigen::VectorXd w(static_cast<Eigen::Index>(contacts.size()));
  for (std::size_t k = 0; k < contacts.size(); ++k) {
    prev.row(static_cast<Eigen::Index>(k)) = previous.row(contacts.garment[k]);
    w[static_cast<Eigen::Index>(k)] = friction_coeff * masses[contacts.garment[k]] / (dt * dt);
  }
  const auto delta = ad::gather(x, ad::make_index(contacts.garment)) - tape.constant(as_matrix<T>(prev));
  const auto normal_part = ad::dot(delta, tape.constant(as_matrix<T>(contacts.body_normal)));
  // |delta_t|^2 = |delta|^2 - (n . delta)^2 for unit n.
  const auto tangential2 = ad::dot(delta, delta) - normal_part * normal_part;
  return ad::sum(tangential2 * tape.constant(as_matrix<T>(w)));
}

template <typename T>
ad::Var<T> inertia_term(const ad::Var<T>& x, const Points& inertial_target,
                        const Eigen::VectorXd& masses, double dt) {
  ad::Tape<T>& tape = *x.tape();
  const auto diff = x - tape.constant(as_matrix<T>(inertial_target));
  const Eigen::VectorXd w = masses / (2.0 * dt * dt);
  return ad::sum(ad::dot(diff, diff) * tape.constant(as_matrix<T>(w)));
}

template <typename T>
LossBreakdown LossTerms<T>::values(const LossWeights& weights) const {
  LossBreakdown b;
  b.stretch = static_cast<double>(stretch.item());
  b.bending = static_cast<double>(bending.item());
  b.collision = static_cast<double>(collision.item());
  b.gravity = static_cast<double>(gravity.item());
  b.friction = static_cast<double>(friction.item());
  b.inertia = static_cast<double>(inertia.item());
  b.total = weighted_total(b, weights);
  return b;
}

template <typename T>
LossTerms<T> total_loss(const ad::Var<T>& predicted, const LossContext& ctx, const LossWeights& weights) {
  if (ctx.rest == nullptr) fail(ErrorKind::kInvalidArgument, "loss context has no rest geometry");
  const RestGeometry& rest = *ctx.rest;
  if (predicted.rows() != rest.vertex_count || predicted.cols() != 3) {
    fail(ErrorKind::kInvalidArgument, "predicted positions do not match the garment mesh");
  }
  const T inv_n = T(1.0 / static_cast<double>(rest.vertex_count));
  LossTerms<T> out;
  out.stretch = ad::scale(stretch_energy(predicted, rest, ctx.material), inv_n);
  out.bending = ad::scale(bending_energy(predicted, rest, ctx.material), inv_n);
  out.collision = ad::scale(collision_penalty(predicted, ctx.collision, ctx.collision_margin), inv_n);
  out.gravity = ad::scale(gravity_energy(predicted, rest.masses, ctx.gravity), inv_n);
  out.friction = ad::scale(friction_penalty(predicted, ctx.current, ctx.friction, rest.masses,
                                            ctx.material.friction_coeff, ctx.time_step),
                           inv_n);
  out.inertia = ad::scale(inertia_term(predicted, ctx.inertial_target, rest.masses, ctx.time_step), inv_n);
  out.total = ad::scale(out.stretch, T(weights.stretch)) + ad::scale(out.bending, T(weights.bending)) +
              ad::scale(out.collision, T(weights.collision)) + ad::scale(out.gravity, T(weights.gravity)) +
              ad::scale(out.friction, T(weights.friction)) + ad::scale(out.inertia, T(weights.inertia));
  return out;
}

LossBreakdown evaluate_loss(const Points& predicted, const LossContext& ctx, const LossWeights& weights) {
  ad::Tape<double> tape;
  const auto terms = total_loss(tape.constant(predicted), ctx, weights);
  LossBreakdown out = terms.values(weights);
  if (!out.all_finite()) fail(ErrorKind::kNumericDivergence, "non-finite loss term");
  return out;
}

#define PB4U_INSTANTIATE_PHYSICS(T)                                                                  \
  template ad::Var<T> stretch_energy(const ad::Var<T>&, const RestGeometry&, const MaterialParams&); \
  template ad::Var<T> bending_energy(const ad::Var<T>&, const RestGeometry&, const MaterialParams&); \
  template ad::Var<T> collision_penalty(const ad::Var<T>&, const BodyPairs&, double);               \
  template ad::Var<T> gravity_energy(const ad::Var<T>&, const Eigen::VectorXd&, double);            \
  template ad::Var<T> friction_penalty(const ad::Var<T>&, const Points&, const BodyPairs&,          \
                                       const Eigen::VectorXd&, double, double);                     \
  template ad::Var<T> inertia_term(const ad::Var<T>&, const Points&, const Eigen::VectorXd&, double); \
  template struct LossTerms<T>;                                                                      \
  template LossTerms<T> total_loss(const ad::Var<T>&, const LossContext&, const LossWeights&);

PB4U_INSTANTIATE_PHYSICS(float)
PB4U_INSTANTIATE_PHYSICS(double)

#undef PB4U_INSTANTIATE_PHYSICS

}  // namespace pb4u
