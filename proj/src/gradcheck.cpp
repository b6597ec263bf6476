#include "pb4u/gradcheck.hpp"

#include <random>

#include "pb4u/physics.hpp"

namespace pb4u {

namespace {

// Pairs placed at signed distances in [-margin, margin / 2] from random
// garment vertices along random unit normals.
BodyPairs random_pairs(const Points& x, int count, double margin, std::mt19937_64& rng) {
  std::uniform_int_distribution<Eigen::Index> pick(0, x.rows() - 1);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> depth(-margin, 0.5 * margin);
  BodyPairs p;
  p.body_pos.resize(count, 3);
  p.body_normal.resize(count, 3);
  for (int k = 0; k < count; ++k) {
    const Eigen::Index g = pick(rng);
    Vec3 n(unit(rng), unit(rng) + 1.5, unit(rng));
    n.normalize();
    p.garment.push_back(static_cast<std::int32_t>(g));
    p.body_normal.row(k) = n.transpose();
    p.body_pos.row(k) = x.row(g) - depth(rng) * n.transpose();
  }
  return p;
}

}  // namespace

std::vector<EnergyCheck> energy_gradcheck(std::uint64_t seed, double h) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.04, 0.04);

  MaterialParams mat;
  mat.lame_mu = 2.0;
  mat.lame_lambda = 3.0;
  mat.bending_coeff = 1.0;
  mat.mass_density = 1.0;
  mat.friction_coeff = 0.5;
  const TriMesh mesh = make_grid_cloth(5, 1.0, mat);
  const RestGeometry rest = RestGeometry::build(mesh);

  Points x = mesh.rest_positions();
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] += jitter(rng);
  Points prev = x;
  for (Eigen::Index i = 0; i < prev.size(); ++i) prev.data()[i] += jitter(rng);
  Points target = x;
  for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] += jitter(rng);
  const double margin = 0.05;
  const BodyPairs collide = random_pairs(x, 8, margin, rng);
  const BodyPairs contacts = random_pairs(prev, 8, margin, rng);
  const double dt = 1.0 / 30.0;

  using ad::Tape;
  using ad::Var;
  std::vector<std::pair<std::string, ad::ScalarFunction>> terms = {
      {"stretch", [&](Tape<double>&, const Var<double>& v) { return stretch_energy(v, rest, mat); }},
      {"bending", [&](Tape<double>&, const Var<double>& v) { return bending_energy(v, rest, mat); }},
      {"collision", [&](Tape<double>&, const Var<double>& v) { return collision_penalty(v, collide, margin); }},
      {"gravity", [&](Tape<double>&, const Var<double>& v) { return gravity_energy(v, rest.masses, 9.81); }},
      {"friction",
       [&](Tape<double>&, const Var<double>& v) {
         return friction_penalty(v, prev, contacts, rest.masses, mat.friction_coeff, dt);
       }},
      {"inertia", [&](Tape<double>&, const Var<double>& v) { return inertia_term(v, target, rest.masses, dt); }},
  };
  std::vector<EnergyCheck> out;
  for (const auto& [name, fn] : terms) out.push_back({name, ad::grad_check(fn, x, h)});
  return out;
}

}  // namespace pb4u
