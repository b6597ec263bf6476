#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "pb4u/network.hpp"
#include "support.hpp"

using namespace pb4u;
using ad::Tape;
using ad::Var;
using pb4u::test::error_kind;
using pb4u::test::jitter_params;
using pb4u::test::small_network;

namespace {

using MatD = ad::Matrix<double>;

MatD random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  MatD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

MatD weight(const ModelParams& p, const std::string& name) { return p.at(name).cast<double>(); }

// Independent evaluation of a three-layer ReLU MLP.
MatD mlp_oracle(const ModelParams& p, const std::string& prefix, const MatD& x) {
  MatD h = x * weight(p, prefix + ".l0.w");
  h.rowwise() += weight(p, prefix + ".l0.b").row(0);
  h = h.cwiseMax(0.0);
  MatD h2 = h * weight(p, prefix + ".l1.w");
  h2.rowwise() += weight(p, prefix + ".l1.b").row(0);
  h2 = h2.cwiseMax(0.0);
  MatD out = h2 * weight(p, prefix + ".l2.w");
  out.rowwise() += weight(p, prefix + ".l2.b").row(0);
  return out;
}

MatD layer_norm_oracle(const MatD& x, const MatD& gain, const MatD& bias) {
  MatD y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    y.row(r) = ((x.row(r).array() - mean) / std::sqrt(var + 1e-5)).matrix().cwiseProduct(gain.row(0)) + bias.row(0);
  }
  return y;
}

// Both directions of a path 0-1-...-(n-1).
std::pair<ad::IndexList, ad::IndexList> path_edges(int n) {
  std::vector<std::int32_t> recv, send;
  for (int i = 0; i + 1 < n; ++i) {
    recv.push_back(i);
    send.push_back(i + 1);
    recv.push_back(i + 1);
    send.push_back(i);
  }
  return {ad::make_index(recv), ad::make_index(send)};
}

void zero_mlp(ModelParams& p, const std::string& prefix, bool biases) {
  for (const char* layer : {".l0", ".l1", ".l2"}) {
    p.tensors.at(prefix + layer + ".w").setZero();
    if (biases) p.tensors.at(prefix + layer + ".b").setZero();
  }
}

struct World {
  TriMesh garment;
  TriMesh body;
  SimState state;
  StepContext ctx;
};

// Points the step context at this world's own meshes.
void rebind(World& w) {
  w.ctx.garment = &w.garment;
  w.ctx.body = &w.body;
}

World make_world(const Eigen::RowVector3d& shift, int n = 5) {
  World w;
  const TriMesh base = make_grid_cloth(n, 1.0);
  w.garment = TriMesh(base.rest_positions().rowwise() + shift, base.triangles());
  const TriMesh sphere = make_icosphere(0.3, 1);
  w.body = TriMesh(sphere.rest_positions().rowwise() + shift, sphere.triangles());
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  w.state.garment_pos = w.garment.rest_positions();
  w.state.garment_pos.col(1).array() += 0.32;
  for (Eigen::Index i = 0; i < w.state.garment_pos.size(); ++i) w.state.garment_pos.data()[i] += u(rng);
  w.state.garment_vel = Points::Zero(w.garment.vertex_count(), 3);
  for (Eigen::Index i = 0; i < w.state.garment_vel.size(); ++i) w.state.garment_vel.data()[i] = u(rng);
  w.state.garment_pos_prev = w.state.garment_pos - w.state.time_step * w.state.garment_vel;
  w.state.body_pos = w.body.rest_positions();
  w.state.body_pos_prev = w.state.body_pos.rowwise() - Eigen::RowVector3d(0.01, 0.0, 0.0);
  w.ctx.scale = rest_scale_factors(base);
  w.ctx.world_radius = 0.3;
  return w;
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("parameter shapes and initialisation") {
  const NetworkConfig c;
  const auto shapes = param_shapes(c);
  CHECK(shapes.at("vertex_encoder.l0.w") == std::pair<Eigen::Index, Eigen::Index>(kVertexFeatureWidth, 128));
  CHECK(shapes.at("edge_encoder.l0.w") == std::pair<Eigen::Index, Eigen::Index>(kEdgeFeatureWidth, 128));
  CHECK(shapes.at("message.l0.w") == std::pair<Eigen::Index, Eigen::Index>(384, 128));
  CHECK(shapes.at("update.l0.w") == std::pair<Eigen::Index, Eigen::Index>(256, 128));
  CHECK(shapes.at("decoder.l2.w") == std::pair<Eigen::Index, Eigen::Index>(128, 3));
  CHECK(shapes.count("processor.2.edge.l0.w") == 1);
  CHECK(shapes.count("processor.3.edge.l0.w") == 0);

  const ModelParams p = init_params(c, 5);
  CHECK(p == init_params(c, 5));
  CHECK(!(p == init_params(c, 6)));
  const double bound = std::sqrt(6.0 / (384 + 128));
  CHECK(p.at("message.l0.w").cwiseAbs().maxCoeff() <= bound);
  CHECK(p.at("message.l0.b").isZero(0.0f));
  CHECK((p.at("message_norm.gain").array() == 1.0f).all());

  NetworkConfig bad;
  bad.gamma = 1.5;
  CHECK(error_kind([&] { bad.validate(); }) == ErrorKind::kInvalidArgument);
}

TEST_CASE("encode shapes, zero weights and translation") {
  const NetworkConfig c = small_network();
  World w = make_world(Eigen::RowVector3d::Zero());
  rebind(w);
  const SimGraph g = build_graph(w.state, w.garment, w.body, w.ctx.world_radius);
  const ModelParams params = jitter_params(init_params(c, 1), 2, 0.05f);
  Tape<double> tape;
  const auto p = BoundParams<double>::bind(tape, params, false);
  const LatentGraph<double> l = encode(p, g.vertex_features, g.edge_features);
  CHECK(l.v.rows() == g.vertex_count());
  CHECK(l.v.cols() == c.latent_dim);
  CHECK(l.e.rows() == static_cast<Eigen::Index>(g.edge_count()));
  CHECK(l.h.value() == l.v.value());

  ModelParams zero = params;
  zero_mlp(zero, "vertex_encoder", true);
  zero_mlp(zero, "edge_encoder", true);
  Tape<double> t2;
  const LatentGraph<double> z = encode(BoundParams<double>::bind(t2, zero, false), g.vertex_features, g.edge_features);
  CHECK(z.v.value().isZero(0.0));
  CHECK(z.e.value().isZero(0.0));

  const FeatureMatrix wrong = FeatureMatrix::Zero(3, 5);
  CHECK(error_kind([&] { encode(p, wrong, g.edge_features); }) == ErrorKind::kInvalidArgument);
}

TEST_CASE("propagation") {
  const NetworkConfig c = small_network();
  const ModelParams params = jitter_params(init_params(c, 3), 4, 0.05f);
  std::mt19937_64 rng(5);
  const int n = 5;
  const std::vector<std::int32_t> recv{0, 1, 1, 2, 2, 3, 3, 4, 0, 4};
  const std::vector<std::int32_t> send{1, 0, 2, 1, 3, 2, 4, 3, 4, 0};
  const MatD v = random_matrix(n, c.latent_dim, rng);
  const MatD e = random_matrix(static_cast<Eigen::Index>(recv.size()), c.latent_dim, rng);
  Tape<double> tape;
  const auto p = BoundParams<double>::bind(tape, params, false);
  const LatentGraph<double> latent{tape.constant(v), tape.constant(e), tape.constant(v)};
  const auto r = ad::make_index(recv), s = ad::make_index(send);

  CHECK(propagate(p, latent, r, s, 0, 0.9).value() == v);

  MatD input(static_cast<Eigen::Index>(recv.size()), 3 * c.latent_dim);
  for (std::size_t k = 0; k < recv.size(); ++k) {
    input.row(k) << v.row(recv[k]), v.row(send[k]), e.row(k);
  }
  const MatD msg = mlp_oracle(params, "message", input);
  MatD agg = MatD::Zero(n, c.latent_dim);
  for (std::size_t k = 0; k < recv.size(); ++k) agg.row(recv[k]) += msg.row(k);
  const MatD expect =
      0.9 * v + layer_norm_oracle(agg, weight(params, "message_norm.gain"), weight(params, "message_norm.bias"));
  const MatD got = propagate(p, latent, r, s, 1, 0.9).value();
  CHECK((got - expect).cwiseAbs().maxCoeff() <= 1e-10);

  // Shared weights: a steps then b more equals a + b steps.
  const Var<double> h2 = propagate(p, latent, r, s, 2, 0.7);
  const Var<double> h5 = propagate(p, LatentGraph<double>{latent.v, latent.e, h2}, r, s, 3, 0.7);
  CHECK(h5.value() == propagate(p, latent, r, s, 5, 0.7).value());
}

TEST_CASE("propagation is local to K hops") {
  const NetworkConfig c = small_network(0);
  const ModelParams params = jitter_params(init_params(c, 6), 7, 0.05f);
  std::mt19937_64 rng(8);
  const auto [r, s] = path_edges(6);
  const MatD v = random_matrix(6, c.latent_dim, rng);
  const MatD e = random_matrix(10, c.latent_dim, rng);
  MatD v2 = v;
  v2.row(0) += random_matrix(1, c.latent_dim, rng);
  for (int k = 1; k <= 3; ++k) {
    Tape<double> tape;
    const auto p = BoundParams<double>::bind(tape, params, false);
    const MatD a = propagate(p, {tape.constant(v), tape.constant(e), tape.constant(v)}, r, s, k, 0.9).value();
    const MatD b = propagate(p, {tape.constant(v2), tape.constant(e), tape.constant(v2)}, r, s, k, 0.9).value();
    for (int i = 0; i < 6; ++i) {
      CAPTURE(k);
      CAPTURE(i);
      if (i <= k) {
        CHECK(a.row(i) != b.row(i));
      } else {
        CHECK(a.row(i) == b.row(i));
      }
    }
  }
}

TEST_CASE("update") {
  const NetworkConfig c = small_network();
  ModelParams params = jitter_params(init_params(c, 9), 10, 0.05f);
  std::mt19937_64 rng(11);
  const MatD v = random_matrix(7, c.latent_dim, rng);
  const MatD h = random_matrix(7, c.latent_dim, rng);
  {
    Tape<double> tape;
    const auto p = BoundParams<double>::bind(tape, params, false);
    const MatD out = update(p, tape.constant(v), tape.constant(h)).value();
    CHECK(out.rows() == 7);
    MatD cat(7, 2 * c.latent_dim);
    cat << v, h;
    CHECK((out - mlp_oracle(params, "update", cat)).cwiseAbs().maxCoeff() <= 1e-10);

    std::vector<int> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    MatD vp(7, c.latent_dim), hp(7, c.latent_dim);
    for (int i = 0; i < 7; ++i) {
      vp.row(perm[i]) = v.row(i);
      hp.row(perm[i]) = h.row(i);
    }
    const MatD outp = update(p, tape.constant(vp), tape.constant(hp)).value();
    for (int i = 0; i < 7; ++i) CHECK(outp.row(perm[i]) == out.row(i));
  }
  zero_mlp(params, "update", false);
  Tape<double> tape;
  const MatD out = update(BoundParams<double>::bind(tape, params, false), tape.constant(v), tape.constant(h)).value();
  const MatD b = weight(params, "update.l2.b");
  for (int i = 0; i < 7; ++i) CHECK(out.row(i) == b.row(0));
}

TEST_CASE("processor blocks") {
  const NetworkConfig c = small_network(2);
  const ModelParams params = jitter_params(init_params(c, 12), 13, 0.05f);
  std::mt19937_64 rng(14);
  const std::vector<std::int32_t> recv{0, 1, 1, 2, 2, 3, 0, 3};
  const std::vector<std::int32_t> send{1, 0, 2, 1, 3, 2, 3, 0};
  const auto r = ad::make_index(recv), s = ad::make_index(send);
  const MatD v = random_matrix(4, c.latent_dim, rng);
  const MatD e = random_matrix(8, c.latent_dim, rng);

  Tape<double> tape;
  const auto p = BoundParams<double>::bind(tape, params, false);
  const auto id = process(p, tape.constant(v), tape.constant(e), r, s, 0);
  CHECK(id.v.value() == v);
  CHECK(id.e.value() == e);

  ModelParams zero = params;
  for (int b = 0; b < 2; ++b) {
    zero_mlp(zero, "processor." + std::to_string(b) + ".edge", true);
    zero_mlp(zero, "processor." + std::to_string(b) + ".vertex", true);
  }
  Tape<double> tz;
  const auto z = process(BoundParams<double>::bind(tz, zero, false), tz.constant(v), tz.constant(e), r, s, 2);
  CHECK(z.v.value() == v);
  CHECK(z.e.value() == e);

  // Block 1 applied on its own, by renaming it to block 0.
  ModelParams second = params;
  for (const auto& [name, t] : params.tensors) {
    if (name.rfind("processor.1.", 0) == 0) second.tensors["processor.0." + name.substr(12)] = t;
  }
  const auto full = process(p, tape.constant(v), tape.constant(e), r, s, 2);
  const auto one = process(p, tape.constant(v), tape.constant(e), r, s, 1);
  Tape<double> t2;
  const auto two = process(BoundParams<double>::bind(t2, second, false), t2.constant(one.v.value()),
                           t2.constant(one.e.value()), r, s, 1);
  CHECK(full.v.value() == two.v.value());
  CHECK(full.e.value() == two.e.value());

  MatD e1 = e;
  MatD cat(8, 3 * c.latent_dim);
  for (int k = 0; k < 8; ++k) cat.row(k) << e.row(k), v.row(recv[k]), v.row(send[k]);
  e1 += mlp_oracle(params, "processor.0.edge", cat);
  MatD agg = MatD::Zero(4, c.latent_dim);
  for (int k = 0; k < 8; ++k) agg.row(recv[k]) += e1.row(k);
  MatD vc(4, 2 * c.latent_dim);
  vc << v, agg;
  const MatD v1 = v + mlp_oracle(params, "processor.0.vertex", vc);
  CHECK((one.v.value() - v1).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK((one.e.value() - e1).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("decode and scale") {
  const NetworkConfig c = small_network();
  const ModelParams params = jitter_params(init_params(c, 15), 16, 0.05f);
  std::mt19937_64 rng(17);
  const MatD v = random_matrix(12, c.latent_dim, rng);
  const TriMesh m3 = make_grid_cloth(3, 1.0);
  Tape<double> tape;
  const auto p = BoundParams<double>::bind(tape, params, false);

  const auto ones = decode_and_scale(p, tape.constant(v), 9, ScaleFactors::ones(9));
  CHECK(ones.raw.rows() == 9);
  CHECK(ones.scaled.value() == ones.raw.value());
  CHECK((ones.raw.value() - mlp_oracle(params, "decoder", v.topRows(9))).cwiseAbs().maxCoeff() <= 1e-10);

  const auto half = decode_and_scale(p, tape.constant(v), 9, ScaleFactors{Eigen::VectorXd::Constant(9, 0.5)});
  CHECK(half.scaled.value() == MatD(half.raw.value() / 2));

  const ScaleFactors s = rest_scale_factors(m3);
  const auto mixed = decode_and_scale(p, tape.constant(v), 9, s);
  for (int i = 0; i < 9; ++i) {
    for (int d = 0; d < 3; ++d) {
      const double ratio = mixed.scaled.value()(i, d) / mixed.raw.value()(i, d);
      CHECK(std::abs(ratio - s.s[i]) <= 1e-12 * s.s[i]);
    }
  }
  CHECK(error_kind([&] { decode_and_scale(p, tape.constant(v), 9, ScaleFactors::ones(4)); }) ==
        ErrorKind::kInvalidArgument);
}

TEST_CASE("step integrates with forward Euler") {
  const NetworkConfig c = small_network();
  ModelParams params = jitter_params(init_params(c, 18), 19, 0.05f);
  params.tensors.at("decoder.l2.w").setZero();
  params.tensors.at("decoder.l2.b").setZero();
  World w = make_world(Eigen::RowVector3d::Zero());
  rebind(w);
  const Points body_next = w.state.body_pos.rowwise() + Eigen::RowVector3d(0.0, 0.0, 0.01);

  SimState still = w.state;
  still.garment_vel.setZero();
  Points accel;
  const SimState a = step<double>(params, c, still, body_next, w.ctx, 2, &accel);
  CHECK(accel.isZero(0.0));
  CHECK(a.garment_pos == still.garment_pos);
  CHECK(a.garment_pos_prev == still.garment_pos);
  CHECK(a.body_pos == body_next);
  CHECK(a.body_pos_prev == still.body_pos);
  CHECK(a.time == still.time + still.time_step);

  const SimState b = step<double>(params, c, w.state, body_next, w.ctx, 2);
  CHECK(b.garment_vel == w.state.garment_vel);
  CHECK(b.garment_pos == Points(w.state.garment_pos + w.state.time_step * w.state.garment_vel));

  w.ctx.pinned = {0, 3};
  const ModelParams live = jitter_params(init_params(c, 18), 19, 0.05f);
  const SimState pinned = step<double>(live, c, w.state, body_next, w.ctx, 2);
  CHECK(pinned.garment_vel.row(0).isZero(0.0));
  CHECK(pinned.garment_pos.row(3) == w.state.garment_pos.row(3));
}

TEST_CASE("step is deterministic and rejects divergence") {
  const NetworkConfig c = small_network();
  ModelParams params = jitter_params(init_params(c, 20), 21, 0.05f);
  World w = make_world(Eigen::RowVector3d::Zero());
  rebind(w);
  const SimState a = step<float>(params, c, w.state, w.state.body_pos, w.ctx, 3);
  const SimState b = step<float>(params, c, w.state, w.state.body_pos, w.ctx, 3);
  CHECK(a.garment_pos == b.garment_pos);
  CHECK(a.garment_vel == b.garment_vel);

  params.tensors.at("decoder.l2.b").setConstant(std::numeric_limits<float>::infinity());
  CHECK(error_kind([&] { step<double>(params, c, w.state, w.state.body_pos, w.ctx, 1); }) ==
        ErrorKind::kNumericDivergence);
}

TEST_CASE("step is translation invariant") {
  const NetworkConfig c = small_network(2);
  const ModelParams params = jitter_params(init_params(c, 22), 23, 0.05f);
  const Eigen::RowVector3d t(17.3, -4.2, 8.9);
  World a = make_world(Eigen::RowVector3d::Zero());
  rebind(a);
  World b = make_world(t);
  rebind(b);
  b.state.garment_pos = a.state.garment_pos.rowwise() + t;
  b.state.garment_pos_prev = a.state.garment_pos_prev.rowwise() + t;
  Points acc_a, acc_b;
  const SimState na = step<double>(params, c, a.state, a.state.body_pos, a.ctx, 3, &acc_a);
  const SimState nb = step<double>(params, c, b.state, b.state.body_pos, b.ctx, 3, &acc_b);
  CHECK((acc_a - acc_b).cwiseAbs().maxCoeff() <= 1e-6);
  const Points offset = nb.garment_pos - na.garment_pos;
  CHECK((offset.rowwise() - t).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("step is permutation equivariant") {
  const NetworkConfig c = small_network(1);
  const ModelParams params = jitter_params(init_params(c, 24), 25, 0.05f);
  World a = make_world(Eigen::RowVector3d::Zero(), 4);
  rebind(a);
  const std::int32_t n = a.garment.vertex_count();
  std::vector<std::int32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(26);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto relabel = [&](const Points& x) {
    Points y(x.rows(), 3);
    for (std::int32_t i = 0; i < n; ++i) y.row(perm[i]) = x.row(i);
    return y;
  };
  World b = a;
  std::vector<Triangle> tris;
  for (const Triangle& t : a.garment.triangles()) tris.push_back({perm[t[0]], perm[t[1]], perm[t[2]]});
  b.garment = TriMesh(relabel(a.garment.rest_positions()), tris);
  rebind(b);
  b.ctx.scale.s.resize(n);
  for (std::int32_t i = 0; i < n; ++i) b.ctx.scale.s[perm[i]] = a.ctx.scale.s[i];
  b.state.garment_pos = relabel(a.state.garment_pos);
  b.state.garment_vel = relabel(a.state.garment_vel);
  b.state.garment_pos_prev = relabel(a.state.garment_pos_prev);
  Points acc_a, acc_b;
  step<double>(params, c, a.state, a.state.body_pos, a.ctx, 2, &acc_a);
  step<double>(params, c, b.state, b.state.body_pos, b.ctx, 2, &acc_b);
  CHECK((relabel(acc_a) - acc_b).cwiseAbs().maxCoeff() <= 1e-9);
}

}
