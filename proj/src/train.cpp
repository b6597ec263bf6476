#include "pb4u/train.hpp"

#include <cmath>
#include <filesystem>
#include <limits>

#include "pb4u/error.hpp"

namespace pb4u {

namespace {

constexpr int kConstraintSweeps = 20;

}  // namespace

void TrainConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorKind::kInvalidArgument, "train config: " + msg); };
  if (iterations < 1) bad("iterations must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) bad("learning_rate must be >= 0");
  if (scenes.empty()) bad("at least one scene is required");
  for (const SceneSpec& s : scenes) {
    s.validate();
    if (s.garment.subdivide != 0) bad("training scenes must be at base resolution (subdivide = 0)");
  }
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) bad("beta1 must lie in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) bad("beta2 must lie in [0, 1)");
  if (!(adam.epsilon > 0.0)) bad("epsilon must be > 0");
  network.validate();
  if (k_base < 1) bad("k_base must be >= 1");
  if (rollout_steps < 1) bad("rollout_steps must be >= 1");
  if (!(clip_norm > 0.0)) bad("clip_norm must be > 0");
  if (refresh_interval < 0) bad("refresh_interval must be >= 0");
  if (refresh_frames < 1) bad("refresh_frames must be >= 1");
  if (!(refresh_max_strain > 0.0)) bad("refresh_max_strain must be > 0");
  if (bootstrap_frames < 1) bad("bootstrap_frames must be >= 1");
}

std::vector<SimState> bootstrap_frames(const Scene& scene, int frames) {
  if (frames < 1) fail(ErrorKind::kInvalidArgument, "bootstrap frame count must be >= 1");
  std::vector<SimState> out;
  SimState s = scene.initial_state();
  const double dt = s.time_step;
  const double shell = scene.spec.body.radius + scene.spec.collision_margin;
  const Eigen::RowVector3d g(0.0, -scene.spec.gravity, 0.0);
  const auto& edges = scene.garment.edges();
  const auto& lengths = scene.garment.rest_edge_lengths();
  Eigen::VectorXd inv_mass = Eigen::VectorXd::Ones(scene.garment.vertex_count());
  for (std::int32_t p : scene.spec.garment.pinned) inv_mass[p] = 0.0;
  out.push_back(s);
  while (static_cast<int>(out.size()) < frames) {
    const Vec3 c = scene.body_center(s.time + dt);
    SimState next;
    next.time_step = dt;
    next.time = s.time + dt;
    next.garment_pos = s.garment_pos + dt * (s.garment_vel.rowwise() + dt * g);
    for (std::int32_t p : scene.spec.garment.pinned) next.garment_pos.row(p) = s.garment_pos.row(p);
    // Gauss-Seidel sweeps over the rest edge lengths, then the body surface.
    for (int sweep = 0; sweep < kConstraintSweeps; ++sweep) {
      for (std::size_t e = 0; e < edges.size(); ++e) {
        const auto [a, b] = edges[e];
        const double wa = inv_mass[a], wb = inv_mass[b];
        if (wa + wb == 0.0) continue;
        const Eigen::RowVector3d d = next.garment_pos.row(b) - next.garment_pos.row(a);
        const double len = d.norm();
        if (len == 0.0) continue;
        const Eigen::RowVector3d corr = ((len - lengths[e]) / (len * (wa + wb))) * d;
        next.garment_pos.row(a) += wa * corr;
        next.garment_pos.row(b) -= wb * corr;
      }
    }
    for (Eigen::Index i = 0; i < next.garment_pos.rows(); ++i) {
      Eigen::RowVector3d d = next.garment_pos.row(i) - c.transpose();
      const double len = d.norm();
      if (len < shell) {
        d = len > 0.0 ? Eigen::RowVector3d(d / len) : Eigen::RowVector3d(0.0, 1.0, 0.0);
        next.garment_pos.row(i) = c.transpose() + shell * d;
      }
    }
    next.garment_vel = (next.garment_pos - s.garment_pos) / dt;
    next.garment_pos_prev = s.garment_pos;
    next.body_pos = scene.body_positions(next.time);
    next.body_pos_prev = s.body_pos;
    out.push_back(next);
    s = std::move(next);
  }
  return out;
}

double max_edge_strain(const Points& positions, const TriMesh& mesh) {
  if (positions.rows() != mesh.vertex_count()) {
    fail(ErrorKind::kInvalidArgument, "positions do not match mesh vertex count");
  }
  const auto& edges = mesh.edges();
  const auto& lengths = mesh.rest_edge_lengths();
  double worst = 0.0;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const double len = (positions.row(edges[e][1]) - positions.row(edges[e][0])).norm();
    worst = std::max(worst, std::abs(len / lengths[e] - 1.0));
  }
  return worst;
}

const SimState& sample_frame(const std::vector<SimState>& buffer, std::mt19937_64& rng) {
  if (buffer.empty()) fail(ErrorKind::kInvalidState, "experience buffer is empty");
  std::uniform_int_distribution<std::size_t> pick(0, buffer.size() - 1);
  return buffer[pick(rng)];
}

double probe_loss(const Model& model, const Scene& scene, const std::vector<SimState>& frames,
                  const LossWeights& weights) {
  if (frames.empty()) fail(ErrorKind::kInvalidArgument, "probe set is empty");
  const StepContext ctx = scene.step_context(model.update_scaling);
  const int k = propagation_steps(model.control, scene.mean_edge);
  double sum = 0.0;
  for (const SimState& s : frames) {
    try {
      const SimState next =
          step<double>(model.params, model.network, s, scene.body_positions(s.time + s.time_step), ctx, k);
      sum += evaluate_loss(next.garment_pos, scene.loss_context(s, next.garment_pos), weights).total;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNumericDivergence) throw;
      return std::numeric_limits<double>::infinity();
    }
  }
  return sum / static_cast<double>(frames.size());
}

namespace {

struct AdamState {
  std::map<std::string, ad::Matrix<float>> m;
  std::map<std::string, ad::Matrix<float>> v;
};

// Model-driven frames from the initial state, cut before the first frame
// strained beyond max_strain. Empty if the model diverges.
std::vector<SimState> reroll(const Model& model, const Scene& scene, int frames, int k, double max_strain) {
  const StepContext ctx = scene.step_context(model.update_scaling);
  std::vector<SimState> out;
  SimState s = scene.initial_state();
  out.push_back(s);
  try {
    while (static_cast<int>(out.size()) < frames) {
      SimState next =
          step<float>(model.params, model.network, s, scene.body_positions(s.time + s.time_step), ctx, k);
      if (max_edge_strain(next.garment_pos, scene.garment) > max_strain) break;
      out.push_back(next);
      s = std::move(next);
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kNumericDivergence) throw;
    return {};
  }
  return out;
}

void dump_frame(const std::string& dir, const Scene& scene, const SimState& state, int iter) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  const std::string path =
      (std::filesystem::path(dir) / ("nonfinite_iter_" + std::to_string(iter) + ".obj")).string();
  write_obj(path, state.garment_pos, scene.garment.triangles());
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::function<void(const TrainLogRow&)>& on_iter) {
  config.validate();
  std::vector<Scene> scenes;
  scenes.reserve(config.scenes.size());
  for (const SceneSpec& spec : config.scenes) scenes.push_back(Scene::build(spec, config.base_dir));

  TrainResult result;
  Model& model = result.model;
  model.network = config.network;
  model.control = calibrate(config.k_base, scenes.front().mean_edge);
  model.update_scaling = config.update_scaling;
  model.params = init_params(config.network, config.seed);

  std::vector<int> ks;
  std::vector<std::vector<SimState>> probes;
  std::vector<std::vector<SimState>> buffers;
  for (const Scene& scene : scenes) {
    ks.push_back(propagation_steps(model.control, scene.mean_edge));
    probes.push_back(bootstrap_frames(scene, config.bootstrap_frames));
    buffers.push_back(probes.back());
  }
  auto mean_probe = [&]() {
    double sum = 0.0;
    for (std::size_t s = 0; s < scenes.size(); ++s) sum += probe_loss(model, scenes[s], probes[s], config.weights);
    return sum / static_cast<double>(scenes.size());
  };
  result.initial_probe_loss = mean_probe();

  std::mt19937_64 rng(config.seed ^ 0x5851f42d4c957f2dULL);
  AdamState adam;
  for (const auto& [name, t] : model.params.tensors) {
    adam.m.emplace(name, ad::Matrix<float>::Zero(t.rows(), t.cols()));
    adam.v.emplace(name, ad::Matrix<float>::Zero(t.rows(), t.cols()));
  }

  for (int it = 1; it <= config.iterations; ++it) {
    if (config.refresh_interval > 0 && it > 1 && (it - 1) % config.refresh_interval == 0) {
      for (std::size_t s = 0; s < scenes.size(); ++s) {
        std::vector<SimState> frames = reroll(model, scenes[s], config.refresh_frames, ks[s], config.refresh_max_strain);
        ++result.refreshes;
        // Only the initial state survived, which the probe set already holds.
        if (frames.size() < 2) {
          ++result.rejected_refreshes;
          continue;
        }
        buffers[s] = probes[s];
        buffers[s].insert(buffers[s].end(), frames.begin(), frames.end());
      }
    }

    std::size_t si = 0;
    if (scenes.size() > 1) si = std::uniform_int_distribution<std::size_t>(0, scenes.size() - 1)(rng);
    const Scene& scene = scenes[si];
    const StepContext ctx = scene.step_context(model.update_scaling);
    SimState state = sample_frame(buffers[si], rng);

    ad::Tape<float> tape;
    const BoundParams<float> p = BoundParams<float>::bind(tape, model.params, true);
    ad::Var<float> x = tape.constant(state.garment_pos.cast<float>());
    ad::Var<float> u = tape.constant(state.garment_vel.cast<float>());
    ad::Var<float> objective;
    LossBreakdown row;
    const SimState sampled = state;
    for (int k = 0; k < config.rollout_steps; ++k) {
      const StepForward<float> fwd = forward_step(p, model.network, state, x, u, ctx, ks[si]);
      const Points predicted = fwd.position.value().cast<double>();
      const LossTerms<float> terms = total_loss(fwd.position, scene.loss_context(state, predicted), config.weights);
      objective = objective.valid() ? objective + terms.total : terms.total;
      const LossBreakdown b = terms.values(config.weights);
      row.stretch += b.stretch;
      row.bending += b.bending;
      row.collision += b.collision;
      row.gravity += b.gravity;
      row.friction += b.friction;
      row.inertia += b.inertia;

      SimState next;
      next.time_step = state.time_step;
      next.time = state.time + state.time_step;
      next.garment_pos = predicted;
      next.garment_vel = fwd.velocity.value().cast<double>();
      next.garment_pos_prev = state.garment_pos;
      next.body_pos = scene.body_positions(next.time);
      next.body_pos_prev = state.body_pos;
      state = std::move(next);
      x = fwd.position;
      u = fwd.velocity;
    }
    const double inv_steps = 1.0 / static_cast<double>(config.rollout_steps);
    if (config.rollout_steps > 1) objective = ad::scale(objective, static_cast<float>(inv_steps));
    row.stretch *= inv_steps;
    row.bending *= inv_steps;
    row.collision *= inv_steps;
    row.gravity *= inv_steps;
    row.friction *= inv_steps;
    row.inertia *= inv_steps;
    row.total = weighted_total(row, config.weights);
    if (!row.all_finite() || !std::isfinite(objective.item())) {
      dump_frame(config.dump_dir, scene, sampled, it);
      fail(ErrorKind::kNumericDivergence, "non-finite training loss at iteration " + std::to_string(it));
    }

    tape.backward(objective);
    double norm2 = 0.0;
    for (const auto& [name, var] : p.vars) norm2 += var.grad().template cast<double>().squaredNorm();
    const double norm = std::sqrt(norm2);
    const double clip = norm > config.clip_norm ? config.clip_norm / norm : 1.0;

    const double b1 = config.adam.beta1;
    const double b2 = config.adam.beta2;
    const double c1 = 1.0 - std::pow(b1, it);
    const double c2 = 1.0 - std::pow(b2, it);
    for (auto& [name, w] : model.params.tensors) {
      const ad::Matrix<float>& g = p.vars.at(name).grad();
      ad::Matrix<float>& m = adam.m.at(name);
      ad::Matrix<float>& v = adam.v.at(name);
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double gi = clip * static_cast<double>(g.data()[i]);
        const double mi = b1 * m.data()[i] + (1.0 - b1) * gi;
        const double vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
        m.data()[i] = static_cast<float>(mi);
        v.data()[i] = static_cast<float>(vi);
        const double update = config.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + config.adam.epsilon);
        w.data()[i] = static_cast<float>(static_cast<double>(w.data()[i]) - update);
      }
    }

    result.log.push_back({it, row});
    if (on_iter) on_iter(result.log.back());
  }

  result.final_probe_loss = mean_probe();
  return result;
}

}  // namespace pb4u
