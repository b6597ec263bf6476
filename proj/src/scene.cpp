#include "pb4u/scene.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "pb4u/error.hpp"

namespace pb4u {

void SceneSpec::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorKind::kInvalidArgument, "scene: " + msg); };
  const bool has_grid = garment.grid_n != 0;
  const bool has_obj = !garment.obj.empty();
  if (has_grid == has_obj) bad("garment needs exactly one of grid or obj");
  if (has_grid && garment.grid_n < 2) bad("garment grid n must be >= 2");
  if (has_grid && !(garment.side > 0.0)) bad("garment side must be > 0");
  if (garment.subdivide < 0 || garment.subdivide > 6) bad("garment subdivide must lie in [0, 6]");
  if (!garment.offset.allFinite()) bad("garment offset must be finite");
  for (std::int32_t p : garment.pinned) {
    if (p < 0) bad("pinned indices must be >= 0");
  }
  if (body.type != "sphere") bad("unsupported body type '" + body.type + "'");
  if (!(body.radius > 0.0)) bad("body radius must be > 0");
  if (body.subdivisions < 0 || body.subdivisions > 6) bad("body subdivisions must lie in [0, 6]");
  if (body.keyframes.empty()) bad("body needs at least one keyframe");
  for (std::size_t k = 0; k < body.keyframes.size(); ++k) {
    const Keyframe& f = body.keyframes[k];
    if (!std::isfinite(f.t) || !f.center.allFinite()) bad("keyframes must be finite");
    if (k > 0 && !(f.t > body.keyframes[k - 1].t)) bad("keyframe times must increase strictly");
  }
  if (!(dt > 0.0) || !std::isfinite(dt)) bad("dt must be > 0");
  if (!std::isfinite(gravity)) bad("gravity must be finite");
  if (!(world_edge_radius >= 0.0)) bad("world_edge_radius must be >= 0");
  if (!(collision_margin >= 0.0)) bad("collision_margin must be >= 0");
  material.validate();
}

SceneSpec preset_scene(const std::string& name, int grid) {
  if (grid < 2) fail(ErrorKind::kInvalidArgument, "grid must be >= 2");
  SceneSpec s;
  s.garment.grid_n = grid;
  s.garment.side = 1.0;
  if (name == "drape-sphere") {
    s.garment.offset = Vec3(0.0, 0.35, 0.0);
    s.body.keyframes = {{0.0, Vec3(0.0, 0.0, 0.0)},
                        {1.0, Vec3(0.04, 0.02, 0.0)},
                        {2.0, Vec3(0.0, 0.0, 0.04)},
                        {3.0, Vec3(-0.04, 0.0, 0.0)}};
  } else if (name == "hang-pinned") {
    s.garment.offset = Vec3(0.0, 0.6, 0.0);
    s.garment.pinned = {0, grid - 1};
    s.body.radius = 0.2;
    s.body.keyframes = {{0.0, Vec3(0.0, 0.0, 0.0)}};
  } else {
    fail(ErrorKind::kInvalidArgument, "unknown preset '" + name + "'");
  }
  return s;
}

Scene Scene::build(const SceneSpec& spec, const std::string& base_dir) {
  spec.validate();
  Scene scene;
  scene.spec = spec;

  TriMesh base;
  if (spec.garment.grid_n != 0) {
    base = make_grid_cloth(spec.garment.grid_n, spec.garment.side, spec.material);
  } else {
    std::filesystem::path path(spec.garment.obj);
    if (path.is_relative() && !base_dir.empty()) path = std::filesystem::path(base_dir) / path;
    base = read_obj(path.string(), spec.material);
  }
  Points placed = base.rest_positions();
  placed.rowwise() += spec.garment.offset.transpose();
  TriMesh garment(std::move(placed), base.triangles(), spec.material);
  scene.base_mean_edge = mean_edge_length(garment);
  for (int level = 0; level < spec.garment.subdivide; ++level) garment = subdivide_midpoint(garment);
  for (std::int32_t p : spec.garment.pinned) {
    if (p >= garment.vertex_count()) {
      fail(ErrorKind::kInvalidArgument, "pinned vertex " + std::to_string(p) + " out of range");
    }
  }
  scene.garment = std::move(garment);
  scene.mean_edge = mean_edge_length(scene.garment);
  scene.world_radius = spec.world_edge_radius > 0.0 ? spec.world_edge_radius : 1.5 * scene.base_mean_edge;
  scene.scale = rest_scale_factors(scene.garment);
  scene.rest = RestGeometry::build(scene.garment);

  scene.body = make_icosphere(spec.body.radius, spec.body.subdivisions);
  scene.body_rest = scene.body.rest_positions();
  scene.body_normals = vertex_normals(scene.body_rest, scene.body);
  return scene;
}

Vec3 Scene::body_center(double t) const {
  const auto& keys = spec.body.keyframes;
  if (t <= keys.front().t) return keys.front().center;
  if (t >= keys.back().t) return keys.back().center;
  auto hi = std::upper_bound(keys.begin(), keys.end(), t, [](double v, const Keyframe& k) { return v < k.t; });
  auto lo = hi - 1;
  const double w = (t - lo->t) / (hi->t - lo->t);
  return (1.0 - w) * lo->center + w * hi->center;
}

Points Scene::body_positions(double t) const {
  Points p = body_rest;
  p.rowwise() += body_center(t).transpose();
  return p;
}

SimState Scene::initial_state() const {
  SimState s;
  s.garment_pos = garment.rest_positions();
  s.garment_vel = Points::Zero(garment.vertex_count(), 3);
  s.garment_pos_prev = s.garment_pos;
  s.body_pos = body_positions(0.0);
  s.body_pos_prev = body_positions(-spec.dt);
  s.time_step = spec.dt;
  s.time = 0.0;
  return s;
}

StepContext Scene::step_context(bool update_scaling) const {
  StepContext ctx;
  ctx.garment = &garment;
  ctx.body = &body;
  ctx.scale = update_scaling ? scale : ScaleFactors::ones(garment.vertex_count());
  ctx.world_radius = world_radius;
  ctx.pinned = spec.garment.pinned;
  return ctx;
}

LossContext Scene::loss_context(const SimState& state, const Points& predicted) const {
  return make_loss_context(rest, spec.material, state, predicted, body_positions(state.time + state.time_step),
                           body_normals, body_normals, world_radius, spec.collision_margin, spec.gravity);
}

}  // namespace pb4u
