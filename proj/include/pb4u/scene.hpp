#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pb4u/graph.hpp"
#include "pb4u/mesh.hpp"
#include "pb4u/network.hpp"
#include "pb4u/physics.hpp"

namespace pb4u {

struct Keyframe {
  double t = 0.0;
  Vec3 center = Vec3::Zero();

  bool operator==(const Keyframe&) const = default;
};

// Either a procedural grid (grid_n >= 2) or an OBJ file.
struct GarmentSpec {
  int grid_n = 0;
  double side = 1.0;
  std::string obj;
  int subdivide = 0;
  Vec3 offset = Vec3::Zero();
  std::vector<std::int32_t> pinned;

  bool operator==(const GarmentSpec&) const = default;
};

struct BodySpec {
  std::string type = "sphere";
  double radius = 0.3;
  int subdivisions = 3;
  // Sorted by time; positions are interpolated linearly and held constant
  // outside the keyed range.
  std::vector<Keyframe> keyframes;

  bool operator==(const BodySpec&) const = default;
};

struct SceneSpec {
  GarmentSpec garment;
  BodySpec body;
  double dt = 1.0 / 30.0;
  double gravity = 9.81;
  MaterialParams material;
  // 0 selects 1.5 x the mean edge length of the unsubdivided garment.
  double world_edge_radius = 0.0;
  double collision_margin = 2e-3;

  void validate() const;
  bool operator==(const SceneSpec&) const = default;
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"drape-sphere", "hang-pinned"};
  return names;
}

// Throws invalid-argument on an unknown name or grid < 2.
SceneSpec preset_scene(const std::string& name, int grid);

// A scene with meshes and derived quantities resolved.
struct Scene {
  SceneSpec spec;
  TriMesh garment;
  TriMesh body;
  Points body_rest;     // body at the origin
  Points body_normals;  // constant under the rigid translation
  double base_mean_edge = 0.0;  // before subdivision
  double mean_edge = 0.0;
  double world_radius = 0.0;
  ScaleFactors scale;
  RestGeometry rest;

  // Relative OBJ paths resolve against base_dir.
  static Scene build(const SceneSpec& spec, const std::string& base_dir = "");

  Vec3 body_center(double t) const;
  Points body_positions(double t) const;
  SimState initial_state() const;
  StepContext step_context(bool update_scaling = true) const;
  // Loss terms for the transition state -> predicted.
  LossContext loss_context(const SimState& state, const Points& predicted) const;
};

}  // namespace pb4u
