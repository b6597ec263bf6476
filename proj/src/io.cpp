#include "pb4u/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>
#include <zlib.h>

#include "pb4u/error.hpp"

namespace pb4u {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using nlohmann::json;

std::string format_number(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) fail(ErrorKind::kIo, "read failed for '" + path + "'");
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  out.flush();
  if (!out) fail(ErrorKind::kIo, "write failed for '" + path + "'");
}

namespace {

template <typename U>
void put_le(std::string& out, U value) {
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U get_le(const std::string& in, std::size_t offset) {
  U value;
  std::memcpy(&value, in.data() + offset, sizeof(U));
  return value;
}

std::uint32_t crc32_of(const char* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

constexpr std::size_t kPrefixBytes = 8 + 4 + 8;

}  // namespace

std::string serialize_checkpoint(const Model& model) {
  model.network.validate();
  json header = json::object();
  header["__metadata__"] = {{"gamma", model.network.gamma},
                            {"processor_depth", model.network.processor_depth},
                            {"latent_dim", model.network.latent_dim},
                            {"k_base", model.control.k_base},
                            {"l_base", model.control.l_base},
                            {"update_scaling", model.update_scaling}};
  std::string payload;
  for (const auto& [name, t] : model.params.tensors) {
    if (name == "__metadata__") fail(ErrorKind::kInvalidArgument, "reserved tensor name");
    header[name] = {{"dtype", "f32"}, {"shape", {t.rows(), t.cols()}}, {"byte_offset", payload.size()}};
    payload.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(float));
  }
  const std::string header_text = header.dump();
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, header_text.size());
  out += header_text;
  out += payload;
  put_le<std::uint32_t>(out, crc32_of(payload.data(), payload.size()));
  return out;
}

Model parse_checkpoint(const std::string& bytes) {
  const std::size_t magic_len = std::min(bytes.size(), sizeof(kCheckpointMagic));
  if (std::memcmp(bytes.data(), kCheckpointMagic, magic_len) != 0) {
    fail(ErrorKind::kFormat, "not a checkpoint: bad magic");
  }
  auto truncated = [&](const char* what, std::size_t need) {
    fail(ErrorKind::kIo, std::string("truncated checkpoint: ") + what + " needs " + std::to_string(need) +
                             " bytes, file has " + std::to_string(bytes.size()) + " bytes");
  };
  if (bytes.size() < kPrefixBytes) truncated("fixed prefix", kPrefixBytes);
  const auto version = get_le<std::uint32_t>(bytes, 8);
  if (version > kCheckpointVersion || version == 0) {
    fail(ErrorKind::kFormat, "unsupported checkpoint version " + std::to_string(version) + " (reader supports " +
                                 std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = get_le<std::uint64_t>(bytes, 12);
  if (header_len > bytes.size() - kPrefixBytes) truncated("header", kPrefixBytes + header_len);

  json header;
  try {
    header = json::parse(bytes.begin() + kPrefixBytes,
                         bytes.begin() + static_cast<std::ptrdiff_t>(kPrefixBytes + header_len));
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (!header.is_object() || !header.contains("__metadata__")) {
    fail(ErrorKind::kFormat, "checkpoint header lacks __metadata__");
  }

  Model model;
  struct Entry {
    std::string name;
    Eigen::Index rows, cols;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  std::uint64_t payload_len = 0;
  try {
    const json& meta = header.at("__metadata__");
    model.network.gamma = meta.at("gamma").get<double>();
    model.network.processor_depth = meta.at("processor_depth").get<int>();
    model.network.latent_dim = meta.at("latent_dim").get<int>();
    model.control = calibrate(meta.at("k_base").get<int>(), meta.at("l_base").get<double>());
    model.update_scaling = meta.value("update_scaling", true);
    for (const auto& [name, info] : header.items()) {
      if (name == "__metadata__") continue;
      if (info.at("dtype").get<std::string>() != "f32") fail(ErrorKind::kFormat, name + ": dtype must be f32");
      const auto shape = info.at("shape").get<std::vector<std::int64_t>>();
      if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0) fail(ErrorKind::kFormat, name + ": bad shape");
      const auto offset = info.at("byte_offset").get<std::uint64_t>();
      entries.push_back({name, shape[0], shape[1], offset});
      payload_len += static_cast<std::uint64_t>(shape[0] * shape[1]) * sizeof(float);
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("malformed checkpoint header: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kInvalidArgument) fail(ErrorKind::kFormat, std::string("bad metadata: ") + e.what());
    throw;
  }

  const std::uint64_t total = kPrefixBytes + header_len + payload_len + 4;
  if (bytes.size() < total) truncated("payload and checksum", total);
  if (bytes.size() > total) {
    fail(ErrorKind::kFormat, "checkpoint has " + std::to_string(bytes.size() - total) + " trailing bytes");
  }
  const char* payload = bytes.data() + kPrefixBytes + header_len;
  const auto stored_crc = get_le<std::uint32_t>(bytes, total - 4);
  const std::uint32_t actual_crc = crc32_of(payload, payload_len);
  if (stored_crc != actual_crc) fail(ErrorKind::kFormat, "checkpoint CRC mismatch: payload is corrupt");

  // Offsets must tile the payload without overlap.
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.offset < b.offset; });
  std::uint64_t cursor = 0;
  for (const Entry& e : entries) {
    const std::uint64_t size = static_cast<std::uint64_t>(e.rows * e.cols) * sizeof(float);
    if (e.offset != cursor) fail(ErrorKind::kFormat, e.name + ": byte_offset overlaps or leaves a gap");
    ad::Matrix<float> t(e.rows, e.cols);
    std::memcpy(t.data(), payload + e.offset, size);
    model.params.tensors.emplace(e.name, std::move(t));
    cursor += size;
  }

  std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> expected;
  try {
    expected = param_shapes(model.network);
  } catch (const Error& e) {
    fail(ErrorKind::kFormat, std::string("bad metadata: ") + e.what());
  }
  for (const auto& [name, shape] : expected) {
    auto it = model.params.tensors.find(name);
    if (it == model.params.tensors.end()) fail(ErrorKind::kConfigMismatch, "checkpoint lacks tensor " + name);
    if (it->second.rows() != shape.first || it->second.cols() != shape.second) {
      fail(ErrorKind::kConfigMismatch, name + ": stored shape " + std::to_string(it->second.rows()) + "x" +
                                           std::to_string(it->second.cols()) + ", configuration expects " +
                                           std::to_string(shape.first) + "x" + std::to_string(shape.second));
    }
  }
  if (expected.size() != model.params.tensors.size()) {
    fail(ErrorKind::kConfigMismatch, "checkpoint holds tensors the configuration does not define");
  }
  return model;
}

void save_checkpoint(const Model& model, const std::string& path) { write_file(path, serialize_checkpoint(model)); }

Model load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path)); }

Model load_checkpoint(const std::string& path, const NetworkConfig& expected) {
  Model model = load_checkpoint(path);
  if (!(model.network == expected)) {
    fail(ErrorKind::kConfigMismatch, "checkpoint network configuration differs from the requested one");
  }
  return model;
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) fail(ErrorKind::kFormat, where + " must be a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) fail(ErrorKind::kFormat, "unknown field '" + key + "' in " + where);
  }
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const json& j, const std::string& where) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) fail(ErrorKind::kFormat, where + " must have 3 components");
  return Vec3(v[0], v[1], v[2]);
}

json material_json(const MaterialParams& m) {
  return {{"lame_mu", m.lame_mu},
          {"lame_lambda", m.lame_lambda},
          {"bending_coeff", m.bending_coeff},
          {"mass_density", m.mass_density},
          {"friction_coeff", m.friction_coeff}};
}

MaterialParams material_from(const json& j) {
  check_keys(j, {"lame_mu", "lame_lambda", "bending_coeff", "mass_density", "friction_coeff"}, "material");
  MaterialParams m;
  m.lame_mu = j.value("lame_mu", m.lame_mu);
  m.lame_lambda = j.value("lame_lambda", m.lame_lambda);
  m.bending_coeff = j.value("bending_coeff", m.bending_coeff);
  m.mass_density = j.value("mass_density", m.mass_density);
  m.friction_coeff = j.value("friction_coeff", m.friction_coeff);
  return m;
}

json scene_json(const SceneSpec& s) {
  json garment = json::object();
  if (s.garment.grid_n != 0) {
    garment["grid"] = {{"n", s.garment.grid_n}, {"side", s.garment.side}};
  } else {
    garment["obj"] = s.garment.obj;
  }
  garment["subdivide"] = s.garment.subdivide;
  garment["offset"] = vec_json(s.garment.offset);
  garment["pinned"] = s.garment.pinned;
  json keys = json::array();
  for (const Keyframe& k : s.body.keyframes) keys.push_back({{"t", k.t}, {"center", vec_json(k.center)}});
  json body = {{"type", s.body.type},
               {"radius", s.body.radius},
               {"subdivisions", s.body.subdivisions},
               {"keyframes", keys}};
  return {{"garment", garment},
          {"body", body},
          {"dt", s.dt},
          {"gravity", s.gravity},
          {"material", material_json(s.material)},
          {"world_edge_radius", s.world_edge_radius},
          {"collision_margin", s.collision_margin}};
}

SceneSpec scene_from(const json& j) {
  SceneSpec s;
  try {
    check_keys(j, {"garment", "body", "dt", "gravity", "material", "world_edge_radius", "collision_margin"}, "scene");
    if (!j.contains("garment") || !j.contains("body")) fail(ErrorKind::kFormat, "scene needs garment and body");
    const json& g = j.at("garment");
    check_keys(g, {"grid", "obj", "subdivide", "offset", "pinned"}, "garment");
    if (g.contains("grid")) {
      const json& grid = g.at("grid");
      check_keys(grid, {"n", "side"}, "garment.grid");
      s.garment.grid_n = grid.at("n").get<int>();
      s.garment.side = grid.value("side", 1.0);
    }
    if (g.contains("obj")) s.garment.obj = g.at("obj").get<std::string>();
    s.garment.subdivide = g.value("subdivide", 0);
    if (g.contains("offset")) s.garment.offset = vec_from(g.at("offset"), "garment.offset");
    if (g.contains("pinned")) s.garment.pinned = g.at("pinned").get<std::vector<std::int32_t>>();

    const json& b = j.at("body");
    check_keys(b, {"type", "radius", "subdivisions", "keyframes"}, "body");
    s.body.type = b.value("type", s.body.type);
    s.body.radius = b.value("radius", s.body.radius);
    s.body.subdivisions = b.value("subdivisions", s.body.subdivisions);
    if (b.contains("keyframes")) {
      for (const json& k : b.at("keyframes")) {
        check_keys(k, {"t", "center"}, "body.keyframes[]");
        s.body.keyframes.push_back({k.at("t").get<double>(), vec_from(k.at("center"), "keyframe center")});
      }
    }
    s.dt = j.value("dt", s.dt);
    s.gravity = j.value("gravity", s.gravity);
    if (j.contains("material")) s.material = material_from(j.at("material"));
    s.world_edge_radius = j.value("world_edge_radius", s.world_edge_radius);
    s.collision_margin = j.value("collision_margin", s.collision_margin);
    s.validate();
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("scene: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kInvalidArgument) fail(ErrorKind::kFormat, e.what());
    throw;
  }
  return s;
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, what + " is not valid JSON: " + e.what());
  }
}

}  // namespace

std::string scene_to_json(const SceneSpec& spec) { return scene_json(spec).dump(2) + "\n"; }

SceneSpec scene_from_json(const std::string& text) { return scene_from(parse_json(text, "scene")); }

void save_scene(const SceneSpec& spec, const std::string& path) { write_file(path, scene_to_json(spec)); }

SceneSpec load_scene(const std::string& path) { return scene_from_json(read_file(path)); }

TrainConfig train_config_from_json(const std::string& text, const std::string& base_dir) {
  const json j = parse_json(text, "train config");
  TrainConfig c;
  c.base_dir = base_dir;
  try {
    check_keys(j,
               {"iterations", "learning_rate", "seed", "scenes", "adam", "gamma", "k_base", "processor_depth",
                "latent_dim", "loss_weights", "rollout_steps", "clip_norm", "update_scaling", "refresh_interval",
                "refresh_frames", "refresh_max_strain", "bootstrap_frames"},
               "train config");
    c.iterations = j.value("iterations", c.iterations);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.seed = j.value("seed", c.seed);
    if (j.contains("adam")) {
      const json& a = j.at("adam");
      check_keys(a, {"beta1", "beta2", "epsilon"}, "adam");
      c.adam.beta1 = a.value("beta1", c.adam.beta1);
      c.adam.beta2 = a.value("beta2", c.adam.beta2);
      c.adam.epsilon = a.value("epsilon", c.adam.epsilon);
    }
    c.network.gamma = j.value("gamma", c.network.gamma);
    c.network.processor_depth = j.value("processor_depth", c.network.processor_depth);
    c.network.latent_dim = j.value("latent_dim", c.network.latent_dim);
    c.k_base = j.value("k_base", c.k_base);
    if (j.contains("loss_weights")) {
      const json& w = j.at("loss_weights");
      check_keys(w, {"stretch", "bending", "collision", "gravity", "friction", "inertia"}, "loss_weights");
      c.weights.stretch = w.value("stretch", 1.0);
      c.weights.bending = w.value("bending", 1.0);
      c.weights.collision = w.value("collision", 1.0);
      c.weights.gravity = w.value("gravity", 1.0);
      c.weights.friction = w.value("friction", 1.0);
      c.weights.inertia = w.value("inertia", 1.0);
    }
    c.rollout_steps = j.value("rollout_steps", c.rollout_steps);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.update_scaling = j.value("update_scaling", c.update_scaling);
    c.refresh_interval = j.value("refresh_interval", c.refresh_interval);
    c.refresh_frames = j.value("refresh_frames", c.refresh_frames);
    c.refresh_max_strain = j.value("refresh_max_strain", c.refresh_max_strain);
    c.bootstrap_frames = j.value("bootstrap_frames", c.bootstrap_frames);
    if (!j.contains("scenes")) fail(ErrorKind::kFormat, "train config needs a scenes list");
    for (const json& s : j.at("scenes")) {
      if (s.is_string()) {
        std::filesystem::path p(s.get<std::string>());
        if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
        c.scenes.push_back(load_scene(p.string()));
      } else if (s.is_object() && s.contains("preset")) {
        check_keys(s, {"preset", "grid"}, "scenes[]");
        c.scenes.push_back(preset_scene(s.at("preset").get<std::string>(), s.value("grid", 24)));
      } else {
        c.scenes.push_back(scene_from(s));
      }
    }
    c.validate();
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("train config: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kInvalidArgument) fail(ErrorKind::kFormat, e.what());
    throw;
  }
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  const std::string text = read_file(path);
  return train_config_from_json(text, std::filesystem::path(path).parent_path().string());
}

}  // namespace pb4u
