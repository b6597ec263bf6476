#include "pb4u/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "pb4u/gradcheck.hpp"
#include "pb4u/io.hpp"
#include "pb4u/rollout.hpp"
#include "pb4u/train.hpp"

namespace pb4u {

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage:
    case ErrorKind::kInvalidArgument:
    case ErrorKind::kInvalidState:
      return kExitUsage;
    case ErrorKind::kIo:
    case ErrorKind::kFormat:
    case ErrorKind::kConfigMismatch:
    case ErrorKind::kInvalidMesh:
      return kExitIo;
    case ErrorKind::kNumericFailure:
    case ErrorKind::kNumericDivergence:
      return kExitDivergence;
  }
  return kExitUsage;
}

namespace {

const char* kMetricsHeader = "frame,stretch,bending,collision,inertia,gravity,friction,total";
const char* kTrainLogHeader = "iter,stretch,bending,collision,gravity,friction,inertia,total";

std::string metrics_row(int frame, const LossBreakdown& l) {
  return std::to_string(frame) + "," + format_number(l.stretch) + "," + format_number(l.bending) + "," +
         format_number(l.collision) + "," + format_number(l.inertia) + "," + format_number(l.gravity) + "," +
         format_number(l.friction) + "," + format_number(l.total);
}

std::string log_row(const TrainLogRow& r) {
  const LossBreakdown& l = r.loss;
  return std::to_string(r.iter) + "," + format_number(l.stretch) + "," + format_number(l.bending) + "," +
         format_number(l.collision) + "," + format_number(l.gravity) + "," + format_number(l.friction) + "," +
         format_number(l.inertia) + "," + format_number(l.total);
}

std::ofstream open_output(const std::string& path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  return out;
}

std::string scene_dir(const std::string& scene_path) {
  return std::filesystem::path(scene_path).parent_path().string();
}

struct EvalOptions {
  std::string ckpt;
  std::string scene;
  int frames = 30;
  bool no_adaptive_k = false;
  bool no_update_scaling = false;
};

void add_eval_flags(CLI::App* cmd, EvalOptions& o) {
  cmd->add_option("--ckpt", o.ckpt, "Checkpoint file")->required();
  cmd->add_option("--scene", o.scene, "Scene file")->required();
  cmd->add_option("--frames", o.frames, "Frames to simulate")->check(CLI::PositiveNumber);
  cmd->add_flag("--no-adaptive-k", o.no_adaptive_k, "Use K = K_base regardless of resolution");
  cmd->add_flag("--no-update-scaling", o.no_update_scaling, "Use S = 1");
}

RolloutOptions rollout_options(const EvalOptions& o) {
  RolloutOptions r;
  r.frames = o.frames;
  r.adaptive_k = !o.no_adaptive_k;
  r.update_scaling = !o.no_update_scaling;
  return r;
}

int cmd_gen_scene(const std::string& preset, int grid, const std::string& out_path, std::ostream& out) {
  const SceneSpec spec = preset_scene(preset, grid);
  const std::filesystem::path p(out_path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  save_scene(spec, out_path);
  out << "wrote " << out_path << " (" << grid * grid << " garment vertices)\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& ckpt_path, std::string log_path,
              std::optional<std::uint64_t> seed, std::ostream& out) {
  TrainConfig config = load_train_config(config_path);
  if (seed) config.seed = *seed;
  if (log_path.empty()) log_path = ckpt_path + ".log.csv";
  config.dump_dir = std::filesystem::path(ckpt_path).parent_path().string();
  std::ofstream log = open_output(log_path);
  log << kTrainLogHeader << "\n";
  const TrainResult result = train(config, [&](const TrainLogRow& row) { log << log_row(row) << "\n"; });
  log.flush();
  if (!log) fail(ErrorKind::kIo, "write failed for '" + log_path + "'");
  const std::filesystem::path p(ckpt_path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  save_checkpoint(result.model, ckpt_path);
  out << "iterations " << config.iterations << "\n"
      << "probe loss " << format_number(result.initial_probe_loss) << " -> "
      << format_number(result.final_probe_loss) << "\n"
      << "buffer refreshes " << result.refreshes << " (rejected " << result.rejected_refreshes << ")\n"
      << "wrote " << ckpt_path << " and " << log_path << "\n";
  return kExitOk;
}

int cmd_rollout(const EvalOptions& o, const std::string& out_dir, const std::string& metrics_path,
                std::ostream& out, std::ostream& err) {
  const Model model = load_checkpoint(o.ckpt);
  const Scene scene = Scene::build(load_scene(o.scene), scene_dir(o.scene));
  std::filesystem::create_directories(out_dir);
  std::ofstream metrics = open_output(metrics_path);
  metrics << kMetricsHeader << "\n";
  char name[32];
  const RolloutResult r = rollout(model, scene, rollout_options(o), [&](const FrameRecord& f) {
    std::snprintf(name, sizeof(name), "frame_%04d.obj", f.frame);
    write_obj((std::filesystem::path(out_dir) / name).string(), f.positions, scene.garment.triangles());
    metrics << metrics_row(f.frame, f.loss) << "\n";
    metrics.flush();
  });
  out << "K " << r.k << ", frames " << r.frames.size() << "\n";
  if (r.diverged) {
    err << "error: numeric-divergence: " << r.error << "\n";
    return kExitDivergence;
  }
  return kExitOk;
}

int cmd_eval(const EvalOptions& o, const std::string& report_path, std::ostream& out, std::ostream& err) {
  using nlohmann::json;
  const Model model = load_checkpoint(o.ckpt);
  const Scene scene = Scene::build(load_scene(o.scene), scene_dir(o.scene));
  const RolloutOptions opts = rollout_options(o);
  const RolloutResult r = rollout(model, scene, opts);

  json frames = json::array();
  LossBreakdown sum;
  double latency = 0.0;
  for (const FrameRecord& f : r.frames) {
    frames.push_back({{"frame", f.frame},
                      {"stretch", f.loss.stretch},
                      {"bending", f.loss.bending},
                      {"collision", f.loss.collision},
                      {"inertia", f.loss.inertia},
                      {"gravity", f.loss.gravity},
                      {"friction", f.loss.friction},
                      {"total", f.loss.total},
                      {"latency_ms", f.latency_ms}});
    sum.stretch += f.loss.stretch;
    sum.bending += f.loss.bending;
    sum.collision += f.loss.collision;
    sum.inertia += f.loss.inertia;
    sum.gravity += f.loss.gravity;
    sum.friction += f.loss.friction;
    sum.total += f.loss.total;
    latency += f.latency_ms;
  }
  const double n = static_cast<double>(std::max<std::size_t>(r.frames.size(), 1));
  json report = {{"scene", o.scene},
                 {"frames_requested", o.frames},
                 {"frames_completed", r.frames.size()},
                 {"diverged", r.diverged},
                 {"triangle_count", scene.garment.triangles().size()},
                 {"vertex_count", scene.garment.vertex_count()},
                 {"mean_edge_length", scene.mean_edge},
                 {"k", r.k},
                 {"k_base", model.control.k_base},
                 {"l_base", model.control.l_base},
                 {"adaptive_k", opts.adaptive_k},
                 {"update_scaling", opts.update_scaling && model.update_scaling},
                 {"per_frame", frames},
                 {"mean",
                  {{"stretch", sum.stretch / n},
                   {"bending", sum.bending / n},
                   {"collision", sum.collision / n},
                   {"inertia", sum.inertia / n},
                   {"gravity", sum.gravity / n},
                   {"friction", sum.friction / n},
                   {"total", sum.total / n}}},
                 {"latency_ms_mean", latency / n}};
  if (r.diverged) report["error"] = r.error;
  const std::filesystem::path p(report_path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  write_file(report_path, report.dump(2) + "\n");
  out << "K " << r.k << ", mean total " << format_number(sum.total / n) << "\n";
  if (r.diverged) {
    err << "error: numeric-divergence: " << r.error << "\n";
    return kExitDivergence;
  }
  return kExitOk;
}

std::pair<int, int> parse_k_range(const std::string& text) {
  const auto colon = text.find(':');
  auto bad = [&]() { fail(ErrorKind::kUsage, "--k-range must look like A:B with 0 <= A <= B, got '" + text + "'"); };
  if (colon == std::string::npos) bad();
  int a = 0, b = 0;
  try {
    std::size_t used = 0;
    a = std::stoi(text.substr(0, colon), &used);
    if (used != colon) bad();
    const std::string rest = text.substr(colon + 1);
    b = std::stoi(rest, &used);
    if (used != rest.size()) bad();
  } catch (const std::logic_error&) {
    bad();
  }
  if (a < 0 || b < a) bad();
  return {a, b};
}

unsigned worker_threads(std::size_t jobs) {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("PB4U_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return static_cast<unsigned>(std::min<std::size_t>(n, jobs));
}

int cmd_sweep_k(const EvalOptions& o, const std::string& range, const std::string& out_path, std::ostream& out,
                std::ostream& err) {
  const auto [a, b] = parse_k_range(range);
  const Model model = load_checkpoint(o.ckpt);
  const Scene scene = Scene::build(load_scene(o.scene), scene_dir(o.scene));
  const std::size_t jobs = static_cast<std::size_t>(b - a + 1);
  std::vector<double> totals(jobs, 0.0);
  std::vector<std::string> errors(jobs);
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (std::size_t j = next++; j < jobs; j = next++) {
      try {
        RolloutOptions opts = rollout_options(o);
        opts.forced_k = a + static_cast<int>(j);
        const RolloutResult r = rollout(model, scene, opts);
        if (r.diverged) {
          totals[j] = std::numeric_limits<double>::infinity();
          errors[j] = r.error;
          continue;
        }
        double sum = 0.0;
        for (const FrameRecord& f : r.frames) sum += f.loss.total;
        totals[j] = sum / static_cast<double>(r.frames.size());
      } catch (const std::exception& e) {
        totals[j] = std::numeric_limits<double>::quiet_NaN();
        errors[j] = e.what();
      }
    }
  };
  const unsigned threads = worker_threads(jobs);
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  for (std::thread& t : pool) t.join();

  std::ofstream csv = open_output(out_path);
  csv << "k,total\n";
  bool failed = false;
  for (std::size_t j = 0; j < jobs; ++j) {
    csv << a + static_cast<int>(j) << "," << format_number(totals[j]) << "\n";
    if (!errors[j].empty()) {
      failed = true;
      err << "error: K = " << a + static_cast<int>(j) << ": " << errors[j] << "\n";
    }
  }
  csv.flush();
  if (!csv) fail(ErrorKind::kIo, "write failed for '" + out_path + "'");
  out << "wrote " << jobs << " rows to " << out_path << " using " << threads << " thread(s)\n";
  return failed ? kExitDivergence : kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, std::ostream& out) {
  const std::vector<EnergyCheck> checks = energy_gradcheck(seed);
  bool ok = true;
  out << std::left << std::setw(10) << "term" << std::setw(16) << "max_rel_error" << "status\n";
  for (const EnergyCheck& c : checks) {
    const bool pass = c.max_relative_error <= kEnergyGradTolerance;
    ok = ok && pass;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3e", c.max_relative_error);
    out << std::setw(10) << c.term << std::setw(16) << buf << (pass ? "pass" : "FAIL") << "\n";
  }
  return ok ? kExitOk : kExitDivergence;
}

int cmd_subdivide(const std::string& in, int levels, const std::string& out_path, std::ostream& out) {
  TriMesh mesh = read_obj(in);
  for (int i = 0; i < levels; ++i) mesh = subdivide_midpoint(mesh);
  const std::filesystem::path p(out_path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  write_obj(out_path, mesh.rest_positions(), mesh.triangles());
  out << "wrote " << out_path << " (" << mesh.vertex_count() << " vertices, " << mesh.triangles().size()
      << " triangles)\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Resolution-aware neural cloth simulation"};
  app.require_subcommand(1);
  app.fallthrough();
  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "Random seed (overrides config seeds)");

  std::string preset, scene_out;
  int grid = 24;
  auto* gen = app.add_subcommand("gen-scene", "Write a preset scene file");
  gen->add_option("--preset", preset, "Scene preset")->required()->check(CLI::IsMember(preset_names()));
  gen->add_option("--grid", grid, "Vertices per grid side")->check(CLI::Range(2, 4096));
  gen->add_option("--out", scene_out, "Output scene file")->required();

  std::string config_path, ckpt_out, log_path;
  auto* tr = app.add_subcommand("train", "Train a model from a config file");
  tr->add_option("--config", config_path, "Training config JSON")->required();
  tr->add_option("--out", ckpt_out, "Output checkpoint")->required();
  tr->add_option("--log", log_path, "Training log CSV (default: <out>.log.csv)");

  EvalOptions ro;
  std::string out_dir, metrics_path;
  auto* roll = app.add_subcommand("rollout", "Roll out a trained model and write OBJ frames");
  add_eval_flags(roll, ro);
  roll->add_option("--out-dir", out_dir, "Directory for frame_XXXX.obj")->required();
  roll->add_option("--metrics", metrics_path, "Per-frame loss CSV")->required();

  EvalOptions eo;
  std::string report_path;
  auto* ev = app.add_subcommand("eval", "Evaluate physics-loss residuals of a rollout");
  add_eval_flags(ev, eo);
  ev->add_option("--report", report_path, "Report JSON")->required();

  EvalOptions so;
  std::string k_range, sweep_out;
  auto* sw = app.add_subcommand("sweep-k", "Evaluate a range of forced propagation depths");
  add_eval_flags(sw, so);
  sw->add_option("--k-range", k_range, "Inclusive range A:B")->required();
  sw->add_option("--out", sweep_out, "Output CSV")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the energy gradients");

  std::string obj_in, obj_out;
  int levels = 1;
  auto* sub = app.add_subcommand("subdivide", "Midpoint-subdivide an OBJ mesh");
  sub->add_option("--in", obj_in, "Input OBJ")->required();
  sub->add_option("--levels", levels, "Subdivision levels")->check(CLI::Range(1, 8));
  sub->add_option("--out", obj_out, "Output OBJ")->required();

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_scene(preset, grid, scene_out, out);
    if (*tr) return cmd_train(config_path, ckpt_out, log_path, seed, out);
    if (*roll) return cmd_rollout(ro, out_dir, metrics_path, out, err);
    if (*ev) return cmd_eval(eo, report_path, out, err);
    if (*sw) return cmd_sweep_k(so, k_range, sweep_out, out, err);
    if (*gc) return cmd_gradcheck(seed.value_or(0), out);
    if (*sub) return cmd_subdivide(obj_in, levels, obj_out, out);
  } catch (const Error& e) {
    err << "error: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: io-error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}

}  // namespace pb4u
