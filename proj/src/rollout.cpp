#include "pb4u/rollout.hpp"

#include <chrono>

#include "pb4u/error.hpp"

namespace pb4u {

int rollout_k(const Model& model, const Scene& scene, const RolloutOptions& options) {
  if (options.forced_k) {
    if (*options.forced_k < 0) fail(ErrorKind::kInvalidArgument, "forced K must be >= 0");
    return *options.forced_k;
  }
  if (!options.adaptive_k) return model.control.k_base;
  return propagation_steps(model.control, scene.mean_edge);
}

RolloutResult rollout(const Model& model, const Scene& scene, const RolloutOptions& options,
                      const std::function<void(const FrameRecord&)>& on_frame) {
  if (options.frames < 1) fail(ErrorKind::kInvalidArgument, "frames must be >= 1");
  RolloutResult result;
  result.k = rollout_k(model, scene, options);
  const StepContext ctx = scene.step_context(options.update_scaling && model.update_scaling);
  SimState state = scene.initial_state();
  for (int f = 0; f < options.frames; ++f) {
    try {
      const Points next_body = scene.body_positions(state.time + state.time_step);
      const auto start = std::chrono::steady_clock::now();
      SimState next = step<double>(model.params, model.network, state, next_body, ctx, result.k);
      const auto stop = std::chrono::steady_clock::now();
      FrameRecord rec;
      rec.frame = f;
      rec.latency_ms = std::chrono::duration<double, std::milli>(stop - start).count();
      rec.loss = evaluate_loss(next.garment_pos, scene.loss_context(state, next.garment_pos), options.weights);
      rec.positions = next.garment_pos;
      result.frames.push_back(std::move(rec));
      if (on_frame) on_frame(result.frames.back());
      state = std::move(next);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNumericDivergence) throw;
      result.diverged = true;
      result.error = "frame " + std::to_string(f) + ": " + e.what();
      break;
    }
  }
  return result;
}

}  // namespace pb4u
