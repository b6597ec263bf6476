#include "pb4u/network.hpp"

#include <cmath>
#include <random>

#include "pb4u/error.hpp"

namespace pb4u {

void NetworkConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail(ErrorKind::kInvalidArgument, "gamma must lie in [0, 1]");
  if (processor_depth < 0) fail(ErrorKind::kInvalidArgument, "processor_depth must be >= 0");
  if (latent_dim < 1) fail(ErrorKind::kInvalidArgument, "latent_dim must be >= 1");
}

const ad::Matrix<float>& ModelParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) fail(ErrorKind::kConfigMismatch, "missing parameter tensor " + name);
  return it->second;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += static_cast<std::size_t>(t.size());
  return n;
}

namespace {

using ShapeMap = std::map<std::string, std::pair<Eigen::Index, Eigen::Index>>;

void add_mlp(ShapeMap& shapes, const std::string& prefix, Eigen::Index in, Eigen::Index hidden,
             Eigen::Index out) {
  shapes[prefix + ".l0.w"] = {in, hidden};
  shapes[prefix + ".l0.b"] = {1, hidden};
  shapes[prefix + ".l1.w"] = {hidden, hidden};
  shapes[prefix + ".l1.b"] = {1, hidden};
  shapes[prefix + ".l2.w"] = {hidden, out};
  shapes[prefix + ".l2.b"] = {1, out};
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> param_shapes(const NetworkConfig& config) {
  config.validate();
  const Eigen::Index d = config.latent_dim;
  ShapeMap shapes;
  add_mlp(shapes, "vertex_encoder", kVertexFeatureWidth, d, d);
  add_mlp(shapes, "edge_encoder", kEdgeFeatureWidth, d, d);
  add_mlp(shapes, "message", 3 * d, d, d);
  shapes["message_norm.gain"] = {1, d};
  shapes["message_norm.bias"] = {1, d};
  add_mlp(shapes, "update", 2 * d, d, d);
  for (int b = 0; b < config.processor_depth; ++b) {
    const std::string prefix = "processor." + std::to_string(b);
    add_mlp(shapes, prefix + ".edge", 3 * d, d, d);
    add_mlp(shapes, prefix + ".vertex", 2 * d, d, d);
  }
  add_mlp(shapes, "decoder", d, d, 3);
  return shapes;
}

ModelParams init_params(const NetworkConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams params;
  for (const auto& [name, shape] : param_shapes(config)) {
    const auto [rows, cols] = shape;
    ad::Matrix<float> t = ad::Matrix<float>::Zero(rows, cols);
    if (ends_with(name, ".w")) {
      const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(dist(rng));
    } else if (ends_with(name, ".gain")) {
      t.setOnes();
    }
    params.tensors.emplace(name, std::move(t));
  }
  return params;
}

template <typename T>
BoundParams<T> BoundParams<T>::bind(ad::Tape<T>& tape, const ModelParams& params, bool trainable) {
  BoundParams<T> out;
  out.tape = &tape;
  for (const auto& [name, t] : params.tensors) {
    ad::Matrix<T> value = t.template cast<T>();
    out.vars.emplace(name, trainable ? tape.variable(std::move(value)) : tape.constant(std::move(value)));
  }
  return out;
}

template <typename T>
const ad::Var<T>& BoundParams<T>::at(const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) fail(ErrorKind::kConfigMismatch, "missing parameter tensor " + name);
  return it->second;
}

namespace {

// One summand of the first layer: gather(x * w, rows), or x * w without rows.
template <typename T>
struct FirstLayerTerm {
  ad::Var<T> x;
  ad::Var<T> w;
  ad::IndexList rows;
};

template <typename T>
bool any_grad(const BoundParams<T>& p, const std::string& prefix, const std::vector<FirstLayerTerm<T>>& terms,
              const std::vector<ad::Var<T>>& projected) {
  for (const char* name : {".l0.w", ".l0.b", ".l1.w", ".l1.b", ".l2.w", ".l2.b"}) {
    if (p.at(prefix + name).requires_grad()) return true;
  }
  for (const auto& t : terms) {
    if (t.x.requires_grad() || t.w.requires_grad()) return true;
  }
  for (const auto& v : projected) {
    if (v.requires_grad()) return true;
  }
  return false;
}

template <typename T>
ad::Matrix<T> gather_rows(const ad::Matrix<T>& src, const std::vector<std::int32_t>& idx) {
  ad::Matrix<T> out(static_cast<Eigen::Index>(idx.size()), src.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = src.row(idx[r]);
  return out;
}

// First-layer pre-activation is the sum of `terms` and the already projected
// inputs, followed by bias, ReLU, hidden layer, ReLU and output layer. Without
// any gradient demand the layers run directly on Eigen matrices so that only
// the output is kept; the arithmetic is identical to the recorded path.
template <typename T>
ad::Var<T> mlp_layers(const BoundParams<T>& p, const std::string& prefix, const std::vector<FirstLayerTerm<T>>& terms,
                      const std::vector<ad::Var<T>>& projected) {
  ad::Tape<T>& tape = *p.tape;
  const ad::Var<T>& b0 = p.at(prefix + ".l0.b");
  const ad::Var<T>& w1 = p.at(prefix + ".l1.w");
  const ad::Var<T>& b1 = p.at(prefix + ".l1.b");
  const ad::Var<T>& w2 = p.at(prefix + ".l2.w");
  const ad::Var<T>& b2 = p.at(prefix + ".l2.b");
  if (any_grad(p, prefix, terms, projected)) {
    ad::Var<T> pre;
    for (const auto& t : terms) {
      ad::Var<T> term = ad::matmul(t.x, t.w);
      if (t.rows) term = ad::gather(term, t.rows);
      pre = pre.valid() ? pre + term : term;
    }
    for (const auto& v : projected) pre = pre.valid() ? pre + v : v;
    ad::Var<T> h = ad::relu(ad::add_bias(pre, b0));
    h = ad::relu(ad::add_bias(ad::matmul(h, w1), b1));
    return ad::add_bias(ad::matmul(h, w2), b2);
  }
  ad::Matrix<T> pre;
  for (const auto& t : terms) {
    ad::Matrix<T> term(t.x.rows(), t.w.cols());
    term.noalias() = t.x.value() * t.w.value();
    if (t.rows) term = gather_rows(term, *t.rows);
    if (pre.size() == 0) {
      pre = std::move(term);
    } else {
      pre = pre + term;
    }
  }
  for (const auto& v : projected) {
    if (pre.size() == 0) {
      pre = v.value();
    } else {
      pre = pre + v.value();
    }
  }
  ad::Matrix<T> h = pre.rowwise() + b0.value().row(0);
  h = h.cwiseMax(T(0));
  ad::Matrix<T> h1(h.rows(), w1.cols());
  h1.noalias() = h * w1.value();
  h = h1.rowwise() + b1.value().row(0);
  h = h.cwiseMax(T(0));
  ad::Matrix<T> out(h.rows(), w2.cols());
  out.noalias() = h * w2.value();
  ad::Matrix<T> biased = out.rowwise() + b2.value().row(0);
  return tape.constant(std::move(biased));
}

}  // namespace

template <typename T>
ad::Var<T> mlp(const BoundParams<T>& p, const std::string& prefix, const std::vector<MlpInput<T>>& parts) {
  const ad::Var<T>& w0 = p.at(prefix + ".l0.w");
  Eigen::Index width = 0;
  for (const auto& part : parts) width += part.x.cols();
  if (width != w0.rows()) {
    fail(ErrorKind::kInvalidArgument, prefix + ": input width " + std::to_string(width) + " does not match " +
                                          std::to_string(w0.rows()));
  }
  // concat(parts) * W0 computed as a sum of per-part products; gathering after
  // the product keeps the per-edge work out of the dense multiply.
  std::vector<FirstLayerTerm<T>> terms;
  Eigen::Index offset = 0;
  for (const auto& part : parts) {
    const ad::Var<T> w = parts.size() == 1 ? w0 : ad::slice_rows(w0, offset, part.x.cols());
    offset += part.x.cols();
    terms.push_back({part.x, w, part.rows});
  }
  return mlp_layers<T>(p, prefix, terms, {});
}

template <typename T>
LatentGraph<T> encode(const BoundParams<T>& p, const FeatureMatrix& vertex_features,
                      const FeatureMatrix& edge_features) {
  ad::Tape<T>& tape = *p.tape;
  LatentGraph<T> g;
  g.v = mlp<T>(p, "vertex_encoder", {{tape.constant(vertex_features.cast<T>()), nullptr}});
  g.e = mlp<T>(p, "edge_encoder", {{tape.constant(edge_features.cast<T>()), nullptr}});
  g.h = g.v;
  return g;
}

template <typename T>
ad::Var<T> propagate(const BoundParams<T>& p, const LatentGraph<T>& latent, const ad::IndexList& receivers,
                     const ad::IndexList& senders, int k, double gamma) {
  if (k < 0) fail(ErrorKind::kInvalidArgument, "propagation steps must be >= 0");
  ad::Var<T> h = latent.h;
  if (k == 0) return h;
  const Eigen::Index n = h.rows();
  const Eigen::Index d = h.cols();
  const ad::Var<T>& w0 = p.at("message.l0.w");
  if (w0.rows() != 2 * d + latent.e.cols()) {
    fail(ErrorKind::kInvalidArgument, "message: input width does not match the latent sizes");
  }
  const ad::Var<T> wa = ad::slice_rows(w0, 0, d);
  const ad::Var<T> wb = ad::slice_rows(w0, d, d);
  // The edge latents do not change across steps; project them once.
  const ad::Var<T> edge_term = ad::matmul(latent.e, ad::slice_rows(w0, 2 * d, latent.e.cols()));
  for (int step = 0; step < k; ++step) {
    const ad::Var<T> msg = mlp_layers<T>(p, "message", {{h, wa, receivers}, {h, wb, senders}}, {edge_term});
    const ad::Var<T> agg = ad::scatter_add(msg, receivers, n);
    const ad::Var<T> normed = ad::layer_norm(agg, p.at("message_norm.gain"), p.at("message_norm.bias"));
    h = ad::scale(h, T(gamma)) + normed;
  }
  return h;
}

template <typename T>
ad::Var<T> update(const BoundParams<T>& p, const ad::Var<T>& v, const ad::Var<T>& h) {
  return mlp<T>(p, "update", {{v, nullptr}, {h, nullptr}});
}

template <typename T>
ProcessOutput<T> process(const BoundParams<T>& p, const ad::Var<T>& v, const ad::Var<T>& e,
                         const ad::IndexList& receivers, const ad::IndexList& senders, int depth) {
  ProcessOutput<T> out{v, e};
  const Eigen::Index n = v.rows();
  for (int b = 0; b < depth; ++b) {
    const std::string prefix = "processor." + std::to_string(b);
    out.e = out.e + mlp<T>(p, prefix + ".edge", {{out.e, nullptr}, {out.v, receivers}, {out.v, senders}});
    const ad::Var<T> agg = ad::scatter_add(out.e, receivers, n);
    out.v = out.v + mlp<T>(p, prefix + ".vertex", {{out.v, nullptr}, {agg, nullptr}});
  }
  return out;
}

template <typename T>
Accelerations<T> decode_and_scale(const BoundParams<T>& p, const ad::Var<T>& v, std::int32_t garment_count,
                                  const ScaleFactors& scale) {
  if (scale.s.size() != garment_count) {
    fail(ErrorKind::kInvalidArgument, "scale factor count does not match garment vertex count");
  }
  Accelerations<T> out;
  out.raw = mlp<T>(p, "decoder", {{ad::slice_rows(v, 0, garment_count), nullptr}});
  ad::Matrix<T> s(garment_count, 3);
  for (std::int32_t i = 0; i < garment_count; ++i) s.row(i).setConstant(static_cast<T>(scale.s[i]));
  out.scaled = out.raw * p.tape->constant(std::move(s));
  return out;
}

namespace {

template <typename T>
ad::Matrix<T> free_mask(std::int32_t n, const std::vector<std::int32_t>& pinned) {
  ad::Matrix<T> m = ad::Matrix<T>::Ones(n, 3);
  for (std::int32_t i : pinned) {
    if (i < 0 || i >= n) fail(ErrorKind::kInvalidArgument, "pinned vertex " + std::to_string(i) + " out of range");
    m.row(i).setZero();
  }
  return m;
}

void check_context(const StepContext& ctx) {
  if (ctx.garment == nullptr || ctx.body == nullptr) fail(ErrorKind::kInvalidArgument, "step context lacks meshes");
}

}  // namespace

template <typename T>
StepForward<T> forward_step(const BoundParams<T>& p, const NetworkConfig& config, const SimState& state,
                            const ad::Var<T>& position, const ad::Var<T>& velocity, const StepContext& ctx,
                            int k) {
  check_context(ctx);
  ad::Tape<T>& tape = *p.tape;
  StepForward<T> out;
  out.graph = build_graph(state, *ctx.garment, *ctx.body, ctx.world_radius);
  const LatentGraph<T> latent = encode(p, out.graph.vertex_features, out.graph.edge_features);
  const ad::Var<T> h = propagate(p, latent, out.graph.receivers, out.graph.senders, k, config.gamma);
  const ad::Var<T> v = update(p, latent.v, h);
  const ProcessOutput<T> proc =
      process(p, v, latent.e, out.graph.receivers, out.graph.senders, config.processor_depth);
  const Accelerations<T> acc = decode_and_scale(p, proc.v, out.graph.garment_count, ctx.scale);
  out.accel = acc.scaled;
  out.accel_raw = acc.raw;
  const T dt = static_cast<T>(state.time_step);
  ad::Var<T> u = velocity + ad::scale(acc.scaled, dt);
  if (!ctx.pinned.empty()) u = u * tape.constant(free_mask<T>(out.graph.garment_count, ctx.pinned));
  out.velocity = u;
  out.position = position + ad::scale(u, dt);
  return out;
}

template <typename T>
SimState step(const ModelParams& params, const NetworkConfig& config, const SimState& state,
              const Points& next_body_pos, const StepContext& ctx, int k, Points* accel_out,
              Points* accel_raw_out) {
  check_context(ctx);
  if (next_body_pos.rows() != ctx.body->vertex_count()) {
    fail(ErrorKind::kInvalidArgument, "next body positions do not match the body mesh");
  }
  ad::Tape<T> tape;
  const BoundParams<T> p = BoundParams<T>::bind(tape, params, false);
  const StepForward<T> fwd =
      forward_step(p, config, state, tape.constant(state.garment_pos.cast<T>()),
                   tape.constant(state.garment_vel.cast<T>()), ctx, k);

  // Integration runs in double regardless of the network precision.
  Points a = fwd.accel.value().template cast<double>();
  for (std::int32_t i : ctx.pinned) {
    if (i < 0 || i >= a.rows()) fail(ErrorKind::kInvalidArgument, "pinned vertex " + std::to_string(i) + " out of range");
  }
  SimState next;
  next.time_step = state.time_step;
  next.time = state.time + state.time_step;
  next.garment_vel = state.garment_vel + state.time_step * a;
  for (std::int32_t i : ctx.pinned) next.garment_vel.row(i).setZero();
  next.garment_pos = state.garment_pos + state.time_step * next.garment_vel;
  next.garment_pos_prev = state.garment_pos;
  next.body_pos = next_body_pos;
  next.body_pos_prev = state.body_pos;
  if (!next.garment_pos.allFinite() || !next.garment_vel.allFinite()) {
    fail(ErrorKind::kNumericDivergence,
         "non-finite garment state at t = " + std::to_string(next.time));
  }
  if (accel_out != nullptr) *accel_out = std::move(a);
  if (accel_raw_out != nullptr) *accel_raw_out = fwd.accel_raw.value().template cast<double>();
  return next;
}

#define PB4U_INSTANTIATE_NETWORK(T)                                                                          \
  template struct BoundParams<T>;                                                                            \
  template ad::Var<T> mlp(const BoundParams<T>&, const std::string&, const std::vector<MlpInput<T>>&);       \
  template LatentGraph<T> encode(const BoundParams<T>&, const FeatureMatrix&, const FeatureMatrix&);         \
  template ad::Var<T> propagate(const BoundParams<T>&, const LatentGraph<T>&, const ad::IndexList&,          \
                                const ad::IndexList&, int, double);                                          \
  template ad::Var<T> update(const BoundParams<T>&, const ad::Var<T>&, const ad::Var<T>&);                   \
  template ProcessOutput<T> process(const BoundParams<T>&, const ad::Var<T>&, const ad::Var<T>&,             \
                                    const ad::IndexList&, const ad::IndexList&, int);                        \
  template Accelerations<T> decode_and_scale(const BoundParams<T>&, const ad::Var<T>&, std::int32_t,         \
                                             const ScaleFactors&);                                           \
  template StepForward<T> forward_step(const BoundParams<T>&, const NetworkConfig&, const SimState&,         \
                                       const ad::Var<T>&, const ad::Var<T>&, const StepContext&, int);       \
  template SimState step<T>(const ModelParams&, const NetworkConfig&, const SimState&, const Points&,        \
                            const StepContext&, int, Points*, Points*);

PB4U_INSTANTIATE_NETWORK(float)
PB4U_INSTANTIATE_NETWORK(double)

#undef PB4U_INSTANTIATE_NETWORK

}  // namespace pb4u
