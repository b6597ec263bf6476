#include "pb4u/autodiff.hpp"

#include <cmath>
#include <string>

#include "pb4u/error.hpp"

namespace pb4u::ad {

namespace {

std::string shape_str(const auto& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

template <typename T>
void require_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorKind::kInvalidArgument, std::string(op) + ": shape mismatch " +
                                          shape_str(a.value()) + " vs " + shape_str(b.value()));
  }
}

template <typename T>
void require_same_tape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.tape() != b.tape()) {
    fail(ErrorKind::kInvalidArgument, std::string(op) + ": operands live on different tapes");
  }
}

void check_index(const char* op, const IndexList& index, Eigen::Index bound) {
  if (!index) fail(ErrorKind::kInvalidArgument, std::string(op) + ": null index list");
  for (std::int32_t i : *index) {
    if (i < 0 || i >= bound) {
      fail(ErrorKind::kInvalidArgument, std::string(op) + ": index " + std::to_string(i) +
                                            " outside [0, " + std::to_string(bound) + ")");
    }
  }
}

}  // namespace

template <typename T>
Var<T> Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::constant(Matrix<T> value) {
  return push(Node{std::move(value), {}, false, {}});
}

template <typename T>
Var<T> Tape<T>::variable(Matrix<T> value) {
  return push(Node{std::move(value), {}, true, {}});
}

template <typename T>
Var<T> Tape<T>::record(Matrix<T> value, const std::vector<Var<T>>& parents, Backward backward) {
  bool needs = false;
  for (const Var<T>& p : parents) {
    if (p.tape() != this) fail(ErrorKind::kInvalidArgument, "operand belongs to another tape");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  return push(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
}

template <typename T>
Var<T> Tape<T>::record(Matrix<T> value, std::initializer_list<Var<T>> parents, Backward backward) {
  return record(std::move(value), std::vector<Var<T>>(parents), std::move(backward));
}

template <typename T>
Matrix<T>& Tape<T>::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0 && n.value.size() != 0) {
    n.grad = Matrix<T>::Zero(n.value.rows(), n.value.cols());
  } else if (n.grad.rows() != n.value.rows() || n.grad.cols() != n.value.cols()) {
    n.grad = Matrix<T>::Zero(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

template <typename T>
const Matrix<T>& Tape<T>::grad(std::size_t id) {
  return grad_buffer(id);
}

template <typename T>
void Tape<T>::zero_grad() {
  for (Node& n : nodes_) n.grad.resize(0, 0);
}

template <typename T>
void Tape<T>::backward(const Var<T>& root) {
  if (root.tape() != this) fail(ErrorKind::kInvalidArgument, "backward: root on another tape");
  if (root.rows() != 1 || root.cols() != 1) {
    fail(ErrorKind::kInvalidArgument, "backward: root must be 1x1, got " + shape_str(root.value()));
  }
  zero_grad();
  last_visits_ = 0;
  grad_buffer(root.id())(0, 0) = T(1);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    ++last_visits_;
    n.backward(*this, n.grad);
  }
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_tape("add", a, b);
  require_same_shape("add", a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() + b.value(), {a, b}, [ia, ib](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(ia)) t.grad_buffer(ia) += g;
    if (t.requires_grad(ib)) t.grad_buffer(ib) += g;
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_tape("sub", a, b);
  require_same_shape("sub", a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() - b.value(), {a, b}, [ia, ib](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(ia)) t.grad_buffer(ia) += g;
    if (t.requires_grad(ib)) t.grad_buffer(ib) -= g;
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_tape("mul", a, b);
  require_same_shape("mul", a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b},
                          [ia, ib](Tape<T>& t, const Matrix<T>& g) {
                            if (t.requires_grad(ia)) t.grad_buffer(ia) += g.cwiseProduct(t.value(ib));
                            if (t.requires_grad(ib)) t.grad_buffer(ib) += g.cwiseProduct(t.value(ia));
                          });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  const std::size_t ia = a.id();
  return a.tape()->record(s * a.value(), {a}, [ia, s](Tape<T>& t, const Matrix<T>& g) {
    t.grad_buffer(ia) += s * g;
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  const std::size_t ia = a.id();
  Matrix<T> out = a.value().array() + s;
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, const Matrix<T>& g) {
    t.grad_buffer(ia) += g;
  });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_same_tape("matmul", a, b);
  if (a.cols() != b.rows()) {
    fail(ErrorKind::kInvalidArgument,
         "matmul: inner dimensions differ " + shape_str(a.value()) + " x " + shape_str(b.value()));
  }
  const std::size_t ia = a.id(), ib = b.id();
  Matrix<T> out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(ia)) t.grad_buffer(ia).noalias() += g * t.value(ib).transpose();
    if (t.requires_grad(ib)) t.grad_buffer(ib).noalias() += t.value(ia).transpose() * g;
  });
}

template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& b) {
  require_same_tape("add_bias", x, b);
  if (b.rows() != 1 || b.cols() != x.cols()) {
    fail(ErrorKind::kInvalidArgument,
         "add_bias: bias " + shape_str(b.value()) + " incompatible with " + shape_str(x.value()));
  }
  const std::size_t ix = x.id(), ib = b.id();
  Matrix<T> out = x.value().rowwise() + b.value().row(0);
  return x.tape()->record(std::move(out), {x, b}, [ix, ib](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(ix)) t.grad_buffer(ix) += g;
    if (t.requires_grad(ib)) t.grad_buffer(ib) += g.colwise().sum();
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  const std::size_t ia = a.id();
  Matrix<T> out = a.value().cwiseMax(T(0));
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, const Matrix<T>& g) {
    t.grad_buffer(ia).array() += (t.value(ia).array() > T(0)).select(g.array(), T(0));
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  if (parts.empty()) fail(ErrorKind::kInvalidArgument, "concat: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var<T>& p : parts) {
    require_same_tape("concat", parts.front(), p);
    if (p.rows() != rows) {
      fail(ErrorKind::kInvalidArgument, "concat: row counts differ " +
                                            shape_str(parts.front().value()) + " vs " +
                                            shape_str(p.value()));
    }
    cols += p.cols();
  }
  Matrix<T> out(rows, cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> layout;
  Eigen::Index offset = 0;
  for (const Var<T>& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    layout.emplace_back(p.id(), offset);
    offset += p.cols();
  }
  return parts.front().tape()->record(
      std::move(out), parts, [layout](Tape<T>& t, const Matrix<T>& g) {
        for (const auto& [id, off] : layout) {
          if (!t.requires_grad(id)) continue;
          Matrix<T>& buf = t.grad_buffer(id);
          buf += g.middleCols(off, buf.cols());
        }
      });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  const std::size_t ia = a.id();
  return a.tape()->record(Matrix<T>::Constant(1, 1, a.value().sum()), {a},
                          [ia](Tape<T>& t, const Matrix<T>& g) {
                            t.grad_buffer(ia).array() += g(0, 0);
                          });
}

template <typename T>
Var<T> scatter_add(const Var<T>& src, const IndexList& index, Eigen::Index rows) {
  check_index("scatter_add", index, rows);
  if (static_cast<Eigen::Index>(index->size()) != src.rows()) {
    fail(ErrorKind::kInvalidArgument, "scatter_add: index length " + std::to_string(index->size()) +
                                          " != source rows " + std::to_string(src.rows()));
  }
  const Matrix<T>& s = src.value();
  Matrix<T> out = Matrix<T>::Zero(rows, s.cols());
  const auto& idx = *index;
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(idx[r]) += s.row(static_cast<Eigen::Index>(r));
  const std::size_t is = src.id();
  return src.tape()->record(std::move(out), {src}, [is, index](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T>& buf = t.grad_buffer(is);
    const auto& idx = *index;
    for (std::size_t r = 0; r < idx.size(); ++r) buf.row(static_cast<Eigen::Index>(r)) += g.row(idx[r]);
  });
}

template <typename T>
Var<T> gather(const Var<T>& src, const IndexList& index) {
  check_index("gather", index, src.rows());
  const Matrix<T>& s = src.value();
  const auto& idx = *index;
  Matrix<T> out(static_cast<Eigen::Index>(idx.size()), s.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = s.row(idx[r]);
  const std::size_t is = src.id();
  return src.tape()->record(std::move(out), {src}, [is, index](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T>& buf = t.grad_buffer(is);
    const auto& idx = *index;
    for (std::size_t r = 0; r < idx.size(); ++r) buf.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    fail(ErrorKind::kInvalidArgument, "slice_rows: range [" + std::to_string(start) + ", " +
                                          std::to_string(start + count) + ") outside " +
                                          shape_str(a.value()));
  }
  const std::size_t ia = a.id();
  Matrix<T> out = a.value().middleRows(start, count);
  return a.tape()->record(std::move(out), {a}, [ia, start, count](Tape<T>& t, const Matrix<T>& g) {
    t.grad_buffer(ia).middleRows(start, count) += g;
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T epsilon) {
  require_same_tape("layer_norm", x, gain);
  require_same_tape("layer_norm", x, bias);
  const Eigen::Index c = x.cols();
  if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c) {
    fail(ErrorKind::kInvalidArgument, "layer_norm: affine parameters must be 1x" + std::to_string(c));
  }
  const Matrix<T>& xv = x.value();
  Matrix<T> xhat(xv.rows(), c);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const T mean = xv.row(r).mean();
    const T var = (xv.row(r).array() - mean).square().mean();
    inv_std[r] = T(1) / std::sqrt(var + epsilon);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std[r];
  }
  Matrix<T> out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
                  bias.value().row(0).array();
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape()->record(
      std::move(out), {x, gain, bias},
      [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t,
                                                                        const Matrix<T>& g) {
        if (t.requires_grad(ig)) t.grad_buffer(ig) += g.cwiseProduct(xhat).colwise().sum();
        if (t.requires_grad(ib)) t.grad_buffer(ib) += g.colwise().sum();
        if (!t.requires_grad(ix)) return;
        const auto gain_row = t.value(ig).row(0).array();
        Matrix<T>& buf = t.grad_buffer(ix);
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          const auto dxhat = (g.row(r).array() * gain_row).eval();
          const T mean_d = dxhat.mean();
          const T mean_dx = (dxhat * xhat.row(r).array()).mean();
          buf.row(r).array() += inv_std[r] * (dxhat - mean_d - xhat.row(r).array() * mean_dx);
        }
      });
}

template <typename T>
Var<T> sqrt(const Var<T>& a) {
  const std::size_t ia = a.id();
  Matrix<T> out = a.value().cwiseSqrt();
  Matrix<T> half_inv = (T(0.5) / out.array()).matrix();
  return a.tape()->record(std::move(out), {a},
                          [ia, half_inv = std::move(half_inv)](Tape<T>& t, const Matrix<T>& g) {
                            t.grad_buffer(ia) += g.cwiseProduct(half_inv);
                          });
}

template <typename T>
Var<T> dot(const Var<T>& a, const Var<T>& b) {
  require_same_tape("dot", a, b);
  require_same_shape("dot", a, b);
  Matrix<T> out = a.value().cwiseProduct(b.value()).rowwise().sum();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, const Matrix<T>& g) {
    const auto gcol = g.col(0);
    if (t.requires_grad(ia)) t.grad_buffer(ia) += (t.value(ib).array().colwise() * gcol.array()).matrix();
    if (t.requires_grad(ib)) t.grad_buffer(ib) += (t.value(ia).array().colwise() * gcol.array()).matrix();
  });
}

namespace {

template <typename T>
Matrix<T> rowwise_cross(const Matrix<T>& a, const Matrix<T>& b) {
  Matrix<T> out(a.rows(), 3);
  out.col(0) = a.col(1).cwiseProduct(b.col(2)) - a.col(2).cwiseProduct(b.col(1));
  out.col(1) = a.col(2).cwiseProduct(b.col(0)) - a.col(0).cwiseProduct(b.col(2));
  out.col(2) = a.col(0).cwiseProduct(b.col(1)) - a.col(1).cwiseProduct(b.col(0));
  return out;
}

}  // namespace

template <typename T>
Var<T> cross3(const Var<T>& a, const Var<T>& b) {
  require_same_tape("cross3", a, b);
  require_same_shape("cross3", a, b);
  if (a.cols() != 3) fail(ErrorKind::kInvalidArgument, "cross3: inputs must have 3 columns");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(rowwise_cross<T>(a.value(), b.value()), {a, b},
                          [ia, ib](Tape<T>& t, const Matrix<T>& g) {
                            // d(a x b . g)/da = b x g, d/db = g x a.
                            if (t.requires_grad(ia)) t.grad_buffer(ia) += rowwise_cross<T>(t.value(ib), g);
                            if (t.requires_grad(ib)) t.grad_buffer(ib) += rowwise_cross<T>(g, t.value(ia));
                          });
}

template <typename T>
Var<T> clamp_min(const Var<T>& a, T lo) {
  const std::size_t ia = a.id();
  Matrix<T> out = a.value().cwiseMax(lo);
  return a.tape()->record(std::move(out), {a}, [ia, lo](Tape<T>& t, const Matrix<T>& g) {
    t.grad_buffer(ia).array() += (t.value(ia).array() > lo).select(g.array(), T(0));
  });
}

template <typename T>
Var<T> pow3(const Var<T>& a) {
  const std::size_t ia = a.id();
  Matrix<T> out = a.value().array().cube().matrix();
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, const Matrix<T>& g) {
    t.grad_buffer(ia).array() += T(3) * t.value(ia).array().square() * g.array();
  });
}

template <typename T>
Var<T> atan2(const Var<T>& y, const Var<T>& x) {
  require_same_tape("atan2", y, x);
  require_same_shape("atan2", y, x);
  Matrix<T> out = y.value().binaryExpr(x.value(), [](T a, T b) { return std::atan2(a, b); });
  const std::size_t iy = y.id(), ix = x.id();
  return y.tape()->record(std::move(out), {y, x}, [iy, ix](Tape<T>& t, const Matrix<T>& g) {
    const auto yv = t.value(iy).array();
    const auto xv = t.value(ix).array();
    const auto denom = (xv.square() + yv.square()).eval();
    if (t.requires_grad(iy)) t.grad_buffer(iy).array() += g.array() * xv / denom;
    if (t.requires_grad(ix)) t.grad_buffer(ix).array() -= g.array() * yv / denom;
  });
}

GradCheckResult grad_check_detailed(const ScalarFunction& fn, const Matrix<double>& input, double h) {
  if (!(h > 0.0)) fail(ErrorKind::kInvalidArgument, "grad_check: step must be > 0");
  auto evaluate = [&](const Matrix<double>& x) {
    Tape<double> tape;
    Var<double> out = fn(tape, tape.constant(x));
    if (out.rows() != 1 || out.cols() != 1) {
      fail(ErrorKind::kInvalidArgument, "grad_check: function must return a 1x1 value");
    }
    const double v = out.item();
    if (!std::isfinite(v)) fail(ErrorKind::kNumericFailure, "grad_check: non-finite forward value");
    return v;
  };

  GradCheckResult result;
  {
    Tape<double> tape;
    Var<double> x = tape.variable(input);
    Var<double> out = fn(tape, x);
    if (out.rows() != 1 || out.cols() != 1) {
      fail(ErrorKind::kInvalidArgument, "grad_check: function must return a 1x1 value");
    }
    if (!std::isfinite(out.item())) {
      fail(ErrorKind::kNumericFailure, "grad_check: non-finite forward value");
    }
    tape.backward(out);
    result.analytic = x.grad();
  }

  result.numeric.resize(input.rows(), input.cols());
  Matrix<double> probe = input;
  for (Eigen::Index r = 0; r < input.rows(); ++r) {
    for (Eigen::Index c = 0; c < input.cols(); ++c) {
      const double x0 = input(r, c);
      // Divide by the step actually taken after rounding x0 +- h.
      const double up = x0 + h;
      const double down = x0 - h;
      probe(r, c) = up;
      const double fp = evaluate(probe);
      probe(r, c) = down;
      const double fm = evaluate(probe);
      probe(r, c) = x0;
      const double fd = (fp - fm) / (up - down);
      result.numeric(r, c) = fd;
      const double err = std::abs(result.analytic(r, c) - fd) / std::max(1.0, std::abs(fd));
      result.max_relative_error = std::max(result.max_relative_error, err);
    }
  }
  return result;
}

double grad_check(const ScalarFunction& fn, const Matrix<double>& input, double h) {
  return grad_check_detailed(fn, input, h).max_relative_error;
}

#define PB4U_INSTANTIATE_AD(T)                                                          \
  template class Tape<T>;                                                               \
  template Var<T> add(const Var<T>&, const Var<T>&);                                    \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                    \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                    \
  template Var<T> scale(const Var<T>&, T);                                              \
  template Var<T> add_scalar(const Var<T>&, T);                                         \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                 \
  template Var<T> add_bias(const Var<T>&, const Var<T>&);                               \
  template Var<T> relu(const Var<T>&);                                                  \
  template Var<T> concat(const std::vector<Var<T>>&);                                   \
  template Var<T> sum(const Var<T>&);                                                   \
  template Var<T> scatter_add(const Var<T>&, const IndexList&, Eigen::Index);           \
  template Var<T> gather(const Var<T>&, const IndexList&);                              \
  template Var<T> slice_rows(const Var<T>&, Eigen::Index, Eigen::Index);                \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);           \
  template Var<T> sqrt(const Var<T>&);                                                  \
  template Var<T> dot(const Var<T>&, const Var<T>&);                                    \
  template Var<T> cross3(const Var<T>&, const Var<T>&);                                 \
  template Var<T> clamp_min(const Var<T>&, T);                                          \
  template Var<T> pow3(const Var<T>&);                                                  \
  template Var<T> atan2(const Var<T>&, const Var<T>&);

PB4U_INSTANTIATE_AD(float)
PB4U_INSTANTIATE_AD(double)

#undef PB4U_INSTANTIATE_AD

}  // namespace pb4u::ad
