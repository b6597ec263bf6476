#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Core>

namespace pb4u::ad {

// Dense row-major 2D array. Scalars are 1x1, vectors are n x 1.
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Shared, immutable row-index list used by gather / scatter_add.
using IndexList = std::shared_ptr<const std::vector<std::int32_t>>;

inline IndexList make_index(std::vector<std::int32_t> idx) {
  return std::make_shared<const std::vector<std::int32_t>>(std::move(idx));
}

template <typename T>
class Tape;

// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;

  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Matrix<T>& value() const;
  // Accumulated gradient after Tape::backward; zeros if nothing reached it.
  const Matrix<T>& grad() const;
  bool requires_grad() const;

  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  std::vector<Eigen::Index> shape() const { return {rows(), cols()}; }
  // Value of a 1x1 node.
  T item() const;

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records operations in creation order, which is a topological order, so the
// backward sweep simply walks the node list in reverse.
template <typename T>
class Tape {
 public:
  // Receives the node's output gradient and accumulates into its parents.
  using Backward = std::function<void(Tape&, const Matrix<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Matrix<T> value);
  Var<T> variable(Matrix<T> value);
  Var<T> scalar(T value) { return constant(Matrix<T>::Constant(1, 1, value)); }

  // Appends a derived node. `backward` is dropped when no parent needs grads.
  Var<T> record(Matrix<T> value, std::initializer_list<Var<T>> parents, Backward backward);
  Var<T> record(Matrix<T> value, const std::vector<Var<T>>& parents, Backward backward);

  // Seeds d(root)/d(root) = 1 and propagates. Root must be 1x1.
  void backward(const Var<T>& root);
  void zero_grad();

  const Matrix<T>& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix<T>& grad(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of a node, zero-initialised on first access.
  Matrix<T>& grad_buffer(std::size_t id);

  std::size_t size() const { return nodes_.size(); }
  // Number of nodes visited by the last backward sweep.
  std::size_t last_backward_visits() const { return last_visits_; }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var<T> push(Node node);

  std::deque<Node> nodes_;
  std::size_t last_visits_ = 0;
};

template <typename T>
const Matrix<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
const Matrix<T>& Var<T>::grad() const {
  return tape_->grad(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

template <typename T>
T Var<T>::item() const {
  return value()(0, 0);
}

// Elementwise, equal shapes.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
// Scalar times tensor; the only broadcast supported.
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> add_scalar(const Var<T>& a, T s);
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
// x (R x C) plus bias row b (1 x C) added to every row.
template <typename T> Var<T> add_bias(const Var<T>& x, const Var<T>& b);
template <typename T> Var<T> relu(const Var<T>& a);
// Column-wise concatenation of equal-row inputs.
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts);
template <typename T> Var<T> sum(const Var<T>& a);
// out[index[r]] += src[r]; rows are accumulated in ascending source order.
template <typename T> Var<T> scatter_add(const Var<T>& src, const IndexList& index, Eigen::Index rows);
// out[r] = src[index[r]].
template <typename T> Var<T> gather(const Var<T>& src, const IndexList& index);
template <typename T> Var<T> slice_rows(const Var<T>& a, Eigen::Index start, Eigen::Index count);
// Row-wise normalisation over the last axis, then gain * x_hat + bias with
// gain/bias of shape 1 x C.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T epsilon = T(1e-5));
template <typename T> Var<T> sqrt(const Var<T>& a);
// Row-wise dot product: (R x C), (R x C) -> R x 1.
template <typename T> Var<T> dot(const Var<T>& a, const Var<T>& b);
// Row-wise cross product of R x 3 inputs.
template <typename T> Var<T> cross3(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> clamp_min(const Var<T>& a, T lo);
template <typename T> Var<T> pow3(const Var<T>& a);
// Elementwise atan2(y, x).
template <typename T> Var<T> atan2(const Var<T>& y, const Var<T>& x);

template <typename T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }

// Max over coordinates of |analytic - central difference| / max(1, |central
// difference|) for a scalar-valued function of one input array.
struct GradCheckResult {
  double max_relative_error = 0.0;
  Matrix<double> analytic;
  Matrix<double> numeric;
};

using ScalarFunction = std::function<Var<double>(Tape<double>&, const Var<double>&)>;

GradCheckResult grad_check_detailed(const ScalarFunction& fn, const Matrix<double>& input,
                                    double h = 1e-6);
double grad_check(const ScalarFunction& fn, const Matrix<double>& input, double h = 1e-6);

}  // namespace pb4u::ad
