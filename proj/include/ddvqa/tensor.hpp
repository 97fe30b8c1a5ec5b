#pragma once

// Dense row-major float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle to a shared graph node. Values are immutable once
// created; only gradient buffers (and leaf data, through the optimizer) change.
// Ops record a backward closure when any input requires a gradient and
// recording is enabled (see NoGradGuard). `backward()` walks the graph once in
// reverse topological order, accumulates into leaf gradients, then releases
// the graph.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddvqa {

using Shape = std::vector<std::size_t>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool released = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  std::size_t rows() const;  // 2-D only
  std::size_t cols() const;  // 2-D only

  std::span<const double> data() const;
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  /// Empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  /// Leaf tensors only; used by optimizers and checkpoint loading.
  std::span<double> mutable_data();
  void zero_grad();

  /// Reverse pass from a single-element tensor. Accumulates into every
  /// reachable leaf with requires_grad, then frees the graph.
  void backward() const;

  /// Same values, no graph history, no gradient.
  Tensor detach() const;
  /// Deep copy of the values into a fresh leaf.
  Tensor clone(bool requires_grad) const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_result(
      Shape shape, std::vector<double> data,
      std::vector<std::shared_ptr<detail::Node>> parents,
      std::function<void(detail::Node&)> backward_fn);
};

// Builds an op output; records the graph edge only when some parent needs a
// gradient and recording is enabled.
Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<std::shared_ptr<detail::Node>> parents,
                   std::function<void(detail::Node&)> backward_fn);

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- ops -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [r,k]·[k,c]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [r,k]·[c,k]ᵀ
Tensor transpose(const Tensor& a);

// Same shapes, or `b` a [c] / [1,c] row broadcast over the rows of a [r,c].
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // same shapes
Tensor scale(const Tensor& a, double s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }

/// tanh approximation.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);

/// Row softmax over a 2-D score matrix with masked-out keys carrying exactly
/// zero weight. `key_valid` (empty = all valid) has one entry per column;
/// `causal` additionally masks column c > row r.
Tensor masked_softmax(const Tensor& scores, std::span<const std::uint8_t> key_valid,
                      bool causal);

/// Normalizes over the last dimension; gain/bias have that dimension's size.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps);

/// Mean negative log-softmax over rows whose target != ignore_index.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     int ignore_index = -100);

/// Mean binary cross-entropy of sigmoid(logits) against 0/1 targets.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets);

/// Rows of a 2-D table selected by index; gradient scatter-adds.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows);
Tensor embedding(const Tensor& table, std::span<const int> ids);

/// 2-D concatenation along axis 0 (rows) or 1 (columns).
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
/// 2-D half-open slice [begin, end) along axis 0 or 1.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// [r,c] -> [1,c] column means.
Tensor mean_rows(const Tensor& x);

/// x / ||x||₂ over all elements; zero norm is an error.
Tensor l2_normalize(const Tensor& x);
/// Scalar inner product of equally sized tensors.
Tensor dot(const Tensor& a, const Tensor& b);

}  // namespace ddvqa
