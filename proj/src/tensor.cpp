#include "ddvqa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "ddvqa/kernels.hpp"

namespace ddvqa {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

thread_local bool g_grad_enabled = true;

[[noreturn]] void dim_error(const std::string& op, const std::string& what) {
  throw DimensionError(op + ": " + what);
}

void require_2d(const std::string& op, const Tensor& t) {
  if (!t.defined()) dim_error(op, "undefined tensor");
  if (t.ndim() != 2) dim_error(op, "expected 2-D tensor, got " + shape_to_string(t.shape()));
}

bool needs(const NodePtr& n) { return n->requires_grad; }

void axpy(std::vector<double>& dst, std::span<const double> src, double s = 1.0) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += s * src[i];
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size())
    throw DimensionError("from_data: shape " + shape_to_string(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= ndim())
    throw DimensionError("dim: axis " + std::to_string(axis) + " out of range for " +
                         shape_to_string(shape()));
  return shape()[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::size_t Tensor::rows() const {
  require_2d("rows", *this);
  return shape()[0];
}

std::size_t Tensor::cols() const {
  require_2d("cols", *this);
  return shape()[1];
}

std::span<const double> Tensor::data() const { return node_->data; }

double Tensor::item() const {
  if (numel() != 1)
    throw DimensionError("item: tensor of shape " + shape_to_string(shape()) +
                         " is not a scalar");
  return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->data[r * cols() + c];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->leaf; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }

std::span<double> Tensor::mutable_data() {
  if (!node_->leaf) throw std::logic_error("mutable_data: only leaf tensors are mutable");
  return node_->data;
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

void Tensor::backward() const {
  if (numel() != 1)
    throw DimensionError("backward: loss must be a scalar, got shape " +
                         shape_to_string(shape()));
  if (node_->released)
    throw std::logic_error("backward: graph already released by an earlier backward()");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; each node is visited exactly once.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  for (Node* n : order) {
    if (n->leaf) continue;
    n->parents.clear();
    n->backward_fn = nullptr;
    n->released = true;
  }
}

Tensor Tensor::detach() const { return from_data(shape(), node_->data, false); }

Tensor Tensor::clone(bool requires_grad) const {
  return from_data(shape(), node_->data, requires_grad);
}

Tensor make_result(Shape shape, std::vector<double> data, std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  const bool record =
      g_grad_enabled && std::any_of(parents.begin(), parents.end(), needs);
  if (record) {
    node->requires_grad = true;
    node->leaf = false;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  const std::size_t r = a.rows(), k = a.cols(), c = b.cols();
  if (b.rows() != k)
    dim_error("matmul", "inner dimensions differ: " + shape_to_string(a.shape()) +
                            " x " + shape_to_string(b.shape()));
  std::vector<double> out(r * c, 0.0);
  kernels::matmul_acc(a.data(), b.data(), out, {r, k, c});
  return make_result({r, c}, std::move(out), {a.node(), b.node()}, [r, k, c](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad)  // dA = dC · Bᵀ
      kernels::matmul_nt_acc(self.grad, pb.data, pa.ensure_grad(), {r, c, k});
    if (pb.requires_grad)  // dB = Aᵀ · dC
      kernels::matmul_tn_acc(pa.data, self.grad, pb.ensure_grad(), {r, k, c});
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d("matmul_nt", a);
  require_2d("matmul_nt", b);
  const std::size_t r = a.rows(), k = a.cols(), c = b.rows();
  if (b.cols() != k)
    dim_error("matmul_nt", "inner dimensions differ: " + shape_to_string(a.shape()) +
                               " x " + shape_to_string(b.shape()) + "^T");
  std::vector<double> out(r * c, 0.0);
  kernels::matmul_nt_acc(a.data(), b.data(), out, {r, k, c});
  return make_result({r, c}, std::move(out), {a.node(), b.node()}, [r, k, c](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad)  // dA = dC · B
      kernels::matmul_acc(self.grad, pb.data, pa.ensure_grad(), {r, c, k});
    if (pb.requires_grad)  // dB = dCᵀ · A
      kernels::matmul_tn_acc(self.grad, pa.data, pb.ensure_grad(), {r, c, k});
  });
}

Tensor transpose(const Tensor& a) {
  require_2d("transpose", a);
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  const auto src = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = src[i * c + j];
  return make_result({c, r}, std::move(out), {a.node()}, [r, c](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

// ---- elementwise ----------------------------------------------------------

namespace {

enum class Broadcast { kNone, kRow };

Broadcast check_binary(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (a.ndim() == 2) {
    const bool row1 = b.ndim() == 1 && b.dim(0) == a.cols();
    const bool row2 = b.ndim() == 2 && b.rows() == 1 && b.cols() == a.cols();
    if (row1 || row2) return Broadcast::kRow;
  }
  dim_error(op, "incompatible shapes " + shape_to_string(a.shape()) + " and " +
                    shape_to_string(b.shape()));
}

Tensor add_impl(const Tensor& a, const Tensor& b, double sign, const char* name) {
  const auto mode = check_binary(name, a, b);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  const std::size_t width = y.size();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + sign * y[i % width];
  return make_result(a.shape(), std::move(out), {a.node(), b.node()},
                     [sign, width, mode](Node& self) {
                       auto& pa = *self.parents[0];
                       auto& pb = *self.parents[1];
                       if (pa.requires_grad) axpy(pa.ensure_grad(), self.grad);
                       if (!pb.requires_grad) return;
                       auto& gb = pb.ensure_grad();
                       if (mode == Broadcast::kNone) {
                         axpy(gb, self.grad, sign);
                       } else {
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           gb[i % width] += sign * self.grad[i];
                       }
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_impl(a, b, 1.0, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_impl(a, b, -1.0, "sub"); }

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    dim_error("mul", "shapes differ: " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * s;
  return make_result(a.shape(), std::move(out), {a.node()}, [s](Node& self) {
    axpy(self.parents[0]->ensure_grad(), self.grad, s);
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const auto v = x.data();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double u = v[i];
    out[i] = 0.5 * u * (1.0 + std::tanh(kC * (u + kA * u * u * u)));
  }
  return make_result(x.shape(), std::move(out), {x.node()}, [](Node& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double u = p.data[i];
      const double t = std::tanh(kC * (u + kA * u * u * u));
      const double d = 0.5 * (1.0 + t) +
                       0.5 * u * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * u * u);
      g[i] += self.grad[i] * d;
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  const auto v = x.data();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-v[i]));
  return make_result(x.shape(), std::move(out), {x.node()}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * self.data[i] * (1.0 - self.data[i]);
  });
}

// ---- softmax family -------------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.ndim())
    dim_error("softmax", "axis " + std::to_string(axis) + " invalid for " +
                             shape_to_string(x.shape()));
  const auto& sh = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= sh[i];
  for (std::size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];
  const std::size_t len = sh[axis];
  const auto v = x.data();
  std::vector<double> out(v.size());
  if (inner == 1) {
    kernels::serial::softmax_rows(v, out, outer, len);
  } else {
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double mx = v[base];
        for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, v[base + j * inner]);
        double total = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
          out[base + j * inner] = std::exp(v[base + j * inner] - mx);
          total += out[base + j * inner];
        }
        for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
      }
  }
  return make_result(sh, std::move(out), {x.node()}, [outer, inner, len](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& y = self.data;
    const auto& dy = self.grad;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot_yg = 0.0;
        for (std::size_t j = 0; j < len; ++j)
          dot_yg += y[base + j * inner] * dy[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t idx = base + j * inner;
          g[idx] += y[idx] * (dy[idx] - dot_yg);
        }
      }
  });
}

Tensor masked_softmax(const Tensor& scores, std::span<const std::uint8_t> key_valid,
                      bool causal) {
  require_2d("masked_softmax", scores);
  const std::size_t r = scores.rows(), c = scores.cols();
  if (!key_valid.empty() && key_valid.size() != c)
    dim_error("masked_softmax", "mask has " + std::to_string(key_valid.size()) +
                                    " entries for " + std::to_string(c) + " keys");
  const auto v = scores.data();
  std::vector<double> out(r * c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t limit = causal ? std::min(c, i + 1) : c;
    auto ok = [&](std::size_t j) { return key_valid.empty() || key_valid[j] != 0; };
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < limit; ++j)
      if (ok(j)) mx = std::max(mx, v[i * c + j]);
    if (!std::isfinite(mx)) continue;  // fully masked row: all-zero weights
    double total = 0.0;
    for (std::size_t j = 0; j < limit; ++j)
      if (ok(j)) {
        out[i * c + j] = std::exp(v[i * c + j] - mx);
        total += out[i * c + j];
      }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < limit; ++j) out[i * c + j] *= inv;
  }
  return make_result({r, c}, std::move(out), {scores.node()}, [r, c](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& y = self.data;
    const auto& dy = self.grad;
    for (std::size_t i = 0; i < r; ++i) {
      double dot_yg = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot_yg += y[i * c + j] * dy[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        g[i * c + j] += y[i * c + j] * (dy[i * c + j] - dot_yg);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.ndim() == 0) dim_error("layer_norm", "scalar input");
  const std::size_t cols = x.shape().back();
  if (gain.numel() != cols || bias.numel() != cols)
    dim_error("layer_norm", "gain/bias size " + std::to_string(gain.numel()) + "/" +
                                std::to_string(bias.numel()) + " vs last dim " +
                                std::to_string(cols));
  const std::size_t rows = x.numel() / cols;
  std::vector<double> out(x.numel()), mean(rows), rstd(rows);
  kernels::serial::layer_norm_rows(x.data(), gain.data(), bias.data(), eps, out, mean,
                                   rstd, rows, cols);
  return make_result(
      x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
      [rows, cols, mean = std::move(mean), rstd = std::move(rstd)](Node& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& dy = self.grad;
        std::vector<double> xhat(cols), dxhat(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t base = r * cols;
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            xhat[c] = (px.data[base + c] - mean[r]) * rstd[r];
            dxhat[c] = dy[base + c] * pg.data[c];
            m1 += dxhat[c];
            m2 += dxhat[c] * xhat[c];
          }
          m1 /= static_cast<double>(cols);
          m2 /= static_cast<double>(cols);
          if (px.requires_grad) {
            auto& gx = px.ensure_grad();
            for (std::size_t c = 0; c < cols; ++c)
              gx[base + c] += rstd[r] * (dxhat[c] - m1 - xhat[c] * m2);
          }
          if (pg.requires_grad) {
            auto& gg = pg.ensure_grad();
            for (std::size_t c = 0; c < cols; ++c) gg[c] += dy[base + c] * xhat[c];
          }
          if (pb.requires_grad) {
            auto& gb = pb.ensure_grad();
            for (std::size_t c = 0; c < cols; ++c) gb[c] += dy[base + c];
          }
        }
      });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index) {
  require_2d("cross_entropy", logits);
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n)
    dim_error("cross_entropy", std::to_string(targets.size()) + " targets for " +
                                   std::to_string(n) + " rows");
  std::vector<double> probs(n * v);
  kernels::serial::softmax_rows(logits.data(), probs, n, v);
  const auto x = logits.data();
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int t = targets[i];
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= v)
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) +
                              " outside [0," + std::to_string(v) + ")");
    const double* row = x.data() + i * v;
    const double mx = *std::max_element(row, row + v);
    double s = 0.0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
    total += mx + std::log(s) - row[t];
    ++count;
  }
  if (count == 0)
    throw std::invalid_argument("cross_entropy: every position is ignored; mean undefined");
  std::vector<int> tg(targets.begin(), targets.end());
  return make_result(
      {}, {total / static_cast<double>(count)}, {logits.node()},
      [n, v, count, ignore_index, probs = std::move(probs), tg = std::move(tg)](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        const double s = self.grad[0] / static_cast<double>(count);
        for (std::size_t i = 0; i < n; ++i) {
          if (tg[i] == ignore_index) continue;
          for (std::size_t j = 0; j < v; ++j) g[i * v + j] += s * probs[i * v + j];
          g[i * v + static_cast<std::size_t>(tg[i])] -= s;
        }
      });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets) {
  if (logits.numel() != targets.size() || targets.empty())
    dim_error("bce_with_logits", std::to_string(targets.size()) + " targets for " +
                                     std::to_string(logits.numel()) + " logits");
  const auto z = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    // log(1 + exp(-|z|)) + max(z, 0) - z*t
    total += std::log1p(std::exp(-std::abs(z[i]))) + std::max(z[i], 0.0) - z[i] * targets[i];
  }
  const double n = static_cast<double>(z.size());
  std::vector<double> tg(targets.begin(), targets.end());
  return make_result({}, {total / n}, {logits.node()}, [n, tg = std::move(tg)](Node& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-p.data[i]));
      g[i] += self.grad[0] * (s - tg[i]) / n;
    }
  });
}

// ---- indexing and layout --------------------------------------------------

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
  require_2d("gather_rows", table);
  const std::size_t n = table.rows(), c = table.cols();
  std::vector<double> out(rows.size() * c);
  const auto src = table.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n)
      throw std::out_of_range("gather_rows: row " + std::to_string(rows[i]) +
                              " outside table of " + std::to_string(n) + " rows");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(rows[i] * c), c,
                out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result({rows.size(), c}, std::move(out), {table.node()},
                     [c, idx = std::move(idx)](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < idx.size(); ++i)
                         for (std::size_t j = 0; j < c; ++j)
                           g[idx[i] * c + j] += self.grad[i * c + j];
                     });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0) throw std::out_of_range("embedding: negative id");
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  return gather_rows(table, rows);
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) dim_error("concat", "no inputs");
  if (axis > 1) dim_error("concat", "axis must be 0 or 1");
  for (const auto& p : parts) require_2d("concat", p);
  const std::size_t fixed = axis == 0 ? parts[0].cols() : parts[0].rows();
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const std::size_t other = axis == 0 ? p.cols() : p.rows();
    if (other != fixed)
      dim_error("concat", "mismatched shapes " + shape_to_string(parts[0].shape()) +
                              " and " + shape_to_string(p.shape()));
    extents.push_back(axis == 0 ? p.rows() : p.cols());
    total += extents.back();
  }
  const std::size_t out_rows = axis == 0 ? total : fixed;
  const std::size_t out_cols = axis == 0 ? fixed : total;
  std::vector<double> out(out_rows * out_cols);
  std::vector<NodePtr> parents;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].data();
    const std::size_t pr = parts[k].rows(), pc = parts[k].cols();
    for (std::size_t i = 0; i < pr; ++i)
      for (std::size_t j = 0; j < pc; ++j) {
        const std::size_t oi = axis == 0 ? offset + i : i;
        const std::size_t oj = axis == 0 ? j : offset + j;
        out[oi * out_cols + oj] = src[i * pc + j];
      }
    offset += extents[k];
    parents.push_back(parts[k].node());
  }
  return make_result({out_rows, out_cols}, std::move(out), std::move(parents),
                     [axis, out_cols](Node& self) {
                       std::size_t off = 0;
                       for (auto& pp : self.parents) {
                         const std::size_t pr = pp->shape[0], pc = pp->shape[1];
                         if (pp->requires_grad) {
                           auto& g = pp->ensure_grad();
                           for (std::size_t i = 0; i < pr; ++i)
                             for (std::size_t j = 0; j < pc; ++j) {
                               const std::size_t oi = axis == 0 ? off + i : i;
                               const std::size_t oj = axis == 0 ? j : off + j;
                               g[i * pc + j] += self.grad[oi * out_cols + oj];
                             }
                         }
                         off += axis == 0 ? pr : pc;
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_2d("slice", x);
  if (axis > 1) dim_error("slice", "axis must be 0 or 1");
  const std::size_t r = x.rows(), c = x.cols();
  const std::size_t extent = axis == 0 ? r : c;
  if (begin > end || end > extent)
    dim_error("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                           ") outside " + shape_to_string(x.shape()));
  const std::size_t out_r = axis == 0 ? end - begin : r;
  const std::size_t out_c = axis == 0 ? c : end - begin;
  std::vector<double> out(out_r * out_c);
  const auto src = x.data();
  for (std::size_t i = 0; i < out_r; ++i)
    for (std::size_t j = 0; j < out_c; ++j) {
      const std::size_t si = axis == 0 ? begin + i : i;
      const std::size_t sj = axis == 0 ? j : begin + j;
      out[i * out_c + j] = src[si * c + sj];
    }
  return make_result({out_r, out_c}, std::move(out), {x.node()},
                     [axis, begin, c, out_r, out_c](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < out_r; ++i)
                         for (std::size_t j = 0; j < out_c; ++j) {
                           const std::size_t si = axis == 0 ? begin + i : i;
                           const std::size_t sj = axis == 0 ? j : begin + j;
                           g[si * c + sj] += self.grad[i * out_c + j];
                         }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    dim_error("reshape", "cannot view " + shape_to_string(x.shape()) + " as " +
                             shape_to_string(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x.node()}, [](Node& self) {
    axpy(self.parents[0]->ensure_grad(), self.grad);
  });
}

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& x) {
  const auto v = x.data();
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  return make_result({}, {s}, {x.node()}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& e : g) e += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) dim_error("mean", "empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean_rows(const Tensor& x) {
  require_2d("mean_rows", x);
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(c, 0.0);
  const auto v = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += v[i * c + j];
  for (auto& e : out) e /= static_cast<double>(r);
  return make_result({1, c}, std::move(out), {x.node()}, [r, c](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const double inv = 1.0 / static_cast<double>(r);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j] * inv;
  });
}

Tensor l2_normalize(const Tensor& x) {
  const auto v = x.data();
  double sq = 0.0;
  for (double e : v) sq += e * e;
  const double norm = std::sqrt(sq);
  if (!(norm > 0.0)) throw std::domain_error("l2_normalize: zero-norm vector");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / norm;
  return make_result(x.shape(), std::move(out), {x.node()}, [norm](Node& self) {
    // d(x/|x|) = (g - y (y·g)) / |x|
    auto& g = self.parents[0]->ensure_grad();
    double yg = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) yg += self.data[i] * self.grad[i];
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += (self.grad[i] - self.data[i] * yg) / norm;
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel())
    dim_error("dot", "sizes differ: " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  const auto x = a.data();
  const auto y = b.data();
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return make_result({}, {s}, {a.node(), b.node()}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const double g = self.grad[0];
    if (pa.requires_grad) axpy(pa.ensure_grad(), pb.data, g);
    if (pb.requires_grad) axpy(pb.ensure_grad(), pa.data, g);
  });
}

}  // namespace ddvqa
