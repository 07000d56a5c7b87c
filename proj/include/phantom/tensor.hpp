#pragma once

// Dense float tensors with reverse-mode automatic differentiation.
// Tensors are handles to graph nodes; building an op records enough
// state to propagate gradients back through a reverse topological walk.

#include <Eigen/Dense>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace phantom {

class NumericalError : public std::runtime_error {
public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

class FormatError : public std::runtime_error {
public:
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

class CapacityError : public std::runtime_error {
public:
  explicit CapacityError(const std::string& msg) : std::runtime_error(msg) {}
};

// Graph evaluation allocates and frees large buffers every step; keeping
// glibc from handing pages back to the kernel between steps avoids refaulting
// them and speeds the hot loops up severalfold.  Safe to call repeatedly.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

// Optional hard finiteness check after every op (debug aid; off by default
// because it roughly doubles elementwise cost).
inline bool& finite_checks() {
  static bool enabled = false;
  return enabled;
}

// Records the sign of every nondifferentiable-op input (relu, abs, min/max,
// clamp) during a forward pass.  gradcheck compares the traces of the two
// perturbed evaluations of a coordinate: a sign flip means the perturbation
// stepped across a kink and the coordinate is skipped.
struct KinkTrace {
  bool enabled = false;
  std::vector<int8_t> signs;

  void record(double x) {
    if (enabled) signs.push_back(x > 0 ? int8_t{1} : (x < 0 ? int8_t{-1} : int8_t{0}));
  }
};

inline KinkTrace& kink_trace() {
  static thread_local KinkTrace trace;
  return trace;
}

template <class S>
struct TensorNode {
  std::vector<size_t> shape;
  std::vector<S> value;
  std::vector<S> grad;  // sized lazily on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;  // accumulates into parents

  size_t size() const { return value.size(); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

template <class S>
class Tensor {
public:
  using Node = TensorNode<S>;

  Tensor() = default;

  Tensor(std::vector<size_t> shape, std::vector<S> data, bool requires_grad = false) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    if (n != data.size())
      throw std::invalid_argument("tensor shape does not match data length");
    node_ = std::make_shared<Node>();
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
    check();
  }

  static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return Tensor(std::move(shape), std::vector<S>(n, S(0)), requires_grad);
  }

  static Tensor full(std::vector<size_t> shape, S v, bool requires_grad = false) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return Tensor(std::move(shape), std::vector<S>(n, v), requires_grad);
  }

  static Tensor scalar(S v) { return Tensor({1}, {v}); }

  bool valid() const { return node_ != nullptr; }
  const std::vector<size_t>& shape() const { return node_->shape; }
  size_t size() const { return node_->value.size(); }
  size_t dim(size_t i) const { return node_->shape.at(i); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const S> data() const { return node_->value; }
  std::span<S> mutable_data() { return node_->value; }  // leaves only (optimizer, loaders)
  std::span<const S> grad() const { return node_->grad; }

  S item() const {
    if (size() != 1) throw std::invalid_argument("item() on non-scalar tensor");
    return node_->value[0];
  }

  void zero_grad() { node_->grad.assign(node_->value.size(), S(0)); }

  void accumulate_grad(std::span<const S> g) {
    node_->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) node_->grad[i] += g[i];
  }

  std::shared_ptr<Node> node() const { return node_; }

  // Reverse-mode sweep from a scalar root.  Each node is visited exactly
  // once, in reverse topological order.
  void backward() {
    if (size() != 1) throw std::invalid_argument("backward() requires a scalar root");
    if (!std::isfinite(double(node_->value[0])))
      throw NumericalError("backward() on non-finite loss");
    std::vector<Node*> order;
    topo_sort(order);
    node_->ensure_grad();
    node_->grad[0] = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
  }

  void check() const {
    if (finite_checks()) {
      for (S v : node_->value)
        if (!std::isfinite(double(v))) throw NumericalError("non-finite tensor value");
    }
  }

private:
  void topo_sort(std::vector<Node*>& order) const {
    // Iterative DFS; nodes needing gradients only.
    std::vector<std::pair<Node*, size_t>> stack;
    std::unordered_map<Node*, int> state;  // 0 unseen, 1 open, 2 done
    stack.push_back({node_.get(), 0});
    state[node_.get()] = 1;
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        Node* p = n->parents[idx++].get();
        if (state[p] == 0 && (p->requires_grad || !p->parents.empty())) {
          state[p] = 1;
          stack.push_back({p, 0});
        }
      } else {
        state[n] = 2;
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

template <class S>
using EigenMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<EigenMat<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const EigenMat<S>>;

template <class S>
Tensor<S> make_op(std::vector<size_t> shape, std::vector<S> value,
                  std::vector<Tensor<S>> parents,
                  std::function<void(TensorNode<S>&)> backward) {
  bool needs = false;
  for (auto& p : parents)
    if (p.requires_grad() || !p.node()->parents.empty()) needs = true;
  Tensor<S> out(std::move(shape), std::move(value));
  if (needs) {
    auto n = out.node();
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward);
  }
  return out;
}

template <class S>
void add_into(TensorNode<S>& parent, const std::vector<S>& g) {
  parent.ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) parent.grad[i] += g[i];
}

inline void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch");
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  return detail::make_op<S>(a.shape(), std::move(v), {a, b}, [](TensorNode<S>& n) {
    detail::add_into(*n.parents[0], n.grad);
    detail::add_into(*n.parents[1], n.grad);
  });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require(a.shape() == b.shape(), "sub: shape mismatch");
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
  return detail::make_op<S>(a.shape(), std::move(v), {a, b}, [](TensorNode<S>& n) {
    detail::add_into(*n.parents[0], n.grad);
    auto& p = *n.parents[1];
    p.ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] -= n.grad[i];
  });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require(a.shape() == b.shape(), "mul: shape mismatch");
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  return detail::make_op<S>(a.shape(), std::move(v), {a, b}, [](TensorNode<S>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      pa.grad[i] += n.grad[i] * pb.value[i];
      pb.grad[i] += n.grad[i] * pa.value[i];
    }
  });
}

template <class S>
Tensor<S> neg(const Tensor<S>& a) {
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = -a.data()[i];
  return detail::make_op<S>(a.shape(), std::move(v), {a}, [](TensorNode<S>& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] -= n.grad[i];
  });
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + c;
  return detail::make_op<S>(a.shape(), std::move(v), {a}, [](TensorNode<S>& n) {
    detail::add_into(*n.parents[0], n.grad);
  });
}

template <class S>
Tensor<S> mul_scalar(const Tensor<S>& a, S c) {
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * c;
  return detail::make_op<S>(a.shape(), std::move(v), {a}, [c](TensorNode<S>& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * c;
  });
}

// ---------------------------------------------------------------------------
// matrix ops

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require(a.shape().size() == 2 && b.shape().size() == 2, "matmul: rank-2 required");
  size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  detail::require(b.dim(0) == k, "matmul: inner dimension mismatch");
  std::vector<S> v(n * m);
  {
    detail::ConstMatMap<S> A(a.data().data(), n, k), B(b.data().data(), k, m);
    detail::MatMap<S>(v.data(), n, m).noalias() = A * B;
  }
  return detail::make_op<S>({n, m}, std::move(v), {a, b}, [n, k, m](TensorNode<S>& n_) {
    auto& pa = *n_.parents[0];
    auto& pb = *n_.parents[1];
    detail::ConstMatMap<S> G(n_.grad.data(), n, m);
    detail::ConstMatMap<S> A(pa.value.data(), n, k), B(pb.value.data(), k, m);
    if (pa.requires_grad || !pa.parents.empty()) {
      pa.ensure_grad();
      detail::MatMap<S>(pa.grad.data(), n, k).noalias() += G * B.transpose();
    }
    if (pb.requires_grad || !pb.parents.empty()) {
      pb.ensure_grad();
      detail::MatMap<S>(pb.grad.data(), k, m).noalias() += A.transpose() * G;
    }
  });
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
  detail::require(a.shape().size() == 2, "transpose: rank-2 required");
  size_t n = a.dim(0), m = a.dim(1);
  std::vector<S> v(n * m);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < m; ++j) v[j * n + i] = a.data()[i * m + j];
  return detail::make_op<S>({m, n}, std::move(v), {a}, [n, m](TensorNode<S>& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < m; ++j) p.grad[i * m + j] += node.grad[j * n + i];
  });
}

// Broadcast a length-d row vector over every row of an N×d matrix.
template <class S>
Tensor<S> add_rowvec(const Tensor<S>& x, const Tensor<S>& b) {
  detail::require(x.shape().size() == 2, "add_rowvec: rank-2 required");
  size_t n = x.dim(0), d = x.dim(1);
  detail::require(b.size() == d, "add_rowvec: bias length mismatch");
  std::vector<S> v(x.size());
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < d; ++j) v[i * d + j] = x.data()[i * d + j] + b.data()[j];
  return detail::make_op<S>(x.shape(), std::move(v), {x, b}, [n, d](TensorNode<S>& node) {
    detail::add_into(*node.parents[0], node.grad);
    auto& pb = *node.parents[1];
    pb.ensure_grad();
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < d; ++j) pb.grad[j] += node.grad[i * d + j];
  });
}

// Row-wise scaling: out[i, :] = x[i, :] * s[i].
template <class S>
Tensor<S> scale_rows(const Tensor<S>& x, const Tensor<S>& s) {
  detail::require(x.shape().size() == 2, "scale_rows: rank-2 required");
  size_t n = x.dim(0), d = x.dim(1);
  detail::require(s.size() == n, "scale_rows: scale length mismatch");
  std::vector<S> v(x.size());
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < d; ++j) v[i * d + j] = x.data()[i * d + j] * s.data()[i];
  return detail::make_op<S>(x.shape(), std::move(v), {x, s}, [n, d](TensorNode<S>& node) {
    auto& px = *node.parents[0];
    auto& ps = *node.parents[1];
    px.ensure_grad();
    ps.ensure_grad();
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < d; ++j) {
        px.grad[i * d + j] += node.grad[i * d + j] * ps.value[i];
        ps.grad[i] += node.grad[i * d + j] * px.value[i * d + j];
      }
  });
}

template <class S>
Tensor<S> reshape(const Tensor<S>& a, std::vector<size_t> shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  detail::require(n == a.size(), "reshape: element count mismatch");
  std::vector<S> v(a.data().begin(), a.data().end());
  return detail::make_op<S>(std::move(shape), std::move(v), {a}, [](TensorNode<S>& node) {
    detail::add_into(*node.parents[0], node.grad);
  });
}

template <class S>
Tensor<S> slice_rows(const Tensor<S>& a, size_t start, size_t len) {
  detail::require(a.shape().size() == 2, "slice_rows: rank-2 required");
  size_t n = a.dim(0), d = a.dim(1);
  detail::require(start + len <= n, "slice_rows: out of range");
  std::vector<S> v(a.data().begin() + start * d, a.data().begin() + (start + len) * d);
  return detail::make_op<S>({len, d}, std::move(v), {a}, [start, d](TensorNode<S>& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i) p.grad[start * d + i] += node.grad[i];
  });
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& a, size_t start, size_t len) {
  detail::require(a.shape().size() == 2, "slice_cols: rank-2 required");
  size_t n = a.dim(0), d = a.dim(1);
  detail::require(start + len <= d, "slice_cols: out of range");
  std::vector<S> v(n * len);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < len; ++j) v[i * len + j] = a.data()[i * d + start + j];
  return detail::make_op<S>({n, len}, std::move(v), {a}, [n, d, start, len](TensorNode<S>& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < len; ++j) p.grad[i * d + start + j] += node.grad[i * len + j];
  });
}

template <class S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  detail::require(!parts.empty(), "concat_rows: no inputs");
  size_t d = parts[0].dim(1), n = 0;
  for (auto& p : parts) {
    detail::require(p.shape().size() == 2 && p.dim(1) == d, "concat_rows: width mismatch");
    n += p.dim(0);
  }
  std::vector<S> v;
  v.reserve(n * d);
  for (auto& p : parts) v.insert(v.end(), p.data().begin(), p.data().end());
  std::vector<size_t> sizes;
  for (auto& p : parts) sizes.push_back(p.size());
  return detail::make_op<S>({n, d}, std::move(v), parts, [sizes](TensorNode<S>& node) {
    size_t off = 0;
    for (size_t k = 0; k < node.parents.size(); ++k) {
      auto& p = *node.parents[k];
      p.ensure_grad();
      for (size_t i = 0; i < sizes[k]; ++i) p.grad[i] += node.grad[off + i];
      off += sizes[k];
    }
  });
}

// Row-interleave m equally shaped n×d tensors: out[p*m + i] = parts[i][p].
// Keeps same-position rows of different sources adjacent, so contiguous
// pooling over the result aggregates across sources per position.
template <class S>
Tensor<S> interleave_rows(const std::vector<Tensor<S>>& parts) {
  detail::require(!parts.empty(), "interleave_rows: no inputs");
  size_t m = parts.size(), n = parts[0].dim(0), d = parts[0].dim(1);
  for (auto& p : parts)
    detail::require(p.shape().size() == 2 && p.dim(0) == n && p.dim(1) == d,
                    "interleave_rows: shape mismatch");
  std::vector<S> v(n * m * d);
  for (size_t i = 0; i < m; ++i)
    for (size_t p = 0; p < n; ++p)
      for (size_t j = 0; j < d; ++j) v[(p * m + i) * d + j] = parts[i].data()[p * d + j];
  return detail::make_op<S>({n * m, d}, std::move(v), parts, [n, m, d](TensorNode<S>& node) {
    for (size_t i = 0; i < m; ++i) {
      auto& p = *node.parents[i];
      p.ensure_grad();
      for (size_t q = 0; q < n; ++q)
        for (size_t j = 0; j < d; ++j) p.grad[q * d + j] += node.grad[(q * m + i) * d + j];
    }
  });
}

// Lay out per-token channel blocks as a spatially aligned square grid:
// tokens form a gc×gc grid, each contributing a b×b sub-block, so token
// (r, c) channel (dr, dc) lands at output pixel (r*b + dr, c*b + dc).
template <class S>
Tensor<S> grid_from_token_blocks(const Tensor<S>& tokens, size_t gc, size_t b) {
  detail::require(tokens.shape().size() == 2 && tokens.dim(0) == gc * gc &&
                      tokens.dim(1) == b * b,
                  "grid_from_token_blocks: token shape mismatch");
  size_t g = gc * b;
  std::vector<S> v(g * g);
  for (size_t r = 0; r < gc; ++r)
    for (size_t c = 0; c < gc; ++c)
      for (size_t dr = 0; dr < b; ++dr)
        for (size_t dc = 0; dc < b; ++dc)
          v[(r * b + dr) * g + c * b + dc] = tokens.data()[(r * gc + c) * b * b + dr * b + dc];
  return detail::make_op<S>({g, g}, std::move(v), {tokens}, [gc, b, g](TensorNode<S>& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t r = 0; r < gc; ++r)
      for (size_t c = 0; c < gc; ++c)
        for (size_t dr = 0; dr < b; ++dr)
          for (size_t dc = 0; dc < b; ++dc)
            p.grad[(r * gc + c) * b * b + dr * b + dc] +=
                node.grad[(r * b + dr) * g + c * b + dc];
  });
}

template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  size_t n = parts[0].dim(0), d = 0;
  for (auto& p : parts) {
    detail::require(p.shape().size() == 2 && p.dim(0) == n, "concat_cols: height mismatch");
    d += p.dim(1);
  }
  std::vector<S> v(n * d);
  size_t off = 0;
  for (auto& p : parts) {
    size_t w = p.dim(1);
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < w; ++j) v[i * d + off + j] = p.data()[i * w + j];
    off += w;
  }
  std::vector<size_t> widths;
  for (auto& p : parts) widths.push_back(p.dim(1));
  return detail::make_op<S>({n, d}, std::move(v), parts, [n, d, widths](TensorNode<S>& node) {
    size_t off2 = 0;
    for (size_t k = 0; k < node.parents.size(); ++k) {
      auto& p = *node.parents[k];
      p.ensure_grad();
      size_t w = widths[k];
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < w; ++j) p.grad[i * w + j] += node.grad[i * d + off2 + j];
      off2 += w;
    }
  });
}

// ---------------------------------------------------------------------------
// nonlinearities

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) {
    kink_trace().record(double(a.data()[i]));
    v[i] = a.data()[i] > S(0) ? a.data()[i] : S(0);
  }
  return detail::make_op<S>(a.shape(), std::move(v), {a}, [](TensorNode<S>& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i)
      if (p.value[i] > S(0)) p.grad[i] += node.grad[i];
  });
}

template <class S>
Tensor<S> gelu(const Tensor<S>& a) {
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) {
    double x = double(a.data()[i]);
    v[i] = S(0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))));
  }
  return detail::make_op<S>(a.shape(), std::move(v), {a}, [](TensorNode<S>& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    constexpr double inv_sqrt2pi = 0.3989422804014327;
    for (size_t i = 0; i < node.grad.size(); ++i) {
      double x = double(p.value[i]);
      double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
      double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      p.grad[i] += node.grad[i] * S(cdf + x * pdf);
    }
  });
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = S(1) / (S(1) + S(std::exp(-double(a.data()[i]))));
  return detail::make_op<S>(a.shape(), std::move(v), {a}, [](TensorNode<S>& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i) {
      S y = node.value[i];
      p.grad[i] += node.grad[i] * y * (S(1) - y);
    }
  });
}

template <class S>
Tensor<S> exp_(const Tensor<S>& a) {
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = S(std::exp(double(a.data()[i])));
  return detail::make_op<S>(a.shape(), std::move(v), {a}, [](TensorNode<S>& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i) p.grad[i] += node.grad[i] * node.value[i];
  });
}

template <class S>
Tensor<S> log_(const Tensor<S>& a) {
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = S(std::log(double(a.data()[i])));
  return detail::make_op<S>(a.shape(), std::move(v), {a}, [](TensorNode<S>& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i) p.grad[i] += node.grad[i] / p.value[i];
  });
}

template <class S>
Tensor<S> reciprocal(const Tensor<S>& a) {
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = S(1) / a.data()[i];
  return detail::make_op<S>(a.shape(), std::move(v), {a}, [](TensorNode<S>& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i)
      p.grad[i] -= node.grad[i] * node.value[i] * node.value[i];
  });
}

template <class S>
Tensor<S> sin_(const Tensor<S>& a) {
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = S(std::sin(double(a.data()[i])));
  return detail::make_op<S>(a.shape(), std::move(v), {a}, [](TensorNode<S>& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i)
      p.grad[i] += node.grad[i] * S(std::cos(double(p.value[i])));
  });
}

template <class S>
Tensor<S> cos_(const Tensor<S>& a) {
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = S(std::cos(double(a.data()[i])));
  return detail::make_op<S>(a.shape(), std::move(v), {a}, [](TensorNode<S>& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i)
      p.grad[i] += node.grad[i] * S(-std::sin(double(p.value[i])));
  });
}

template <class S>
Tensor<S> abs_(const Tensor<S>& a) {
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) {
    kink_trace().record(double(a.data()[i]));
    v[i] = a.data()[i] < S(0) ? -a.data()[i] : a.data()[i];
  }
  return detail::make_op<S>(a.shape(), std::move(v), {a}, [](TensorNode<S>& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i)
      p.grad[i] += p.value[i] < S(0) ? -node.grad[i] : (p.value[i] > S(0) ? node.grad[i] : S(0));
  });
}

template <class S>
Tensor<S> minimum(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require(a.shape() == b.shape(), "minimum: shape mismatch");
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) {
    kink_trace().record(double(a.data()[i] - b.data()[i]));
    v[i] = a.data()[i] < b.data()[i] ? a.data()[i] : b.data()[i];
  }
  return detail::make_op<S>(a.shape(), std::move(v), {a, b}, [](TensorNode<S>& node) {
    auto& pa = *node.parents[0];
    auto& pb = *node.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i) {
      if (pa.value[i] <= pb.value[i])
        pa.grad[i] += node.grad[i];
      else
        pb.grad[i] += node.grad[i];
    }
  });
}

template <class S>
Tensor<S> maximum(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require(a.shape() == b.shape(), "maximum: shape mismatch");
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) {
    kink_trace().record(double(a.data()[i] - b.data()[i]));
    v[i] = a.data()[i] > b.data()[i] ? a.data()[i] : b.data()[i];
  }
  return detail::make_op<S>(a.shape(), std::move(v), {a, b}, [](TensorNode<S>& node) {
    auto& pa = *node.parents[0];
    auto& pb = *node.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i) {
      if (pa.value[i] >= pb.value[i])
        pa.grad[i] += node.grad[i];
      else
        pb.grad[i] += node.grad[i];
    }
  });
}

template <class S>
Tensor<S> clamp(const Tensor<S>& a, S lo, S hi) {
  std::vector<S> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) {
    kink_trace().record(double(a.data()[i] - lo));
    kink_trace().record(double(hi - a.data()[i]));
    v[i] = std::min(std::max(a.data()[i], lo), hi);
  }
  return detail::make_op<S>(a.shape(), std::move(v), {a}, [lo, hi](TensorNode<S>& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i)
      if (p.value[i] > lo && p.value[i] < hi) p.grad[i] += node.grad[i];
  });
}

// ---------------------------------------------------------------------------
// reductions and normalizations

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
  S acc = S(0);
  for (S x : a.data()) acc += x;
  return detail::make_op<S>({1}, {acc}, {a}, [](TensorNode<S>& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += node.grad[0];
  });
}

template <class S>
Tensor<S> mean(const Tensor<S>& a) {
  return mul_scalar(sum(a), S(1) / S(a.size()));
}

template <class S>
Tensor<S> softmax_rows(const Tensor<S>& a) {
  detail::require(a.shape().size() == 2, "softmax_rows: rank-2 required");
  size_t n = a.dim(0), d = a.dim(1);
  std::vector<S> v(a.size());
  // Scalar accumulation: vectorized reductions on unaligned maps change
  // summation order with the buffer address, breaking run determinism.
  for (size_t i = 0; i < n; ++i) {
    const S* row = a.data().data() + i * d;
    S* out = v.data() + i * d;
    S hi = row[0];
    for (size_t j = 1; j < d; ++j) hi = std::max(hi, row[j]);
    S total = S(0);
    for (size_t j = 0; j < d; ++j) {
      out[j] = std::exp(row[j] - hi);
      total += out[j];
    }
    S inv = S(1) / total;
    for (size_t j = 0; j < d; ++j) out[j] *= inv;
  }
  return detail::make_op<S>(a.shape(), std::move(v), {a}, [n, d](TensorNode<S>& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < n; ++i) {
      S dot = S(0);
      for (size_t j = 0; j < d; ++j) dot += node.grad[i * d + j] * node.value[i * d + j];
      for (size_t j = 0; j < d; ++j)
        p.grad[i * d + j] += node.value[i * d + j] * (node.grad[i * d + j] - dot);
    }
  });
}

// Per-row layer normalization with learned gain/bias.
template <class S>
Tensor<S> layer_norm_rows(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                          S eps = S(1e-5)) {
  detail::require(x.shape().size() == 2, "layer_norm_rows: rank-2 required");
  size_t n = x.dim(0), d = x.dim(1);
  detail::require(gamma.size() == d && beta.size() == d, "layer_norm_rows: param size mismatch");
  std::vector<S> v(x.size());
  auto norm = std::make_shared<std::vector<S>>(x.size());  // saved normalized activations
  auto inv_std = std::make_shared<std::vector<S>>(n);
  for (size_t i = 0; i < n; ++i) {
    S mu = S(0);
    for (size_t j = 0; j < d; ++j) mu += x.data()[i * d + j];
    mu /= S(d);
    S var = S(0);
    for (size_t j = 0; j < d; ++j) {
      S c = x.data()[i * d + j] - mu;
      var += c * c;
    }
    var /= S(d);
    S is = S(1) / S(std::sqrt(double(var + eps)));
    (*inv_std)[i] = is;
    for (size_t j = 0; j < d; ++j) {
      S h = (x.data()[i * d + j] - mu) * is;
      (*norm)[i * d + j] = h;
      v[i * d + j] = h * gamma.data()[j] + beta.data()[j];
    }
  }
  return detail::make_op<S>(x.shape(), std::move(v), {x, gamma, beta},
                            [n, d, norm, inv_std](TensorNode<S>& node) {
    auto& px = *node.parents[0];
    auto& pg = *node.parents[1];
    auto& pb = *node.parents[2];
    px.ensure_grad();
    pg.ensure_grad();
    pb.ensure_grad();
    for (size_t i = 0; i < n; ++i) {
      S sum_dh = S(0), sum_dh_h = S(0);
      for (size_t j = 0; j < d; ++j) {
        S go = node.grad[i * d + j];
        S h = (*norm)[i * d + j];
        pg.grad[j] += go * h;
        pb.grad[j] += go;
        S dh = go * pg.value[j];
        sum_dh += dh;
        sum_dh_h += dh * h;
      }
      S is = (*inv_std)[i];
      for (size_t j = 0; j < d; ++j) {
        S dh = node.grad[i * d + j] * pg.value[j];
        S h = (*norm)[i * d + j];
        px.grad[i * d + j] += is * (dh - (sum_dh + h * sum_dh_h) / S(d));
      }
    }
  });
}

// ---------------------------------------------------------------------------
// structured linear ops

// Contiguous-bin average pooling over rows: output row i averages input rows
// in [floor(i*N/M), floor((i+1)*N/M)).
template <class S>
Tensor<S> adaptive_pool_seq(const Tensor<S>& x, size_t target) {
  detail::require(x.shape().size() == 2, "adaptive_pool_seq: rank-2 required");
  size_t n = x.dim(0), d = x.dim(1);
  if (target == 0 || target > n)
    throw std::invalid_argument("adaptive_pool_seq: target must satisfy 1 <= M <= N");
  std::vector<S> v(target * d, S(0));
  for (size_t i = 0; i < target; ++i) {
    size_t lo = i * n / target, hi = (i + 1) * n / target;
    for (size_t r = lo; r < hi; ++r)
      for (size_t j = 0; j < d; ++j) v[i * d + j] += x.data()[r * d + j];
    S inv = S(1) / S(hi - lo);
    for (size_t j = 0; j < d; ++j) v[i * d + j] *= inv;
  }
  return detail::make_op<S>({target, d}, std::move(v), {x}, [n, d, target](TensorNode<S>& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < target; ++i) {
      size_t lo = i * n / target, hi = (i + 1) * n / target;
      S inv = S(1) / S(hi - lo);
      for (size_t r = lo; r < hi; ++r)
        for (size_t j = 0; j < d; ++j) p.grad[r * d + j] += node.grad[i * d + j] * inv;
    }
  });
}

namespace detail {

// Half-pixel-centered bilinear taps for a 1-D resize from `in` to `out` samples.
struct ResizeTap {
  size_t i0, i1;
  double w1;  // weight of i1; i0 gets 1-w1
};

inline std::vector<ResizeTap> resize_taps(size_t in, size_t out) {
  std::vector<ResizeTap> taps(out);
  for (size_t o = 0; o < out; ++o) {
    double src = (double(o) + 0.5) * double(in) / double(out) - 0.5;
    if (src < 0) src = 0;
    if (src > double(in - 1)) src = double(in - 1);
    size_t i0 = size_t(src);
    size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - double(i0)};
  }
  return taps;
}

}  // namespace detail

// Bilinear resize of a square feature grid stored row-major as (g_in*g_in)×d.
template <class S>
Tensor<S> resize_grid_bilinear(const Tensor<S>& x, size_t g_in, size_t g_out) {
  detail::require(x.shape().size() == 2 && x.dim(0) == g_in * g_in,
                  "resize_grid_bilinear: grid shape mismatch");
  size_t d = x.dim(1);
  auto taps = detail::resize_taps(g_in, g_out);
  std::vector<S> v(g_out * g_out * d, S(0));
  for (size_t oy = 0; oy < g_out; ++oy)
    for (size_t ox = 0; ox < g_out; ++ox) {
      auto ty = taps[oy];
      auto tx = taps[ox];
      double w00 = (1 - ty.w1) * (1 - tx.w1), w01 = (1 - ty.w1) * tx.w1;
      double w10 = ty.w1 * (1 - tx.w1), w11 = ty.w1 * tx.w1;
      size_t o = (oy * g_out + ox) * d;
      for (size_t j = 0; j < d; ++j) {
        v[o + j] = S(w00) * x.data()[(ty.i0 * g_in + tx.i0) * d + j] +
                   S(w01) * x.data()[(ty.i0 * g_in + tx.i1) * d + j] +
                   S(w10) * x.data()[(ty.i1 * g_in + tx.i0) * d + j] +
                   S(w11) * x.data()[(ty.i1 * g_in + tx.i1) * d + j];
      }
    }
  return detail::make_op<S>({g_out * g_out, d}, std::move(v), {x},
                            [g_in, g_out, d, taps](TensorNode<S>& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (size_t oy = 0; oy < g_out; ++oy)
      for (size_t ox = 0; ox < g_out; ++ox) {
        auto ty = taps[oy];
        auto tx = taps[ox];
        double w00 = (1 - ty.w1) * (1 - tx.w1), w01 = (1 - ty.w1) * tx.w1;
        double w10 = ty.w1 * (1 - tx.w1), w11 = ty.w1 * tx.w1;
        size_t o = (oy * g_out + ox) * d;
        for (size_t j = 0; j < d; ++j) {
          S g = node.grad[o + j];
          p.grad[(ty.i0 * g_in + tx.i0) * d + j] += S(w00) * g;
          p.grad[(ty.i0 * g_in + tx.i1) * d + j] += S(w01) * g;
          p.grad[(ty.i1 * g_in + tx.i0) * d + j] += S(w10) * g;
          p.grad[(ty.i1 * g_in + tx.i1) * d + j] += S(w11) * g;
        }
      }
  });
}

// Mean cross-entropy over rows of a logits matrix against integer targets.
template <class S>
Tensor<S> cross_entropy_rows(const Tensor<S>& logits, const std::vector<size_t>& targets) {
  detail::require(logits.shape().size() == 2, "cross_entropy_rows: rank-2 required");
  size_t n = logits.dim(0), d = logits.dim(1);
  detail::require(targets.size() == n, "cross_entropy_rows: target count mismatch");
  for (size_t t : targets)
    if (t >= d) throw std::invalid_argument("cross_entropy_rows: target id out of vocabulary");
  auto probs = std::make_shared<std::vector<S>>(n * d);
  S loss = S(0);
  for (size_t i = 0; i < n; ++i) {
    S mx = logits.data()[i * d];
    for (size_t j = 1; j < d; ++j) mx = std::max(mx, logits.data()[i * d + j]);
    double z = 0;
    for (size_t j = 0; j < d; ++j) z += std::exp(double(logits.data()[i * d + j] - mx));
    double logz = std::log(z) + double(mx);
    for (size_t j = 0; j < d; ++j)
      (*probs)[i * d + j] = S(std::exp(double(logits.data()[i * d + j]) - logz));
    loss += S(logz - double(logits.data()[i * d + targets[i]]));
  }
  loss /= S(n);
  return detail::make_op<S>({1}, {loss}, {logits}, [n, d, targets, probs](TensorNode<S>& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    S g = node.grad[0] / S(n);
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = 0; j < d; ++j) p.grad[i * d + j] += g * (*probs)[i * d + j];
      p.grad[i * d + targets[i]] -= g;
    }
  });
}

}  // namespace phantom
