#pragma once

// Layers, parameter registry, seeded RNG, and the AdamW optimizer.

#include "phantom/tensor.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace phantom {

// Deterministic RNG: splitmix-seeded xoshiro-style generator plus Box-Muller
// normals.  Hand-rolled so the bit stream does not depend on the standard
// library implementation.
class Rng {
public:
  explicit Rng(uint64_t seed) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL;
    for (auto& s : state_) {
      z += 0x9e3779b97f4a7c15ULL;
      uint64_t x = z;
      x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
      x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
      s = x ^ (x >> 31);
    }
  }

  uint64_t next_u64() {
    uint64_t result = rotl(state_[1] * 5, 7) * 9;
    uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  size_t uniform_index(size_t n) { return size_t(next_u64() % n); }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0, u2 = 0;
    do {
      u1 = uniform();
    } while (u1 <= 1e-300);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  template <class It>
  void shuffle(It first, It last) {
    size_t n = size_t(last - first);
    for (size_t i = n; i > 1; --i) std::swap(first[i - 1], first[uniform_index(i)]);
  }

private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t state_[4];
  double spare_ = 0;
  bool have_spare_ = false;
};

template <class S>
struct NamedParam {
  std::string name;
  Tensor<S> tensor;
};

template <class S>
using ParamList = std::vector<NamedParam<S>>;

template <class S>
Tensor<S> gaussian_tensor(std::vector<size_t> shape, double sigma, Rng& rng,
                          bool requires_grad = true) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  std::vector<S> v(n);
  for (auto& x : v) x = S(sigma * rng.normal());
  return Tensor<S>(std::move(shape), std::move(v), requires_grad);
}

// Plain affine layer, y = x W^T + b, x is N×d_in.
template <class S>
class Linear {
public:
  Linear() = default;

  Linear(size_t d_in, size_t d_out, Rng& rng, bool trainable = true) {
    double sigma = 1.0 / std::sqrt(double(d_in));
    weight = gaussian_tensor<S>({d_out, d_in}, sigma, rng, trainable);
    bias = Tensor<S>::zeros({d_out}, trainable);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    return add_rowvec(matmul(x, transpose(weight)), bias);
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }

  Tensor<S> weight;
  Tensor<S> bias;
};

// Low-rank adapted affine layer: y = x W^T + b + (alpha/r) (x A^T) B^T.
// With B zero the adapter is inert and the layer matches the base exactly.
template <class S>
class LoraLinear {
public:
  LoraLinear() = default;

  // alpha < 0 selects the default 2r scaling.
  LoraLinear(size_t d_in, size_t d_out, size_t rank, Rng& rng, bool base_trainable = false,
             double alpha = -1.0) {
    if (rank == 0) throw std::invalid_argument("LoraLinear: rank must be positive");
    double sigma = 1.0 / std::sqrt(double(d_in));
    weight = gaussian_tensor<S>({d_out, d_in}, sigma, rng, base_trainable);
    bias = Tensor<S>::zeros({d_out}, base_trainable);
    adapter_a = gaussian_tensor<S>({rank, d_in}, 0.02, rng, true);
    adapter_b = Tensor<S>::zeros({d_out, rank}, true);
    rank_ = rank;
    alpha_ = alpha < 0 ? S(2) * S(rank) : S(alpha);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    Tensor<S> base = add_rowvec(matmul(x, transpose(weight)), bias);
    Tensor<S> low = matmul(matmul(x, transpose(adapter_a)), transpose(adapter_b));
    return add(base, mul_scalar(low, alpha_ / S(rank_)));
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
    out.push_back({prefix + ".lora_a", adapter_a});
    out.push_back({prefix + ".lora_b", adapter_b});
  }

  Tensor<S> weight;
  Tensor<S> bias;
  Tensor<S> adapter_a;
  Tensor<S> adapter_b;

private:
  size_t rank_ = 1;
  S alpha_ = S(2);
};

template <class S>
class LayerNorm {
public:
  LayerNorm() = default;

  explicit LayerNorm(size_t d, bool trainable = true) {
    gamma = Tensor<S>::full({d}, S(1), trainable);
    beta = Tensor<S>::zeros({d}, trainable);
  }

  Tensor<S> forward(const Tensor<S>& x) const { return layer_norm_rows(x, gamma, beta); }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }

  Tensor<S> gamma;
  Tensor<S> beta;
};

struct AdamWConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam with bias correction.  Parameters with
// requires_grad == false are skipped entirely.
template <class S>
class AdamW {
public:
  AdamW(ParamList<S> params, AdamWConfig cfg) : cfg_(cfg) {
    for (auto& p : params)
      if (p.tensor.requires_grad()) params_.push_back(p);
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].tensor.size(), S(0));
      v_[i].assign(params_[i].tensor.size(), S(0));
    }
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  int64_t step_count() const { return t_; }

  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].tensor;
      auto g = p.grad();
      auto theta = p.mutable_data();
      if (!g.empty() && g.size() != theta.size())
        throw std::invalid_argument("AdamW: gradient/parameter shape mismatch");
      for (size_t j = 0; j < theta.size(); ++j) {
        double grad = g.empty() ? 0.0 : double(g[j]);
        double m = cfg_.beta1 * double(m_[i][j]) + (1.0 - cfg_.beta1) * grad;
        double v = cfg_.beta2 * double(v_[i][j]) + (1.0 - cfg_.beta2) * grad * grad;
        m_[i][j] = S(m);
        v_[i][j] = S(v);
        double mhat = m / bc1;
        double vhat = v / bc2;
        double x = double(theta[j]);
        x -= cfg_.lr * cfg_.weight_decay * x;
        x -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        theta[j] = S(x);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  const ParamList<S>& params() const { return params_; }

private:
  ParamList<S> params_;
  std::vector<std::vector<S>> m_, v_;
  int64_t t_ = 0;
  AdamWConfig cfg_;
};

}  // namespace phantom
