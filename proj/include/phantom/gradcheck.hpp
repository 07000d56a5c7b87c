#pragma once

// Finite-difference validation of analytic gradients.  Runs on whatever
// scalar type the caller instantiates; callers wanting tight tolerances
// should build their loss on double.

#include "phantom/nn.hpp"

namespace phantom {

struct GradCheckResult {
  double max_rel_error = 0.0;
  size_t checked = 0;
  size_t skipped_kinks = 0;
};

// loss_fn must rebuild the loss graph from the live parameter values on every
// call (parameters are mutated in place between calls).  Coordinates whose
// +/- h evaluations disagree on the sign of any kink input (relu, abs,
// min/max, clamp) are skipped.
template <class S>
GradCheckResult gradcheck(const std::function<Tensor<S>()>& loss_fn, ParamList<S>& params,
                          double fd_step, size_t samples, uint64_t seed) {
  for (auto& p : params) p.tensor.zero_grad();
  Tensor<S> loss = loss_fn();
  if (!std::isfinite(double(loss.item()))) throw NumericalError("gradcheck: non-finite loss");
  loss.backward();

  struct Coord {
    size_t param, index;
  };
  std::vector<Coord> all;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    if (!params[pi].tensor.requires_grad()) continue;
    for (size_t j = 0; j < params[pi].tensor.size(); ++j) all.push_back({pi, j});
  }
  if (all.empty()) throw std::invalid_argument("gradcheck: no trainable coordinates");

  Rng rng(seed);
  rng.shuffle(all.begin(), all.end());
  if (all.size() > samples) all.resize(samples);

  auto eval_at = [&](size_t pi, size_t j, double delta, std::vector<int8_t>& signs) {
    auto data = params[pi].tensor.mutable_data();
    S saved = data[j];
    data[j] = S(double(saved) + delta);
    kink_trace().enabled = true;
    kink_trace().signs.clear();
    double v = double(loss_fn().item());
    signs = std::move(kink_trace().signs);
    kink_trace().enabled = false;
    data[j] = saved;
    if (!std::isfinite(v)) throw NumericalError("gradcheck: non-finite loss");
    return v;
  };

  GradCheckResult result;
  for (const auto& c : all) {
    std::vector<int8_t> signs_plus, signs_minus;
    double lp = eval_at(c.param, c.index, fd_step, signs_plus);
    double lm = eval_at(c.param, c.index, -fd_step, signs_minus);
    if (signs_plus != signs_minus) {
      ++result.skipped_kinks;
      continue;
    }
    double fd = (lp - lm) / (2.0 * fd_step);
    auto g = params[c.param].tensor.grad();
    double analytic = g.empty() ? 0.0 : double(g[c.index]);
    double denom = std::max({std::fabs(analytic), std::fabs(fd), 1e-8});
    double rel = std::fabs(analytic - fd) / denom;
    result.max_rel_error = std::max(result.max_rel_error, rel);
    ++result.checked;
  }
  return result;
}

}  // namespace phantom
