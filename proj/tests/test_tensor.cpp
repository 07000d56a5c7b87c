#include "phantom/checkpoint.hpp"
#include "phantom/gradcheck.hpp"
#include "phantom/nn.hpp"
#include "phantom/tensor.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace phantom;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("elementwise ops and broadcasting helpers") {
  Tensor<double> a({2, 2}, {1, 2, 3, 4}, true);
  Tensor<double> b({2, 2}, {5, 6, 7, 8});
  Tensor<double> s = add(a, b);
  CHECK(s.data()[0] == doctest::Approx(6));
  CHECK(s.data()[3] == doctest::Approx(12));
  Tensor<double> row({2}, {10, 20});
  Tensor<double> r = add_rowvec(b, row);
  CHECK(r.data()[0] == doctest::Approx(15));
  CHECK(r.data()[3] == doctest::Approx(28));
  Tensor<double> m = matmul(a, b);
  CHECK(m.data()[0] == doctest::Approx(19));
  CHECK(m.data()[3] == doctest::Approx(50));
}

TEST_CASE("adaptive pooling hand oracles") {
  // 4 rows pooled to 2 bins: means of rows {0,1} and {2,3}.
  Tensor<double> x({4, 2}, {1, 0, 2, 2, 3, 2, 4, 3});
  Tensor<double> p = adaptive_pool_seq(x, 2);
  CHECK(p.dim(0) == 2);
  CHECK(p.data()[0] == doctest::Approx(1.5));
  CHECK(p.data()[1] == doctest::Approx(1.0));
  CHECK(p.data()[2] == doctest::Approx(3.5));
  CHECK(p.data()[3] == doctest::Approx(2.5));

  // Uneven split follows the floor(i*N/M) bin rule: bins of 2 and 3 rows.
  Tensor<double> y({5, 1}, {1, 2, 3, 4, 5});
  Tensor<double> q = adaptive_pool_seq(y, 2);
  CHECK(q.data()[0] == doctest::Approx(1.5));
  CHECK(q.data()[1] == doctest::Approx(4.0));

  CHECK_THROWS_AS(adaptive_pool_seq(y, 0), std::invalid_argument);
  CHECK_THROWS_AS(adaptive_pool_seq(y, 6), std::invalid_argument);
}

TEST_CASE("autodiff sum rule and chained ops") {
  Tensor<double> x({3}, {1, 2, 3}, true);
  Tensor<double> loss = sum(mul(x, x));
  loss.backward();
  auto g = x.grad();
  CHECK(g[0] == doctest::Approx(2));
  CHECK(g[1] == doctest::Approx(4));
  CHECK(g[2] == doctest::Approx(6));
}

TEST_CASE("gradient of shared subexpression accumulates") {
  Tensor<double> x({1}, {3}, true);
  Tensor<double> y = add(x, x);  // dy/dx = 2
  sum(y).backward();
  CHECK(x.grad()[0] == doctest::Approx(2));
}

TEST_CASE("softmax rows sum to one and gradient is centered") {
  Rng rng(3);
  Tensor<double> x = gaussian_tensor<double>({4, 7}, 1.0, rng, true);
  Tensor<double> p = softmax_rows(x);
  for (size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (size_t c = 0; c < 7; ++c) s += p.data()[r * 7 + c];
    CHECK(s == doctest::Approx(1.0));
  }
}

TEST_CASE("interleave_rows orders tokens position-major") {
  Tensor<double> a({2, 1}, {1, 2});
  Tensor<double> b({2, 1}, {10, 20});
  Tensor<double> out = interleave_rows<double>({a, b});
  CHECK(out.dim(0) == 4);
  CHECK(out.data()[0] == doctest::Approx(1));
  CHECK(out.data()[1] == doctest::Approx(10));
  CHECK(out.data()[2] == doctest::Approx(2));
  CHECK(out.data()[3] == doctest::Approx(20));
}

TEST_CASE("grid_from_token_blocks places each token's channels as a sub-block") {
  // 2x2 token grid, 2x2 blocks -> 4x4 output.
  std::vector<double> v(16);
  for (size_t i = 0; i < 16; ++i) v[i] = double(i);
  Tensor<double> tokens({4, 4}, std::move(v));
  Tensor<double> g = grid_from_token_blocks(tokens, 2, 2);
  CHECK(g.dim(0) == 4);
  // Token 0 (grid 0,0), channel (0,1) -> pixel (0,1).
  CHECK(g.data()[0 * 4 + 1] == doctest::Approx(1));
  // Token 1 (grid 0,1), channel (1,0) -> pixel (1,2).
  CHECK(g.data()[1 * 4 + 2] == doctest::Approx(6));
  // Token 3 (grid 1,1), channel (1,1) -> pixel (3,3).
  CHECK(g.data()[3 * 4 + 3] == doctest::Approx(15));
}

TEST_CASE("gradcheck validates x^2 and skips relu kinks") {
  Tensor<double> x({2}, {1.5, -0.5}, true);
  ParamList<double> params{{"x", x}};
  auto loss_fn = [&] { return sum(mul(x, x)); };
  GradCheckResult r = gradcheck<double>(loss_fn, params, 1e-4, 10, 1);
  CHECK(r.checked == 2);
  CHECK(r.max_rel_error < 1e-6);

  Tensor<double> z({1}, {0.00005}, true);  // relu kink inside the fd interval
  ParamList<double> kinky{{"z", z}};
  auto relu_fn = [&] { return sum(relu(z)); };
  GradCheckResult k = gradcheck<double>(relu_fn, kinky, 1e-3, 10, 1);
  CHECK(k.skipped_kinks == 1);
  CHECK(k.checked == 0);
}

TEST_CASE("AdamW first step moves each coordinate by about lr") {
  Tensor<double> w({2}, {1.0, -2.0}, true);
  ParamList<double> params{{"w", w}};
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW<double> opt(params, cfg);
  sum(mul(w, w)).backward();
  opt.step();
  // Bias-corrected Adam moves ~lr regardless of gradient magnitude.
  CHECK(std::fabs(1.0 - w.data()[0]) == doctest::Approx(cfg.lr).epsilon(0.01));
  CHECK(std::fabs(-2.0 - w.data()[1]) == doctest::Approx(cfg.lr).epsilon(0.01));
}

TEST_CASE("AdamW decoupled weight decay shrinks parameters without gradients") {
  Tensor<double> w({1}, {1.0}, true);
  ParamList<double> params{{"w", w}};
  AdamWConfig cfg;
  cfg.weight_decay = 0.1;
  AdamW<double> opt(params, cfg);
  w.zero_grad();  // zero gradient: only decay acts
  opt.step();
  CHECK(w.data()[0] == doctest::Approx(1.0 - cfg.lr * 0.1 * 1.0));
}

TEST_CASE("AdamW is deterministic") {
  auto run = [] {
    Rng rng(7);
    Tensor<float> w = gaussian_tensor<float>({8}, 1.0, rng, true);
    ParamList<float> params{{"w", w}};
    AdamW<float> opt(params, {});
    for (int i = 0; i < 5; ++i) {
      opt.zero_grad();
      sum(mul(w, w)).backward();
      opt.step();
    }
    return std::vector<float>(w.data().begin(), w.data().end());
  };
  CHECK(run() == run());
}

TEST_CASE("LoRA zero-B adapters reproduce the base layer exactly") {
  Rng rng(5);
  LoraLinear<double> layer(6, 4, 2, rng);
  Tensor<double> x = gaussian_tensor<double>({3, 6}, 1.0, rng);
  Tensor<double> base = add_rowvec(matmul(x, transpose(layer.weight)), layer.bias);
  Tensor<double> out = layer.forward(x);
  for (size_t i = 0; i < out.size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(base.data()[i]).epsilon(1e-12));
}

TEST_CASE("LoRA hand oracle with alpha = 1") {
  Rng rng(1);
  LoraLinear<double> layer(2, 2, 1, rng, false, 1.0);
  // Overwrite with a fully hand-specified configuration.
  auto set = [](Tensor<double>& t, std::vector<double> v) {
    auto d = t.mutable_data();
    std::copy(v.begin(), v.end(), d.begin());
  };
  set(layer.weight, {1, 0, 0, 1});       // identity base
  set(layer.bias, {0, 0});
  set(layer.adapter_a, {1, 1});          // A: 1x2
  set(layer.adapter_b, {1, 2});          // B: 2x1
  Tensor<double> x({1, 2}, {1, 2});
  // out = x + alpha/r * B A x = (1,2) + 1*(3, 6) = (4, 8)... with A x = 3.
  Tensor<double> out = layer.forward(x);
  CHECK(out.data()[0] == doctest::Approx(4));
  CHECK(out.data()[1] == doctest::Approx(8));
}

TEST_CASE("LoRA rank zero is rejected") {
  Rng rng(1);
  CHECK_THROWS_AS(LoraLinear<double>(4, 4, 0, rng), std::invalid_argument);
}

TEST_CASE("checkpoint round trip preserves names, shapes, and payloads") {
  Rng rng(11);
  ParamList<float> params;
  params.push_back({"a.weight", gaussian_tensor<float>({3, 4}, 1.0, rng, true)});
  params.push_back({"b.bias", gaussian_tensor<float>({7}, 1.0, rng, true)});
  std::string path = temp_path("phin_roundtrip.ckpt");
  save_checkpoint(params, path);
  ParamList<float> loaded = load_checkpoint<float>(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].name == "a.weight");
  CHECK(loaded[1].tensor.shape() == std::vector<size_t>{7});
  for (size_t i = 0; i < params[0].tensor.size(); ++i)
    CHECK(loaded[0].tensor.data()[i] == params[0].tensor.data()[i]);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects bad magic, truncation, and trailing bytes") {
  Rng rng(2);
  ParamList<float> params{{"w", gaussian_tensor<float>({2, 2}, 1.0, rng, true)}};
  std::string path = temp_path("phin_corrupt.ckpt");
  save_checkpoint(params, path);

  auto bytes = [&] {
    std::ifstream is(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  }();

  auto write_variant = [&](const std::string& body) {
    std::ofstream os(path, std::ios::binary);
    os.write(body.data(), std::streamsize(body.size()));
  };

  write_variant("XXXX" + bytes.substr(4));
  CHECK_THROWS_AS(load_checkpoint<float>(path), FormatError);

  write_variant(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(load_checkpoint<float>(path), FormatError);

  write_variant(bytes + "junk");
  CHECK_THROWS_AS(load_checkpoint<float>(path), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects duplicate tensor names") {
  Rng rng(2);
  Tensor<float> t = gaussian_tensor<float>({2}, 1.0, rng, true);
  ParamList<float> params{{"w", t}, {"w", t}};
  std::string path = temp_path("phin_dup.ckpt");
  CHECK_THROWS_AS(save_checkpoint(params, path), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("restore_params flags missing tensors and shape mismatches") {
  Rng rng(4);
  ParamList<float> saved{{"w", gaussian_tensor<float>({2, 2}, 1.0, rng, true)}};
  std::string path = temp_path("phin_restore.ckpt");
  save_checkpoint(saved, path);
  ParamList<float> loaded = load_checkpoint<float>(path);

  ParamList<float> live_missing{{"v", gaussian_tensor<float>({2, 2}, 1.0, rng, true)}};
  CHECK_THROWS_AS(restore_params(loaded, live_missing), FormatError);

  ParamList<float> live_shape{{"w", gaussian_tensor<float>({4}, 1.0, rng, true)}};
  CHECK_THROWS_AS(restore_params(loaded, live_shape), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("rng streams are reproducible and seed-sensitive") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 16; ++i) CHECK(a.uniform() == b.uniform());
  bool differs = false;
  Rng a2(42);
  for (int i = 0; i < 16; ++i) differs |= (a2.uniform() != c.uniform());
  CHECK(differs);
}
