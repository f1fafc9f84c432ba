#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "oracles/checks.hpp"
#include "talnet/numerics/checkpoint.hpp"
#include "talnet/numerics/conv.hpp"
#include "talnet/numerics/grad_check.hpp"
#include "talnet/numerics/grid_sample.hpp"

using namespace talnet;
using checks::random_tensor;

namespace {

Tensor<double> leaf(Rng& rng, Shape s, double scale = 1.0) {
  auto t = random_tensor(rng, std::move(s), scale);
  return Tensor<double>(t.shape(), t.values(), true);
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("talnet_test_" + name);
}

}  // namespace

TEST(Tensor, ShapeMismatchThrows) {
  EXPECT_THROW(Tensor<double>({2, 3}, std::vector<double>(5)), ShapeError);
  Tensor<double> a({2, 3}), b({3, 2});
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Ops, MatmulMatchesLoop) {
  Rng rng(3);
  const auto a = random_tensor(rng, {4, 5}), b = random_tensor(rng, {5, 3});
  const auto c = matmul(a, b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 5; ++k) s += a[i * 5 + k] * b[k * 3 + j];
      EXPECT_NEAR(c[i * 3 + j], s, 1e-12);
    }
  const auto nt = matmul_nt(a, random_tensor(rng, {2, 5}));
  EXPECT_EQ(nt.shape(), (Shape{4, 2}));
}

TEST(Ops, SoftmaxSumsToOneAlongAxis) {
  Rng rng(4);
  const auto x = random_tensor(rng, {3, 4, 5}, 5.0);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const auto s = softmax(x, axis);
    const auto total = sum_axis(s, axis);
    for (double v : total.values()) EXPECT_NEAR(v, 1.0, 1e-12);
  }
}

TEST(Ops, SoftmaxIsShiftInvariantAndStable) {
  Tensor<double> x({1, 3}, {1000.0, 1001.0, 1002.0});
  const auto s = softmax(x, 1);
  Tensor<double> y({1, 3}, {0.0, 1.0, 2.0});
  const auto r = softmax(y, 1);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(s[i], r[i], 1e-12);
}

TEST(Ops, PermuteRoundTrip) {
  Rng rng(5);
  const auto x = random_tensor(rng, {2, 3, 4});
  const auto y = permute(permute(x, {2, 0, 1}), {1, 2, 0});
  EXPECT_EQ(y.values(), x.values());
}

TEST(Conv, MatchesDirectLoop) {
  Rng rng(6);
  const std::size_t n = 2, c = 3, h = 5, w = 4, o = 2, k = 3, pad = 1;
  const auto x = random_tensor(rng, {n, c, h, w}), wt = random_tensor(rng, {o, c, k, k}), b = random_tensor(rng, {o});
  const auto y = conv2d(x, wt, b, pad);
  ASSERT_EQ(y.shape(), (Shape{n, o, h, w}));
  for (std::size_t bn = 0; bn < n; ++bn)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          double s = b[oc];
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t di = 0; di < k; ++di)
              for (std::size_t dj = 0; dj < k; ++dj) {
                const long r = static_cast<long>(i + di) - static_cast<long>(pad);
                const long q = static_cast<long>(j + dj) - static_cast<long>(pad);
                if (r < 0 || q < 0 || r >= static_cast<long>(h) || q >= static_cast<long>(w)) continue;
                s += wt[((oc * c + ic) * k + di) * k + dj] * x[((bn * c + ic) * h + r) * w + q];
              }
          EXPECT_NEAR(y[((bn * o + oc) * h + i) * w + j], s, 1e-10);
        }
}

TEST(Conv, PoolingAverages) {
  Tensor<double> x({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  const auto p = avg_pool2d(x, 2, 2);
  EXPECT_EQ(p.values(), (std::vector<double>{3.5, 5.5}));
  const auto a = adaptive_avg_pool2d(x, 1, 1);
  EXPECT_DOUBLE_EQ(a[0], 4.5);
}

TEST(GridSample, MatchesBilinearOracle) {
  Rng rng(7);
  const std::size_t h = 5, w = 4, c = 2, p = 9;
  const auto x = random_tensor(rng, {1, c, h, w});
  std::vector<double> pts;
  for (std::size_t i = 0; i < p; ++i) {
    pts.push_back(uniform(rng, -1, static_cast<double>(h)));
    pts.push_back(uniform(rng, -1, static_cast<double>(w)));
  }
  const auto y = grid_sample(x, Tensor<double>({1, p, 2}, pts));
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::vector<double> plane(x.data().begin() + ch * h * w, x.data().begin() + (ch + 1) * h * w);
    for (std::size_t i = 0; i < p; ++i)
      EXPECT_NEAR(y[ch * p + i], oracle::bilinear(plane, h, w, pts[2 * i], pts[2 * i + 1]), 1e-12);
  }
}

TEST(GridSample, IntegerPointsHitCells) {
  Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
  const auto y = grid_sample(x, Tensor<double>({1, 2, 2}, {0, 1, 1, 0}));
  EXPECT_DOUBLE_EQ(y[0], 2);
  EXPECT_DOUBLE_EQ(y[1], 3);
}

TEST(GridSample, FullRegionGridIsCellCentred) {
  Tensor<double> bounds({1, 4}, {0, 0, 1, 1});
  const auto g = region_grid(bounds, 2, 4, 4);
  EXPECT_EQ(g.values(), (std::vector<double>{0.5, 0.5, 0.5, 2.5, 2.5, 0.5, 2.5, 2.5}));
}

TEST(Autodiff, GradCheckOfCompositeOps) {
  Rng rng(8);
  const auto a = leaf(rng, {3, 4}), b = leaf(rng, {4, 2}), bias = leaf(rng, {2});
  auto f = [&] {
    const auto y = tanh(add(matmul(a, b), expand(bias, 0, 3)));
    return sum(mul(softmax(y, 1), sigmoid(y)));
  };
  const auto rep = grad_check(f, {{"a", a}, {"b", b}, {"bias", bias}});
  EXPECT_TRUE(rep.passed) << rep.summary();
}

TEST(Autodiff, GradCheckOfConvPoolAndSampling) {
  Rng rng(9);
  const auto x = leaf(rng, {2, 2, 6, 4}), w = leaf(rng, {3, 2, 3, 3}, 0.3), b = leaf(rng, {3});
  auto bounds = leaf(rng, {2, 4}, 0.0);
  for (auto& v : bounds.data()) v = uniform(rng, 0.1, 0.4);
  auto f = [&] {
    const auto y = adaptive_avg_pool2d(conv2d(x, w, b, 1), 3, 2);
    const auto s = grid_sample(y, region_grid(bounds, 2, 3, 2));
    return sum(square(s));
  };
  const auto rep = grad_check(f, {{"x", x}, {"w", w}, {"b", b}, {"bounds", bounds}});
  EXPECT_TRUE(rep.passed) << rep.summary();
}

TEST(Autodiff, NoGradGuardBuildsNoGraph) {
  Tensor<double> a({2}, {1.0, 2.0}, true);
  NoGradGuard guard;
  const auto y = mul(a, a);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autodiff, GradientsAccumulateAcrossUses) {
  Tensor<double> a({1}, {3.0}, true);
  auto y = add(mul(a, a), a);  // dy/da = 2a + 1
  y.backward();
  EXPECT_DOUBLE_EQ(a.grad()[0], 7.0);
}

TEST(Random, DerivedStreamsAreReproducibleAndDistinct) {
  Rng a = derive_rng(1, "x"), b = derive_rng(1, "x"), c = derive_rng(1, "y");
  const auto va = a(), vb = b(), vc = c();
  EXPECT_EQ(va, vb);
  EXPECT_NE(va, vc);
}

TEST(Parameters, UniformInitRespectsBound) {
  ParameterStore<double> s;
  s.add("w", {20, 50}, InitSpec::uniform(50));
  s.add("r", {20, 50}, InitSpec::relu_uniform(50));
  s.add("c", {3}, InitSpec::constant(std::vector<double>{1, 2, 3}));
  s.initialize(1);
  for (double v : s.get("w").values()) EXPECT_LE(std::abs(v), 1 / std::sqrt(50.0));
  for (double v : s.get("r").values()) EXPECT_LE(std::abs(v), std::sqrt(6.0 / 50.0) + 1e-12);
  EXPECT_EQ(s.get("c").values(), (std::vector<double>{1, 2, 3}));
  EXPECT_THROW(s.add("w", {1}, InitSpec::zeros()), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ParameterStore<float> s;
  s.add("a", {3, 2}, InitSpec::uniform(2));
  s.add("b", {4}, InitSpec::uniform(1));
  s.initialize(11);
  const auto path = temp_path("ckpt.txt").string();
  save_checkpoint(path, s, 11, 0xabcdef, {{"k", "v w"}});
  const auto ck = load_checkpoint<float>(path);
  EXPECT_EQ(ck.seed, 11u);
  EXPECT_EQ(ck.model_config_hash, 0xabcdefu);
  EXPECT_EQ(ck.meta.at("k"), "v w");

  ParameterStore<float> t;
  t.add("a", {3, 2}, InitSpec::zeros());
  t.add("b", {4}, InitSpec::zeros());
  t.initialize(0);
  apply_checkpoint(ck, t);
  EXPECT_EQ(t.get("a").values(), s.get("a").values());
  EXPECT_EQ(t.get("b").values(), s.get("b").values());
  EXPECT_EQ(t.digest(), s.digest());
  std::filesystem::remove(path);
}

TEST(Checkpoint, ShapeMismatchAndCorruptionAreRejected) {
  ParameterStore<double> s;
  s.add("a", {2}, InitSpec::constant(1.0));
  s.initialize(0);
  const auto path = temp_path("ckpt_bad.txt").string();
  save_checkpoint(path, s, 0, 0, {});
  ParameterStore<double> t;
  t.add("a", {3}, InitSpec::zeros());
  EXPECT_THROW(apply_checkpoint(load_checkpoint<double>(path), t), CheckpointError);
  {
    std::ofstream out(path);
    out << "not a checkpoint\n";
  }
  EXPECT_THROW(load_checkpoint<double>(path), CheckpointError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint<double>(path), CheckpointError);
}
