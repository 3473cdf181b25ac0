#include "anople/autograd.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace anople;
using ad::Matrix;
using ad::Var;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// Contracts f(inputs) with a fixed random weight so every output element
// contributes, then compares back-propagated and central-difference gradients.
void expect_gradients(const std::function<Var(std::vector<Var>&)>& f, std::vector<Matrix> values,
                      double tol = 1e-6) {
  std::mt19937_64 rng(99);
  std::vector<Var> vars;
  for (auto& v : values) vars.push_back(ad::parameter(v));
  const Var probe_out = f(vars);
  const Var weight = ad::constant(random_matrix(probe_out.rows(), probe_out.cols(), rng));
  auto scalar = [&](std::vector<Var>& in) { return ad::sum(ad::mul(f(in), weight)); };

  ad::backward(scalar(vars));
  const double h = 1e-6;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    ASSERT_EQ(vars[k].grad().rows(), vars[k].rows());
    for (Eigen::Index e = 0; e < vars[k].value().size(); ++e) {
      const double orig = vars[k].value().data()[e];
      vars[k].mutable_value().data()[e] = orig + h;
      const double up = scalar(vars).item();
      vars[k].mutable_value().data()[e] = orig - h;
      const double down = scalar(vars).item();
      vars[k].mutable_value().data()[e] = orig;
      EXPECT_NEAR(vars[k].grad().data()[e], (up - down) / (2 * h), tol) << "input " << k << " element " << e;
    }
  }
}

}  // namespace

TEST(Autograd, ElementwiseAndShapeOps) {
  std::mt19937_64 rng(1);
  expect_gradients(
      [](auto& v) {
        const Var parts[] = {ad::mul(v[0], v[1]), ad::sub(v[0], ad::scale(v[1], 2.0))};
        return ad::add_scalar(ad::concat_rows(parts), 0.5);
      },
      {random_matrix(3, 4, rng), random_matrix(3, 4, rng)});
  expect_gradients([](auto& v) { return ad::slice_cols(ad::slice_rows(ad::transpose(v[0]), 1, 2), 1, 2); },
                   {random_matrix(3, 4, rng)});
  expect_gradients(
      [](auto& v) {
        const Var parts[] = {v[0], v[1]};
        return ad::add_row(ad::average(parts), v[2]);
      },
      {random_matrix(2, 3, rng), random_matrix(2, 3, rng), random_matrix(1, 3, rng)});
}

TEST(Autograd, LinearAlgebra) {
  std::mt19937_64 rng(2);
  expect_gradients([](auto& v) { return ad::matmul(v[0], v[1]); }, {random_matrix(3, 4, rng), random_matrix(4, 2, rng)});
  expect_gradients([](auto& v) { return ad::matmul_nt(v[0], v[1]); },
                   {random_matrix(3, 4, rng), random_matrix(5, 4, rng)});
  expect_gradients([](auto& v) { return ad::linear(v[0], v[1], v[2]); },
                   {random_matrix(3, 4, rng), random_matrix(2, 4, rng), random_matrix(1, 2, rng)});
}

TEST(Autograd, Nonlinearities) {
  std::mt19937_64 rng(3);
  expect_gradients([](auto& v) { return ad::gelu(v[0]); }, {random_matrix(3, 5, rng)});
  expect_gradients([](auto& v) { return ad::quick_gelu(v[0]); }, {random_matrix(3, 5, rng)});
  expect_gradients([](auto& v) { return ad::softmax_rows(v[0]); }, {random_matrix(3, 5, rng)});
  expect_gradients([](auto& v) { return ad::l2_normalize_rows(v[0]); }, {random_matrix(3, 5, rng)});
  expect_gradients([](auto& v) { return ad::layer_norm(v[0], v[1], v[2]); },
                   {random_matrix(4, 6, rng), random_matrix(1, 6, rng), random_matrix(1, 6, rng)});
}

TEST(Autograd, Attention) {
  std::mt19937_64 rng(4);
  for (bool causal : {false, true}) {
    expect_gradients([causal](auto& v) { return ad::attention(v[0], 2, causal); }, {random_matrix(5, 12, rng)});
  }
}

TEST(Autograd, SpatialOps) {
  std::mt19937_64 rng(5);
  const auto r = ad::Resampler::bilinear(3, 3, 7, 5);
  expect_gradients([&r](auto& v) { return ad::resample(v[0], r); }, {random_matrix(9, 2, rng)});
  expect_gradients([](auto& v) { return ad::im2col3x3(v[0], 3, 4); }, {random_matrix(12, 2, rng)});
}

TEST(Autograd, BilinearMatchesHalfPixelFormula) {
  // 1 x 2 -> 1 x 4: sample positions (x + 0.5) / 2 - 0.5 = -0.25, 0.25, 0.75, 1.25, edge-clamped.
  const auto r = ad::Resampler::bilinear(1, 2, 1, 4);
  Matrix in(2, 1);
  in << 0.0, 1.0;
  const Matrix out = r.apply(in);
  EXPECT_DOUBLE_EQ(out(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(out(1, 0), 0.25);
  EXPECT_DOUBLE_EQ(out(2, 0), 0.75);
  EXPECT_DOUBLE_EQ(out(3, 0), 1.0);
  EXPECT_TRUE(ad::Resampler::bilinear(4, 4, 4, 4).is_identity());
}

TEST(Autograd, Im2colLayout) {
  Matrix x(4, 1);
  x << 1, 2, 3, 4;  // 2 x 2 map
  const Matrix cols = ad::im2col3x3(ad::constant(x), 2, 2).value();
  ASSERT_EQ(cols.cols(), 9);
  // Top-left pixel: centre block 4 is itself, right neighbour block 5, below block 7, outside blocks zero.
  EXPECT_EQ(cols(0, 4), 1);
  EXPECT_EQ(cols(0, 5), 2);
  EXPECT_EQ(cols(0, 7), 3);
  EXPECT_EQ(cols(0, 8), 4);
  EXPECT_EQ(cols(0, 0), 0);
  EXPECT_EQ(cols(3, 0), 1);
}

TEST(Autograd, NoGradGuardSkipsRecording) {
  Var p = ad::parameter(Matrix::Ones(2, 2));
  {
    ad::NoGradGuard guard;
    EXPECT_FALSE(ad::grad_enabled());
    const Var y = ad::sum(ad::mul(p, p));
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(ad::grad_enabled());
}

TEST(Autograd, SharedSubgraphAccumulates) {
  Var x = ad::parameter(Matrix::Constant(1, 1, 3.0));
  const Var y = ad::add(ad::mul(x, x), x);  // x^2 + x
  ad::backward(y);
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 7.0);
  const Var parts[] = {x, x};
  EXPECT_THROW(ad::backward(ad::concat_rows(parts)), std::exception);
}
