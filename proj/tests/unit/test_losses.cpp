#include "anople/errors.hpp"
#include "anople/losses.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace anople;

namespace {

ad::Matrix col(std::initializer_list<double> v) {
  ad::Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

double fd_check(const std::function<ad::Var(const ad::Var&)>& f, ad::Matrix x0) {
  ad::Var x = ad::parameter(x0);
  ad::backward(f(x));
  const ad::Matrix g = x.grad();
  double worst = 0.0;
  for (Eigen::Index e = 0; e < x0.size(); ++e) {
    ad::Matrix up = x0, dn = x0;
    up.data()[e] += 1e-6;
    dn.data()[e] -= 1e-6;
    const double fd = (f(ad::constant(up)).item() - f(ad::constant(dn)).item()) / 2e-6;
    worst = std::max(worst, std::abs(fd - g.data()[e]));
  }
  return worst;
}

}  // namespace

TEST(Dice, HandValueAndPermutationInvariance) {
  const ad::Matrix p = col({0.2, 0.8, 0.5}), m = col({0, 1, 1});
  EXPECT_NEAR(dice_loss(ad::constant(p), m, 1.0).item(), 1.0 - 3.6 / 4.5, 1e-15);
  const ad::Matrix pp = col({0.5, 0.2, 0.8}), mp = col({1, 0, 1});
  EXPECT_DOUBLE_EQ(dice_loss(ad::constant(pp), mp, 1.0).item(), dice_loss(ad::constant(p), m, 1.0).item());
  EXPECT_NEAR(dice_loss(ad::constant(m), m, 0.0).item(), 0.0, 1e-15);
  EXPECT_LT(fd_check([&](const ad::Var& x) { return dice_loss(x, m, 1.0); }, p), 1e-8);
}

TEST(Focal, HandValuesPerClass) {
  const FocalConfig cfg{2.0, 0.25};
  EXPECT_NEAR(focal_loss(ad::constant(col({0.3})), col({1}), cfg).item(), -0.25 * 0.49 * std::log(0.3), 1e-15);
  EXPECT_NEAR(focal_loss(ad::constant(col({0.3})), col({0}), cfg).item(), -0.75 * 0.09 * std::log(0.7), 1e-15);
}

TEST(Focal, GammaZeroWithoutAlphaIsBinaryCrossEntropy) {
  const ad::Matrix p = col({0.1, 0.45, 0.9, 0.6}), m = col({0, 1, 1, 0});
  double bce = 0.0;
  for (int i = 0; i < 4; ++i) bce -= m(i, 0) * std::log(p(i, 0)) + (1 - m(i, 0)) * std::log(1 - p(i, 0));
  EXPECT_NEAR(focal_loss(ad::constant(p), m, {0.0, std::nullopt}).item(), bce / 4.0, 1e-15);
}

TEST(Focal, ClampedProbabilitiesStayFiniteWithZeroGradient) {
  ad::Var p = ad::parameter(col({0.0, 1.0}));
  const ad::Var l = focal_loss(p, col({1, 0}));
  EXPECT_TRUE(std::isfinite(l.item()));
  ad::backward(l);
  EXPECT_EQ(p.grad().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LT(fd_check([](const ad::Var& x) { return focal_loss(x, col({1, 0, 1})); }, col({0.3, 0.6, 0.85})), 1e-8);
}

TEST(CrossEntropy, EqualLogitsGiveLn2) {
  const ad::Var z = ad::constant(ad::Matrix::Constant(1, 2, 0.37));
  EXPECT_NEAR(softmax_cross_entropy(z, {1.0, 0.0}).item(), std::numbers::ln2, 1e-15);
  EXPECT_NEAR(softmax_cross_entropy(z, {0.0015, 0.9985}).item(), std::numbers::ln2, 1e-15);
}

TEST(ImageLoss, MatchesPairedCrossEntropyFormula) {
  std::mt19937_64 rng(6);
  const ad::Matrix zp = oracle::random_unit_rows(1, 5, rng), zm = oracle::random_unit_rows(1, 5, rng),
                   zl = oracle::random_unit_rows(1, 5, rng), wn = oracle::random_unit_rows(1, 5, rng),
                   wa = oracle::random_unit_rows(1, 5, rng);
  const double s = 14.0, eps = 0.003;
  auto ce = [&](const ad::Matrix& z, double t_abn) {
    const double a = s * z.row(0).dot(wn.row(0)), b = s * z.row(0).dot(wa.row(0));
    const double lse = std::max(a, b) + std::log(std::exp(a - std::max(a, b)) + std::exp(b - std::max(a, b)));
    return -(1 - t_abn) * (a - lse) - t_abn * (b - lse);
  };
  const double want = 0.5 * (ce(zp, 0) + ce(zm, 1)) + 0.5 * (ce(zp, 0) + ce(zl, 1 - eps / 2));
  auto v = [](const ad::Matrix& m) { return ad::constant(m); };
  EXPECT_NEAR(image_loss(v(zp), v(zm), v(zl), v(wn), v(wa), s).item(), want, 1e-12);
  ImageLossTerms only_pixel{true, false, eps};
  EXPECT_NEAR(image_loss(v(zp), v(zm), v(zl), v(wn), v(wa), s, only_pixel).item(), 0.5 * (ce(zp, 0) + ce(zm, 1)),
              1e-12);
  EXPECT_EQ(image_loss(v(zp), v(zm), v(zl), v(wn), v(wa), s, {false, false, eps}).item(), 0.0);

  const ad::Var p = image_probability(v(zp), v(wn), v(wa), s);
  EXPECT_NEAR(p.value().sum(), 1.0, 1e-15);
  EXPECT_LT(fd_check([&](const ad::Var& z) { return image_loss(z, v(zm), v(zl), v(wn), v(wa), s); }, zp), 1e-8);
}

TEST(Alignment, ParallelOrthogonalAntiparallel) {
  ad::Matrix z0 = ad::Matrix::Zero(1, 3);
  z0(0, 0) = 1.0;
  const ad::Var logits = ad::constant(col({0.3, -0.2, 1.0, 0.0}));
  auto field_of = [](const ad::Matrix& row) { return ad::constant(row.replicate(4, 1)); };
  ad::Matrix e1 = ad::Matrix::Zero(1, 3), e2 = ad::Matrix::Zero(1, 3);
  e1(0, 0) = 1.0;
  e2(0, 1) = 1.0;
  EXPECT_NEAR(alignment_loss(logits, field_of(e1), ad::constant(z0)).item(), 0.0, 1e-15);
  EXPECT_NEAR(alignment_loss(logits, field_of(e2), ad::constant(z0)).item(), 1.0, 1e-15);
  EXPECT_NEAR(alignment_loss(logits, field_of(-e1), ad::constant(z0)).item(), 2.0, 1e-15);
  EXPECT_EQ(alignment_loss(logits, field_of(e1), ad::constant(z0), 2.0, AlignmentMode::off).item(), 0.0);
}

TEST(Alignment, SharpTemperatureSelectsArgmaxLocation) {
  std::mt19937_64 rng(9);
  const ad::Matrix field = oracle::random_unit_rows(6, 4, rng), z0 = oracle::random_unit_rows(1, 4, rng);
  const ad::Var logits = ad::constant(col({0.1, 0.9, 0.3, 0.2, 0.5, 0.0}));
  const double got = alignment_loss(logits, ad::constant(field), ad::constant(z0), 1e-4).item();
  EXPECT_NEAR(got, 1.0 - z0.row(0).dot(field.row(1)), 1e-12);

  ad::Matrix mean_dir = field.colwise().mean();
  mean_dir /= mean_dir.norm();
  EXPECT_NEAR(alignment_loss(logits, ad::constant(field), ad::constant(z0), 2.0, AlignmentMode::mean).item(),
              1.0 - z0.row(0).dot(mean_dir.row(0)), 1e-12);
}

TEST(Alignment, GradientsAndDegenerateTarget) {
  std::mt19937_64 rng(10);
  const ad::Matrix field = oracle::random_unit_rows(5, 3, rng), z0 = oracle::random_unit_rows(1, 3, rng);
  const ad::Matrix logits = col({0.2, -0.4, 0.7, 0.1, 0.3});
  EXPECT_LT(fd_check([&](const ad::Var& l) { return alignment_loss(l, ad::constant(field), ad::constant(z0)); },
                     logits),
            1e-8);
  EXPECT_LT(fd_check([&](const ad::Var& f) { return alignment_loss(ad::constant(logits), f, ad::constant(z0)); },
                     field),
            1e-8);
  ad::Matrix cancelling(2, 3);
  cancelling << 1, 0, 0, -1, 0, 0;
  EXPECT_EQ(alignment_loss(ad::constant(col({0.0, 0.0})), ad::constant(cancelling), ad::constant(z0)).item(), 1.0);
  EXPECT_THROW(alignment_loss(ad::constant(col({0.0})), ad::constant(field), ad::constant(z0)), InputError);
}
