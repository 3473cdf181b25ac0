#include "anople/losses.hpp"

#include "anople/errors.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace anople {

using ad::Matrix;
using ad::Var;

namespace {

void check_map_shapes(const Var& prob, const Matrix& mask, const char* who) {
  if (prob.cols() != 1 || mask.cols() != 1 || prob.rows() != mask.rows()) {
    throw InputError(std::string(who) + ": prediction and mask shapes differ");
  }
}

}  // namespace

Var dice_loss(const Var& prob, const Matrix& mask, double smoothing) {
  check_map_shapes(prob, mask, "dice_loss");
  const Matrix& p = prob.value();
  const double inter = p.cwiseProduct(mask).sum();
  const double denom = p.sum() + mask.sum() + smoothing;
  const double numer = 2.0 * inter + smoothing;
  Matrix value(1, 1);
  value(0, 0) = 1.0 - numer / denom;
  return ad::make_result(std::move(value), {prob}, [mask, numer, denom](ad::Node& self) {
    const double g = self.grad(0, 0);
    auto& parent = *self.parents[0];
    if (!parent.requires_grad) return;
    // d/dp_k of -(2I + s)/(P + G + s)
    Matrix d = (-(2.0 * mask.array() * denom - numer) / (denom * denom)).matrix() * g;
    parent.accumulate(d);
  });
}

Var focal_loss(const Var& prob, const Matrix& mask, const FocalConfig& config) {
  check_map_shapes(prob, mask, "focal_loss");
  const Matrix& p = prob.value();
  const Eigen::Index n = p.rows();
  const double gamma = config.gamma;
  Matrix dldp(n, 1);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool positive = mask(i, 0) > 0.5;
    const double raw = p(i, 0);
    const double pc = std::clamp(raw, kProbabilityClamp, 1.0 - kProbabilityClamp);
    const bool clamped = pc != raw;
    const double pt = positive ? pc : 1.0 - pc;
    const double at = config.alpha ? (positive ? *config.alpha : 1.0 - *config.alpha) : 1.0;
    const double one_minus = 1.0 - pt;
    const double mod = gamma == 0.0 ? 1.0 : std::pow(one_minus, gamma);
    const double logpt = std::log(pt);
    total += -at * mod * logpt;
    double dpt = 0.0;
    if (!clamped) {
      const double dmod = gamma == 0.0 ? 0.0 : -gamma * std::pow(one_minus, gamma - 1.0);
      dpt = -at * (dmod * logpt + mod / pt);
    }
    dldp(i, 0) = (positive ? dpt : -dpt) / static_cast<double>(n);
  }
  Matrix value(1, 1);
  value(0, 0) = total / static_cast<double>(n);
  return ad::make_result(std::move(value), {prob}, [dldp = std::move(dldp)](ad::Node& self) {
    auto& parent = *self.parents[0];
    if (parent.requires_grad) parent.accumulate(dldp * self.grad(0, 0));
  });
}

Var image_logits(const Var& z, const Var& w_normal, const Var& w_abnormal, double scale) {
  const Var parts[] = {w_normal, w_abnormal};
  return ad::scale(ad::matmul_nt(z, ad::concat_rows(parts)), scale);
}

Var image_probability(const Var& z, const Var& w_normal, const Var& w_abnormal, double scale) {
  return ad::softmax_rows(image_logits(z, w_normal, w_abnormal, scale));
}

Var softmax_cross_entropy(const Var& logits, const std::array<double, 2>& target) {
  if (logits.rows() != 1 || logits.cols() != 2) throw InputError("softmax_cross_entropy: expected 1 x 2 logits");
  const Matrix& l = logits.value();
  const double m = std::max(l(0, 0), l(0, 1));
  const double lse = m + std::log(std::exp(l(0, 0) - m) + std::exp(l(0, 1) - m));
  Matrix value(1, 1);
  value(0, 0) = -(target[0] * (l(0, 0) - lse) + target[1] * (l(0, 1) - lse));
  Matrix d(1, 2);
  const double tsum = target[0] + target[1];
  d(0, 0) = std::exp(l(0, 0) - lse) * tsum - target[0];
  d(0, 1) = std::exp(l(0, 1) - lse) * tsum - target[1];
  return ad::make_result(std::move(value), {logits}, [d](ad::Node& self) {
    auto& parent = *self.parents[0];
    if (parent.requires_grad) parent.accumulate(d * self.grad(0, 0));
  });
}

Var image_loss(const Var& z_plus, const Var& z_minus, const Var& z_latent, const Var& w_normal,
               const Var& w_abnormal, double scale, const ImageLossTerms& terms) {
  constexpr std::array<double, 2> normal{1.0, 0.0};
  constexpr std::array<double, 2> abnormal{0.0, 1.0};
  const std::array<double, 2> smoothed{terms.latent_smoothing / 2.0, 1.0 - terms.latent_smoothing / 2.0};
  auto ce = [&](const Var& z, const std::array<double, 2>& t) {
    return softmax_cross_entropy(image_logits(z, w_normal, w_abnormal, scale), t);
  };
  std::vector<Var> pairs;
  if (terms.pixel_space) pairs.push_back(ad::scale(ad::add(ce(z_plus, normal), ce(z_minus, abnormal)), 0.5));
  if (terms.latent_space) pairs.push_back(ad::scale(ad::add(ce(z_plus, normal), ce(z_latent, smoothed)), 0.5));
  if (pairs.empty()) return ad::constant(Matrix::Zero(1, 1));
  Var total = pairs[0];
  for (std::size_t i = 1; i < pairs.size(); ++i) total = ad::add(total, pairs[i]);
  return total;
}

Var alignment_loss(const Var& abnormal_logits, const Var& field, const Var& z0, double temperature,
                   AlignmentMode mode) {
  if (abnormal_logits.cols() != 1 || abnormal_logits.rows() != field.rows()) {
    throw InputError("alignment_loss: logits and field disagree on location count");
  }
  if (z0.rows() != 1 || z0.cols() != field.cols()) throw InputError("alignment_loss: z0 width differs from field");
  if (mode == AlignmentMode::off) return ad::constant(Matrix::Zero(1, 1));
  if (!(temperature > 0)) throw InputError("alignment_loss: temperature must be positive");

  Var weights;
  if (mode == AlignmentMode::weighted) {
    weights = ad::softmax_rows(ad::scale(ad::transpose(abnormal_logits), 1.0 / temperature));
  } else {
    weights = ad::constant(Matrix::Constant(1, field.rows(), 1.0 / static_cast<double>(field.rows())));
  }
  const Var s = ad::matmul(weights, field);
  if (s.value().norm() == 0.0) {
    std::cerr << "warning: alignment target vanished; using loss 1\n";
    return ad::constant(Matrix::Ones(1, 1));
  }
  const Var cosine = ad::matmul_nt(z0, ad::l2_normalize_rows(s));
  return ad::add_scalar(ad::scale(cosine, -1.0), 1.0);
}

}  // namespace anople
