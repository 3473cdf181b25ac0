#pragma once

#include "anople/autograd.hpp"

#include <array>
#include <optional>

namespace anople {

inline constexpr double kProbabilityClamp = 1e-6;

struct FocalConfig {
  double gamma = 2.0;
  // Weight of the positive class; nullopt weights both classes by 1.
  std::optional<double> alpha = 0.25;
};

enum class AlignmentMode {
  weighted,  // spatial softmax of the abnormal logits weights the field
  mean,      // uniform weights
  off,
};

struct LossBreakdown {
  double pixel = 0.0;
  double image = 0.0;
  double align = 0.0;
  double total = 0.0;
};

// prob, mask: (h*w) x 1. 1 - (2 sum(p m) + s) / (sum p + sum m + s).
ad::Var dice_loss(const ad::Var& prob, const ad::Matrix& mask, double smoothing = 1.0);

// Mean over pixels of -alpha_t (1 - p_t)^gamma log p_t, p clamped to
// [kProbabilityClamp, 1 - kProbabilityClamp].
ad::Var focal_loss(const ad::Var& prob, const ad::Matrix& mask, const FocalConfig& config = {});

// 1 x 2 logits scale * [<z, w+>, <z, w->].
ad::Var image_logits(const ad::Var& z, const ad::Var& w_normal, const ad::Var& w_abnormal, double scale);

// Two-way softmax of image_logits, (normal, abnormal) order.
ad::Var image_probability(const ad::Var& z, const ad::Var& w_normal, const ad::Var& w_abnormal, double scale);

// -sum_c target_c * log softmax(logits)_c for a 1 x 2 row.
ad::Var softmax_cross_entropy(const ad::Var& logits, const std::array<double, 2>& target);

struct ImageLossTerms {
  bool pixel_space = true;
  bool latent_space = true;
  double latent_smoothing = 0.003;
};

// Mean of two paired cross-entropies: (z+ normal, z- abnormal) and
// (z+ normal, z_latent smoothed abnormal). A disabled channel drops its pair.
ad::Var image_loss(const ad::Var& z_plus, const ad::Var& z_minus, const ad::Var& z_latent, const ad::Var& w_normal,
                   const ad::Var& w_abnormal, double scale, const ImageLossTerms& terms = {});

// 1 - <z0, s / |s|> with s = sum_ij a_ij D_ij and a = softmax(logits / temperature)
// over all locations. A zero s yields a constant 1.
ad::Var alignment_loss(const ad::Var& abnormal_logits, const ad::Var& field, const ad::Var& z0,
                       double temperature = 2.0, AlignmentMode mode = AlignmentMode::weighted);

}  // namespace anople
