#pragma once

// Independent reference implementations and fixtures shared by the unit tests
// and the acceptance runner. Nothing here calls into the code it checks.

#include "anople/autograd.hpp"
#include "anople/backbone.hpp"
#include "anople/model.hpp"

#include <opencv2/core.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace anople::oracle {

// O(P*N) pair counting: positive above negative scores 1, ties 1/2.
inline double pairwise_auroc(std::span<const double> scores, std::span<const int> labels) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Exhaustive nearest-reference scan, one dot product at a time.
inline std::vector<double> brute_memory_scores(const ad::Matrix& features, const ad::Matrix& rows) {
  std::vector<double> out(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    double best = INFINITY;
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
      double dot = 0.0;
      for (Eigen::Index c = 0; c < features.cols(); ++c) dot += features(i, c) * rows(r, c);
      best = std::min(best, 0.5 * (1.0 - dot));
    }
    out[static_cast<std::size_t>(i)] = std::clamp(best, 0.0, 1.0);
  }
  return out;
}

inline ad::Matrix random_unit_rows(Eigen::Index n, Eigen::Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  ad::Matrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  for (Eigen::Index i = 0; i < n; ++i) m.row(i).normalize();
  return m;
}

// Smooth RGB test image in [0, 1].
inline cv::Mat gradient_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double a = u(rng), b = u(rng), c = u(rng);
  cv::Mat img(h, w, CV_32FC3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double fy = static_cast<double>(y) / h, fx = static_cast<double>(x) / w;
      img.at<cv::Vec3f>(y, x) = cv::Vec3f(static_cast<float>(0.5 + 0.4 * std::sin(6.0 * fx + a)),
                                          static_cast<float>(0.5 + 0.4 * std::cos(5.0 * fy + b)),
                                          static_cast<float>(0.5 + 0.3 * std::sin(4.0 * (fx + fy) + c)));
    }
  return img;
}

// Small encoder pair for finite-difference checks: 8 px views, 2 px patches,
// so every view yields a 4x4 patch grid and the decoder emits 8x8 maps.
inline BackboneConfig gradcheck_backbone() {
  BackboneConfig c = BackboneConfig::tiny();
  c.text_width = 8;
  c.vision_width = 8;
  c.embed_dim = 8;
  c.text_layers = 2;
  c.vision_layers = 2;
  c.text_heads = 2;
  c.vision_heads = 2;
  c.patch_size = 2;
  c.input_resolution = 8;
  c.context_length = 16;
  c.prompt_depth = 2;
  return c;
}

inline ModelConfig gradcheck_model() {
  ModelConfig m;
  m.prompts.text_ctx = 2;
  m.prompts.vision_ctx = 2;
  m.prompts.views = 4;
  m.views.view_size = 8;
  m.views.grid = 2;
  m.decoder_hidden = 8;
  m.map_size = 8;
  m.memory_layers = {1, 2};
  m.use_memory = false;
  return m;
}

// Fixed inputs for the explicit training-loss overload: a 16 px image, a
// blended square defect and latent noise.
struct LossInputs {
  cv::Mat image, image_minus, mask;
  ad::Matrix noise;
};

inline LossInputs gradcheck_inputs(int embed_dim, std::uint64_t seed) {
  LossInputs in;
  in.image = gradient_image(16, 16, seed);
  in.mask = cv::Mat::zeros(16, 16, CV_8U);
  in.mask(cv::Rect(3, 5, 6, 4)).setTo(1);
  in.image_minus = in.image.clone();
  in.image_minus.setTo(cv::Scalar(0.9, 0.1, 0.2), in.mask);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> g(0.0, 0.015);
  in.noise.resize(1, embed_dim);
  for (Eigen::Index i = 0; i < in.noise.size(); ++i) in.noise.data()[i] = g(rng);
  return in;
}

struct GradCheckEntry {
  std::string loss;
  std::string parameter;
  double relative_error = 0.0;
  double analytic_norm = 0.0;
};

inline std::array<ad::Var, 5> loss_components(const LossResult& r) { return {r.dice, r.focal, r.image, r.align, r.total}; }
inline const std::array<const char*, 5> kLossNames{"dice", "focal", "image", "align", "total"};

// Central differences of every loss component against back-propagated
// gradients, for every trainable tensor. Error per tensor is
// |g_a - g_fd| / max(|g_a|, |g_fd|, floor).
inline std::vector<GradCheckEntry> check_model_gradients(const AnoPLeModel& model, const LossInputs& in,
                                                         double step = 1e-6, double floor = 1e-8) {
  auto params = model.prompt_parameters();
  for (auto& p : model.decoder_parameters()) params.push_back(p);
  auto forward = [&] { return model.training_loss(in.image, in.image_minus, in.mask, in.noise); };

  std::vector<std::vector<ad::Matrix>> analytic(5);
  for (std::size_t k = 0; k < 5; ++k) {
    for (auto& p : params) p.var.zero_grad();
    const LossResult r = forward();
    ad::backward(loss_components(r)[k]);
    for (auto& p : params) {
      analytic[k].push_back(p.var.grad().size() ? p.var.grad() : ad::Matrix::Zero(p.var.rows(), p.var.cols()));
    }
  }

  std::vector<std::vector<ad::Matrix>> numeric(5);
  for (auto& per_loss : numeric)
    for (auto& p : params) per_loss.push_back(ad::Matrix::Zero(p.var.rows(), p.var.cols()));

  ad::NoGradGuard guard;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    ad::Var v = params[pi].var;
    for (Eigen::Index e = 0; e < v.value().size(); ++e) {
      const double orig = v.value().data()[e];
      v.mutable_value().data()[e] = orig + step;
      const auto plus = loss_components(forward());
      v.mutable_value().data()[e] = orig - step;
      const auto minus = loss_components(forward());
      v.mutable_value().data()[e] = orig;
      for (std::size_t k = 0; k < 5; ++k) {
        numeric[k][pi].data()[e] = (plus[k].item() - minus[k].item()) / (2.0 * step);
      }
    }
  }

  std::vector<GradCheckEntry> out;
  for (std::size_t k = 0; k < 5; ++k)
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      const double na = analytic[k][pi].norm(), nn = numeric[k][pi].norm();
      const double err = (analytic[k][pi] - numeric[k][pi]).norm() / std::max({na, nn, floor});
      out.push_back({kLossNames[k], params[pi].name, err, na});
    }
  return out;
}

// Self-deleting scratch directory.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("anople_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace anople::oracle
