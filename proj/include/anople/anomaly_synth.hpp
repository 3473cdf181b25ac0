#pragma once

#include "anople/autograd.hpp"

#include <opencv2/core.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace anople {

// Pixel-space pseudo-anomaly parameters (DRAEM defaults).
struct PerlinConfig {
  int min_scale_exp = 0;  // lattice scales 2^min .. 2^max per axis
  int max_scale_exp = 5;
  double threshold = 0.5;
  double beta_min = 0.2;  // texture opacity inside the mask
  double beta_max = 1.0;
  double max_area = 0.5;  // largest accepted mask fraction
  int max_retries = 32;
};

struct LatentNoiseConfig {
  double mean = 0.0;
  double stddev = 0.015;
};

inline constexpr double kLatentLabelSmoothing = 0.003;

struct SyntheticAnomaly {
  cv::Mat image_minus;  // CV_32FC3, same size as the clean image
  cv::Mat mask;         // CV_8U, values {0, 1}
  std::uint64_t seed = 0;
  std::string source_id;
  double beta = 1.0;
};

// Gradient (Perlin) noise sampled on an (scale_y+1) x (scale_x+1) lattice of
// random unit gradients, quintic fade, scaled by sqrt(2). CV_32F, h x w.
cv::Mat perlin_noise(int h, int w, int scale_y, int scale_x, std::mt19937_64& rng);

// Supplies the foreign texture that gets blended into the masked region:
// files from a texture directory when one is configured, otherwise a randomly
// augmented copy of the training image itself.
class TextureSource {
 public:
  static TextureSource self_augmented();
  static TextureSource from_directory(const std::filesystem::path& dir);

  // Returns a CV_32FC3 texture of the image's size plus an identifier.
  std::pair<cv::Mat, std::string> sample(const cv::Mat& image, std::mt19937_64& rng) const;
  bool uses_directory() const { return !files_.empty(); }

 private:
  std::vector<std::filesystem::path> files_;
};

// inside mask: beta * texture + (1 - beta) * image; outside: image, copied.
cv::Mat blend_anomaly(const cv::Mat& image, const cv::Mat& texture, const cv::Mat& mask, double beta);

// Thresholded Perlin mask plus texture blend. Resamples the Perlin scales when
// the mask comes out empty or larger than max_area; throws StateError after
// max_retries failures. All randomness is drawn from a sub-stream seeded by
// one draw of `rng`, recorded in the result.
SyntheticAnomaly simulate_pixel_anomaly(const cv::Mat& image, const TextureSource& textures, std::mt19937_64& rng,
                                        const PerlinConfig& config = {});

// epsilon ~ N(mean, stddev^2), one draw per element.
ad::Matrix sample_latent_noise(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                               const LatentNoiseConfig& config = {});

// z+ + epsilon.
ad::Matrix simulate_latent_anomaly(const ad::Matrix& z_plus, std::mt19937_64& rng,
                                   const LatentNoiseConfig& config = {});

// Two-class label smoothing, (normal, abnormal) order: (1 - e) * onehot + e / 2.
std::array<double, 2> smoothed_abnormal_target(double smoothing = kLatentLabelSmoothing);

void write_mask_png(const std::filesystem::path& path, const cv::Mat& mask);

}  // namespace anople
