#include "anople/anomaly_synth.hpp"

#include "anople/errors.hpp"
#include "anople/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace anople {

namespace {

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

using Op = void (*)(cv::Mat&, std::mt19937_64&);

void op_invert(cv::Mat& m, std::mt19937_64&) { m = cv::Scalar::all(1.0) - m; }

void op_solarize(cv::Mat& m, std::mt19937_64&) {
  m.forEach<cv::Vec3f>([](cv::Vec3f& p, const int*) {
    for (int c = 0; c < 3; ++c)
      if (p[c] > 0.5f) p[c] = 1.0f - p[c];
  });
}

void op_posterize(cv::Mat& m, std::mt19937_64&) {
  m.forEach<cv::Vec3f>([](cv::Vec3f& p, const int*) {
    for (int c = 0; c < 3; ++c) p[c] = std::floor(p[c] * 4.0f) / 4.0f;
  });
}

void op_channel_shuffle(cv::Mat& m, std::mt19937_64& rng) {
  std::array<int, 3> order{0, 1, 2};
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<cv::Mat> ch;
  cv::split(m, ch);
  std::vector<cv::Mat> shuffled{ch[order[0]], ch[order[1]], ch[order[2]]};
  cv::merge(shuffled, m);
}

void op_brightness(cv::Mat& m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mul(0.5, 1.5), add(-0.2, 0.2);
  m = m * mul(rng) + cv::Scalar::all(add(rng));
  cv::min(m, 1.0, m);
  cv::max(m, 0.0, m);
}

void op_rotate(cv::Mat& m, std::mt19937_64& rng) {
  static constexpr cv::RotateFlags flags[] = {cv::ROTATE_90_CLOCKWISE, cv::ROTATE_180, cv::ROTATE_90_COUNTERCLOCKWISE};
  std::uniform_int_distribution<int> pick(0, 2);
  cv::Mat out;
  cv::rotate(m, out, flags[pick(rng)]);
  if (out.size() != m.size()) cv::resize(out, out, m.size(), 0, 0, cv::INTER_LINEAR);
  m = out;
}

void op_shift(cv::Mat& m, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dy(0, m.rows - 1), dx(0, m.cols - 1);
  const int sy = dy(rng), sx = dx(rng);
  cv::Mat out(m.size(), m.type());
  for (int y = 0; y < m.rows; ++y) {
    const auto* src = m.ptr<cv::Vec3f>((y + sy) % m.rows);
    auto* dst = out.ptr<cv::Vec3f>(y);
    for (int x = 0; x < m.cols; ++x) dst[x] = src[(x + sx) % m.cols];
  }
  m = out;
}

void op_zoom(cv::Mat& m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> frac(0.25, 0.6);
  const int ch = std::max(1, static_cast<int>(m.rows * frac(rng)));
  const int cw = std::max(1, static_cast<int>(m.cols * frac(rng)));
  std::uniform_int_distribution<int> oy(0, m.rows - ch), ox(0, m.cols - cw);
  cv::Mat crop = m(cv::Rect(ox(rng), oy(rng), cw, ch)).clone();
  cv::resize(crop, m, m.size(), 0, 0, cv::INTER_LINEAR);
}

struct NamedOp {
  const char* name;
  Op fn;
};

constexpr NamedOp kOps[] = {{"invert", op_invert},     {"solarize", op_solarize}, {"posterize", op_posterize},
                            {"shuffle", op_channel_shuffle}, {"brightness", op_brightness}, {"rotate", op_rotate},
                            {"shift", op_shift},       {"zoom", op_zoom}};

}  // namespace

cv::Mat perlin_noise(int h, int w, int scale_y, int scale_x, std::mt19937_64& rng) {
  if (h <= 0 || w <= 0 || scale_y <= 0 || scale_x <= 0) throw InputError("perlin_noise: sizes must be positive");
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  const int gy = scale_y + 1, gx = scale_x + 1;
  std::vector<std::array<double, 2>> grads(static_cast<std::size_t>(gy) * gx);
  for (auto& g : grads) {
    const double a = angle(rng);
    g = {std::cos(a), std::sin(a)};
  }
  auto grad = [&](int iy, int ix) { return grads[static_cast<std::size_t>(iy) * gx + ix]; };

  cv::Mat noise(h, w, CV_32F);
  for (int y = 0; y < h; ++y) {
    const double fy = static_cast<double>(y) * scale_y / h;
    const int cy = std::min(static_cast<int>(fy), scale_y - 1);
    const double ty = fy - cy;
    for (int x = 0; x < w; ++x) {
      const double fx = static_cast<double>(x) * scale_x / w;
      const int cx = std::min(static_cast<int>(fx), scale_x - 1);
      const double tx = fx - cx;
      const auto g00 = grad(cy, cx), g10 = grad(cy + 1, cx), g01 = grad(cy, cx + 1), g11 = grad(cy + 1, cx + 1);
      const double n00 = g00[0] * ty + g00[1] * tx;
      const double n10 = g10[0] * (ty - 1) + g10[1] * tx;
      const double n01 = g01[0] * ty + g01[1] * (tx - 1);
      const double n11 = g11[0] * (ty - 1) + g11[1] * (tx - 1);
      const double uy = fade(ty), ux = fade(tx);
      const double a = n00 + uy * (n10 - n00);
      const double b = n01 + uy * (n11 - n01);
      noise.at<float>(y, x) = static_cast<float>(std::numbers::sqrt2 * (a + ux * (b - a)));
    }
  }
  return noise;
}

TextureSource TextureSource::self_augmented() { return TextureSource{}; }

TextureSource TextureSource::from_directory(const std::filesystem::path& dir) {
  TextureSource src;
  if (!std::filesystem::is_directory(dir)) throw IngestionError("texture directory not found: " + dir.string());
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) src.files_.push_back(entry.path());
  }
  std::sort(src.files_.begin(), src.files_.end());
  if (src.files_.empty()) throw IngestionError("texture directory has no images: " + dir.string());
  return src;
}

std::pair<cv::Mat, std::string> TextureSource::sample(const cv::Mat& image, std::mt19937_64& rng) const {
  cv::Mat texture;
  std::string id;
  if (!files_.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, files_.size() - 1);
    const auto& path = files_[pick(rng)];
    texture = read_rgb(path);
    cv::resize(texture, texture, image.size(), 0, 0, cv::INTER_LINEAR);
    id = path.filename().string();
  } else {
    texture = image.clone();
    id = "self";
  }
  // Three distinct random augmentations.
  std::array<int, std::size(kOps)> idx;
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::shuffle(idx.begin(), idx.end(), rng);
  for (int k = 0; k < 3; ++k) {
    kOps[idx[k]].fn(texture, rng);
    id += std::string(k == 0 ? ":" : "+") + kOps[idx[k]].name;
  }
  return {texture, id};
}

cv::Mat blend_anomaly(const cv::Mat& image, const cv::Mat& texture, const cv::Mat& mask, double beta) {
  if (image.type() != CV_32FC3 || texture.type() != CV_32FC3) throw InputError("blend_anomaly: expected CV_32FC3");
  if (image.size() != texture.size() || image.size() != mask.size()) throw InputError("blend_anomaly: size mismatch");
  cv::Mat out = image.clone();
  const float b = static_cast<float>(beta);
  for (int y = 0; y < image.rows; ++y) {
    const auto* m = mask.ptr<std::uint8_t>(y);
    const auto* src = image.ptr<cv::Vec3f>(y);
    const auto* tex = texture.ptr<cv::Vec3f>(y);
    auto* dst = out.ptr<cv::Vec3f>(y);
    for (int x = 0; x < image.cols; ++x) {
      if (!m[x]) continue;
      for (int c = 0; c < 3; ++c) dst[x][c] = b * tex[x][c] + (1.0f - b) * src[x][c];
    }
  }
  return out;
}

SyntheticAnomaly simulate_pixel_anomaly(const cv::Mat& image, const TextureSource& textures, std::mt19937_64& rng,
                                        const PerlinConfig& config) {
  if (image.empty() || image.type() != CV_32FC3) throw InputError("simulate_pixel_anomaly: expected CV_32FC3 image");
  SyntheticAnomaly out;
  out.seed = rng();
  std::mt19937_64 local(out.seed);
  std::uniform_int_distribution<int> scale_exp(config.min_scale_exp, config.max_scale_exp);
  const double total = static_cast<double>(image.rows) * image.cols;

  for (int attempt = 0; attempt < config.max_retries; ++attempt) {
    const int sy = 1 << scale_exp(local);
    const int sx = 1 << scale_exp(local);
    const cv::Mat noise = perlin_noise(image.rows, image.cols, sy, sx, local);
    cv::Mat mask = noise > config.threshold;  // 0 / 255
    mask /= 255;
    const double area = cv::countNonZero(mask) / total;
    if (area <= 0.0 || area > config.max_area) continue;

    auto [texture, id] = textures.sample(image, local);
    std::uniform_real_distribution<double> beta(config.beta_min, config.beta_max);
    out.beta = beta(local);
    out.image_minus = blend_anomaly(image, texture, mask, out.beta);
    out.mask = mask;
    out.source_id = std::move(id);
    return out;
  }
  throw StateError("simulate_pixel_anomaly: no usable Perlin mask after " + std::to_string(config.max_retries) +
                   " attempts");
}

ad::Matrix sample_latent_noise(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                               const LatentNoiseConfig& config) {
  ad::Matrix eps(rows, cols);
  if (config.stddev == 0.0) {
    eps.setConstant(config.mean);
    return eps;
  }
  std::normal_distribution<double> dist(config.mean, config.stddev);
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = dist(rng);
  return eps;
}

ad::Matrix simulate_latent_anomaly(const ad::Matrix& z_plus, std::mt19937_64& rng, const LatentNoiseConfig& config) {
  return z_plus + sample_latent_noise(z_plus.rows(), z_plus.cols(), rng, config);
}

std::array<double, 2> smoothed_abnormal_target(double smoothing) {
  return {smoothing / 2.0, 1.0 - smoothing + smoothing / 2.0};
}

void write_mask_png(const std::filesystem::path& path, const cv::Mat& mask) {
  cv::Mat out;
  mask.convertTo(out, CV_8U, 255.0);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), out)) throw IngestionError("failed to write " + path.string());
}

}  // namespace anople
