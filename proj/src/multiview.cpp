#include "anople/multiview.hpp"

#include "anople/errors.hpp"
#include "anople/image_io.hpp"

#include <opencv2/imgproc.hpp>

namespace anople {

void MultiViewConfig::validate() const {
  if (view_size <= 0) throw ConfigError("view_size must be positive");
  if (grid < 1) throw ConfigError("view grid must be at least 1");
  for (double s : std)
    if (!(s > 0)) throw ConfigError("normalization std must be positive");
}

std::vector<cv::Rect> crop_regions(const MultiViewConfig& config) {
  config.validate();
  std::vector<cv::Rect> out;
  out.reserve(static_cast<std::size_t>(config.num_crops()));
  for (int r = 0; r < config.grid; ++r)
    for (int c = 0; c < config.grid; ++c)
      out.emplace_back(c * config.view_size, r * config.view_size, config.view_size, config.view_size);
  return out;
}

namespace {

cv::Mat resize_image(const cv::Mat& image, int side) {
  if (image.rows == side && image.cols == side) return image.clone();
  cv::Mat out;
  cv::resize(image, out, cv::Size(side, side), 0, 0, cv::INTER_LINEAR);
  return out;
}

cv::Mat resize_mask(const cv::Mat& mask, int side) {
  if (mask.rows == side && mask.cols == side) return mask.clone();
  cv::Mat out;
  cv::resize(mask, out, cv::Size(side, side), 0, 0, cv::INTER_NEAREST);
  return out;
}

}  // namespace

ViewBatch make_views(const cv::Mat& image, ViewMode mode, const MultiViewConfig& config,
                     const std::optional<cv::Mat>& mask, std::string origin) {
  config.validate();
  if (image.empty() || image.type() != CV_32FC3) throw IngestionError("make_views: expected a decoded CV_32FC3 image");
  if (mask && (mask->type() != CV_8U || mask->size() != image.size())) {
    throw InputError("make_views: mask must be CV_8U with the image's size");
  }
  auto finish = [&config](cv::Mat m) {
    return config.normalize ? normalize_channels(m, config.mean, config.std) : m;
  };

  ViewBatch batch;
  batch.origin = std::move(origin);
  const int side = config.train_size();
  if (mode == ViewMode::train) {
    const cv::Mat big = resize_image(image, side);
    const cv::Mat big_mask = mask ? resize_mask(*mask, side) : cv::Mat();
    int index = 1;
    for (const cv::Rect& r : crop_regions(config)) {
      View v{finish(big(r).clone()), index++, mask ? big_mask(r).clone() : cv::Mat(), r};
      batch.views.push_back(std::move(v));
    }
  }
  View whole{finish(resize_image(image, config.view_size)), config.whole_view_index(),
             mask ? resize_mask(*mask, config.view_size) : cv::Mat(), cv::Rect(0, 0, side, side)};
  batch.views.push_back(std::move(whole));
  return batch;
}

}  // namespace anople
