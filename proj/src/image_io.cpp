#include "anople/image_io.hpp"

#include "anople/errors.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cctype>

namespace anople {

namespace {

void ensure_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

}  // namespace

bool is_image_file(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" || ext == ".tiff";
}

cv::Mat read_rgb(const std::filesystem::path& path) {
  const cv::Mat raw = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (raw.empty()) throw IngestionError("cannot decode image: " + path.string());
  cv::Mat rgb, out;
  cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
  rgb.convertTo(out, CV_32FC3, 1.0 / 255.0);
  return out;
}

cv::Mat read_mask(const std::filesystem::path& path) {
  const cv::Mat raw = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (raw.empty()) throw IngestionError("cannot decode mask: " + path.string());
  cv::Mat mask = raw > 0;
  return mask / 255;
}

void write_rgb(const std::filesystem::path& path, const cv::Mat& image) {
  cv::Mat bgr, out;
  cv::cvtColor(image, bgr, cv::COLOR_RGB2BGR);
  bgr.convertTo(out, CV_8UC3, 255.0);
  ensure_parent(path);
  if (!cv::imwrite(path.string(), out)) throw IngestionError("failed to write " + path.string());
}

void write_heatmap_png(const std::filesystem::path& path, const cv::Mat& map) {
  cv::Mat clipped, out;
  map.convertTo(clipped, CV_64F);
  cv::min(clipped, 1.0, clipped);
  cv::max(clipped, 0.0, clipped);
  clipped.convertTo(out, CV_16U, 65535.0);
  ensure_parent(path);
  if (!cv::imwrite(path.string(), out)) throw IngestionError("failed to write " + path.string());
}

cv::Mat normalize_channels(const cv::Mat& image, const std::array<double, 3>& mean, const std::array<double, 3>& std) {
  if (image.type() != CV_32FC3) throw InputError("normalize_channels: expected CV_32FC3");
  cv::Mat out;
  cv::subtract(image, cv::Scalar(mean[0], mean[1], mean[2]), out);
  cv::divide(out, cv::Scalar(std[0], std[1], std[2]), out);
  return out;
}

}  // namespace anople
