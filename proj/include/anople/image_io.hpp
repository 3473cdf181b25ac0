#pragma once

#include <opencv2/core.hpp>

#include <array>
#include <filesystem>

namespace anople {

bool is_image_file(const std::filesystem::path& path);

// Decodes any OpenCV-readable file into CV_32FC3, RGB order, values in [0, 1].
// Throws IngestionError when the file is missing or not an image.
cv::Mat read_rgb(const std::filesystem::path& path);

// Ground-truth masks: any nonzero pixel is positive. CV_8U, values {0, 1}.
cv::Mat read_mask(const std::filesystem::path& path);

// 8-bit RGB export of a CV_32FC3 [0, 1] image.
void write_rgb(const std::filesystem::path& path, const cv::Mat& image);

// Writes a CV_32F / CV_64F map with values in [0, 1] as a 16-bit grayscale PNG.
void write_heatmap_png(const std::filesystem::path& path, const cv::Mat& map);

// (x - mean) / std per channel.
cv::Mat normalize_channels(const cv::Mat& image, const std::array<double, 3>& mean, const std::array<double, 3>& std);

}  // namespace anople
