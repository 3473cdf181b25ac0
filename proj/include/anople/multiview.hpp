#pragma once

#include <opencv2/core.hpp>

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace anople {

enum class ViewMode { train, test };

struct MultiViewConfig {
  int view_size = 240;  // side of every view fed to the vision tower
  int grid = 2;         // sub-crops per axis; N = grid * grid
  std::array<double, 3> mean{0.48145466, 0.4578275, 0.40821073};
  std::array<double, 3> std{0.26862954, 0.26130258, 0.27577711};
  bool normalize = true;

  int num_crops() const { return grid * grid; }
  int whole_view_index() const { return num_crops() + 1; }
  // Side of the enlarged frame that the crops tile.
  int train_size() const { return grid * view_size; }
  void validate() const;
};

struct View {
  cv::Mat image;     // CV_32FC3, view_size square, channel-normalized when enabled
  int view_index;    // 1..N for crops (row-major), N+1 for the whole image
  cv::Mat mask;      // CV_8U {0, 1}, empty when no mask was supplied
  cv::Rect region;   // crop rectangle in the train_size frame; whole view covers it entirely
};

struct ViewBatch {
  std::vector<View> views;
  std::string origin;

  const View& whole() const { return views.back(); }
};

// Crop rectangles in the train_size frame, indices 1..N in row-major order.
std::vector<cv::Rect> crop_regions(const MultiViewConfig& config);

// Train: the image (and mask) resized to train_size and cut into N crops,
// followed by the original resized to view_size. Test: the resized original
// only. Images resample bilinearly, masks by nearest neighbour.
ViewBatch make_views(const cv::Mat& image, ViewMode mode, const MultiViewConfig& config,
                     const std::optional<cv::Mat>& mask = std::nullopt, std::string origin = {});

}  // namespace anople
