#pragma once

#include <opencv2/core.hpp>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace anople {

struct ImageRecord {
  std::filesystem::path image;
  std::filesystem::path mask;  // empty for normal images
  int label = 0;               // 1 = anomalous
  std::string category;
  std::string defect;          // "good" for normal images
  std::string id;              // category/defect/stem
};

struct CategorySplit {
  std::string name;
  std::vector<ImageRecord> train;  // normal images only
  std::vector<ImageRecord> test;
};

enum class DatasetLayout { automatic, mvtec, visa };

// MVTec-AD layout: <root>/<category>/{train/good, test/<defect>, ground_truth/<defect>/<stem>_mask.png}.
// VisA layout: <root>/split_csv/1cls.csv with columns object,split,label,image,mask.
// An empty category filter selects every category found.
std::vector<CategorySplit> discover_dataset(const std::filesystem::path& root, DatasetLayout layout,
                                            const std::vector<std::string>& categories = {});

// k distinct indices drawn uniformly from [0, n), in draw order.
std::vector<std::size_t> sample_shots(std::size_t n, std::size_t k, std::uint64_t seed);

// Mask for a record at the image's resolution; all zeros for normal images.
cv::Mat load_mask(const ImageRecord& record, cv::Size size);

struct SyntheticDatasetConfig {
  std::string category = "weave";
  int train_count = 64;
  int test_count = 200;
  double anomaly_fraction = 0.5;
  int image_size = 64;
  std::uint64_t seed = 0;
};

// Periodic texture images with square and Perlin-blob defects, written in the
// MVTec-AD layout under <root>/<category>.
void generate_synthetic_dataset(const std::filesystem::path& root, const SyntheticDatasetConfig& config);

// One normal texture image of the synthetic family (CV_32FC3, [0, 1]).
cv::Mat synthetic_normal(const std::string& category, int size, std::mt19937_64& rng);

}  // namespace anople
