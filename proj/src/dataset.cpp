#include "anople/dataset.hpp"

#include "anople/anomaly_synth.hpp"
#include "anople/errors.hpp"
#include "anople/image_io.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

namespace anople {

namespace fs = std::filesystem;

namespace {

std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<fs::path> list_dirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

void require_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IngestionError("missing dataset directory: " + dir.string());
}

CategorySplit load_mvtec_category(const fs::path& root, const std::string& name) {
  CategorySplit split{name, {}, {}};
  const fs::path cat = root / name;
  require_dir(cat / "train" / "good");
  require_dir(cat / "test");
  for (const auto& p : list_images(cat / "train" / "good")) {
    split.train.push_back({p, {}, 0, name, "good", name + "/train/" + p.stem().string()});
  }
  for (const auto& defect_dir : list_dirs(cat / "test")) {
    const std::string defect = defect_dir.filename().string();
    const bool good = defect == "good";
    for (const auto& p : list_images(defect_dir)) {
      ImageRecord rec{p, {}, good ? 0 : 1, name, defect, name + "/" + defect + "/" + p.stem().string()};
      if (!good) {
        rec.mask = cat / "ground_truth" / defect / (p.stem().string() + "_mask.png");
        if (!fs::exists(rec.mask)) throw IngestionError("missing ground-truth mask: " + rec.mask.string());
      }
      split.test.push_back(std::move(rec));
    }
  }
  return split;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    cells.push_back(cell);
  }
  return cells;
}

std::vector<CategorySplit> load_visa(const fs::path& root, const std::set<std::string>& wanted) {
  const fs::path csv = root / "split_csv" / "1cls.csv";
  std::ifstream in(csv);
  if (!in) throw IngestionError("missing VisA split file: " + csv.string());
  std::string line;
  std::getline(in, line);
  const auto header = split_csv_line(line);
  auto column = [&header, &csv](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError("VisA split file lacks column '" + name + "': " + csv.string());
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_obj = column("object"), c_split = column("split"), c_label = column("label"),
                    c_image = column("image"), c_mask = column("mask");
  std::map<std::string, CategorySplit> by_name;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() < header.size() - 1) throw FormatError("short row in " + csv.string() + ": " + line);
    const std::string& obj = cells[c_obj];
    if (!wanted.empty() && !wanted.count(obj)) continue;
    auto& split = by_name.try_emplace(obj, CategorySplit{obj, {}, {}}).first->second;
    const bool anomaly = cells[c_label] == "anomaly";
    ImageRecord rec{root / cells[c_image], {}, anomaly ? 1 : 0, obj, anomaly ? "anomaly" : "good", {}};
    if (anomaly && c_mask < cells.size() && !cells[c_mask].empty()) rec.mask = root / cells[c_mask];
    rec.id = obj + "/" + cells[c_split] + "/" + rec.image.stem().string();
    if (!fs::exists(rec.image)) throw IngestionError("missing image listed in split file: " + rec.image.string());
    (cells[c_split] == "train" ? split.train : split.test).push_back(std::move(rec));
  }
  std::vector<CategorySplit> out;
  for (auto& [_, split] : by_name) {
    std::erase_if(split.train, [](const ImageRecord& r) { return r.label != 0; });
    out.push_back(std::move(split));
  }
  for (const auto& name : wanted) {
    if (!by_name.count(name)) throw IngestionError("category '" + name + "' not present in " + csv.string());
  }
  return out;
}

}  // namespace

std::vector<CategorySplit> discover_dataset(const fs::path& root, DatasetLayout layout,
                                            const std::vector<std::string>& categories) {
  require_dir(root);
  if (layout == DatasetLayout::automatic) {
    layout = fs::exists(root / "split_csv" / "1cls.csv") ? DatasetLayout::visa : DatasetLayout::mvtec;
  }
  const std::set<std::string> wanted(categories.begin(), categories.end());
  if (layout == DatasetLayout::visa) return load_visa(root, wanted);

  std::vector<std::string> names = categories;
  if (names.empty()) {
    for (const auto& d : list_dirs(root))
      if (fs::is_directory(d / "train" / "good")) names.push_back(d.filename().string());
    if (names.empty()) throw IngestionError("no MVTec-style categories under " + root.string());
  }
  std::vector<CategorySplit> out;
  for (const auto& n : names) out.push_back(load_mvtec_category(root, n));
  return out;
}

std::vector<std::size_t> sample_shots(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ConfigError("shot count must be at least 1");
  if (k > n) {
    throw ConfigError("requested " + std::to_string(k) + " shots but only " + std::to_string(n) +
                      " normal training images exist");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

cv::Mat load_mask(const ImageRecord& record, cv::Size size) {
  if (record.label == 0 || record.mask.empty()) return cv::Mat::zeros(size, CV_8U);
  cv::Mat m = read_mask(record.mask);
  if (m.size() != size) cv::resize(m, m, size, 0, 0, cv::INTER_NEAREST);
  return m;
}

// ---- synthetic texture family --------------------------------------------

namespace {

struct Palette {
  cv::Vec3f low, high;
  double angle;
  double period;
};

Palette palette_for(const std::string& category) {
  if (category == "stripes") return {{0.15f, 0.25f, 0.55f}, {0.85f, 0.8f, 0.6f}, 0.35, 9.0};
  if (category == "checker") return {{0.2f, 0.2f, 0.2f}, {0.75f, 0.75f, 0.7f}, 0.0, 10.0};
  if (category == "dots") return {{0.8f, 0.7f, 0.5f}, {0.3f, 0.15f, 0.1f}, 0.0, 8.0};
  if (category == "weave" || category == "texture" || category == "fabric") {
    return {{0.35f, 0.3f, 0.25f}, {0.8f, 0.7f, 0.55f}, 0.0, 10.0};
  }
  throw ConfigError("unknown synthetic category '" + category + "' (stripes, checker, dots, weave, texture, fabric)");
}

double pattern(const std::string& category, double x, double y, double period, double angle, double px,
               double py) {
  constexpr double tau = 2.0 * std::numbers::pi;
  const double u = x * std::cos(angle) + y * std::sin(angle);
  const double v = -x * std::sin(angle) + y * std::cos(angle);
  if (category == "stripes") return 0.5 + 0.5 * std::sin(tau * u / period + px);
  if (category == "checker") {
    const double s = std::sin(tau * u / period + px) * std::sin(tau * v / period + py);
    return 0.5 + 0.5 * std::tanh(4.0 * s);
  }
  if (category == "dots") {
    const double fu = std::fmod(u / period + px / tau + 100.0, 1.0) - 0.5;
    const double fv = std::fmod(v / period + py / tau + 100.0, 1.0) - 0.5;
    return std::exp(-(fu * fu + fv * fv) / 0.03);
  }
  const double a = std::sin(tau * u / period + px), b = std::sin(tau * v / period + py);
  return 0.5 + 0.25 * (a + b) + 0.25 * a * b;
}

void write_image(const fs::path& path, const cv::Mat& image) { write_rgb(path, image); }

std::string numbered(int i) {
  std::ostringstream os;
  os << std::setw(3) << std::setfill('0') << i;
  return os.str();
}

// Square patch with inverted, re-colored content.
cv::Mat square_defect(cv::Mat& image, std::mt19937_64& rng) {
  const int size = image.rows;
  std::uniform_int_distribution<int> side_dist(size / 10, size / 4);
  const int side = side_dist(rng);
  std::uniform_int_distribution<int> pos(0, size - side);
  const cv::Rect r(pos(rng), pos(rng), side, side);
  std::uniform_real_distribution<float> tint(0.0f, 1.0f);
  const cv::Vec3f color{tint(rng), tint(rng), tint(rng)};
  std::normal_distribution<float> noise(0.0f, 0.05f);
  for (int y = r.y; y < r.y + r.height; ++y) {
    auto* row = image.ptr<cv::Vec3f>(y);
    for (int x = r.x; x < r.x + r.width; ++x)
      for (int c = 0; c < 3; ++c) row[x][c] = std::clamp(0.5f * (1.0f - row[x][c]) + 0.5f * color[c] + noise(rng), 0.0f, 1.0f);
  }
  cv::Mat mask = cv::Mat::zeros(image.size(), CV_8U);
  mask(r).setTo(1);
  return mask;
}

// Perlin-shaped blob blended towards a flat random color.
cv::Mat perlin_defect(cv::Mat& image, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> scale(1, 3);
  std::uniform_real_distribution<float> tint(0.0f, 1.0f), beta(0.6f, 1.0f);
  const double total = static_cast<double>(image.rows) * image.cols;
  for (int attempt = 0; attempt < 256; ++attempt) {
    const cv::Mat noise = perlin_noise(image.rows, image.cols, 1 << scale(rng), 1 << scale(rng), rng);
    cv::Mat mask = noise > 0.55;
    mask /= 255;
    const double area = cv::countNonZero(mask) / total;
    if (area < 0.01 || area > 0.15) continue;
    const cv::Vec3f color{tint(rng), tint(rng), tint(rng)};
    const float b = beta(rng);
    cv::Mat flat(image.size(), CV_32FC3, cv::Scalar(color[0], color[1], color[2]));
    image = blend_anomaly(image, flat, mask, b);
    return mask;
  }
  throw StateError("synthetic dataset: could not draw a Perlin defect");
}

}  // namespace

cv::Mat synthetic_normal(const std::string& category, int size, std::mt19937_64& rng) {
  const Palette pal = palette_for(category);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<float> noise(0.0f, 0.02f);
  const double px = phase(rng), py = phase(rng);
  cv::Mat img(size, size, CV_32FC3);
  for (int y = 0; y < size; ++y) {
    auto* row = img.ptr<cv::Vec3f>(y);
    for (int x = 0; x < size; ++x) {
      const float t = static_cast<float>(pattern(category, x, y, pal.period, pal.angle, px, py));
      for (int c = 0; c < 3; ++c) {
        row[x][c] = std::clamp(pal.low[c] + t * (pal.high[c] - pal.low[c]) + noise(rng), 0.0f, 1.0f);
      }
    }
  }
  return img;
}

void generate_synthetic_dataset(const fs::path& root, const SyntheticDatasetConfig& config) {
  if (config.train_count < 1 || config.test_count < 2) throw ConfigError("synthetic dataset needs images to write");
  if (config.image_size < 16) throw ConfigError("synthetic image size must be at least 16");
  if (!(config.anomaly_fraction >= 0 && config.anomaly_fraction <= 1)) {
    throw ConfigError("anomaly_fraction must lie in [0, 1]");
  }
  palette_for(config.category);
  const fs::path cat = root / config.category;
  std::mt19937_64 rng(config.seed);

  for (int i = 0; i < config.train_count; ++i) {
    write_image(cat / "train" / "good" / (numbered(i) + ".png"), synthetic_normal(config.category, config.image_size, rng));
  }
  const int anomalies = std::clamp(static_cast<int>(std::lround(config.test_count * config.anomaly_fraction)), 0,
                                   config.test_count);
  for (int i = 0; i < config.test_count - anomalies; ++i) {
    write_image(cat / "test" / "good" / (numbered(i) + ".png"), synthetic_normal(config.category, config.image_size, rng));
  }
  for (int i = 0; i < anomalies; ++i) {
    cv::Mat img = synthetic_normal(config.category, config.image_size, rng);
    const bool square = i % 2 == 0;
    const cv::Mat mask = square ? square_defect(img, rng) : perlin_defect(img, rng);
    const std::string defect = square ? "square" : "perlin";
    const std::string stem = numbered(i / 2);
    write_image(cat / "test" / defect / (stem + ".png"), img);
    write_mask_png(cat / "ground_truth" / defect / (stem + "_mask.png"), mask);
  }
}

}  // namespace anople
