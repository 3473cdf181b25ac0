#include "anople/memory_bank.hpp"

#include "anople/adapter.hpp"
#include "anople/errors.hpp"
#include "anople/tensor_io.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

namespace anople {

using ad::Matrix;

MemoryBank::MemoryBank(Matrix rows, std::vector<int> layers, int shots, int grid)
    : rows_(std::move(rows)), layers_(std::move(layers)), shots_(shots), grid_(grid) {}

Matrix MemoryBank::query(const Matrix& features) const {
  if (empty()) throw StateError("memory bank is empty");
  if (features.cols() != rows_.cols()) throw InputError("memory query width differs from the bank");
  constexpr Eigen::Index kBlock = 4096;
  Eigen::VectorXd best = Eigen::VectorXd::Constant(features.rows(), -std::numeric_limits<double>::infinity());
  for (Eigen::Index start = 0; start < rows_.rows(); start += kBlock) {
    const Eigen::Index count = std::min(kBlock, rows_.rows() - start);
    const Matrix sims = features * rows_.middleRows(start, count).transpose();
    best = best.cwiseMax(sims.rowwise().maxCoeff());
  }
  Matrix out = ((1.0 - best.array()) * 0.5).cwiseMax(0.0).cwiseMin(1.0).matrix();
  return out;
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

}  // namespace

void MemoryBank::save(const std::filesystem::path& path) const {
  TensorFile file;
  file.tensors["memory.rows"] = TensorRecord::from_matrix(rows_);
  file.metadata["layers"] = join_ints(layers_);
  file.metadata["shots"] = std::to_string(shots_);
  file.metadata["grid"] = std::to_string(grid_);
  write_tensor_file(path, file);
}

MemoryBank MemoryBank::load(const std::filesystem::path& path) {
  const TensorFile file = read_tensor_file(path);
  if (!file.contains("memory.rows")) throw FormatError("memory bank file lacks 'memory.rows': " + path.string());
  try {
    return MemoryBank(file.at("memory.rows").data, parse_ints(file.metadata.at("layers")),
                      std::stoi(file.metadata.at("shots")), std::stoi(file.metadata.at("grid")));
  } catch (const std::out_of_range&) {
    throw FormatError("memory bank metadata incomplete: " + path.string());
  } catch (const std::invalid_argument&) {
    throw FormatError("memory bank metadata malformed: " + path.string());
  }
}

MemoryBank build_memory_bank(const Backbone& backbone, std::span<const cv::Mat> shots, std::span<const int> layers,
                             const PromptStack* prompts) {
  if (shots.empty()) throw ConfigError("memory bank needs at least one reference shot");
  std::vector<Matrix> parts;
  Eigen::Index total = 0;
  for (const cv::Mat& shot : shots) {
    parts.push_back(extract_intermediate_patches(backbone, shot, layers, prompts));
    total += parts.back().rows();
  }
  Matrix rows(total, parts.front().cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    rows.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return MemoryBank(std::move(rows), std::vector<int>(layers.begin(), layers.end()), static_cast<int>(shots.size()),
                    backbone.config().grid());
}

}  // namespace anople
