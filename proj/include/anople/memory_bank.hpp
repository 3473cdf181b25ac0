#pragma once

#include "anople/autograd.hpp"
#include "anople/backbone.hpp"
#include "anople/prompt_stack.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace anople {

// Reference patch features of the k normal shots.
//
// Stored on disk in the tensor container as a single "memory.rows" tensor of
// shape [rows, d_v] (row-major doubles) with metadata keys "layers", "shots",
// "grid".
class MemoryBank {
 public:
  MemoryBank() = default;
  // `rows` must already be unit norm per row.
  MemoryBank(ad::Matrix rows, std::vector<int> layers, int shots, int grid);

  bool empty() const { return rows_.rows() == 0; }
  const ad::Matrix& rows() const { return rows_; }
  const std::vector<int>& layers() const { return layers_; }
  int shots() const { return shots_; }
  int grid() const { return grid_; }

  // Per location of F ((h*w) x d_v, unit rows): min_r (1 - <F_ij, r>) / 2,
  // computed blockwise through F * R^T. Returns (h*w) x 1.
  ad::Matrix query(const ad::Matrix& features) const;

  void save(const std::filesystem::path& path) const;
  static MemoryBank load(const std::filesystem::path& path);

 private:
  ad::Matrix rows_;
  std::vector<int> layers_;
  int shots_ = 0;
  int grid_ = 0;
};

// Runs the (optionally prompted) whole-view forward pass on every shot and
// stacks the layer-averaged, normalized patch features. `shots` are
// channel-normalized whole views.
MemoryBank build_memory_bank(const Backbone& backbone, std::span<const cv::Mat> shots, std::span<const int> layers,
                             const PromptStack* prompts);

}  // namespace anople
