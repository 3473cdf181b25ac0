#pragma once

#include "anople/model.hpp"

#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace anople {

struct TrainConfig {
  int epochs = 60;
  int repeats = 1;  // passes over the shots per epoch, each with fresh anomalies
  double lr_prompt = 1e-3;
  double lr_decoder = 2e-4;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  double warmup_epochs = 1.0;  // linear ramp from zero
  std::uint64_t seed = 0;

  void validate() const;
};

// SGD with momentum and coupled L2 weight decay, PyTorch semantics:
//   g = grad + wd * p;  buf = momentum * buf + g;  p -= lr * buf
class Sgd {
 public:
  struct Group {
    std::vector<NamedParameter> params;
    double lr;
  };

  Sgd(std::vector<Group> groups, double momentum, double weight_decay);

  void zero_grad();
  // `lr_factor` multiplies every group's base rate (warmup schedule).
  void step(double lr_factor = 1.0);

 private:
  std::vector<Group> groups_;
  std::vector<std::vector<ad::Matrix>> buffers_;
  double momentum_;
  double weight_decay_;
  bool started_ = false;
};

// lr multiplier at a fractional epoch position.
double warmup_factor(double epoch_position, double warmup_epochs);

struct StepRecord {
  int epoch = 0;
  int step = 0;
  double lr_factor = 0.0;
  LossBreakdown loss;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<double> epoch_mean_loss;
};

using StepCallback = std::function<void(const StepRecord&)>;

// Optimizes prompts and decoder on simulated anomalies built from `shots`
// (raw RGB images). Zero epochs leave the model untouched.
TrainHistory train(AnoPLeModel& model, std::span<const cv::Mat> shots, const TextureSource& textures,
                   const TrainConfig& config, const StepCallback& on_step = {});

// One JSON object per line.
void append_metrics_line(const std::filesystem::path& path, const StepRecord& record);

}  // namespace anople
