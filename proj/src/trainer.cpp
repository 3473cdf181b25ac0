#include "anople/trainer.hpp"

#include "anople/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>

namespace anople {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (repeats < 1) throw ConfigError("repeats must be at least 1");
  if (!(lr_prompt >= 0) || !(lr_decoder >= 0)) throw ConfigError("learning rates must be non-negative");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("weight decay must be non-negative");
  if (!(warmup_epochs >= 0)) throw ConfigError("warmup_epochs must be non-negative");
}

Sgd::Sgd(std::vector<Group> groups, double momentum, double weight_decay)
    : groups_(std::move(groups)), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& g : groups_) {
    std::vector<ad::Matrix> bufs;
    for (const auto& p : g.params) bufs.push_back(ad::Matrix::Zero(p.var.rows(), p.var.cols()));
    buffers_.push_back(std::move(bufs));
  }
}

void Sgd::zero_grad() {
  for (auto& g : groups_)
    for (auto& p : g.params) p.var.zero_grad();
}

void Sgd::step(double lr_factor) {
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    auto& group = groups_[gi];
    const double lr = group.lr * lr_factor;
    for (std::size_t pi = 0; pi < group.params.size(); ++pi) {
      ad::Var& var = group.params[pi].var;
      ad::Matrix grad = var.grad().size() ? var.grad() : ad::Matrix::Zero(var.rows(), var.cols());
      if (weight_decay_ != 0.0) grad += weight_decay_ * var.value();
      ad::Matrix& buf = buffers_[gi][pi];
      if (momentum_ != 0.0) {
        buf = started_ ? (momentum_ * buf + grad).eval() : grad;
        grad = buf;
      }
      var.mutable_value() -= lr * grad;
    }
  }
  started_ = true;
}

double warmup_factor(double epoch_position, double warmup_epochs) {
  if (warmup_epochs <= 0.0) return 1.0;
  return std::min(1.0, epoch_position / warmup_epochs);
}

TrainHistory train(AnoPLeModel& model, std::span<const cv::Mat> shots, const TextureSource& textures,
                   const TrainConfig& config, const StepCallback& on_step) {
  config.validate();
  if (shots.empty()) throw ConfigError("training needs at least one normal shot");
  TrainHistory history;
  if (config.epochs == 0) return history;

  Sgd optimizer({{model.prompt_parameters(), config.lr_prompt}, {model.decoder_parameters(), config.lr_decoder}},
                config.momentum, config.weight_decay);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(shots.size());
  std::iota(order.begin(), order.end(), 0);
  const int steps_per_epoch = static_cast<int>(shots.size()) * config.repeats;

  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_sum = 0.0;
    for (int r = 0; r < config.repeats; ++r) {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t idx : order) {
        const int within = step - epoch * steps_per_epoch;
        // Rate for step s ramps as (s + 1) / steps_in_warmup, so the very first
        // update is small but nonzero.
        const double factor =
            warmup_factor(epoch + static_cast<double>(within + 1) / steps_per_epoch, config.warmup_epochs);
        optimizer.zero_grad();
        const LossResult loss = model.training_loss(shots[idx], rng(), textures);
        ad::backward(loss.total);
        optimizer.step(factor);

        StepRecord rec{epoch, step, factor, loss.breakdown};
        history.steps.push_back(rec);
        epoch_sum += loss.breakdown.total;
        if (on_step) on_step(rec);
        ++step;
      }
    }
    history.epoch_mean_loss.push_back(epoch_sum / steps_per_epoch);
  }
  return history;
}

void append_metrics_line(const std::filesystem::path& path, const StepRecord& record) {
  nlohmann::json line{{"epoch", record.epoch},          {"step", record.step},
                      {"lr_factor", record.lr_factor},  {"l_pixel", record.loss.pixel},
                      {"l_img", record.loss.image},     {"l_align", record.loss.align},
                      {"l_total", record.loss.total}};
  std::ofstream out(path, std::ios::app);
  if (!out) throw IngestionError("cannot append to metrics file " + path.string());
  out << line.dump() << '\n';
}

}  // namespace anople
