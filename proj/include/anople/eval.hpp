#pragma once

#include "anople/backbone.hpp"
#include "anople/config.hpp"
#include "anople/model.hpp"
#include "anople/scoring.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace anople {

// Probability that a random positive outranks a random negative, ties
// counting one half. Throws MetricError unless both classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);

// AUROC over every pixel of every map, pooled. maps[i] and masks[i] must share
// a shape; masks are CV_8U {0, 1}.
double pixel_auroc(std::span<const ad::Matrix> maps, std::span<const cv::Mat> masks);

struct ClassResult {
  std::string category;
  double image_auroc = 0.0;
  double pixel_auroc = 0.0;
  bool has_pixel = false;
  std::size_t test_images = 0;
};

struct ScoreRow {
  std::string image_id;
  int label = 0;
  double score = 0.0;
};

struct EvalRun {
  int shots = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> categories;
  std::vector<ClassResult> per_class;
  double image_auroc = 0.0;  // mean over classes
  double pixel_auroc = 0.0;
  std::vector<ScoreRow> scores;
};

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // population std over seeds
};

struct EvalSummary {
  std::vector<std::uint64_t> seeds;
  MetricSummary image_auroc;
  MetricSummary pixel_auroc;
  std::vector<ClassResult> per_class;  // per-class means over seeds
};

struct EpisodeOptions {
  // Called with (category, seed) after training; may write checkpoints.
  std::function<void(const std::string&, const AnoPLeModel&)> on_trained;
  std::function<void(const std::string&)> log;
  // When set, every test map is written as a 16-bit PNG below this directory.
  std::filesystem::path heatmap_dir;
};

// Samples k shots per category with `seed`, trains (shared prompts across
// categories, or one model per category in per-class mode), builds each
// category's memory bank and scores its test split.
EvalRun run_episode(const RunConfig& config, std::uint64_t seed, std::shared_ptr<const Backbone> backbone,
                    const EpisodeOptions& options = {});

// Seed for drawing category `index`'s shots in an episode with `seed`.
std::uint64_t shot_seed(std::uint64_t seed, std::size_t index);

EvalSummary summarize(std::span<const EvalRun> runs);

void write_scores_csv(const std::filesystem::path& path, std::span<const ScoreRow> rows);
void write_results_csv(const std::filesystem::path& path, std::span<const EvalRun> runs);
nlohmann::json results_json(std::span<const EvalRun> runs, const EvalSummary& summary);

// Backbone named by the config: the tiny random encoder or loaded weights.
std::shared_ptr<const Backbone> make_backbone(const RunConfig& config);

}  // namespace anople
