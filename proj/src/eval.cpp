#include "anople/eval.hpp"

#include "anople/errors.hpp"
#include "anople/image_io.hpp"
#include "anople/model.hpp"
#include "anople/trainer.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace anople {

namespace {

// Sort-based AUROC with exact integer tie accounting:
//   sum over positives of (2 * #negatives below + #negatives tied) / (2 P N).
template <typename Score>
double auroc_impl(std::vector<std::pair<Score, int>>& items) {
  std::int64_t pos = 0, neg = 0;
  for (const auto& it : items) (it.second ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw MetricError("AUROC is undefined unless both classes are present");
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::int64_t twice = 0;
  std::int64_t neg_below = 0;
  for (std::size_t i = 0; i < items.size();) {
    std::size_t j = i;
    std::int64_t p_tie = 0, n_tie = 0;
    while (j < items.size() && items[j].first == items[i].first) {
      (items[j].second ? p_tie : n_tie) += 1;
      ++j;
    }
    twice += p_tie * (2 * neg_below + n_tie);
    neg_below += n_tie;
    i = j;
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

DatasetLayout layout_for(const std::string& name) {
  return name == "visa" ? DatasetLayout::visa : DatasetLayout::mvtec;
}

std::string safe_name(std::string id) {
  std::replace(id.begin(), id.end(), '/', '_');
  return id;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InputError("auroc: scores and labels differ in length");
  std::vector<std::pair<double, int>> items(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) throw MetricError("auroc: NaN score");
    items[i] = {scores[i], labels[i] != 0 ? 1 : 0};
  }
  return auroc_impl(items);
}

double pixel_auroc(std::span<const ad::Matrix> maps, std::span<const cv::Mat> masks) {
  if (maps.size() != masks.size()) throw InputError("pixel_auroc: map and mask counts differ");
  std::vector<std::pair<double, int>> items;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const auto& m = maps[i];
    const auto& k = masks[i];
    if (k.type() != CV_8U || k.rows != m.rows() || k.cols != m.cols()) {
      throw InputError("pixel_auroc: mask " + std::to_string(i) + " does not match its map");
    }
    for (int y = 0; y < k.rows; ++y) {
      const auto* row = k.ptr<std::uint8_t>(y);
      for (int x = 0; x < k.cols; ++x) items.emplace_back(m(y, x), row[x] ? 1 : 0);
    }
  }
  if (std::none_of(items.begin(), items.end(), [](const auto& p) { return p.second == 1; })) {
    throw MetricError("pixel AUROC is undefined: no defective pixels in the test set");
  }
  return auroc_impl(items);
}

std::uint64_t shot_seed(std::uint64_t seed, std::size_t index) { return splitmix64(seed ^ splitmix64(index)); }

std::shared_ptr<const Backbone> make_backbone(const RunConfig& config) {
  const BackboneConfig bc = config.backbone_config();
  if (config.backbone.kind == "tiny") return make_tiny_backbone(bc, config.backbone.seed);
  return load_backbone(config.backbone.weights, config.backbone.vocab, bc);
}

EvalRun run_episode(const RunConfig& config, std::uint64_t seed, std::shared_ptr<const Backbone> backbone,
                    const EpisodeOptions& options) {
  config.validate();
  auto log = [&options](const std::string& msg) {
    if (options.log) options.log(msg);
  };
  if (config.dataset_root.empty()) throw ConfigError("dataset.root: no dataset root configured");
  const std::vector<CategorySplit> splits =
      discover_dataset(config.dataset_root, layout_for(config.dataset), config.categories);
  const TextureSource textures =
      config.texture_dir.empty() ? TextureSource::self_augmented() : TextureSource::from_directory(config.texture_dir);
  const ModelConfig mc = config.model_config();
  const TrainConfig tc = config.train_config(seed);

  EvalRun run;
  run.shots = config.shots;
  run.seed = seed;

  std::vector<std::vector<cv::Mat>> shots(splits.size());
  std::vector<std::string> names;
  for (std::size_t ci = 0; ci < splits.size(); ++ci) {
    const auto& split = splits[ci];
    names.push_back(split.name);
    const auto idx = sample_shots(split.train.size(), static_cast<std::size_t>(config.shots), shot_seed(seed, ci));
    for (std::size_t i : idx) shots[ci].push_back(read_rgb(split.train[i].image));
  }
  run.categories = names;

  std::unique_ptr<AnoPLeModel> shared;
  if (!config.per_class) {
    shared = std::make_unique<AnoPLeModel>(backbone, mc, names, seed);
    std::vector<cv::Mat> all;
    for (const auto& s : shots) all.insert(all.end(), s.begin(), s.end());
    log("training shared prompts on " + std::to_string(all.size()) + " shots");
    train(*shared, all, textures, tc);
    if (options.on_trained) options.on_trained("all", *shared);
  }

  for (std::size_t ci = 0; ci < splits.size(); ++ci) {
    const auto& split = splits[ci];
    std::unique_ptr<AnoPLeModel> own;
    AnoPLeModel* model = shared.get();
    if (config.per_class) {
      own = std::make_unique<AnoPLeModel>(backbone, mc, std::vector<std::string>{split.name}, seed);
      log("training " + split.name);
      train(*own, shots[ci], textures, tc);
      if (options.on_trained) options.on_trained(split.name, *own);
      model = own.get();
    }
    if (mc.use_memory) model->build_memory(shots[ci]);
    const TextFeatures text = model->text_features();

    std::vector<double> scores;
    std::vector<int> labels;
    std::vector<ad::Matrix> maps;
    std::vector<cv::Mat> masks;
    for (const auto& rec : split.test) {
      const cv::Mat image = read_rgb(rec.image);
      const ScoreReport report = model->predict(image, rec.id, text);
      scores.push_back(report.score);
      labels.push_back(rec.label);
      const int side = static_cast<int>(report.map.values.rows());
      masks.push_back(load_mask(rec, cv::Size(side, side)));
      maps.push_back(report.map.values);
      run.scores.push_back({rec.id, rec.label, report.score});
      if (!options.heatmap_dir.empty()) {
        const cv::Mat heat(side, side, CV_64F, const_cast<double*>(report.map.values.data()));
        cv::Mat full;
        cv::resize(heat, full, image.size(), 0, 0, cv::INTER_LINEAR);
        write_heatmap_png(options.heatmap_dir / (safe_name(rec.id) + ".png"), full);
      }
    }
    ClassResult cr;
    cr.category = split.name;
    cr.test_images = split.test.size();
    cr.image_auroc = auroc(scores, labels);
    const bool any_defect = std::any_of(masks.begin(), masks.end(), [](const cv::Mat& m) { return cv::countNonZero(m) > 0; });
    if (any_defect) {
      cr.pixel_auroc = pixel_auroc(maps, masks);
      cr.has_pixel = true;
    }
    log(split.name + ": image AUROC " + std::to_string(cr.image_auroc) +
        (cr.has_pixel ? ", pixel AUROC " + std::to_string(cr.pixel_auroc) : ""));
    run.per_class.push_back(cr);
  }

  double img = 0.0, pix = 0.0;
  int pix_n = 0;
  for (const auto& c : run.per_class) {
    img += c.image_auroc;
    if (c.has_pixel) {
      pix += c.pixel_auroc;
      ++pix_n;
    }
  }
  run.image_auroc = img / static_cast<double>(run.per_class.size());
  run.pixel_auroc = pix_n ? pix / pix_n : 0.0;
  return run;
}

namespace {

MetricSummary mean_std(const std::vector<double>& v) {
  MetricSummary s;
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(acc / static_cast<double>(v.size()));
  return s;
}

}  // namespace

EvalSummary summarize(std::span<const EvalRun> runs) {
  EvalSummary out;
  std::vector<double> img, pix;
  for (const auto& r : runs) {
    out.seeds.push_back(r.seed);
    img.push_back(r.image_auroc);
    pix.push_back(r.pixel_auroc);
  }
  out.image_auroc = mean_std(img);
  out.pixel_auroc = mean_std(pix);
  if (!runs.empty()) {
    for (std::size_t c = 0; c < runs.front().per_class.size(); ++c) {
      ClassResult mean = runs.front().per_class[c];
      mean.image_auroc = 0.0;
      mean.pixel_auroc = 0.0;
      for (const auto& r : runs) {
        mean.image_auroc += r.per_class.at(c).image_auroc / static_cast<double>(runs.size());
        mean.pixel_auroc += r.per_class.at(c).pixel_auroc / static_cast<double>(runs.size());
      }
      out.per_class.push_back(mean);
    }
  }
  return out;
}

void write_scores_csv(const std::filesystem::path& path, std::span<const ScoreRow> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path.string());
  out.precision(10);
  out << "image_id,label,score\n";
  for (const auto& r : rows) out << r.image_id << ',' << r.label << ',' << r.score << '\n';
}

void write_results_csv(const std::filesystem::path& path, std::span<const EvalRun> runs) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path.string());
  out.precision(6);
  out << "seed,shots,category,image_auroc,pixel_auroc,test_images\n";
  for (const auto& r : runs) {
    for (const auto& c : r.per_class) {
      out << r.seed << ',' << r.shots << ',' << c.category << ',' << c.image_auroc << ',';
      if (c.has_pixel) out << c.pixel_auroc;
      out << ',' << c.test_images << '\n';
    }
  }
}

nlohmann::json results_json(std::span<const EvalRun> runs, const EvalSummary& summary) {
  nlohmann::json j;
  j["seeds"] = summary.seeds;
  j["image_auroc"] = {{"mean", summary.image_auroc.mean}, {"std", summary.image_auroc.std}};
  j["pixel_auroc"] = {{"mean", summary.pixel_auroc.mean}, {"std", summary.pixel_auroc.std}};
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : summary.per_class) {
    classes.push_back({{"category", c.category}, {"image_auroc", c.image_auroc}, {"pixel_auroc", c.pixel_auroc}});
  }
  j["per_class"] = classes;
  nlohmann::json episodes = nlohmann::json::array();
  for (const auto& r : runs) {
    episodes.push_back({{"seed", r.seed},
                        {"shots", r.shots},
                        {"image_auroc", r.image_auroc},
                        {"pixel_auroc", r.pixel_auroc}});
  }
  j["episodes"] = episodes;
  return j;
}

}  // namespace anople
