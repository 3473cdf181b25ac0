#include "anople/config.hpp"
#include "anople/dataset.hpp"
#include "anople/errors.hpp"
#include "anople/eval.hpp"
#include "anople/image_io.hpp"
#include "anople/model.hpp"
#include "anople/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace anople;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kIngestion = 3, kMetric = 4 };

// Flags shared by train and eval; unset flags leave the config file's values.
struct Overrides {
  std::string config_path;
  std::string dataset_root;
  std::string dataset;
  std::vector<std::string> categories;
  std::optional<int> shots;
  std::vector<std::uint64_t> seeds;
  std::optional<int> epochs;
  std::string output_dir;
  std::string coupling;
  std::string view_signal;
  std::string alignment;
  bool per_class = false;
  bool no_memory = false;
  bool no_pixel_sim = false;
  bool no_latent_sim = false;
  std::string texture_dir;

  void attach(CLI::App& cmd) {
    cmd.add_option("-c,--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    cmd.add_option("--dataset-root", dataset_root, "dataset root (falls back to $ANOPLE_DATA_ROOT)");
    cmd.add_option("--dataset", dataset, "mvtec | visa | synthetic");
    cmd.add_option("--category", categories, "restrict to these categories");
    cmd.add_option("-k,--shots", shots, "normal reference shots per category");
    cmd.add_option("--seed", seeds, "episode seed(s)");
    cmd.add_option("--epochs", epochs, "training epochs");
    cmd.add_option("-o,--output", output_dir, "run directory");
    cmd.add_option("--coupling", coupling, "bidirectional | text_to_vision | vision_to_text | independent");
    cmd.add_option("--view-signal", view_signal, "learned | zero | off");
    cmd.add_option("--alignment", alignment, "weighted | mean | off");
    cmd.add_option("--texture-dir", texture_dir, "external anomaly textures");
    cmd.add_flag("--per-class", per_class, "one prompt stack per category");
    cmd.add_flag("--no-memory", no_memory, "prompt-only scoring");
    cmd.add_flag("--no-pixel-sim", no_pixel_sim, "disable pixel-space anomaly simulation");
    cmd.add_flag("--no-latent-sim", no_latent_sim, "disable latent-space anomaly simulation");
  }

  RunConfig resolve() const {
    RunConfig c = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (!dataset.empty()) {
      if (dataset == "visa" && config_path.empty()) c = RunConfig::visa_defaults();
      c.dataset = dataset;
    }
    if (!dataset_root.empty()) {
      c.dataset_root = dataset_root;
    } else if (c.dataset_root.empty()) {
      if (const char* env = std::getenv("ANOPLE_DATA_ROOT")) c.dataset_root = env;
    }
    if (!categories.empty()) c.categories = categories;
    if (shots) c.shots = *shots;
    if (!seeds.empty()) c.seeds = seeds;
    if (epochs) c.epochs = *epochs;
    if (!output_dir.empty()) c.output_dir = output_dir;
    if (!coupling.empty()) c.coupling = coupling;
    if (!view_signal.empty()) c.view_signal = view_signal;
    if (!alignment.empty()) c.alignment = alignment;
    if (!texture_dir.empty()) c.texture_dir = texture_dir;
    if (per_class) c.per_class = true;
    if (no_memory) c.use_memory = false;
    if (no_pixel_sim) c.pixel_simulation = false;
    if (no_latent_sim) c.latent_simulation = false;
    c.validate();
    return c;
  }
};

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json manifest(const std::string& command, const RunConfig& config, const Backbone& backbone) {
  return json{{"command", command},
              {"config", to_json(config)},
              {"config_hash", hex64(config_hash(config))},
              {"seeds", config.seeds},
              {"git_revision", git_revision()},
              {"backbone_checksum", hex64(backbone.weights_checksum())}};
}

std::string checkpoint_name(const std::string& category) {
  return category == "all" ? "checkpoint.safetensors" : "checkpoint_" + category + ".safetensors";
}

int cmd_train(const RunConfig& config) {
  const auto backbone = make_backbone(config);
  fs::create_directories(config.output_dir);
  const std::uint64_t seed = config.seeds.front();
  const auto splits = discover_dataset(config.dataset_root,
                                       config.dataset == "visa" ? DatasetLayout::visa : DatasetLayout::mvtec,
                                       config.categories);
  const TextureSource textures =
      config.texture_dir.empty() ? TextureSource::self_augmented() : TextureSource::from_directory(config.texture_dir);
  const fs::path metrics = config.output_dir / "metrics.jsonl";
  std::ofstream{metrics, std::ios::trunc};

  std::vector<std::string> names;
  std::vector<std::vector<cv::Mat>> shots;
  json shot_list = json::object();
  for (std::size_t ci = 0; ci < splits.size(); ++ci) {
    names.push_back(splits[ci].name);
    shots.emplace_back();
    const auto idx =
        sample_shots(splits[ci].train.size(), static_cast<std::size_t>(config.shots), shot_seed(seed, ci));
    for (std::size_t i : idx) {
      shots.back().push_back(read_rgb(splits[ci].train[i].image));
      shot_list[splits[ci].name].push_back(splits[ci].train[i].image.string());
    }
  }

  auto log_step = [&metrics](const StepRecord& r) { append_metrics_line(metrics, r); };
  auto finish = [&](AnoPLeModel& model, const std::string& tag, std::span<const std::size_t> cats) {
    model.save(config.output_dir / checkpoint_name(tag));
    if (!config.use_memory) return;
    for (std::size_t ci : cats) {
      model.build_memory(shots[ci]);
      model.memory()->save(config.output_dir / ("memory_" + names[ci] + ".safetensors"));
    }
  };

  const ModelConfig mc = config.model_config();
  const TrainConfig tc = config.train_config(seed);
  if (config.per_class) {
    for (std::size_t ci = 0; ci < splits.size(); ++ci) {
      AnoPLeModel model(backbone, mc, {names[ci]}, seed);
      std::cerr << "training " << names[ci] << "\n";
      train(model, shots[ci], textures, tc, log_step);
      const std::size_t only[] = {ci};
      finish(model, names[ci], only);
    }
  } else {
    AnoPLeModel model(backbone, mc, names, seed);
    std::vector<cv::Mat> all;
    for (const auto& s : shots) all.insert(all.end(), s.begin(), s.end());
    const auto history = train(model, all, textures, tc, log_step);
    if (!history.epoch_mean_loss.empty()) {
      std::cerr << "final epoch loss " << history.epoch_mean_loss.back() << "\n";
    }
    std::vector<std::size_t> cats(splits.size());
    for (std::size_t i = 0; i < cats.size(); ++i) cats[i] = i;
    finish(model, "all", cats);
  }

  json m = manifest("train", config, *backbone);
  m["seed"] = seed;
  m["shots"] = shot_list;
  write_json(config.output_dir / "manifest.json", m);
  write_json(config.output_dir / "config.json", to_json(config));
  std::cout << (config.output_dir / checkpoint_name(config.per_class ? names.front() : "all")).string() << "\n";
  return kOk;
}

int cmd_eval(const RunConfig& config, bool heatmaps) {
  const auto backbone = make_backbone(config);
  fs::create_directories(config.output_dir);
  std::vector<EvalRun> runs;
  for (std::uint64_t seed : config.seeds) {
    EpisodeOptions opts;
    opts.log = [seed](const std::string& msg) { std::cerr << "[seed " << seed << "] " << msg << "\n"; };
    if (heatmaps) opts.heatmap_dir = config.output_dir / ("heatmaps_seed" + std::to_string(seed));
    runs.push_back(run_episode(config, seed, backbone, opts));
    write_scores_csv(config.output_dir / ("scores_seed" + std::to_string(seed) + ".csv"), runs.back().scores);
  }
  const EvalSummary summary = summarize(runs);
  write_results_csv(config.output_dir / "results.csv", runs);
  write_json(config.output_dir / "results.json", results_json(runs, summary));
  write_json(config.output_dir / "manifest.json", manifest("eval", config, *backbone));
  std::cout << "image AUROC " << summary.image_auroc.mean << " +- " << summary.image_auroc.std << ", pixel AUROC "
            << summary.pixel_auroc.mean << " +- " << summary.pixel_auroc.std << "\n";
  return kOk;
}

int cmd_predict(const fs::path& run_dir, const std::string& category, const std::vector<std::string>& images,
                const fs::path& out_dir) {
  const RunConfig config = from_json([&] {
    std::ifstream in(run_dir / "config.json");
    if (!in) throw IngestionError("run directory lacks config.json: " + run_dir.string());
    json j;
    in >> j;
    return j;
  }());
  const auto backbone = make_backbone(config);
  const json man = [&] {
    std::ifstream in(run_dir / "manifest.json");
    if (!in) throw IngestionError("run directory lacks manifest.json: " + run_dir.string());
    json j;
    in >> j;
    return j;
  }();
  if (man.value("backbone_checksum", "") != hex64(backbone->weights_checksum())) {
    throw ConfigError("backbone weights differ from the ones this run was trained with");
  }
  std::vector<std::string> classes;
  for (const auto& [name, _] : man.at("shots").items()) classes.push_back(name);
  std::string cat = category;
  if (cat.empty()) {
    if (classes.size() != 1) throw ConfigError("--category is required for multi-category runs");
    cat = classes.front();
  }
  if (std::find(classes.begin(), classes.end(), cat) == classes.end()) {
    throw ConfigError("category '" + cat + "' was not part of this run");
  }

  const bool per_class = config.per_class;
  AnoPLeModel model(backbone, config.model_config(), per_class ? std::vector<std::string>{cat} : classes,
                    config.seeds.front());
  model.load(run_dir / checkpoint_name(per_class ? cat : "all"));
  const fs::path bank = run_dir / ("memory_" + cat + ".safetensors");
  if (config.use_memory) model.set_memory(MemoryBank::load(bank));

  const fs::path out = out_dir.empty() ? run_dir / "predictions" : out_dir;
  fs::create_directories(out / "heatmaps");
  const TextFeatures text = model.text_features();
  std::vector<ScoreRow> rows;
  std::ofstream csv(out / "scores.csv");
  csv.precision(10);
  csv << "image_id,score,image_probability,map_max\n";
  for (const auto& path : images) {
    cv::Mat image;
    try {
      image = read_rgb(path);
    } catch (const IngestionError& e) {
      std::cerr << "warning: skipping " << path << ": " << e.what() << "\n";
      continue;
    }
    const std::string id = fs::path(path).stem().string();
    const ScoreReport r = model.predict(image, id, text);
    csv << id << ',' << r.score << ',' << r.image_probability << ',' << r.map_max << '\n';
    const int side = static_cast<int>(r.map.values.rows());
    const cv::Mat heat(side, side, CV_64F, const_cast<double*>(r.map.values.data()));
    cv::Mat full;
    cv::resize(heat, full, image.size(), 0, 0, cv::INTER_LINEAR);
    write_heatmap_png(out / "heatmaps" / (id + ".png"), full);
  }
  std::cout << (out / "scores.csv").string() << "\n";
  return kOk;
}

int cmd_synth(const fs::path& out, const SyntheticDatasetConfig& cfg) {
  generate_synthetic_dataset(out, cfg);
  std::cout << (out / cfg.category).string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AnoPLe few-shot anomaly detection"};
  app.require_subcommand(1);

  Overrides train_o, eval_o;
  auto* train_cmd = app.add_subcommand("train", "train prompts and decoder, build memory banks");
  train_o.attach(*train_cmd);
  auto* eval_cmd = app.add_subcommand("eval", "run k-shot episodes and report AUROC");
  eval_o.attach(*eval_cmd);
  bool heatmaps = false;
  eval_cmd->add_flag("--heatmaps", heatmaps, "write every test map as a 16-bit PNG");

  auto* predict_cmd = app.add_subcommand("predict", "score images with a trained run");
  std::string run_dir, category, predict_out;
  std::vector<std::string> images;
  predict_cmd->add_option("-r,--run", run_dir, "run directory written by train")->required();
  predict_cmd->add_option("--category", category, "category whose memory bank to use");
  predict_cmd->add_option("-o,--output", predict_out, "output directory");
  predict_cmd->add_option("images", images, "image files")->required();

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic texture dataset");
  SyntheticDatasetConfig synth;
  std::string synth_out;
  synth_cmd->add_option("-o,--output", synth_out, "dataset root")->required();
  synth_cmd->add_option("--category", synth.category, "stripes | checker | dots | weave | texture | fabric");
  synth_cmd->add_option("--train", synth.train_count, "normal training images");
  synth_cmd->add_option("--test", synth.test_count, "test images");
  synth_cmd->add_option("--anomaly-fraction", synth.anomaly_fraction, "share of defective test images");
  synth_cmd->add_option("--size", synth.image_size, "image side in pixels");
  synth_cmd->add_option("--seed", synth.seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train_cmd) return cmd_train(train_o.resolve());
    if (*eval_cmd) return cmd_eval(eval_o.resolve(), heatmaps);
    if (*predict_cmd) return cmd_predict(run_dir, category, images, predict_out);
    if (*synth_cmd) return cmd_synth(synth_out, synth);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfig;
  } catch (const IngestionError& e) {
    std::cerr << "ingestion error: " << e.what() << "\n";
    return kIngestion;
  } catch (const MetricError& e) {
    std::cerr << "metric error: " << e.what() << "\n";
    return kMetric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOther;
}
