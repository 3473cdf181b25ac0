#include "anople/model.hpp"

#include "anople/errors.hpp"
#include "anople/tensor_io.hpp"

#include <opencv2/imgproc.hpp>

#include <sstream>

namespace anople {

using ad::Matrix;
using ad::Var;

void ModelConfig::validate(const BackboneConfig& backbone) const {
  prompts.validate();
  views.validate();
  if (prompts.views != views.num_crops()) {
    throw ConfigError("prompt view count (" + std::to_string(prompts.views) + ") differs from the crop count (" +
                      std::to_string(views.num_crops()) + ")");
  }
  if (views.view_size != backbone.input_resolution) {
    throw ConfigError("view_size must equal the backbone input resolution (" +
                      std::to_string(backbone.input_resolution) + ")");
  }
  if (decoder_hidden < 0 || map_size < 0) throw ConfigError("decoder_hidden and map_size must be non-negative");
  if (!(align_temperature > 0)) throw ConfigError("alignment temperature must be positive");
  if (!(latent.stddev >= 0)) throw ConfigError("latent noise stddev must be non-negative");
  if (image_terms.latent_smoothing < 0 || image_terms.latent_smoothing > 1) {
    throw ConfigError("label smoothing must lie in [0, 1]");
  }
  if (use_memory) {
    if (memory_layers.empty()) throw ConfigError("memory layer list is empty");
    for (int l : memory_layers) {
      if (l < 1 || l > backbone.vision_layers) {
        throw ConfigError("memory layer " + std::to_string(l) + " outside [1, " +
                          std::to_string(backbone.vision_layers) + "]");
      }
    }
  }
}

namespace {

Matrix mask_column(const cv::Mat& mask, int size) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(size) * size, 1);
  if (mask.empty()) return out;
  cv::Mat m = mask;
  if (m.rows != size || m.cols != size) cv::resize(mask, m, cv::Size(size, size), 0, 0, cv::INTER_NEAREST);
  for (int y = 0; y < size; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < size; ++x) out(static_cast<Eigen::Index>(y) * size + x, 0) = row[x] ? 1.0 : 0.0;
  }
  return out;
}

Matrix as_square(const Matrix& column, int size) {
  Matrix out(size, size);
  for (Eigen::Index i = 0; i < column.rows(); ++i) out.data()[i] = column(i, 0);
  return out;
}

std::string join(const std::vector<std::string>& items, char sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? std::string(1, sep) : "") + items[i];
  return out;
}

}  // namespace

AnoPLeModel::AnoPLeModel(std::shared_ptr<const Backbone> backbone, ModelConfig config,
                         std::vector<std::string> class_names, std::uint64_t seed)
    : backbone_(std::move(backbone)), config_(std::move(config)), class_names_(std::move(class_names)) {
  if (!backbone_) throw InputError("AnoPLeModel: null backbone");
  const BackboneConfig& bc = backbone_->config();
  config_.validate(bc);
  text_inputs_ = build_text_inputs(class_names_, backbone_->tokenizer(), config_.state_word);
  std::mt19937_64 rng(seed);
  prompts_ = std::make_unique<PromptStack>(config_.prompts, bc, rng);
  DecoderConfig dc;
  dc.in_dim = bc.vision_width;
  dc.out_dim = bc.embed_dim;
  dc.hidden_dim = config_.decoder_hidden > 0 ? config_.decoder_hidden : bc.embed_dim;
  dc.grid = bc.grid();
  dc.out_size = config_.resolved_map_size();
  decoder_ = std::make_unique<Decoder>(dc, rng);
}

TextFeatures AnoPLeModel::text_features() const {
  ad::NoGradGuard no_grad;
  return encode_class_text(*backbone_, text_inputs_, prompts_.get());
}

LossResult AnoPLeModel::training_loss(const cv::Mat& image, std::uint64_t sample_seed,
                                      const TextureSource& textures) const {
  std::mt19937_64 rng(sample_seed);
  cv::Mat image_minus, mask;
  if (config_.image_terms.pixel_space || config_.pixel_losses) {
    SyntheticAnomaly anomaly = simulate_pixel_anomaly(image, textures, rng, config_.perlin);
    image_minus = std::move(anomaly.image_minus);
    mask = std::move(anomaly.mask);
  }
  const Matrix noise = sample_latent_noise(1, backbone_->config().embed_dim, rng, config_.latent);
  return training_loss(image, image_minus, mask, noise);
}

LossResult AnoPLeModel::training_loss(const cv::Mat& image, const cv::Mat& image_minus, const cv::Mat& mask,
                                      const Matrix& latent_noise) const {
  const double scale = backbone_->logit_scale();
  const int size = config_.resolved_map_size();
  const TextFeatures text = encode_class_text(*backbone_, text_inputs_, prompts_.get());

  std::vector<Var> dice_terms, focal_terms, align_terms;
  auto run_views = [&](const ViewBatch& batch) {
    Var whole_cls;
    for (const View& view : batch.views) {
      const VisionOutput enc = encode_image_with_prompts(*backbone_, view.image, prompts_.get(), view.view_index);
      const Var field = decoder_->decode(enc.patches);
      const PixelLogits logits = pixel_logits(field, text.normal, text.abnormal, scale);
      if (config_.pixel_losses) {
        const Matrix target = mask_column(view.mask, size);
        focal_terms.push_back(focal_loss(logits.prob, target, config_.focal));
        dice_terms.push_back(dice_loss(logits.prob, target, config_.dice_smoothing));
      }
      if (config_.alignment != AlignmentMode::off) {
        align_terms.push_back(
            alignment_loss(logits.abnormal, field, enc.cls, config_.align_temperature, config_.alignment));
      }
      if (view.view_index == config_.views.whole_view_index()) whole_cls = enc.cls;
    }
    return whole_cls;
  };

  const cv::Mat clean_mask = cv::Mat::zeros(image.size(), CV_8U);
  const Var z_plus = run_views(make_views(image, ViewMode::train, config_.views, clean_mask));
  Var z_minus = z_plus;
  if (!image_minus.empty()) z_minus = run_views(make_views(image_minus, ViewMode::train, config_.views, mask));

  if (latent_noise.rows() != 1 || latent_noise.cols() != z_plus.cols()) {
    throw InputError("latent noise must be 1 x embed_dim");
  }
  const Var z_latent = ad::l2_normalize_rows(ad::add(z_plus, ad::constant(latent_noise)));
  ImageLossTerms terms = config_.image_terms;
  if (image_minus.empty()) terms.pixel_space = false;
  const Var image_term = image_loss(z_plus, z_minus, z_latent, text.normal, text.abnormal, scale, terms);

  const Var zero = ad::constant(Matrix::Zero(1, 1));
  const Var dice_term = dice_terms.empty() ? zero : ad::average(dice_terms);
  const Var focal_term = focal_terms.empty() ? zero : ad::average(focal_terms);
  const Var pixel_term = ad::add(dice_term, focal_term);
  const Var align_term = align_terms.empty() ? zero : ad::average(align_terms);
  const Var total = ad::add(ad::add(pixel_term, image_term), align_term);

  LossResult out{total, dice_term, focal_term, image_term, align_term, {}};
  out.breakdown.pixel = pixel_term.item();
  out.breakdown.image = image_term.item();
  out.breakdown.align = align_term.item();
  out.breakdown.total = total.item();
  return out;
}

void AnoPLeModel::build_memory(std::span<const cv::Mat> shots) {
  std::vector<cv::Mat> views;
  views.reserve(shots.size());
  for (const cv::Mat& shot : shots) views.push_back(make_views(shot, ViewMode::test, config_.views).whole().image);
  memory_ = build_memory_bank(*backbone_, views, config_.memory_layers,
                              config_.prompted_memory ? prompts_.get() : nullptr);
}

ScoreReport AnoPLeModel::predict(const cv::Mat& image, const std::string& image_id) const {
  return predict(image, image_id, text_features());
}

ScoreReport AnoPLeModel::predict(const cv::Mat& image, const std::string& image_id, const TextFeatures& text) const {
  ad::NoGradGuard no_grad;
  const int size = config_.resolved_map_size();
  const bool fuse = config_.use_memory && memory_.has_value();
  const View whole = make_views(image, ViewMode::test, config_.views).whole();

  std::vector<int> taps;
  if (fuse) taps = memory_->layers();
  const VisionOutput enc =
      encode_image_with_prompts(*backbone_, whole.image, prompts_.get(), whole.view_index, taps);
  const Var field = decoder_->decode(enc.patches);
  const PixelLogits logits = pixel_logits(field, text.normal, text.abnormal, backbone_->logit_scale());
  const AnomalyMap decoder_map = clamp_map(as_square(logits.prob.value(), size), MapSource::decoder);

  ScoreReport report;
  report.image_id = image_id;
  report.image_probability =
      image_probability(enc.cls, text.normal, text.abnormal, backbone_->logit_scale()).value()(0, 1);

  if (fuse) {
    // Memory features from the same forward pass: layer mean, then unit rows.
    Matrix feats = Matrix::Zero(enc.taps.front().rows(), enc.taps.front().cols());
    for (const auto& t : enc.taps) feats += t.value();
    const Eigen::VectorXd norms = feats.rowwise().norm().cwiseMax(1e-12);
    feats = feats.array().colwise() / norms.array();
    const int grid = backbone_->config().grid();
    const auto up = ad::Resampler::bilinear(grid, grid, size, size);
    const Matrix mem = up.apply(memory_->query(feats));
    report.map = fuse_maps(decoder_map, clamp_map(as_square(mem, size), MapSource::memory));
  } else {
    report.map = decoder_map;
  }
  report.map_max = report.map.max();
  report.score = image_score(report.image_probability, report.map);
  return report;
}

void AnoPLeModel::save(const std::filesystem::path& path) const {
  TensorFile file;
  prompts_->save(file);
  decoder_->save(file);
  const auto& pc = config_.prompts;
  file.metadata["classes"] = join(class_names_, ',');
  file.metadata["text_ctx"] = std::to_string(pc.text_ctx);
  file.metadata["vision_ctx"] = std::to_string(pc.vision_ctx);
  file.metadata["depth"] = std::to_string(prompts_->depth());
  file.metadata["views"] = std::to_string(pc.views);
  file.metadata["text_width"] = std::to_string(prompts_->text_dim());
  file.metadata["vision_width"] = std::to_string(prompts_->vision_dim());
  file.metadata["map_size"] = std::to_string(config_.resolved_map_size());
  write_tensor_file(path, file);
}

void AnoPLeModel::load(const std::filesystem::path& path) {
  const TensorFile file = read_tensor_file(path);
  auto expect = [&file, &path](const std::string& key, const std::string& want) {
    const auto it = file.metadata.find(key);
    if (it != file.metadata.end() && it->second != want) {
      throw ConfigError("checkpoint " + path.string() + " has " + key + "=" + it->second + ", model expects " + want);
    }
  };
  expect("classes", join(class_names_, ','));
  expect("text_ctx", std::to_string(config_.prompts.text_ctx));
  expect("vision_ctx", std::to_string(config_.prompts.vision_ctx));
  expect("depth", std::to_string(prompts_->depth()));
  expect("views", std::to_string(config_.prompts.views));
  prompts_->load(file);
  decoder_->load(file);
}

}  // namespace anople
