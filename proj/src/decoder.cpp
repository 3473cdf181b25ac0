#include "anople/decoder.hpp"

#include "anople/errors.hpp"

#include <cmath>

namespace anople {

using ad::Matrix;
using ad::Var;

void DecoderConfig::validate() const {
  if (in_dim <= 0 || hidden_dim <= 0 || out_dim <= 0) throw ConfigError("decoder widths must be positive");
  if (grid <= 0 || out_size <= 0) throw ConfigError("decoder grid and output size must be positive");
}

namespace {

// PyTorch Conv2d default init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Var uniform_param(Eigen::Index r, Eigen::Index c, Eigen::Index fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return ad::parameter(std::move(m));
}

}  // namespace

Decoder::Decoder(const DecoderConfig& config, std::mt19937_64& rng)
    : config_(config),
      upsample_(ad::Resampler::bilinear(config.grid, config.grid, config.out_size, config.out_size)) {
  config_.validate();
  const int fan1 = 9 * config_.in_dim;
  w1_ = uniform_param(config_.hidden_dim, fan1, fan1, rng);
  b1_ = uniform_param(1, config_.hidden_dim, fan1, rng);
  w2_ = uniform_param(config_.hidden_dim, config_.hidden_dim, config_.hidden_dim, rng);
  b2_ = uniform_param(1, config_.hidden_dim, config_.hidden_dim, rng);
  w3_ = uniform_param(config_.out_dim, config_.hidden_dim, config_.hidden_dim, rng);
  b3_ = uniform_param(1, config_.out_dim, config_.hidden_dim, rng);
}

Var Decoder::decode(const Var& patches) const {
  const Eigen::Index n = static_cast<Eigen::Index>(config_.grid) * config_.grid;
  if (patches.rows() != n) {
    throw InputError("decoder: expected " + std::to_string(n) + " patch rows, got " + std::to_string(patches.rows()));
  }
  if (patches.cols() != config_.in_dim) throw InputError("decoder: patch width does not match in_dim");
  Var x = upsample_.is_identity() ? patches : ad::resample(patches, upsample_);
  x = ad::gelu(ad::linear(ad::im2col3x3(x, config_.out_size, config_.out_size), w1_, b1_));
  x = ad::gelu(ad::linear(x, w2_, b2_));
  x = ad::linear(x, w3_, b3_);
  return ad::l2_normalize_rows(x);
}

std::vector<NamedParameter> Decoder::parameters() const {
  return {{"decoder.conv1.weight", w1_}, {"decoder.conv1.bias", b1_}, {"decoder.conv2.weight", w2_},
          {"decoder.conv2.bias", b2_},   {"decoder.conv3.weight", w3_}, {"decoder.conv3.bias", b3_}};
}

void Decoder::save(TensorFile& file) const {
  for (const auto& p : parameters()) file.tensors[p.name] = TensorRecord::from_matrix(p.var.value());
}

void Decoder::load(const TensorFile& file) {
  for (auto& p : parameters()) {
    const auto& rec = file.at(p.name);
    if (rec.data.rows() != p.var.rows() || rec.data.cols() != p.var.cols()) {
      throw FormatError("checkpoint tensor '" + p.name + "' has the wrong shape");
    }
    // NamedParameter holds a handle sharing the node, so this writes through.
    p.var.mutable_value() = rec.data;
  }
}

PixelLogits pixel_logits(const Var& field, const Var& w_normal, const Var& w_abnormal, double scale) {
  const Var text_parts[] = {w_normal, w_abnormal};
  const Var cosine = ad::matmul_nt(field, ad::concat_rows(text_parts));
  const Var prob = ad::slice_cols(ad::softmax_rows(ad::scale(cosine, scale)), 1, 1);
  return {cosine, ad::slice_cols(cosine, 1, 1), prob};
}

}  // namespace anople
