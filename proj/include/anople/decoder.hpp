#pragma once

#include "anople/autograd.hpp"
#include "anople/tensor_io.hpp"

#include <random>
#include <vector>

namespace anople {

struct DecoderConfig {
  int in_dim = 896;     // d_v
  int hidden_dim = 640;
  int out_dim = 640;    // shared text space
  int grid = 15;        // patch grid side
  int out_size = 240;   // side of the dense output field

  void validate() const;
};

struct PixelLogits {
  ad::Var cosine;    // (h*w) x 2 : [<D, w+>, <D, w->]
  ad::Var abnormal;  // (h*w) x 1 : <D, w->, the map used for alignment
  ad::Var prob;      // (h*w) x 1 : abnormal probability of the two-way softmax
};

// Three-convolution head over upsampled patch tokens:
//   bilinear upsample -> conv3x3 -> GELU -> conv1x1 -> GELU -> conv1x1 -> L2 normalize
//
// Convolutions are stored as dense [out x fan_in] matrices; the 3x3 kernel's
// fan-in is laid out as nine channel blocks in (dy, dx) raster order.
class Decoder {
 public:
  Decoder(const DecoderConfig& config, std::mt19937_64& rng);

  const DecoderConfig& config() const { return config_; }

  // patches: (grid*grid) x in_dim -> (out_size*out_size) x out_dim, rows unit norm.
  ad::Var decode(const ad::Var& patches) const;

  std::vector<NamedParameter> parameters() const;
  void save(TensorFile& file) const;
  void load(const TensorFile& file);

 private:
  DecoderConfig config_;
  ad::Resampler upsample_;
  ad::Var w1_, b1_, w2_, b2_, w3_, b3_;
};

// Per-location cosine against both text features plus the two-way softmax at
// `scale` (the backbone's logit scale).
PixelLogits pixel_logits(const ad::Var& field, const ad::Var& w_normal, const ad::Var& w_abnormal, double scale);

}  // namespace anople
