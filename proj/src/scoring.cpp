#include "anople/scoring.hpp"

#include "anople/errors.hpp"

#include <algorithm>

namespace anople {

const char* to_string(MapSource source) {
  switch (source) {
    case MapSource::decoder:
      return "decoder";
    case MapSource::memory:
      return "memory";
    case MapSource::fused:
      return "fused";
  }
  return "unknown";
}

double clamp_score(double x) { return std::clamp(x, kScoreEpsilon, 1.0); }

double harmonic(double a, double b) {
  a = clamp_score(a);
  b = clamp_score(b);
  return 1.0 / (1.0 / a + 1.0 / b);
}

AnomalyMap clamp_map(const ad::Matrix& values, MapSource source) {
  return {values.cwiseMax(kScoreEpsilon).cwiseMin(1.0), source};
}

AnomalyMap fuse_maps(const AnomalyMap& decoder, const AnomalyMap& memory) {
  if (decoder.values.rows() != memory.values.rows() || decoder.values.cols() != memory.values.cols()) {
    throw InputError("fuse_maps: map shapes differ");
  }
  AnomalyMap out{ad::Matrix(decoder.values.rows(), decoder.values.cols()), MapSource::fused};
  for (Eigen::Index i = 0; i < out.values.size(); ++i) {
    out.values.data()[i] = harmonic(decoder.values.data()[i], memory.values.data()[i]);
  }
  return out;
}

double image_score(double image_probability, const AnomalyMap& map) {
  if (map.values.size() == 0) throw InputError("image_score: empty anomaly map");
  return harmonic(image_probability, map.max());
}

}  // namespace anople
