#pragma once

#include "anople/autograd.hpp"

#include <optional>
#include <string>

namespace anople {

inline constexpr double kScoreEpsilon = 1e-6;

enum class MapSource { decoder, memory, fused };

const char* to_string(MapSource source);

struct AnomalyMap {
  ad::Matrix values;  // h x w, entries in [kScoreEpsilon, 1]
  MapSource source = MapSource::fused;

  double max() const { return values.maxCoeff(); }
};

struct ScoreReport {
  std::string image_id;
  double score = 0.0;
  double image_probability = 0.0;  // p-hat
  double map_max = 0.0;
  AnomalyMap map;
  std::optional<int> label;  // ground truth when known
};

// Clamp into [kScoreEpsilon, 1].
double clamp_score(double x);

// a * b / (a + b) after clamping both inputs.
double harmonic(double a, double b);

// Elementwise harmonic fusion of the decoder and memory maps (same shape).
AnomalyMap fuse_maps(const AnomalyMap& decoder, const AnomalyMap& memory);

// Decoder map alone, clamped, for prompt-only evaluation.
AnomalyMap clamp_map(const ad::Matrix& values, MapSource source);

// harmonic(p-hat, max(M)).
double image_score(double image_probability, const AnomalyMap& map);

}  // namespace anople
