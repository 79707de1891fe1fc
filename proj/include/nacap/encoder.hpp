#pragma once

// Image encoder: linear projection of region features to d_model.

#include "nacap/dataset.hpp"
#include "nacap/graph.hpp"

namespace nacap {

/// Projected regions [k x d_model] and their row mean [1 x d_model].
struct EncodedImage {
  Var proj;
  Var pooled;
};

inline EncodedImage encode(ModelGraph& g, const Tensor& regions) {
  const auto& c = g.config();
  if (regions.cols() != c.d_in) {
    throw DimensionError("encode: region width " + std::to_string(regions.cols()) + " does not match d_in " +
                         std::to_string(c.d_in));
  }
  Var x = g.tape().constant(regions);
  const auto& layers = g.layout().encoder;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = g.linear(x, layers[i]);
    if (i + 1 < layers.size()) x = relu(x);
  }
  return EncodedImage{x, mean_rows(x)};
}

/// Value-level result for callers outside a tape.
struct EncodedImageValues {
  Tensor proj;
  Tensor pooled;
};

inline EncodedImageValues encode(const ModelParams& params, const RegionFeatureSet& regions) {
  Tape tape(false);
  ModelGraph g(tape, params);
  auto e = encode(g, regions.features);
  return {e.proj.value(), e.pooled.value()};
}

}  // namespace nacap
