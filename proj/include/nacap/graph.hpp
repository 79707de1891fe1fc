#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "nacap/autodiff.hpp"
#include "nacap/params.hpp"

namespace nacap {

/// Binds a parameter set to one tape for the duration of a forward pass.
/// Parameters are bound lazily, at most once each.
class ModelGraph {
 public:
  ModelGraph(Tape& tape, const ModelParams& params, bool training = false, std::uint64_t dropout_seed = 0)
      : tape_(tape), params_(params), bound_(params.count()), training_(training), rng_(dropout_seed) {}

  Tape& tape() { return tape_; }
  const ModelParams& params() const { return params_; }
  const ModelConfig& config() const { return params_.config(); }
  const ParamLayout& layout() const { return params_.layout(); }
  bool training() const { return training_; }

  Var param(std::size_t id) {
    auto& slot = bound_[id];
    if (!slot) slot = tape_.parameter(params_.tensor(id), id);
    return *slot;
  }

  Var linear(Var x, const LinearIds& l) { return add_row(matmul(x, param(l.weight)), param(l.bias)); }

  /// Identity outside training.
  Var dropout(Var x) {
    if (!training_ || config().dropout <= 0.0) return x;
    return nacap::dropout(x, config().dropout, rng_);
  }

  /// Incremented by every fine-decoder pass.
  std::size_t decoder_passes = 0;

 private:
  Tape& tape_;
  const ModelParams& params_;
  std::vector<std::optional<Var>> bound_;
  bool training_;
  std::mt19937_64 rng_;
};

/// Index of the largest non-excluded value; ties go to the lowest index.
template <class Excluded>
std::size_t argmax_allowed(std::span<const double> values, Excluded&& excluded) {
  std::size_t best = values.size();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (excluded(i)) continue;
    if (best == values.size() || values[i] > values[best]) best = i;
  }
  if (best == values.size()) throw std::logic_error("argmax over an empty candidate set");
  return best;
}

}  // namespace nacap
