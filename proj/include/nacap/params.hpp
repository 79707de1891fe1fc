#pragma once

// Named parameter tensors plus the index layout the model components use.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "nacap/config.hpp"
#include "nacap/tensor.hpp"

namespace nacap {

struct LinearIds {
  std::size_t weight = 0;
  std::size_t bias = 0;
};

struct NormIds {
  std::size_t gain = 0;
  std::size_t bias = 0;
};

struct AttentionIds {
  LinearIds query, key, value, output;
};

struct DecoderLayerIds {
  AttentionIds self_attn;
  NormIds self_norm;
  AttentionIds inter_attn;
  NormIds inter_norm;
  LinearIds ffn_in;
  LinearIds ffn_out;
  NormIds ffn_norm;
};

/// GRU gates follow z = sigmoid(x W_z + h U_z + b_z) and friends.
struct AlignerIds {
  std::size_t init = 0;
  std::size_t attn_query = 0;
  std::size_t attn_key = 0;
  std::size_t w_z = 0, u_z = 0, b_z = 0;
  std::size_t w_r = 0, u_r = 0, b_r = 0;
  std::size_t w_h = 0, u_h = 0, b_h = 0;
  LinearIds out;
};

struct ParamLayout {
  std::vector<LinearIds> encoder;
  std::size_t embedding = 0;
  std::optional<AlignerIds> aligner;
  std::vector<DecoderLayerIds> decoder;
  LinearIds decoder_out;
  std::optional<LinearIds> length_head;
};

enum class InitKind { xavier, zeros, ones, embedding };

namespace detail {

// Calls reg(name, shape, init) for every parameter of `c` in a fixed order.
inline ParamLayout make_layout(const ModelConfig& c,
                               const std::function<std::size_t(const std::string&, Shape, InitKind)>& reg) {
  const std::size_t d = c.d_model;
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    LinearIds l;
    l.weight = reg(name + ".weight", {in, out}, InitKind::xavier);
    l.bias = reg(name + ".bias", {out}, InitKind::zeros);
    return l;
  };
  auto norm = [&](const std::string& name) {
    NormIds n;
    n.gain = reg(name + ".gain", {d}, InitKind::ones);
    n.bias = reg(name + ".bias", {d}, InitKind::zeros);
    return n;
  };
  auto attention = [&](const std::string& name) {
    AttentionIds a;
    a.query = linear(name + ".query", d, d);
    a.key = linear(name + ".key", d, d);
    a.value = linear(name + ".value", d, d);
    a.output = linear(name + ".output", d, d);
    return a;
  };

  ParamLayout L;
  for (std::size_t i = 0; i < c.encoder_layers; ++i) {
    L.encoder.push_back(linear("encoder." + std::to_string(i), i == 0 ? c.d_in : d, d));
  }
  L.embedding = reg("embedding", {c.vocab_size, d}, InitKind::embedding);
  if (c.arch == Architecture::fnic) {
    AlignerIds a;
    a.init = reg("aligner.init", {d, d}, InitKind::xavier);
    a.attn_query = reg("aligner.attn.query", {d, d}, InitKind::xavier);
    a.attn_key = reg("aligner.attn.key", {d, d}, InitKind::xavier);
    a.w_z = reg("aligner.gru.w_z", {2 * d, d}, InitKind::xavier);
    a.u_z = reg("aligner.gru.u_z", {d, d}, InitKind::xavier);
    a.b_z = reg("aligner.gru.b_z", {d}, InitKind::zeros);
    a.w_r = reg("aligner.gru.w_r", {2 * d, d}, InitKind::xavier);
    a.u_r = reg("aligner.gru.u_r", {d, d}, InitKind::xavier);
    a.b_r = reg("aligner.gru.b_r", {d}, InitKind::zeros);
    a.w_h = reg("aligner.gru.w_h", {2 * d, d}, InitKind::xavier);
    a.u_h = reg("aligner.gru.u_h", {d, d}, InitKind::xavier);
    a.b_h = reg("aligner.gru.b_h", {d}, InitKind::zeros);
    a.out = linear("aligner.out", d, c.vocab_size);
    L.aligner = a;
  }
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "decoder." + std::to_string(l);
    DecoderLayerIds dl;
    dl.self_attn = attention(p + ".self");
    dl.self_norm = norm(p + ".self_norm");
    dl.inter_attn = attention(p + ".inter");
    dl.inter_norm = norm(p + ".inter_norm");
    dl.ffn_in = linear(p + ".ffn.in", d, c.d_hidden);
    dl.ffn_out = linear(p + ".ffn.out", c.d_hidden, d);
    dl.ffn_norm = norm(p + ".ffn_norm");
    L.decoder.push_back(dl);
  }
  L.decoder_out = linear("decoder.out", d, c.vocab_size);
  if (c.arch != Architecture::at) L.length_head = linear("length", d, c.n_max);
  return L;
}

}  // namespace detail

class ModelParams {
 public:
  ModelParams() = default;

  /// Fresh parameters: Xavier-uniform weights, zero biases, unit norm gains,
  /// N(0, 1) embeddings. Deterministic in (config, seed).
  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParams p;
    p.config_ = config;
    std::mt19937_64 rng(seed);
    p.layout_ = detail::make_layout(config, [&](const std::string& name, Shape shape, InitKind kind) {
      Tensor t = Tensor::zeros(shape);
      switch (kind) {
        case InitKind::zeros: break;
        case InitKind::ones: std::fill(t.values.begin(), t.values.end(), 1.0); break;
        case InitKind::xavier: {
          const double a = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
          std::uniform_real_distribution<double> u(-a, a);
          for (double& x : t.values) x = u(rng);
          break;
        }
        case InitKind::embedding: {
          std::normal_distribution<double> n(0.0, 1.0);
          for (double& x : t.values) x = n(rng);
          break;
        }
      }
      return p.add(name, std::move(t));
    });
    return p;
  }

  /// Rebuilds a parameter set from named tensors; every expected name must be
  /// present with the expected shape, and nothing else.
  static ModelParams from_named(const ModelConfig& config, std::vector<std::pair<std::string, Tensor>> named) {
    config.validate();
    std::unordered_map<std::string, Tensor> by_name;
    for (auto& [n, t] : named) {
      if (!by_name.emplace(n, std::move(t)).second) throw std::runtime_error("duplicate parameter '" + n + "'");
    }
    ModelParams p;
    p.config_ = config;
    p.layout_ = detail::make_layout(config, [&](const std::string& name, Shape shape, InitKind) {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw std::runtime_error("missing parameter '" + name + "'");
      if (it->second.shape != shape) {
        throw DimensionError("parameter '" + name + "' has shape " + to_string(it->second.shape) + ", expected " +
                             to_string(shape));
      }
      std::size_t id = p.add(name, std::move(it->second));
      by_name.erase(it);
      return id;
    });
    if (!by_name.empty()) throw std::runtime_error("unexpected parameter '" + by_name.begin()->first + "'");
    return p;
  }

  const ModelConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }

  std::size_t count() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Tensor& tensor(std::size_t i) const { return tensors_[i]; }
  Tensor& tensor(std::size_t i) { return tensors_[i]; }

  std::size_t index(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    throw std::out_of_range("no parameter named '" + name + "'");
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  bool operator==(const ModelParams& o) const {
    return config_ == o.config_ && names_ == o.names_ && tensors_ == o.tensors_;
  }

 private:
  std::size_t add(const std::string& name, Tensor t) {
    names_.push_back(name);
    tensors_.push_back(std::move(t));
    return tensors_.size() - 1;
  }

  ModelConfig config_;
  ParamLayout layout_;
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

}  // namespace nacap
