#pragma once

// Fine decoder: N post-norm Transformer decoder layers (self-attention,
// inter-attention over the regions, position-wise FFN) and a vocabulary
// projection. Without a causal mask every position sees every other one, so
// all n positions are predicted in a single pass.

#include <cmath>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

#include "nacap/encoder.hpp"

namespace nacap {

/// Sinusoidal encodings [n x d].
inline Tensor positional_encoding(std::size_t n, std::size_t d) {
  Tensor pe = Tensor::zeros({n, d});
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t j = 0; j < d; ++j) {
      const double rate = std::pow(10000.0, static_cast<double>(2 * (j / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) / rate;
      pe(pos, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

/// Source row for each of n target positions: floor(i * m / n).
inline std::vector<std::size_t> upsample_indices(std::size_t m, std::size_t n) {
  if (m < 1 || n < 1) throw std::invalid_argument("upsample_indices: m and n must be >= 1");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = (i * m) / n;
  return idx;
}

/// First n rows of the encoding table for width d, cached per thread.
inline Tensor positional_rows(std::size_t n, std::size_t d) {
  thread_local std::map<std::size_t, Tensor> cache;
  Tensor& table = cache[d];
  if (table.rows() < n || table.cols() != d) table = positional_encoding(std::max<std::size_t>(n, 64), d);
  return Tensor({n, d}, std::vector<double>(table.values.begin(), table.values.begin() + n * d));
}

inline Var add_positions(ModelGraph& g, Var rows) {
  return add(rows, g.tape().constant(positional_rows(rows.rows(), rows.cols())));
}

/// Y[i] = Emb(coarse[floor(i m / n)]) + PE(i). An empty coarse sequence is
/// replaced by a single UNK.
inline Var build_input_deterministic(ModelGraph& g, std::span<const TokenId> coarse, std::size_t n) {
  if (n < 1) throw std::invalid_argument("build_input: target length must be >= 1");
  std::vector<TokenId> words(coarse.begin(), coarse.end());
  if (words.empty()) words.push_back(kUnk);
  auto idx = upsample_indices(words.size(), n);
  std::vector<TokenId> picked(n);
  for (std::size_t i = 0; i < n; ++i) picked[i] = words[idx[i]];
  return add_positions(g, embedding(g.param(g.layout().embedding), picked));
}

/// Expected embeddings e_j = Q[j] . Emb, upsampled to n rows, plus PE.
inline Var build_input_nondeterministic(ModelGraph& g, Var q_probs, std::size_t n) {
  if (n < 1) throw std::invalid_argument("build_input: target length must be >= 1");
  if (q_probs.cols() != g.config().vocab_size) {
    throw DimensionError("build_input_nondeterministic: Q has " + std::to_string(q_probs.cols()) +
                         " columns, vocabulary has " + std::to_string(g.config().vocab_size));
  }
  Var expected = matmul(q_probs, g.param(g.layout().embedding));
  auto idx = upsample_indices(expected.rows(), n);
  return add_positions(g, gather_rows(expected, idx));
}

/// Copied region features (projected), upsampled to n rows, plus PE.
inline Var build_input_copied(ModelGraph& g, const EncodedImage& image, std::size_t n) {
  if (n < 1) throw std::invalid_argument("build_input: target length must be >= 1");
  auto idx = upsample_indices(image.proj.rows(), n);
  return add_positions(g, gather_rows(image.proj, idx));
}

/// Shifted prefix for causal decoding: Y[i] = Emb(prefix[i]) + PE(i).
inline Var build_input_prefix(ModelGraph& g, std::span<const TokenId> prefix) {
  if (prefix.empty()) throw std::invalid_argument("build_input_prefix: empty prefix");
  return add_positions(g, embedding(g.param(g.layout().embedding), prefix));
}

/// Multi-head scaled dot-product attention of `x` over `memory`.
inline Var multi_head_attention(ModelGraph& g, Var x, Var memory, const AttentionIds& ids, bool causal,
                                std::vector<Var>* weights = nullptr) {
  const std::size_t d = g.config().d_model, h = g.config().heads, dh = d / h;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Var q = g.linear(x, ids.query);
  Var k = g.linear(memory, ids.key);
  Var v = g.linear(memory, ids.value);
  std::vector<Var> heads;
  heads.reserve(h);
  for (std::size_t i = 0; i < h; ++i) {
    Var qi = h == 1 ? q : slice_cols(q, i * dh, dh);
    Var ki = h == 1 ? k : slice_cols(k, i * dh, dh);
    Var vi = h == 1 ? v : slice_cols(v, i * dh, dh);
    Var a = softmax(scale(matmul_nt(qi, ki), inv_sqrt), causal);
    if (weights) weights->push_back(a);
    heads.push_back(matmul(a, vi));
  }
  Var merged = h == 1 ? heads[0] : concat_cols(heads);
  return g.linear(merged, ids.output);
}

/// Attention maps captured during a pass, per layer and head.
struct DecoderTrace {
  std::vector<Var> self_attention;
  std::vector<Var> inter_attention;
};

/// One parallel pass; returns logits [n x V]. `causal` masks future
/// positions (autoregressive baseline only).
inline Var decode_parallel(ModelGraph& g, Var input, const EncodedImage& image, bool causal = false,
                           DecoderTrace* trace = nullptr) {
  const auto& c = g.config();
  if (input.cols() != c.d_model) {
    throw DimensionError("decode_parallel: input width " + std::to_string(input.cols()) + " does not match d_model " +
                         std::to_string(c.d_model));
  }
  if (image.proj.cols() != c.d_model) throw DimensionError("decode_parallel: image width does not match d_model");
  ++g.decoder_passes;
  Var x = input;
  for (const auto& L : g.layout().decoder) {
    Var a = multi_head_attention(g, x, x, L.self_attn, causal, trace ? &trace->self_attention : nullptr);
    x = layer_norm(add(x, g.dropout(a)), g.param(L.self_norm.gain), g.param(L.self_norm.bias));
    Var b = multi_head_attention(g, x, image.proj, L.inter_attn, false, trace ? &trace->inter_attention : nullptr);
    x = layer_norm(add(x, g.dropout(b)), g.param(L.inter_norm.gain), g.param(L.inter_norm.bias));
    Var f = g.linear(relu(g.linear(x, L.ffn_in)), L.ffn_out);
    x = layer_norm(add(x, g.dropout(f)), g.param(L.ffn_norm.gain), g.param(L.ffn_norm.bias));
  }
  return g.linear(x, g.layout().decoder_out);
}

}  // namespace nacap
