#pragma once

// Position aligner: a one-layer GRU with inter-attention over the projected
// regions that emits the ordered coarse words one at a time.

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "nacap/encoder.hpp"

namespace nacap {

/// Hidden R_i [1 x d] and the context C_i [1 x d] fed to the next step.
struct AlignerState {
  Var hidden;
  Var context;
  std::size_t step = 0;
};

struct AlignerStep {
  AlignerState state;
  Var logits;     // [1 x V]
  Var attention;  // [1 x k], weights behind state.context
};

/// Attention memory over the regions; keys are projected once per image.
struct AlignerMemory {
  Var values;  // [k x d]
  Var keys;    // [k x d]
};

/// Per-position distributions over the vocabulary: logits are the scores
/// f(X), probs = row-softmax(logits).
struct PositionDistribution {
  Tensor logits;
  Tensor probs;

  std::size_t length() const { return logits.rows(); }
};

/// On-tape aligner result.
struct AlignerOutput {
  Var logits;                          // [m x V]
  Var probs;                           // [m x V]
  std::vector<TokenId> tokens;         // coarse words, no EOS
  std::vector<Var> attention;          // one [1 x k] row per step
  bool ended_with_eos = false;

  PositionDistribution distribution() const { return {logits.value(), probs.value()}; }
};

namespace detail {

inline const AlignerIds& aligner_ids(ModelGraph& g) {
  if (!g.layout().aligner) throw std::logic_error("model has no position aligner (architecture is not fnic)");
  return *g.layout().aligner;
}

}  // namespace detail

inline AlignerMemory aligner_memory(ModelGraph& g, const EncodedImage& image) {
  const auto& a = detail::aligner_ids(g);
  return {image.proj, matmul(image.proj, g.param(a.attn_key))};
}

/// R_0 = tanh(pooled W_init), C_0 = pooled.
inline AlignerState aligner_initial_state(ModelGraph& g, const EncodedImage& image) {
  const auto& a = detail::aligner_ids(g);
  return {tanh(matmul(image.pooled, g.param(a.init))), image.pooled, 0};
}

/// One GRU step. Input is [Emb(prev_token); C_{i-1}]; the new context C_i is
/// scaled dot-product attention from R_i over the regions.
inline AlignerStep aligner_step(ModelGraph& g, const AlignerState& prev, TokenId prev_token,
                                const AlignerMemory& memory) {
  const auto& a = detail::aligner_ids(g);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(g.config().d_model));
  const TokenId tok[] = {prev_token};
  Var emb = embedding(g.param(g.layout().embedding), tok);
  Var x = concat_cols({emb, prev.context});
  Var h = prev.hidden;
  Var z = sigmoid(add_row(add(matmul(x, g.param(a.w_z)), matmul(h, g.param(a.u_z))), g.param(a.b_z)));
  Var r = sigmoid(add_row(add(matmul(x, g.param(a.w_r)), matmul(h, g.param(a.u_r))), g.param(a.b_r)));
  Var cand = tanh(add_row(add(matmul(x, g.param(a.w_h)), matmul(mul(r, h), g.param(a.u_h))), g.param(a.b_h)));
  Var hidden = add(h, mul(z, sub(cand, h)));

  Var query = matmul(hidden, g.param(a.attn_query));
  Var alpha = softmax(scale(matmul_nt(query, memory.keys), inv_sqrt_d));
  Var context = matmul(alpha, memory.values);
  Var logits = g.linear(hidden, a.out);
  return {{hidden, context, prev.step + 1}, logits, alpha};
}

/// Teacher forcing on gold coarse words; EOS is appended internally, so the
/// result has |coarse| + 1 rows.
inline AlignerOutput aligner_teacher_forced(ModelGraph& g, std::span<const TokenId> coarse, const EncodedImage& image) {
  if (coarse.empty()) throw std::invalid_argument("aligner_teacher_forced: empty coarse sequence");
  AlignerMemory memory = aligner_memory(g, image);
  AlignerState state = aligner_initial_state(g, image);
  AlignerOutput out;
  std::vector<Var> rows;
  TokenId prev = kBos;
  for (std::size_t i = 0; i <= coarse.size(); ++i) {
    AlignerStep s = aligner_step(g, state, prev, memory);
    rows.push_back(s.logits);
    out.attention.push_back(s.attention);
    state = s.state;
    if (i < coarse.size()) prev = coarse[i];
  }
  out.tokens.assign(coarse.begin(), coarse.end());
  out.ended_with_eos = true;
  out.logits = concat_rows(rows);
  out.probs = softmax(out.logits);
  return out;
}

/// Greedy word-by-word decoding from BOS; each step feeds back the argmax
/// (ties to the lowest id, PAD/BOS never chosen). Stops at EOS or after
/// m_max words. With `fixed_length` set, EOS is suppressed and exactly that
/// many words are produced. The returned rows are the distributions along the
/// greedy path, including the final EOS row when decoding ended on EOS.
inline AlignerOutput aligner_greedy_decode(ModelGraph& g, const EncodedImage& image, std::size_t m_max,
                                           std::optional<std::size_t> fixed_length = std::nullopt) {
  if (m_max < 1) throw std::invalid_argument("aligner_greedy_decode: m_max must be >= 1");
  const std::size_t limit = fixed_length.value_or(m_max);
  AlignerMemory memory = aligner_memory(g, image);
  AlignerState state = aligner_initial_state(g, image);
  AlignerOutput out;
  std::vector<Var> rows;
  TokenId prev = kBos;
  while (true) {
    AlignerStep s = aligner_step(g, state, prev, memory);
    rows.push_back(s.logits);
    out.attention.push_back(s.attention);
    state = s.state;
    const bool allow_eos = !fixed_length.has_value();
    Var step_probs = softmax(s.logits);
    const auto choice = static_cast<TokenId>(argmax_allowed(step_probs.values(), [&](std::size_t i) {
      return i == kPad || i == kBos || (i == kEos && !allow_eos);
    }));
    if (choice == kEos) {
      out.ended_with_eos = true;
      break;
    }
    out.tokens.push_back(choice);
    prev = choice;
    if (out.tokens.size() >= limit) break;
  }
  out.logits = concat_rows(rows);
  out.probs = softmax(out.logits);
  return out;
}

}  // namespace nacap
