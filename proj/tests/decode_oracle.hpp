#pragma once

// Exhaustive decoding references: enumerate every output sequence of a
// factorized distribution, and walk every AT prefix conditional.

#include <functional>
#include <map>
#include <vector>

#include "nacap/nacap.hpp"

namespace nacap::oracle {

/// Highest-probability sequence of length n under independent rows, found by
/// enumerating every sequence over the emittable tokens, then cut at EOS.
inline std::vector<TokenId> enumerate_best(const Tensor& probs) {
  const std::size_t n = probs.rows(), v = probs.cols();
  std::vector<TokenId> allowed;
  for (TokenId t = kEos; t < v; ++t) allowed.push_back(t);
  std::vector<std::size_t> idx(n, 0);
  double best = -1.0;
  std::vector<TokenId> best_seq;
  while (true) {
    double p = 1.0;
    for (std::size_t i = 0; i < n; ++i) p *= probs(i, allowed[idx[i]]);
    if (p > best) {
      best = p;
      best_seq.clear();
      for (std::size_t i = 0; i < n; ++i) best_seq.push_back(allowed[idx[i]]);
    }
    std::size_t k = 0;
    while (k < n && ++idx[k] == allowed.size()) idx[k++] = 0;
    if (k == n) break;
  }
  std::vector<TokenId> out;
  for (TokenId t : best_seq) {
    if (t == kEos) break;
    out.push_back(t);
  }
  return out;
}

/// Per-position word distributions of a NA mode, rebuilt on a fresh tape.
inline Tensor na_output_probs(const ModelParams& p, const Tensor& x, DecodeMode mode) {
  Tape t(false);
  ModelGraph g(t, p);
  auto img = encode(g, x);
  const std::size_t n = predict_length(g, img).n;
  Var input;
  if (mode == DecodeMode::naic) {
    input = build_input_copied(g, img, n);
  } else {
    auto aligned = aligner_greedy_decode(g, img, p.config().m_max);
    if (mode == DecodeMode::fnic_deterministic) {
      input = build_input_deterministic(g, aligned.tokens, n);
    } else if (aligned.tokens.empty()) {
      const TokenId unk[] = {kUnk};
      input = build_input_nondeterministic(g, t.constant(detail::one_hot_rows(unk, p.config().vocab_size)), n);
    } else {
      input = build_input_nondeterministic(g, slice_rows(aligned.probs, 0, aligned.tokens.size()), n);
    }
  }
  return softmax(decode_parallel(g, input, img)).value();
}

/// Greedy AT output rebuilt from a table of every prefix conditional
/// P(w | prefix), prefixes up to n_max - 1 words long.
inline std::vector<TokenId> at_stepwise_greedy(const ModelParams& p, const Tensor& x) {
  const std::size_t v = p.config().vocab_size, n_max = p.config().n_max;
  std::map<std::vector<TokenId>, Tensor> table;
  std::function<void(const std::vector<TokenId>&)> fill = [&](const std::vector<TokenId>& prefix) {
    Tape t(false);
    ModelGraph g(t, p);
    auto img = encode(g, x);
    std::vector<TokenId> in = {kBos};
    in.insert(in.end(), prefix.begin(), prefix.end());
    auto logits = decode_parallel(g, build_input_prefix(g, in), img, true);
    table[prefix] = softmax(slice_rows(logits, logits.rows() - 1, 1)).value();
    if (prefix.size() + 1 < n_max)
      for (TokenId w = kEos + 1; w < v; ++w) {
        auto next = prefix;
        next.push_back(w);
        fill(next);
      }
  };
  fill({});
  std::vector<TokenId> out;
  while (out.size() < n_max) {
    const Tensor& row = table.at(out);
    TokenId best = kEos;
    for (TokenId w = kEos; w < v; ++w)
      if (row.values[w] > row.values[best]) best = w;
    if (best == kEos) break;
    out.push_back(best);
  }
  return out;
}

}  // namespace nacap::oracle
