#pragma once

// Caption generation under the four decoding modes.

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nacap/aligner.hpp"
#include "nacap/decoder.hpp"

namespace nacap {

enum class DecodeMode { fnic_nondeterministic, fnic_deterministic, autoregressive, naic };

inline std::string_view to_string(DecodeMode m) {
  switch (m) {
    case DecodeMode::fnic_nondeterministic: return "fnic-ndt";
    case DecodeMode::fnic_deterministic: return "fnic-dt";
    case DecodeMode::autoregressive: return "at";
    case DecodeMode::naic: return "naic";
  }
  return "?";
}

inline DecodeMode parse_mode(std::string_view s) {
  if (s == "fnic-ndt") return DecodeMode::fnic_nondeterministic;
  if (s == "fnic-dt") return DecodeMode::fnic_deterministic;
  if (s == "at") return DecodeMode::autoregressive;
  if (s == "naic") return DecodeMode::naic;
  throw ConfigError("unknown decode mode '" + std::string(s) + "' (expected fnic-ndt, fnic-dt, at or naic)");
}

inline Architecture required_architecture(DecodeMode m) {
  switch (m) {
    case DecodeMode::fnic_nondeterministic:
    case DecodeMode::fnic_deterministic: return Architecture::fnic;
    case DecodeMode::autoregressive: return Architecture::at;
    case DecodeMode::naic: return Architecture::naic;
  }
  return Architecture::fnic;
}

struct LengthPrediction {
  std::size_t n = 1;
  Tensor logits;
};

/// n = argmax(pooled W_len + b_len) + 1, ties to the shorter length.
inline LengthPrediction predict_length(ModelGraph& g, const EncodedImage& image) {
  if (!g.layout().length_head) throw std::logic_error("model has no length head (architecture is at)");
  Var logits = g.linear(image.pooled, *g.layout().length_head);
  const std::size_t best = argmax_allowed(logits.values(), [](std::size_t) { return false; });
  return {best + 1, logits.value()};
}

inline LengthPrediction predict_length(const ModelParams& params, const RegionFeatureSet& regions) {
  Tape tape(false);
  ModelGraph g(tape, params);
  return predict_length(g, encode(g, regions.features));
}

/// Overrides used by tests and the latency benchmark.
struct DecodeOptions {
  /// Emit exactly this many words (EOS suppressed); replaces the length head
  /// for non-autoregressive modes and n_max for the autoregressive one.
  std::optional<std::size_t> fixed_length;
  /// Force the aligner to emit exactly this many coarse words.
  std::optional<std::size_t> fixed_coarse_length;
  /// Replace Q by one-hot rows of the greedy coarse words.
  bool one_hot_q = false;
};

struct DecodedCaption {
  std::vector<TokenId> tokens;  // no PAD/BOS/EOS
  DecodeMode mode = DecodeMode::fnic_nondeterministic;
  std::vector<double> token_probs;
  std::int64_t wall_time_ns = 0;
  std::size_t decoder_passes = 0;
  std::vector<TokenId> coarse;  // aligner output (fnic modes)
  std::size_t length = 0;       // decoder length n (last pass length for at)
};

namespace detail {

inline bool never_emitted(std::size_t id) { return id == kPad || id == kBos; }

/// Position-wise argmax of a parallel pass, cut at the first EOS.
inline void read_parallel_output(Var logits, bool suppress_eos, DecodedCaption& out) {
  Var probs = softmax(logits);
  const std::size_t n = probs.rows(), v = probs.cols();
  auto pv = probs.values();
  for (std::size_t i = 0; i < n; ++i) {
    std::span<const double> row(pv.data() + i * v, v);
    const std::size_t best =
        argmax_allowed(row, [&](std::size_t t) { return never_emitted(t) || (suppress_eos && t == kEos); });
    if (best == kEos) break;
    out.tokens.push_back(static_cast<TokenId>(best));
    out.token_probs.push_back(row[best]);
  }
}

inline Tensor one_hot_rows(std::span<const TokenId> tokens, std::size_t vocab) {
  Tensor t = Tensor::zeros({tokens.size(), vocab});
  for (std::size_t i = 0; i < tokens.size(); ++i) t(i, tokens[i]) = 1.0;
  return t;
}

inline void check_mode(const ModelParams& params, DecodeMode mode) {
  if (params.config().arch != required_architecture(mode)) {
    throw ConfigError("decode mode " + std::string(to_string(mode)) + " needs a " +
                      std::string(to_string(required_architecture(mode))) + " checkpoint, got " +
                      std::string(to_string(params.config().arch)));
  }
}

inline void generate_fnic(ModelGraph& g, const EncodedImage& image, bool nondeterministic,
                          const DecodeOptions& opt, DecodedCaption& out) {
  const auto& c = g.config();
  AlignerOutput aligned = aligner_greedy_decode(g, image, c.m_max, opt.fixed_coarse_length);
  out.coarse = aligned.tokens;
  const std::size_t n = opt.fixed_length.value_or(predict_length(g, image).n);
  out.length = n;
  Var input;
  if (!nondeterministic) {
    input = build_input_deterministic(g, aligned.tokens, n);
  } else {
    // Q covers the emitted coarse words; the terminating EOS row is not a word.
    Var q;
    if (aligned.tokens.empty()) {
      const TokenId unk[] = {kUnk};
      q = g.tape().constant(one_hot_rows(unk, c.vocab_size));
    } else if (opt.one_hot_q) {
      q = g.tape().constant(one_hot_rows(aligned.tokens, c.vocab_size));
    } else {
      q = slice_rows(aligned.probs, 0, aligned.tokens.size());
    }
    input = build_input_nondeterministic(g, q, n);
  }
  read_parallel_output(decode_parallel(g, input, image), opt.fixed_length.has_value(), out);
}

inline void generate_naic(ModelGraph& g, const EncodedImage& image, const DecodeOptions& opt, DecodedCaption& out) {
  const std::size_t n = opt.fixed_length.value_or(predict_length(g, image).n);
  out.length = n;
  read_parallel_output(decode_parallel(g, build_input_copied(g, image, n), image), opt.fixed_length.has_value(), out);
}

/// Greedy word-by-word decoding; every step is a full causal pass over the
/// prefix.
inline void generate_at(ModelGraph& g, const EncodedImage& image, const DecodeOptions& opt, DecodedCaption& out) {
  const std::size_t limit = opt.fixed_length.value_or(g.config().n_max);
  std::vector<TokenId> prefix = {kBos};
  while (out.tokens.size() < limit) {
    Var logits = decode_parallel(g, build_input_prefix(g, prefix), image, /*causal=*/true);
    Var probs = softmax(slice_rows(logits, logits.rows() - 1, 1));
    const bool suppress_eos = opt.fixed_length.has_value();
    const std::size_t best = argmax_allowed(
        probs.values(), [&](std::size_t t) { return never_emitted(t) || (suppress_eos && t == kEos); });
    out.length = prefix.size();
    if (best == kEos) break;
    out.tokens.push_back(static_cast<TokenId>(best));
    out.token_probs.push_back(probs.values()[best]);
    prefix.push_back(static_cast<TokenId>(best));
  }
}

}  // namespace detail

/// Decodes one image. Single-threaded; no batching.
inline DecodedCaption generate(const ModelParams& params, const Tensor& regions, DecodeMode mode,
                               const DecodeOptions& opt = {}) {
  const auto start = std::chrono::steady_clock::now();
  detail::check_mode(params, mode);
  Tape tape(false);
  ModelGraph g(tape, params);
  DecodedCaption out;
  out.mode = mode;
  EncodedImage image = encode(g, regions);
  switch (mode) {
    case DecodeMode::fnic_nondeterministic: detail::generate_fnic(g, image, true, opt, out); break;
    case DecodeMode::fnic_deterministic: detail::generate_fnic(g, image, false, opt, out); break;
    case DecodeMode::autoregressive: detail::generate_at(g, image, opt, out); break;
    case DecodeMode::naic: detail::generate_naic(g, image, opt, out); break;
  }
  out.decoder_passes = g.decoder_passes;
  const auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start);
  out.wall_time_ns = std::max<std::int64_t>(1, ns.count());
  return out;
}

inline DecodedCaption generate_deterministic(const ModelParams& p, const RegionFeatureSet& r,
                                             const DecodeOptions& opt = {}) {
  return generate(p, r.features, DecodeMode::fnic_deterministic, opt);
}

inline DecodedCaption generate_nondeterministic(const ModelParams& p, const RegionFeatureSet& r,
                                                const DecodeOptions& opt = {}) {
  return generate(p, r.features, DecodeMode::fnic_nondeterministic, opt);
}

inline DecodedCaption generate_autoregressive(const ModelParams& p, const RegionFeatureSet& r,
                                              const DecodeOptions& opt = {}) {
  return generate(p, r.features, DecodeMode::autoregressive, opt);
}

inline DecodedCaption generate_naic(const ModelParams& p, const RegionFeatureSet& r, const DecodeOptions& opt = {}) {
  return generate(p, r.features, DecodeMode::naic, opt);
}

}  // namespace nacap
