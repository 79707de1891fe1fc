#pragma once

// Corpus BLEU, caption diversity statistics, held-out evaluation and the
// single-sentence latency benchmark.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "nacap/dataset.hpp"
#include "nacap/inference.hpp"

namespace nacap {

using Sentence = std::vector<std::string>;

struct BleuScores {
  std::vector<double> bleu;            // bleu[n-1] = BLEU@n
  std::vector<double> precisions;      // clipped n-gram precision per order
  std::vector<std::size_t> matches;    // clipped match counts per order
  std::vector<std::size_t> totals;     // hypothesis n-gram counts per order
  double brevity_penalty = 1.0;
  std::size_t hypothesis_length = 0;
  std::size_t reference_length = 0;

  double at(std::size_t n) const { return bleu.at(n - 1); }
};

namespace detail {

inline std::map<std::vector<std::string>, std::size_t> ngram_counts(const Sentence& s, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  if (s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[Sentence(s.begin() + i, s.begin() + i + n)];
  return counts;
}

/// Reference length closest to c; ties go to the shorter reference.
inline std::size_t closest_reference_length(std::size_t c, std::span<const Sentence> refs) {
  std::size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto d = [&](std::size_t x) { return x > c ? x - c : c - x; };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
  }
  return best;
}

}  // namespace detail

/// Corpus-level BLEU@1..max_n: clipped counts summed over the corpus before
/// taking ratios, geometric mean of precisions, brevity penalty against the
/// closest reference length. Without smoothing any zero precision gives 0;
/// `smoothed` adds one to numerator and denominator for orders above 1.
inline BleuScores corpus_bleu(std::span<const Sentence> hypotheses, std::span<const std::vector<Sentence>> references,
                              std::size_t max_n = 4, bool smoothed = false) {
  if (hypotheses.empty()) throw std::invalid_argument("corpus_bleu: no hypotheses");
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("corpus_bleu: " + std::to_string(hypotheses.size()) + " hypotheses but " +
                                std::to_string(references.size()) + " reference sets");
  }
  if (max_n < 1) throw std::invalid_argument("corpus_bleu: max_n must be >= 1");
  BleuScores s;
  s.matches.assign(max_n, 0);
  s.totals.assign(max_n, 0);
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto& hyp = hypotheses[i];
    const auto& refs = references[i];
    if (refs.empty()) throw std::invalid_argument("corpus_bleu: empty reference set at index " + std::to_string(i));
    s.hypothesis_length += hyp.size();
    s.reference_length += detail::closest_reference_length(hyp.size(), refs);
    for (std::size_t n = 1; n <= max_n; ++n) {
      auto counts = detail::ngram_counts(hyp, n);
      std::map<std::vector<std::string>, std::size_t> max_ref;
      for (const auto& r : refs) {
        for (const auto& [g, c] : detail::ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
      }
      for (const auto& [g, c] : counts) {
        auto it = max_ref.find(g);
        s.matches[n - 1] += std::min(c, it == max_ref.end() ? std::size_t{0} : it->second);
        s.totals[n - 1] += c;
      }
    }
  }
  const double c = static_cast<double>(s.hypothesis_length), r = static_cast<double>(s.reference_length);
  s.brevity_penalty = c == 0.0 ? 0.0 : (c > r ? 1.0 : std::exp(1.0 - r / c));

  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 1; n <= max_n; ++n) {
    double num = static_cast<double>(s.matches[n - 1]);
    double den = static_cast<double>(s.totals[n - 1]);
    if (smoothed && n > 1) {
      num += 1.0;
      den += 1.0;
    }
    const double p = den == 0.0 ? 0.0 : num / den;
    s.precisions.push_back(p);
    if (p == 0.0) zero = true;
    if (!zero) log_sum += std::log(p);
    s.bleu.push_back(zero ? 0.0 : s.brevity_penalty * std::exp(log_sum / static_cast<double>(n)));
  }
  return s;
}

struct DiversityStats {
  double novel_pct = 0.0;
  double unique_pct = 0.0;
  double vocab_usage_pct = 0.0;
};

/// novel: hypotheses absent (exact string) from the training captions;
/// unique: hypotheses occurring exactly once among the hypotheses;
/// vocab usage: non-reserved vocabulary tokens used by at least one hypothesis.
inline DiversityStats diversity_stats(std::span<const std::string> hypotheses,
                                      std::span<const std::string> training_captions, const Vocabulary& vocab) {
  if (hypotheses.empty()) throw std::invalid_argument("diversity_stats: no hypotheses");
  const std::set<std::string> train(training_captions.begin(), training_captions.end());
  std::unordered_map<std::string, std::size_t> freq;
  for (const auto& h : hypotheses) ++freq[h];
  std::size_t novel = 0, unique = 0;
  std::set<std::string> used;
  for (const auto& h : hypotheses) {
    if (!train.contains(h)) ++novel;
    if (freq[h] == 1) ++unique;
    for (auto& t : tokenize(h)) used.insert(std::move(t));
  }
  std::size_t in_vocab = 0;
  const auto& toks = vocab.tokens();
  for (std::size_t i = kReservedTokens; i < toks.size(); ++i) in_vocab += used.contains(toks[i]);
  const std::size_t vocab_words = toks.size() - kReservedTokens;
  const double h = static_cast<double>(hypotheses.size());
  DiversityStats d;
  d.novel_pct = 100.0 * static_cast<double>(novel) / h;
  d.unique_pct = 100.0 * static_cast<double>(unique) / h;
  d.vocab_usage_pct = vocab_words == 0 ? 0.0 : 100.0 * static_cast<double>(in_vocab) / static_cast<double>(vocab_words);
  return d;
}

// ---------------------------------------------------------------------------

struct EvalReport {
  std::string mode;
  std::size_t images = 0;
  double bleu1 = 0.0, bleu2 = 0.0, bleu3 = 0.0, bleu4 = 0.0;
  double novel_pct = 0.0, unique_pct = 0.0, vocab_usage_pct = 0.0;
  double mean_length = 0.0;
  /// Only filled when timing was requested; wall time is not reproducible.
  std::map<std::string, double> mean_latency_ns;
  std::optional<double> speedup;

  bool operator==(const EvalReport&) const = default;
};

inline void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json{{"mode", r.mode},
                     {"images", r.images},
                     {"bleu1", r.bleu1},
                     {"bleu2", r.bleu2},
                     {"bleu3", r.bleu3},
                     {"bleu4", r.bleu4},
                     {"novel_pct", r.novel_pct},
                     {"unique_pct", r.unique_pct},
                     {"vocab_usage_pct", r.vocab_usage_pct},
                     {"mean_length", r.mean_length}};
  if (!r.mean_latency_ns.empty()) j["mean_latency_ns"] = r.mean_latency_ns;
  if (r.speedup) j["speedup"] = *r.speedup;
}

inline void print_report(std::ostream& os, const EvalReport& r) {
  os << "mode            " << r.mode << "\n"
     << "images          " << r.images << "\n"
     << "BLEU@1          " << r.bleu1 << "\n"
     << "BLEU@2          " << r.bleu2 << "\n"
     << "BLEU@3          " << r.bleu3 << "\n"
     << "BLEU@4          " << r.bleu4 << "\n"
     << "novel %         " << r.novel_pct << "\n"
     << "unique %        " << r.unique_pct << "\n"
     << "vocab usage %   " << r.vocab_usage_pct << "\n"
     << "mean length     " << r.mean_length << "\n";
  for (const auto& [m, ns] : r.mean_latency_ns) os << "latency " << m << " " << ns << " ns\n";
  if (r.speedup) os << "speedup         " << *r.speedup << "\n";
}

struct Hypotheses {
  std::vector<Sentence> sentences;
  std::vector<std::int64_t> latency_ns;
};

/// Greedy captions for every record of `corpus`, decoded one image at a time.
inline Hypotheses decode_corpus(const ModelParams& params, const Vocabulary& vocab, const Corpus& corpus,
                                DecodeMode mode, const DecodeOptions& opt = {}) {
  Hypotheses h;
  for (const auto& rec : corpus) {
    DecodedCaption c = generate(params, rec.features, mode, opt);
    h.sentences.push_back(tokenize(vocab.decode_text(c.tokens)));
    h.latency_ns.push_back(c.wall_time_ns);
  }
  return h;
}

/// Quality and diversity of `hyps` against the held-out references.
inline EvalReport score_hypotheses(std::string mode, const std::vector<Sentence>& hyps, const Corpus& heldout,
                                   const Corpus& training, const Vocabulary& vocab) {
  if (hyps.size() != heldout.size()) throw std::invalid_argument("score_hypotheses: size mismatch");
  std::vector<std::vector<Sentence>> refs;
  for (const auto& rec : heldout) {
    auto& set = refs.emplace_back();
    for (const auto& c : rec.captions) set.push_back(tokenize(c));
  }
  BleuScores b = corpus_bleu(hyps, refs, 4);
  std::vector<std::string> hyp_text, train_text;
  double len = 0.0;
  for (const auto& s : hyps) {
    hyp_text.push_back(join(s));
    len += static_cast<double>(s.size());
  }
  for (const auto& rec : training)
    for (const auto& c : rec.captions) train_text.push_back(join(tokenize(c)));
  DiversityStats d = diversity_stats(hyp_text, train_text, vocab);
  EvalReport r;
  r.mode = std::move(mode);
  r.images = hyps.size();
  r.bleu1 = b.at(1);
  r.bleu2 = b.at(2);
  r.bleu3 = b.at(3);
  r.bleu4 = b.at(4);
  r.novel_pct = d.novel_pct;
  r.unique_pct = d.unique_pct;
  r.vocab_usage_pct = d.vocab_usage_pct;
  r.mean_length = len / static_cast<double>(hyps.size());
  return r;
}

inline EvalReport evaluate(const ModelParams& params, const Vocabulary& vocab, const Corpus& heldout,
                           const Corpus& training, DecodeMode mode, bool with_latency = false) {
  if (heldout.empty()) throw std::invalid_argument("evaluate: empty held-out corpus");
  Hypotheses h = decode_corpus(params, vocab, heldout, mode);
  EvalReport r = score_hypotheses(std::string(to_string(mode)), h.sentences, heldout, training, vocab);
  if (with_latency) {
    double sum = 0.0;
    for (auto ns : h.latency_ns) sum += static_cast<double>(ns);
    r.mean_latency_ns[r.mode] = sum / static_cast<double>(h.latency_ns.size());
  }
  return r;
}

// ---------------------------------------------------------------------------

struct BenchModel {
  DecodeMode mode;
  const ModelParams* params;
};

struct BenchOptions {
  std::size_t warmup = 5;
  std::size_t repeats = 20;
  std::size_t bucket_width = 4;
  DecodeOptions decode;
};

struct LatencyStats {
  std::size_t count = 0;
  double mean_ns = 0.0;
  double std_ns = 0.0;
};

struct BenchRow {
  std::string mode;
  std::string n_bucket;  // "all" or "lo-hi" emitted words
  LatencyStats stats;
  std::optional<double> speedup;  // mean AT latency / mean latency of this row
};

struct BenchReport {
  std::map<std::string, LatencyStats> overall;
  std::vector<BenchRow> rows;
  std::map<std::string, double> mean_emitted_length;

  double mean_ns(DecodeMode m) const { return overall.at(std::string(to_string(m))).mean_ns; }
  std::optional<double> speedup(DecodeMode m) const {
    auto at = overall.find("at");
    auto it = overall.find(std::string(to_string(m)));
    if (at == overall.end() || it == overall.end()) return std::nullopt;
    return at->second.mean_ns / it->second.mean_ns;
  }
};

namespace detail {

inline LatencyStats summarize(const std::vector<double>& xs) {
  LatencyStats s;
  s.count = xs.size();
  if (xs.empty()) return s;
  for (double x : xs) s.mean_ns += x;
  s.mean_ns /= static_cast<double>(xs.size());
  for (double x : xs) s.std_ns += (x - s.mean_ns) * (x - s.mean_ns);
  s.std_ns = xs.size() > 1 ? std::sqrt(s.std_ns / static_cast<double>(xs.size() - 1)) : 0.0;
  return s;
}

inline std::string bucket_label(std::size_t len, std::size_t width) {
  const std::size_t lo = len == 0 ? 0 : ((len - 1) / width) * width + 1;
  const std::size_t hi = len == 0 ? 0 : lo + width - 1;
  return std::to_string(lo) + "-" + std::to_string(hi);
}

}  // namespace detail

/// Times single-image decodes on the calling thread. Each mode first decodes
/// the first sample `warmup` times (discarded); then every (repeat, sample)
/// pair is decoded once per mode, modes interleaved.
inline BenchReport latency_bench(std::span<const BenchModel> models, std::span<const Tensor> samples,
                                 const BenchOptions& opt = {}) {
  if (models.empty()) throw std::invalid_argument("latency_bench: no models");
  if (samples.empty()) throw std::invalid_argument("latency_bench: no samples");
  if (opt.repeats < 1) throw std::invalid_argument("latency_bench: repeats must be >= 1");
  if (opt.bucket_width < 1) throw std::invalid_argument("latency_bench: bucket width must be >= 1");
  for (const auto& m : models) {
    if (!m.params) throw std::invalid_argument("latency_bench: null model");
    detail::check_mode(*m.params, m.mode);
    if (samples.front().cols() != m.params->config().d_in) {
      throw ConfigError("latency_bench: samples have " + std::to_string(samples.front().cols()) +
                        " features per region, model " + std::string(to_string(m.mode)) + " expects " +
                        std::to_string(m.params->config().d_in));
    }
  }
  for (const auto& m : models)
    for (std::size_t i = 0; i < opt.warmup; ++i) generate(*m.params, samples.front(), m.mode, opt.decode);

  std::map<std::string, std::vector<double>> all;
  std::map<std::string, std::map<std::size_t, std::vector<double>>> by_len;
  std::map<std::string, double> len_sum;
  for (std::size_t r = 0; r < opt.repeats; ++r) {
    for (const auto& x : samples) {
      for (const auto& m : models) {
        DecodedCaption c = generate(*m.params, x, m.mode, opt.decode);
        const std::string key(to_string(m.mode));
        all[key].push_back(static_cast<double>(c.wall_time_ns));
        by_len[key][c.tokens.size()].push_back(static_cast<double>(c.wall_time_ns));
        len_sum[key] += static_cast<double>(c.tokens.size());
      }
    }
  }

  BenchReport rep;
  for (const auto& [k, xs] : all) {
    rep.overall[k] = detail::summarize(xs);
    rep.mean_emitted_length[k] = len_sum[k] / static_cast<double>(xs.size());
  }
  // Bucketed latencies, keyed by bucket lower bound for ordering.
  std::map<std::string, std::map<std::size_t, std::pair<std::string, std::vector<double>>>> buckets;
  for (const auto& [k, lens] : by_len) {
    for (const auto& [len, xs] : lens) {
      const std::size_t lo = len == 0 ? 0 : ((len - 1) / opt.bucket_width) * opt.bucket_width + 1;
      auto& b = buckets[k][lo];
      b.first = detail::bucket_label(len, opt.bucket_width);
      b.second.insert(b.second.end(), xs.begin(), xs.end());
    }
  }
  std::map<std::size_t, double> at_bucket;
  if (buckets.contains("at"))
    for (const auto& [lo, b] : buckets["at"]) at_bucket[lo] = detail::summarize(b.second).mean_ns;

  for (const auto& m : models) {
    const std::string key(to_string(m.mode));
    if (std::any_of(rep.rows.begin(), rep.rows.end(), [&](const BenchRow& r) { return r.mode == key; })) continue;
    rep.rows.push_back({key, "all", rep.overall[key], rep.speedup(m.mode)});
    for (const auto& [lo, b] : buckets[key]) {
      BenchRow row{key, b.first, detail::summarize(b.second), std::nullopt};
      if (auto it = at_bucket.find(lo); it != at_bucket.end()) row.speedup = it->second / row.stats.mean_ns;
      rep.rows.push_back(row);
    }
  }
  return rep;
}

inline void write_bench_csv(std::ostream& os, const BenchReport& rep) {
  os << "mode,n_bucket,mean_ns,std_ns,speedup\n";
  for (const auto& r : rep.rows) {
    os << r.mode << ',' << r.n_bucket << ',' << r.stats.mean_ns << ',' << r.stats.std_ns << ',';
    if (r.speedup) os << *r.speedup;
    os << '\n';
  }
}

}  // namespace nacap
