#pragma once

// Joint training of aligner, fine decoder and length head, plus the NAIC and
// autoregressive baselines.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "nacap/checkpoint.hpp"
#include "nacap/dataset.hpp"
#include "nacap/inference.hpp"

namespace nacap {

enum class Phase { deterministic, nondeterministic };

inline std::string_view to_string(Phase p) {
  return p == Phase::deterministic ? "deterministic" : "nondeterministic";
}

/// L = L_P + L_F + length_weight * L_len; every term is a mean over the
/// batch's non-pad positions (examples for L_len).
struct LossBreakdown {
  double total = 0.0;
  double position = 0.0;
  double fine = 0.0;
  double length = 0.0;
};

class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossOptions {
  Phase phase = Phase::deterministic;
  double length_weight = 0.1;
  bool training = false;  // enables dropout
  std::uint64_t dropout_seed = 0;
  /// Phase-2 hook: feed one-hot gold coarse words instead of Q.
  bool one_hot_q = false;
};

using Gradients = std::vector<std::vector<double>>;

inline Gradients zero_gradients(const ModelParams& p) {
  Gradients g(p.count());
  for (std::size_t i = 0; i < p.count(); ++i) g[i].assign(p.tensor(i).size(), 0.0);
  return g;
}

/// Worker cap from NACAP_THREADS, else the hardware thread count.
inline std::size_t worker_threads() {
  if (const char* env = std::getenv("NACAP_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (...) {
    }
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

namespace detail {

struct BatchCounts {
  std::size_t position = 0;
  std::size_t fine = 0;
  std::size_t examples = 0;
};

inline BatchCounts batch_counts(std::span<const CaptionExample> batch, Architecture arch) {
  BatchCounts c;
  for (const auto& ex : batch) {
    if (arch == Architecture::fnic) c.position += ex.coarse.size() + 1;
    c.fine += ex.target.size();
    ++c.examples;
  }
  return c;
}

struct ExampleResult {
  LossBreakdown loss;
  Gradients grads;
};

inline std::string describe(const CaptionExample& ex) {
  std::ostringstream os;
  os << "scene " << ex.scene_id << " target [";
  for (std::size_t i = 0; i < ex.target.size(); ++i) os << (i ? " " : "") << ex.target[i];
  os << "] coarse [";
  for (std::size_t i = 0; i < ex.coarse.size(); ++i) os << (i ? " " : "") << ex.coarse[i];
  os << "]";
  return os.str();
}

/// Forward (and optionally backward) for one example; loss terms are already
/// weighted by the example's share of the batch counts.
inline LossBreakdown example_loss(const ModelParams& params, const CaptionExample& ex, const BatchCounts& counts,
                                  const LossOptions& opt, Gradients* grads) {
  const auto& c = params.config();
  if (ex.target.empty()) throw std::invalid_argument("training example with empty target: " + describe(ex));
  Tape tape(grads != nullptr);
  ModelGraph g(tape, params, opt.training, opt.dropout_seed);
  EncodedImage image = encode(g, ex.regions.features);
  const std::size_t n = ex.target.size();

  std::vector<Var> terms;
  LossBreakdown lb;

  Var input;
  bool causal = false;
  if (c.arch == Architecture::fnic) {
    AlignerOutput aligned = aligner_teacher_forced(g, ex.coarse, image);
    std::vector<TokenId> gold(ex.coarse.begin(), ex.coarse.end());
    gold.push_back(kEos);
    const double w = static_cast<double>(gold.size()) / static_cast<double>(counts.position);
    Var lp = scale(cross_entropy(aligned.logits, gold, kPad), w);
    lb.position = lp.item();
    terms.push_back(lp);
    if (opt.phase == Phase::deterministic) {
      input = build_input_deterministic(g, ex.coarse, n);
    } else {
      Var q = opt.one_hot_q ? tape.constant(detail::one_hot_rows(ex.coarse, c.vocab_size))
                            : slice_rows(aligned.probs, 0, ex.coarse.size());
      input = build_input_nondeterministic(g, q, n);
    }
  } else if (c.arch == Architecture::naic) {
    input = build_input_copied(g, image, n);
  } else {
    std::vector<TokenId> prefix = {kBos};
    prefix.insert(prefix.end(), ex.target.begin(), ex.target.end() - 1);
    input = build_input_prefix(g, prefix);
    causal = true;
  }

  Var logits = decode_parallel(g, input, image, causal);
  Var lf = scale(cross_entropy(logits, ex.target, kPad), static_cast<double>(n) / static_cast<double>(counts.fine));
  lb.fine = lf.item();
  terms.push_back(lf);

  if (g.layout().length_head) {
    Var len_logits = g.linear(image.pooled, *g.layout().length_head);
    const TokenId cls[] = {static_cast<TokenId>(std::min(n, c.n_max) - 1)};
    Var ll = scale(cross_entropy(len_logits, cls, std::numeric_limits<TokenId>::max()),
                   1.0 / static_cast<double>(counts.examples));
    lb.length = ll.item();
    terms.push_back(scale(ll, opt.length_weight));
  }

  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  lb.total = total.item();
  if (!std::isfinite(lb.total)) {
    throw NonFiniteLossError("non-finite loss (L_P=" + std::to_string(lb.position) + ", L_F=" +
                             std::to_string(lb.fine) + ", L_len=" + std::to_string(lb.length) + ") on " +
                             describe(ex));
  }
  if (grads) {
    tape.backward(total);
    tape.for_each_parameter_grad([&](std::size_t slot, std::span<const double> gr) {
      auto& dst = (*grads)[slot];
      for (std::size_t i = 0; i < gr.size(); ++i) dst[i] += gr[i];
    });
  }
  return lb;
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return splitmix64(a * 0x9e3779b97f4a7c15ull ^ b); }

}  // namespace detail

/// Batch losses and, when `grads` is non-null, their gradients. Examples may
/// run on several threads; per-example results are always summed in batch
/// order, so the outcome does not depend on the thread count.
inline LossBreakdown compute_loss(const ModelParams& params, std::span<const CaptionExample> batch,
                                  const LossOptions& opt, Gradients* grads = nullptr) {
  if (batch.empty()) throw std::invalid_argument("compute_loss: empty batch");
  const auto counts = detail::batch_counts(batch, params.config().arch);
  if (grads && grads->size() != params.count()) *grads = zero_gradients(params);

  auto per_example_opt = [&](std::size_t i) {
    LossOptions o = opt;
    o.dropout_seed = detail::mix_seed(opt.dropout_seed, i);
    return o;
  };

  LossBreakdown sum;
  auto accumulate = [&](const LossBreakdown& lb) {
    sum.total += lb.total;
    sum.position += lb.position;
    sum.fine += lb.fine;
    sum.length += lb.length;
  };

  const std::size_t threads = std::min(worker_threads(), batch.size());
  if (threads <= 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      accumulate(detail::example_loss(params, batch[i], counts, per_example_opt(i), grads));
    }
    return sum;
  }

  std::vector<detail::ExampleResult> results(batch.size());
  std::vector<std::exception_ptr> errors(batch.size());
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < batch.size(); i = next++) {
          try {
            if (grads) results[i].grads = zero_gradients(params);
            results[i].loss = detail::example_loss(params, batch[i], counts, per_example_opt(i),
                                                   grads ? &results[i].grads : nullptr);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    accumulate(results[i].loss);
    if (grads) {
      for (std::size_t p = 0; p < grads->size(); ++p) {
        auto& dst = (*grads)[p];
        const auto& src = results[i].grads[p];
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }
  return sum;
}

struct AdamState {
  Gradients m;
  Gradients v;
  std::size_t step = 0;
};

inline AdamState make_adam_state(const ModelParams& p) { return {zero_gradients(p), zero_gradients(p), 0}; }

inline void adam_update(ModelParams& params, AdamState& state, const Gradients& grads, const TrainConfig& cfg) {
  if (state.m.size() != params.count()) state = make_adam_state(params);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t p = 0; p < params.count(); ++p) {
    auto& w = params.tensor(p).values;
    auto& m = state.m[p];
    auto& v = state.v[p];
    const auto& g = grads[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] + cfg.weight_decay * w[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      w[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
    }
  }
}

/// One optimizer update on `batch`.
inline LossBreakdown train_step(ModelParams& params, AdamState& state, std::span<const CaptionExample> batch,
                                Phase phase, const TrainConfig& cfg, std::uint64_t step_seed = 0,
                                bool dropout = true) {
  LossOptions opt;
  opt.phase = phase;
  opt.length_weight = cfg.length_loss_weight;
  opt.training = dropout;
  opt.dropout_seed = step_seed;
  Gradients grads = zero_gradients(params);
  LossBreakdown lb = compute_loss(params, batch, opt, &grads);
  adam_update(params, state, grads, cfg);
  return lb;
}

// ---------------------------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;
  std::string phase;
  LossBreakdown loss;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  Checkpoint model;
  std::vector<EpochLog> log;
  std::size_t examples = 0;
  std::size_t dropped_empty_coarse = 0;
};

inline nlohmann::json training_metadata(const RunConfig& cfg) {
  return nlohmann::json{{"training", cfg.training},
                        {"epochs_total", cfg.training.epochs_deterministic + cfg.training.epochs_nondeterministic}};
}

/// Trains `arch` on `corpus`, writing `<out_dir>/<arch>.ckpt` after every
/// epoch, `<arch>_train_log.csv` and `<arch>_vocab.txt`. FNIC runs
/// epochs_deterministic epochs with gold coarse-word inputs, then continues
/// from those weights with Q inputs; baselines run the same total epochs.
inline TrainResult train(const RunConfig& cfg, Architecture arch, const Corpus& corpus,
                         const std::filesystem::path& out_dir, std::ostream* progress = nullptr) {
  cfg.training.validate();
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
  std::filesystem::create_directories(out_dir);
  const auto& tc = cfg.training;

  auto captions = tokenized_captions(corpus);
  Vocabulary vocab = build_vocabulary(captions, tc.min_count);
  ExampleSet set = make_examples(corpus, vocab, /*drop_empty_coarse=*/arch == Architecture::fnic);
  if (set.examples.empty()) throw std::invalid_argument("train: no usable examples");
  if (progress && set.dropped_empty_coarse && arch == Architecture::fnic) {
    *progress << "dropped " << set.dropped_empty_coarse << " examples with an empty coarse sequence\n";
  }

  ModelConfig mc = cfg.model;
  mc.arch = arch;
  mc.vocab_size = vocab.size();
  mc.d_in = corpus.front().features.cols();
  ModelParams params = ModelParams::initialize(mc, detail::mix_seed(tc.seed, 1));
  AdamState adam = make_adam_state(params);
  std::mt19937_64 shuffle_rng(detail::mix_seed(tc.seed, 2));

  TrainResult result;
  result.examples = set.examples.size();
  result.dropped_empty_coarse = set.dropped_empty_coarse;
  result.checkpoint = out_dir / (std::string(to_string(arch)) + ".ckpt");
  std::ofstream csv(out_dir / (std::string(to_string(arch)) + "_train_log.csv"));
  csv << "epoch,phase,L,L_P,L_F,L_len\n";
  {
    std::ofstream vf(out_dir / (std::string(to_string(arch)) + "_vocab.txt"));
    write_vocabulary(vf, vocab);
  }

  std::vector<std::size_t> order(set.examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t epochs = tc.epochs_deterministic + tc.epochs_nondeterministic;
  std::uint64_t step = 0;
  Checkpoint ckpt{params, vocab, training_metadata(cfg)};

  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    const Phase phase = epoch <= tc.epochs_deterministic ? Phase::deterministic : Phase::nondeterministic;
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    LossBreakdown acc;
    std::size_t seen = 0;
    std::vector<CaptionExample> batch;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + tc.batch_size); ++i)
        batch.push_back(set.examples[order[i]]);
      LossBreakdown lb = train_step(params, adam, batch, phase, tc, detail::mix_seed(tc.seed, 1000 + step++));
      const double w = static_cast<double>(batch.size());
      acc.total += lb.total * w;
      acc.position += lb.position * w;
      acc.fine += lb.fine * w;
      acc.length += lb.length * w;
      seen += batch.size();
    }
    const double inv = 1.0 / static_cast<double>(seen);
    EpochLog row{epoch, arch == Architecture::fnic ? std::string(to_string(phase)) : std::string("standard"),
                 {acc.total * inv, acc.position * inv, acc.fine * inv, acc.length * inv}};
    result.log.push_back(row);
    csv << row.epoch << ',' << row.phase << ',' << std::setprecision(10) << row.loss.total << ','
        << row.loss.position << ',' << row.loss.fine << ',' << row.loss.length << '\n';
    csv.flush();
    ckpt.params = params;
    save_checkpoint(result.checkpoint, ckpt);
    if (progress) {
      *progress << to_string(arch) << " epoch " << epoch << "/" << epochs << " " << row.phase << " L=" << row.loss.total
                << " L_P=" << row.loss.position << " L_F=" << row.loss.fine << " L_len=" << row.loss.length << "\n";
    }
  }
  if (epochs == 0) save_checkpoint(result.checkpoint, ckpt);
  result.model = std::move(ckpt);
  return result;
}

}  // namespace nacap
