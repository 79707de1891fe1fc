#pragma once

// The `nacap` command line: gen-data, train, generate, eval, bench.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nacap/checkpoint.hpp"
#include "nacap/metrics.hpp"
#include "nacap/trainer.hpp"

namespace nacap {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

inline std::filesystem::path checkpoint_for(const std::filesystem::path& dir, Architecture arch) {
  return dir / (std::string(to_string(arch)) + ".ckpt");
}

struct CliState {
  // shared
  std::string config_path;
  std::optional<std::uint64_t> seed;
  // gen-data
  std::optional<std::size_t> scenes;
  std::string out;
  std::string grammar_path;
  // train
  std::string corpus;
  std::string arch = "fnic";
  std::optional<std::size_t> epochs_det, epochs_ndt, batch;
  std::optional<double> lr;
  // generate / eval
  std::string model;
  std::string mode;
  std::string train_corpus;
  std::string json_out;
  bool latency = false;
  std::optional<std::size_t> limit;
  // bench
  std::string models_dir;
  std::string modes = "at,fnic-ndt,naic";
  std::size_t repeats = 30;
  std::size_t warmup = 5;
  std::size_t samples = 10;
  std::optional<std::size_t> fixed_length;
};

inline RunConfig resolve_config(const CliState& s) {
  RunConfig cfg = s.config_path.empty() ? RunConfig::desk() : load_run_config(s.config_path);
  if (s.seed) cfg.training.seed = *s.seed;
  if (s.epochs_det) cfg.training.epochs_deterministic = *s.epochs_det;
  if (s.epochs_ndt) cfg.training.epochs_nondeterministic = *s.epochs_ndt;
  if (s.batch) cfg.training.batch_size = *s.batch;
  if (s.lr) cfg.training.lr = *s.lr;
  if (!s.grammar_path.empty()) {
    std::ifstream is(s.grammar_path);
    if (!is) throw ConfigError("cannot open grammar file " + s.grammar_path);
    auto keep_k = cfg.data.grammar.regions;
    auto keep_d = cfg.data.grammar.d_in;
    cfg.data.grammar = nlohmann::json::parse(is).get<GrammarConfig>();
    cfg.data.grammar.regions = keep_k;
    cfg.data.grammar.d_in = keep_d;
    cfg.data.grammar_path = s.grammar_path;
  }
  cfg.validate();
  return cfg;
}

inline Corpus take(Corpus c, std::optional<std::size_t> limit) {
  if (limit && *limit < c.size()) c.resize(*limit);
  return c;
}

inline int cmd_gen_data(const CliState& s, std::ostream& out) {
  RunConfig cfg = resolve_config(s);
  const std::size_t scenes = s.scenes.value_or(cfg.data.scenes);
  Corpus corpus = generate_corpus(s.seed.value_or(cfg.training.seed), scenes, cfg.data.grammar);
  write_corpus(s.out, corpus);
  out << "wrote " << corpus.size() << " records to " << s.out << "\n";
  return kExitOk;
}

inline int cmd_train(const CliState& s, std::ostream& out) {
  RunConfig cfg = resolve_config(s);
  Corpus corpus = read_corpus(s.corpus);
  std::vector<Architecture> archs;
  if (s.arch == "all") {
    archs = {Architecture::fnic, Architecture::naic, Architecture::at};
  } else {
    for (const auto& a : split_list(s.arch)) archs.push_back(parse_architecture(a));
  }
  for (Architecture a : archs) {
    TrainResult r = train(cfg, a, corpus, s.out, &out);
    out << "checkpoint " << r.checkpoint.string() << "\n";
  }
  return kExitOk;
}

inline int cmd_generate(const CliState& s, std::ostream& out) {
  Checkpoint ckpt = load_checkpoint(std::filesystem::path(s.model));
  const DecodeMode mode = parse_mode(s.mode.empty() ? "fnic-ndt" : s.mode);
  Corpus corpus = take(read_corpus(s.corpus), s.limit);
  std::ofstream file;
  std::ostream* os = &out;
  if (!s.out.empty()) {
    file.open(s.out);
    if (!file) throw std::runtime_error("cannot open " + s.out + " for writing");
    os = &file;
  }
  for (const auto& rec : corpus) {
    DecodedCaption c = generate(ckpt.params, rec.features, mode);
    nlohmann::json j = {{"scene_id", rec.scene_id},
                        {"caption", ckpt.vocab.decode_text(c.tokens)},
                        {"latency_ns", c.wall_time_ns},
                        {"mode", to_string(mode)}};
    *os << j.dump() << "\n";
  }
  if (!s.out.empty()) out << "wrote " << corpus.size() << " captions to " << s.out << "\n";
  return kExitOk;
}

inline int cmd_eval(const CliState& s, std::ostream& out) {
  Checkpoint ckpt = load_checkpoint(std::filesystem::path(s.model));
  const DecodeMode mode = parse_mode(s.mode.empty() ? "fnic-ndt" : s.mode);
  Corpus heldout = take(read_corpus(s.corpus), s.limit);
  Corpus training = s.train_corpus.empty() ? Corpus{} : read_corpus(s.train_corpus);
  EvalReport r = evaluate(ckpt.params, ckpt.vocab, heldout, training, mode, s.latency);
  print_report(out, r);
  const std::string json = nlohmann::json(r).dump(2);
  out << json << "\n";
  if (!s.json_out.empty()) {
    std::ofstream f(s.json_out);
    if (!f) throw std::runtime_error("cannot open " + s.json_out + " for writing");
    f << json << "\n";
  }
  return kExitOk;
}

inline int cmd_bench(const CliState& s, std::ostream& out) {
  std::vector<DecodeMode> modes;
  for (const auto& m : split_list(s.modes)) modes.push_back(parse_mode(m));
  if (modes.empty()) throw ConfigError("bench: no modes given");
  std::map<Architecture, Checkpoint> loaded;
  for (DecodeMode m : modes) {
    const Architecture a = required_architecture(m);
    if (!loaded.contains(a)) loaded.emplace(a, load_checkpoint(checkpoint_for(s.models_dir, a)));
  }
  std::vector<Tensor> samples;
  if (!s.corpus.empty()) {
    for (const auto& rec : take(read_corpus(s.corpus), s.samples)) samples.push_back(rec.features);
  } else {
    RunConfig cfg = resolve_config(s);
    for (const auto& rec : generate_corpus(s.seed.value_or(cfg.training.seed) + 1, s.samples, cfg.data.grammar))
      samples.push_back(rec.features);
  }
  std::vector<BenchModel> models;
  for (DecodeMode m : modes) models.push_back({m, &loaded.at(required_architecture(m)).params});
  BenchOptions opt;
  opt.repeats = s.repeats;
  opt.warmup = s.warmup;
  opt.decode.fixed_length = s.fixed_length;
  BenchReport rep = latency_bench(models, samples, opt);
  std::ofstream file;
  std::ostream* os = &out;
  if (!s.out.empty()) {
    file.open(s.out);
    if (!file) throw std::runtime_error("cannot open " + s.out + " for writing");
    os = &file;
  }
  write_bench_csv(*os, rep);
  return kExitOk;
}

}  // namespace detail

/// Runs the command line; returns 0 on success, 1 on usage errors and 2 on
/// runtime errors.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Non-autoregressive image captioning with a position aligner", "nacap"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "1.0.0");
  detail::CliState s;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", s.config_path, "Run configuration JSON (default: built-in desk profile)")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", s.seed, "Seed for all randomness (overrides the config)");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus as JSON lines");
  add_config(gen);
  gen->add_option("--scenes", s.scenes, "Number of scenes (default: data.scenes from the config)");
  gen->add_option("--grammar", s.grammar_path, "Grammar JSON replacing the built-in one")->check(CLI::ExistingFile);
  gen->add_option("--out", s.out, "Output JSONL path")->required();

  auto* tr = app.add_subcommand("train", "Train a model; writes <out>/<arch>.ckpt every epoch plus a CSV log");
  add_config(tr);
  tr->add_option("--corpus", s.corpus, "Training corpus (JSONL)")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", s.out, "Output directory")->required();
  tr->add_option("--arch", s.arch, "fnic, naic, at, a comma list, or all")->capture_default_str();
  tr->add_option("--epochs-det", s.epochs_det, "Epochs with deterministic decoder inputs");
  tr->add_option("--epochs-ndt", s.epochs_ndt, "Epochs with non-deterministic decoder inputs");
  tr->add_option("--batch", s.batch, "Batch size");
  tr->add_option("--lr", s.lr, "Learning rate");

  auto* ge = app.add_subcommand("generate", "Caption every image of a corpus; JSON lines output");
  ge->add_option("--model", s.model, "Checkpoint path")->required()->check(CLI::ExistingFile);
  ge->add_option("--corpus", s.corpus, "Corpus with region features (JSONL)")->required()->check(CLI::ExistingFile);
  ge->add_option("--mode", s.mode, "fnic-ndt (default), fnic-dt, at or naic");
  ge->add_option("--out", s.out, "Output path (default: stdout)");
  ge->add_option("--limit", s.limit, "Caption at most this many images");

  auto* ev = app.add_subcommand("eval", "BLEU and diversity on a held-out corpus");
  ev->add_option("--model", s.model, "Checkpoint path")->required()->check(CLI::ExistingFile);
  ev->add_option("--corpus", s.corpus, "Held-out corpus (JSONL)")->required()->check(CLI::ExistingFile);
  ev->add_option("--train-corpus", s.train_corpus, "Training corpus, for the novel-caption percentage")
      ->check(CLI::ExistingFile);
  ev->add_option("--mode", s.mode, "fnic-ndt (default), fnic-dt, at or naic");
  ev->add_option("--json", s.json_out, "Also write the report JSON here");
  ev->add_flag("--latency", s.latency, "Include mean decode latency in the report");
  ev->add_option("--limit", s.limit, "Evaluate at most this many images");

  auto* be = app.add_subcommand("bench", "Single-sentence decode latency per mode; CSV output");
  add_config(be);
  be->add_option("--models", s.models_dir, "Directory holding <arch>.ckpt files")
      ->required()
      ->check(CLI::ExistingDirectory);
  be->add_option("--modes", s.modes, "Comma-separated decode modes")->capture_default_str();
  be->add_option("--repeats", s.repeats, "Timed passes over the samples (>= 20)")
      ->capture_default_str()
      ->check(CLI::Range(20, 1000000));
  be->add_option("--warmup", s.warmup, "Discarded decodes per mode")->capture_default_str();
  be->add_option("--samples", s.samples, "Images to decode")->capture_default_str()->check(CLI::PositiveNumber);
  be->add_option("--corpus", s.corpus, "Take sample images from this corpus instead of generating them")
      ->check(CLI::ExistingFile);
  be->add_option("--fixed-length", s.fixed_length, "Force every caption to this many words");
  be->add_option("--out", s.out, "CSV output path (default: stdout)");

  app.footer("Environment: NACAP_THREADS caps worker threads used for training.");

  std::vector<const char*> argv;
  argv.push_back("nacap");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    const CLI::App* target = &app;
    for (const auto* sub : app.get_subcommands()) target = sub;
    out << target->help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    out << e.what() << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* failed = &app;
    for (const auto* sub : app.get_subcommands()) failed = sub;
    err << failed->help();
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return detail::cmd_gen_data(s, out);
    if (tr->parsed()) return detail::cmd_train(s, out);
    if (ge->parsed()) return detail::cmd_generate(s, out);
    if (ev->parsed()) return detail::cmd_eval(s, out);
    if (be->parsed()) return detail::cmd_bench(s, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace nacap
