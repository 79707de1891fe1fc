#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "nacap/dataset.hpp"

namespace nacap {

/// fnic: GRU aligner + NA fine decoder. naic: NA decoder fed with copied
/// region features. at: causal decoder, word by word.
enum class Architecture { fnic, naic, at };

inline std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::fnic: return "fnic";
    case Architecture::naic: return "naic";
    case Architecture::at: return "at";
  }
  return "?";
}

inline Architecture parse_architecture(std::string_view s) {
  if (s == "fnic") return Architecture::fnic;
  if (s == "naic") return Architecture::naic;
  if (s == "at") return Architecture::at;
  throw ConfigError("unknown architecture '" + std::string(s) + "' (expected fnic, naic or at)");
}

struct ModelConfig {
  Architecture arch = Architecture::fnic;
  std::size_t vocab_size = 0;
  std::size_t d_in = 32;
  std::size_t d_model = 64;
  std::size_t d_hidden = 128;
  std::size_t layers = 1;
  std::size_t heads = 2;
  std::size_t encoder_layers = 1;
  double dropout = 0.1;
  std::size_t n_max = 24;
  std::size_t m_max = 8;

  void validate() const {
    if (vocab_size <= kReservedTokens) throw ConfigError("model: vocab_size must exceed the reserved tokens");
    if (d_in < 1 || d_model < 1 || d_hidden < 1 || layers < 1 || heads < 1 || encoder_layers < 1)
      throw ConfigError("model: all dimensions must be >= 1");
    if (d_model % heads != 0) throw ConfigError("model: d_model must be divisible by heads");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must be in [0, 1)");
    if (n_max < 1 || m_max < 1) throw ConfigError("model: n_max and m_max must be >= 1");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"arch", std::string(to_string(c.arch))},
                     {"vocab_size", c.vocab_size},
                     {"d_in", c.d_in},
                     {"d_model", c.d_model},
                     {"d_hidden", c.d_hidden},
                     {"layers", c.layers},
                     {"heads", c.heads},
                     {"encoder_layers", c.encoder_layers},
                     {"dropout", c.dropout},
                     {"n_max", c.n_max},
                     {"m_max", c.m_max}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.arch = parse_architecture(j.value("arch", std::string(to_string(d.arch))));
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.d_in = j.value("d_in", d.d_in);
  c.d_model = j.value("d_model", d.d_model);
  c.d_hidden = j.value("d_hidden", d.d_hidden);
  c.layers = j.value("layers", d.layers);
  c.heads = j.value("heads", d.heads);
  c.encoder_layers = j.value("encoder_layers", d.encoder_layers);
  c.dropout = j.value("dropout", d.dropout);
  c.n_max = j.value("n_max", d.n_max);
  c.m_max = j.value("m_max", d.m_max);
}

struct TrainConfig {
  double lr = 0.0005;
  double beta1 = 0.8;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  std::size_t batch_size = 32;
  std::size_t epochs_deterministic = 10;
  std::size_t epochs_nondeterministic = 10;
  double length_loss_weight = 0.1;
  std::size_t min_count = 1;
  std::uint64_t seed = 7;

  void validate() const {
    if (!(lr >= 0.0)) throw ConfigError("training: lr must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("training: betas in [0, 1)");
    if (batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
    if (min_count < 1) throw ConfigError("training: min_count must be >= 1");
  }

  bool operator==(const TrainConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"epsilon", c.epsilon},
                     {"weight_decay", c.weight_decay},
                     {"batch_size", c.batch_size},
                     {"epochs_deterministic", c.epochs_deterministic},
                     {"epochs_nondeterministic", c.epochs_nondeterministic},
                     {"length_loss_weight", c.length_loss_weight},
                     {"min_count", c.min_count},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.lr = j.value("lr", d.lr);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.epsilon = j.value("epsilon", d.epsilon);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs_deterministic = j.value("epochs_deterministic", d.epochs_deterministic);
  c.epochs_nondeterministic = j.value("epochs_nondeterministic", d.epochs_nondeterministic);
  c.length_loss_weight = j.value("length_loss_weight", d.length_loss_weight);
  c.min_count = j.value("min_count", d.min_count);
  c.seed = j.value("seed", d.seed);
}

struct DataConfig {
  std::size_t scenes = 2000;
  std::size_t heldout_scenes = 200;
  std::optional<std::string> grammar_path;
  GrammarConfig grammar = GrammarConfig::desk();

  bool operator==(const DataConfig& o) const {
    return scenes == o.scenes && heldout_scenes == o.heldout_scenes && grammar_path == o.grammar_path &&
           nlohmann::json(grammar) == nlohmann::json(o.grammar);
  }
};

/// Everything a pipeline run needs; loaded from JSON, flags override.
struct RunConfig {
  ModelConfig model;
  TrainConfig training;
  DataConfig data;
  std::string mode = "fnic-ndt";

  /// Desk-scale profile: a small model and a budget of about a minute of
  /// CPU per architecture on the default synthetic corpus.
  static RunConfig desk() {
    RunConfig r;
    r.model.d_model = 32;
    r.model.d_hidden = 64;
    r.training.lr = 0.002;
    r.training.epochs_deterministic = 8;
    r.training.epochs_nondeterministic = 8;
    return r;
  }

  /// Table-scale hyper-parameters; too large to train on a desk.
  static RunConfig paper() {
    RunConfig r;
    r.model.d_in = 2048;
    r.model.d_model = 512;
    r.model.d_hidden = 512;
    r.model.layers = 1;
    r.model.heads = 2;
    r.model.dropout = 0.1;
    r.training.lr = 0.0005;
    r.training.beta1 = 0.8;
    r.training.beta2 = 0.999;
    r.training.batch_size = 1024;
    r.training.epochs_deterministic = 10;
    r.training.epochs_nondeterministic = 25;
    r.training.min_count = 5;
    r.data.grammar.regions = 36;
    r.data.grammar.d_in = 2048;
    return r;
  }

  void validate() const {
    training.validate();
    data.grammar.validate();
    if (model.d_in != data.grammar.d_in) throw ConfigError("config: model.d_in differs from data d_in");
  }

  bool operator==(const RunConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const RunConfig& r) {
  nlohmann::json model = r.model;
  model.erase("vocab_size");
  j = nlohmann::json{{"model", model},
                     {"training", r.training},
                     {"data",
                      {{"scenes", r.data.scenes},
                       {"heldout_scenes", r.data.heldout_scenes},
                       {"k", r.data.grammar.regions},
                       {"d_in", r.data.grammar.d_in},
                       {"noise_sigma", r.data.grammar.noise_sigma}}},
                     {"inference", {{"mode", r.mode}}}};
  if (r.data.grammar_path) j["data"]["grammar"] = *r.data.grammar_path;
}

/// Missing keys keep the defaults of `base`.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = RunConfig::desk()) {
  RunConfig r = base;
  if (j.contains("model")) {
    nlohmann::json m = r.model;
    m.update(j.at("model"));
    r.model = m.get<ModelConfig>();
  }
  if (j.contains("training")) {
    nlohmann::json t = r.training;
    t.update(j.at("training"));
    r.training = t.get<TrainConfig>();
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    r.data.scenes = d.value("scenes", r.data.scenes);
    r.data.heldout_scenes = d.value("heldout_scenes", r.data.heldout_scenes);
    if (d.contains("grammar") && d.at("grammar").is_string()) {
      r.data.grammar_path = d.at("grammar").get<std::string>();
      std::ifstream is(*r.data.grammar_path);
      if (!is) throw ConfigError("cannot open grammar file " + *r.data.grammar_path);
      r.data.grammar = nlohmann::json::parse(is).get<GrammarConfig>();
    } else if (d.contains("grammar") && d.at("grammar").is_object()) {
      r.data.grammar = d.at("grammar").get<GrammarConfig>();
    }
    r.data.grammar.regions = d.value("k", r.data.grammar.regions);
    r.data.grammar.d_in = d.value("d_in", r.data.grammar.d_in);
    r.data.grammar.noise_sigma = d.value("noise_sigma", r.data.grammar.noise_sigma);
  }
  if (j.contains("inference")) r.mode = j.at("inference").value("mode", r.mode);
  r.model.d_in = r.data.grammar.d_in;
  return r;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace nacap
