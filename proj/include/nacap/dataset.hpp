#pragma once

// Synthetic scene/caption corpus: generation, coarse-word extraction, and the
// JSON-lines corpus format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "nacap/tensor.hpp"
#include "nacap/vocabulary.hpp"

namespace nacap {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed corpus input; carries the 1-based line and absolute byte offset.
class CorpusFormatError : public std::runtime_error {
 public:
  CorpusFormatError(std::size_t line, std::size_t byte_offset, const std::string& what)
      : std::runtime_error("corpus line " + std::to_string(line) + " (byte offset " + std::to_string(byte_offset) +
                           "): " + what),
        line_(line),
        byte_offset_(byte_offset) {}

  std::size_t line() const { return line_; }
  std::size_t byte_offset() const { return byte_offset_; }

 private:
  std::size_t line_;
  std::size_t byte_offset_;
};

/// Templates use `{0}`, `{1}`, ... for object phrases ("<attribute> <label>"),
/// `{rel}` for a relation word drawn independently per occurrence and
/// `{setting}` for the scene setting. A caption mentions as many objects as
/// its template has object slots, in a random order.
struct GrammarConfig {
  std::vector<std::string> objects;
  std::vector<std::string> attributes;
  std::vector<std::string> settings;
  std::vector<std::string> relations;
  std::vector<std::string> templates;
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  std::size_t regions = 6;
  std::size_t d_in = 32;
  double noise_sigma = 0.1;
  double attribute_scale = 0.5;
  std::size_t min_captions = 1;
  std::size_t max_captions = 5;
  std::size_t grid = 3;
  std::uint64_t prototype_seed = 20200101;

  static GrammarConfig desk() {
    GrammarConfig g;
    g.objects = {"dog",      "cat",      "horse",         "cow",           "sheep",         "bird",
                 "duck",     "bear",     "zebra",         "giraffe",       "elephant",      "rabbit",
                 "ball",     "kite",     "frisbee",       "umbrella",      "bicycle",       "car",
                 "truck",    "bus",      "boat",          "train",         "chair",         "bench",
                 "table",    "lamp",     "clock",         "vase",          "bottle",        "cup",
                 "bowl",     "book",     "laptop",        "phone",         "hat",           "bag",
                 "box",      "tree",     "flower",        "rock",          "fence",         "sign",
                 "pizza",    "cake",     "apple",         "banana",        "sandwich",      "kettle",
                 "fire hydrant", "traffic light", "tennis racket", "baseball glove"};
    g.attributes = {"red", "blue", "green", "yellow", "black", "white", "brown", "orange", "pink", "purple"};
    g.settings = {"grass", "street", "beach", "kitchen", "park", "field", "room", "snow"};
    g.relations = {"near", "beside", "behind", "with"};
    g.templates = {"a {0} in the {setting}", "a {0} {rel} a {1} in the {setting}",
                   "a {0} {rel} a {1} {rel} a {2} in the {setting}"};
    return g;
  }

  void validate() const {
    if (objects.empty()) throw ConfigError("grammar: empty object label set");
    if (attributes.empty()) throw ConfigError("grammar: empty attribute set");
    if (settings.empty()) throw ConfigError("grammar: empty setting set");
    if (templates.empty()) throw ConfigError("grammar: no caption templates");
    if (min_objects < 1 || min_objects > max_objects) throw ConfigError("grammar: need 1 <= min_objects <= max_objects");
    if (max_objects > objects.size()) throw ConfigError("grammar: max_objects exceeds the label set");
    if (regions < max_objects + 1) throw ConfigError("grammar: regions must cover objects plus the setting");
    if (grid * grid < max_objects) throw ConfigError("grammar: layout grid too small");
    if (d_in < 1) throw ConfigError("grammar: d_in must be positive");
    if (min_captions < 1 || min_captions > max_captions) throw ConfigError("grammar: bad caption count range");
    if (relations.empty()) {
      for (const auto& t : templates)
        if (t.find("{rel}") != std::string::npos) throw ConfigError("grammar: template uses {rel} but no relations");
    }
  }
};

inline void to_json(nlohmann::json& j, const GrammarConfig& g) {
  j = nlohmann::json{{"objects", g.objects},
                     {"attributes", g.attributes},
                     {"settings", g.settings},
                     {"relations", g.relations},
                     {"templates", g.templates},
                     {"min_objects", g.min_objects},
                     {"max_objects", g.max_objects},
                     {"regions", g.regions},
                     {"d_in", g.d_in},
                     {"noise_sigma", g.noise_sigma},
                     {"attribute_scale", g.attribute_scale},
                     {"min_captions", g.min_captions},
                     {"max_captions", g.max_captions},
                     {"grid", g.grid},
                     {"prototype_seed", g.prototype_seed}};
}

inline void from_json(const nlohmann::json& j, GrammarConfig& g) {
  GrammarConfig d = GrammarConfig::desk();
  g.objects = j.value("objects", d.objects);
  g.attributes = j.value("attributes", d.attributes);
  g.settings = j.value("settings", d.settings);
  g.relations = j.value("relations", d.relations);
  g.templates = j.value("templates", d.templates);
  g.min_objects = j.value("min_objects", d.min_objects);
  g.max_objects = j.value("max_objects", d.max_objects);
  g.regions = j.value("regions", d.regions);
  g.d_in = j.value("d_in", d.d_in);
  g.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  g.attribute_scale = j.value("attribute_scale", d.attribute_scale);
  g.min_captions = j.value("min_captions", d.min_captions);
  g.max_captions = j.value("max_captions", d.max_captions);
  g.grid = j.value("grid", d.grid);
  g.prototype_seed = j.value("prototype_seed", d.prototype_seed);
}

struct SceneObject {
  std::string label;
  std::string attribute;
  std::size_t row = 0;
  std::size_t col = 0;
};

struct Scene {
  std::string scene_id;
  std::string setting;
  std::vector<SceneObject> objects;
};

/// k region vectors of width d_in.
struct RegionFeatureSet {
  Tensor features;

  std::size_t k() const { return features.rows(); }
  std::size_t d_in() const { return features.cols(); }
  bool operator==(const RegionFeatureSet&) const = default;
};

struct GeneratedScene {
  Scene scene;
  RegionFeatureSet regions;
  std::vector<std::string> labels;
  std::vector<std::string> captions;
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::vector<double> gaussian_vector(std::uint64_t seed, std::size_t n, double sigma) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sigma);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

inline std::size_t object_slots(std::string_view tmpl) {
  std::size_t n = 0;
  while (tmpl.find("{" + std::to_string(n) + "}") != std::string_view::npos) ++n;
  return n;
}

inline void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
}

inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace detail

inline constexpr std::string_view kBackgroundLabel = "<background>";

/// Feature prototype of a label; fixed by (prototype_seed, label).
inline std::vector<double> label_prototype(const GrammarConfig& g, std::string_view label) {
  return detail::gaussian_vector(detail::splitmix64(g.prototype_seed ^ detail::fnv1a(label)), g.d_in, 1.0);
}

inline std::vector<double> attribute_offset(const GrammarConfig& g, std::string_view attribute) {
  return detail::gaussian_vector(detail::splitmix64(~g.prototype_seed ^ detail::fnv1a(attribute)), g.d_in,
                                 g.attribute_scale);
}

/// Deterministic in (seed, grammar).
inline GeneratedScene generate_scene(std::uint64_t seed, const GrammarConfig& g) {
  g.validate();
  std::mt19937_64 rng(detail::splitmix64(seed));
  GeneratedScene out;
  out.scene.scene_id = "scene-" + std::to_string(seed);
  out.scene.setting = g.settings[detail::uniform_index(rng, g.settings.size())];

  const std::size_t n_obj = std::uniform_int_distribution<std::size_t>(g.min_objects, g.max_objects)(rng);
  std::vector<std::size_t> label_ids(g.objects.size());
  for (std::size_t i = 0; i < label_ids.size(); ++i) label_ids[i] = i;
  std::shuffle(label_ids.begin(), label_ids.end(), rng);
  std::vector<std::size_t> cells(g.grid * g.grid);
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
  std::shuffle(cells.begin(), cells.end(), rng);
  for (std::size_t i = 0; i < n_obj; ++i) {
    SceneObject o;
    o.label = g.objects[label_ids[i]];
    o.attribute = g.attributes[detail::uniform_index(rng, g.attributes.size())];
    o.row = cells[i] / g.grid;
    o.col = cells[i] % g.grid;
    out.scene.objects.push_back(o);
    out.labels.push_back(o.label);
  }
  out.labels.push_back(out.scene.setting);

  // Regions: objects, setting, then background filler; rows shuffled.
  std::normal_distribution<double> noise(0.0, g.noise_sigma);
  std::vector<std::vector<double>> rows;
  for (const auto& o : out.scene.objects) {
    auto v = label_prototype(g, o.label);
    auto a = attribute_offset(g, o.attribute);
    for (std::size_t j = 0; j < v.size(); ++j) v[j] += a[j];
    rows.push_back(std::move(v));
  }
  rows.push_back(label_prototype(g, out.scene.setting));
  while (rows.size() < g.regions) rows.push_back(label_prototype(g, kBackgroundLabel));
  for (auto& r : rows)
    for (double& x : r) x += noise(rng);
  std::shuffle(rows.begin(), rows.end(), rng);
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  out.regions.features = Tensor::matrix(rows.size(), g.d_in, std::move(flat));

  const std::size_t n_captions = std::uniform_int_distribution<std::size_t>(g.min_captions, g.max_captions)(rng);
  for (std::size_t c = 0; c < n_captions; ++c) {
    // Prefer templates that mention every object; fall back to the largest that fits.
    std::size_t best = 0;
    for (const auto& t : g.templates) {
      const std::size_t s = detail::object_slots(t);
      if (s <= n_obj) best = std::max(best, s);
    }
    std::vector<const std::string*> fitting;
    for (const auto& t : g.templates)
      if (detail::object_slots(t) == best) fitting.push_back(&t);
    if (fitting.empty()) throw ConfigError("grammar: no template fits a scene with " + std::to_string(n_obj) + " objects");
    std::string caption = *fitting[detail::uniform_index(rng, fitting.size())];
    std::vector<std::size_t> order(n_obj);
    for (std::size_t i = 0; i < n_obj; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < best; ++s) {
      const auto& o = out.scene.objects[order[s]];
      detail::replace_all(caption, "{" + std::to_string(s) + "}", o.attribute + " " + o.label);
    }
    for (std::size_t pos = caption.find("{rel}"); pos != std::string::npos; pos = caption.find("{rel}")) {
      caption.replace(pos, 5, g.relations[detail::uniform_index(rng, g.relations.size())]);
    }
    detail::replace_all(caption, "{setting}", out.scene.setting);
    out.captions.push_back(join(tokenize(caption)));
  }
  return out;
}

/// Subsequence of `target` made of members of `labels`, in target order,
/// duplicates kept. Reserved ids never qualify when T is TokenId.
template <class T, class Set>
std::vector<T> extract_ordered_words(std::span<const T> target, const Set& labels) {
  std::vector<T> out;
  for (const T& tok : target) {
    if constexpr (std::is_same_v<T, TokenId>) {
      if (tok == kPad || tok == kBos || tok == kEos) continue;
    }
    if (labels.count(tok)) out.push_back(tok);
  }
  return out;
}

/// Splits multi-word labels into lowercased unigrams.
inline std::set<std::string> label_tokens(std::span<const std::string> labels) {
  std::set<std::string> out;
  for (const auto& l : labels)
    for (auto& t : tokenize(l)) out.insert(std::move(t));
  return out;
}

// ---------------------------------------------------------------------------
// Corpus

struct CorpusRecord {
  std::string scene_id;
  Tensor features;
  std::vector<std::string> labels;
  std::vector<std::string> captions;

  bool operator==(const CorpusRecord&) const = default;
};

using Corpus = std::vector<CorpusRecord>;

inline CorpusRecord to_record(const GeneratedScene& s) {
  return CorpusRecord{s.scene.scene_id, s.regions.features, s.labels, s.captions};
}

/// Scene i is generated from a seed mixed from (base_seed, i).
inline Corpus generate_corpus(std::uint64_t base_seed, std::size_t scenes, const GrammarConfig& g) {
  Corpus c;
  c.reserve(scenes);
  for (std::size_t i = 0; i < scenes; ++i) {
    c.push_back(to_record(generate_scene(detail::splitmix64(base_seed * 1000003ull + i), g)));
  }
  return c;
}

inline nlohmann::json record_to_json(const CorpusRecord& r) {
  nlohmann::json feats = nlohmann::json::array();
  const std::size_t k = r.features.rows(), d = r.features.cols();
  for (std::size_t i = 0; i < k; ++i) {
    feats.push_back(std::vector<double>(r.features.values.begin() + i * d, r.features.values.begin() + (i + 1) * d));
  }
  return nlohmann::json{{"scene_id", r.scene_id}, {"features", feats}, {"labels", r.labels}, {"captions", r.captions}};
}

inline void write_corpus(std::ostream& os, const Corpus& corpus) {
  for (const auto& r : corpus) os << record_to_json(r).dump() << '\n';
}

inline void write_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_corpus(os, corpus);
  if (!os) throw std::runtime_error("write failed: " + path);
}

namespace detail {

inline CorpusRecord parse_record(const std::string& line, std::size_t lineno, std::size_t offset) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t at = offset + (e.byte > 0 ? e.byte - 1 : 0);
    throw CorpusFormatError(lineno, at, std::string("invalid JSON: ") + e.what());
  }
  auto fail = [&](const std::string& msg) -> CorpusFormatError { return CorpusFormatError(lineno, offset, msg); };
  if (!j.is_object()) throw fail("record must be a JSON object");
  for (const char* key : {"scene_id", "features", "labels", "captions"}) {
    if (!j.contains(key)) throw fail(std::string("missing key '") + key + "'");
  }
  CorpusRecord r;
  try {
    r.scene_id = j.at("scene_id").get<std::string>();
    r.labels = j.at("labels").get<std::vector<std::string>>();
    r.captions = j.at("captions").get<std::vector<std::string>>();
    const auto& f = j.at("features");
    if (!f.is_array() || f.empty()) throw fail("features must be a non-empty array of rows");
    std::vector<double> flat;
    std::size_t width = 0;
    for (const auto& row : f) {
      auto v = row.get<std::vector<double>>();
      if (v.empty()) throw fail("feature rows must be non-empty");
      if (width == 0) width = v.size();
      if (v.size() != width) throw fail("feature rows have different widths");
      for (double x : v)
        if (!std::isfinite(x)) throw fail("non-finite feature value");
      flat.insert(flat.end(), v.begin(), v.end());
    }
    r.features = Tensor::matrix(f.size(), width, std::move(flat));
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("bad field type: ") + e.what());
  }
  return r;
}

}  // namespace detail

inline Corpus read_corpus(std::istream& is) {
  Corpus c;
  std::string line;
  std::size_t lineno = 0, offset = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::size_t start = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    c.push_back(detail::parse_record(line, lineno, start));
  }
  return c;
}

inline Corpus read_corpus(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open corpus " + path);
  return read_corpus(is);
}

// ---------------------------------------------------------------------------
// Training examples

/// One (image, caption) pair. `target` is EOS-terminated; `coarse` is the
/// ordered label subsequence without EOS.
struct CaptionExample {
  std::string scene_id;
  RegionFeatureSet regions;
  std::vector<TokenId> target;
  std::vector<TokenId> coarse;
};

struct ExampleSet {
  std::vector<CaptionExample> examples;
  std::size_t dropped_empty_coarse = 0;
};

inline std::vector<std::vector<std::string>> tokenized_captions(const Corpus& corpus) {
  std::vector<std::vector<std::string>> out;
  for (const auto& r : corpus)
    for (const auto& c : r.captions) out.push_back(tokenize(c));
  return out;
}

/// One example per caption. Examples whose coarse sequence is empty are
/// dropped when `drop_empty_coarse` is set and counted either way.
inline ExampleSet make_examples(const Corpus& corpus, const Vocabulary& vocab, bool drop_empty_coarse = true) {
  ExampleSet set;
  for (const auto& r : corpus) {
    std::unordered_set<TokenId> label_ids;
    for (const auto& t : label_tokens(r.labels))
      if (vocab.contains(t)) label_ids.insert(vocab.id(t));
    for (const auto& caption : r.captions) {
      CaptionExample ex;
      ex.scene_id = r.scene_id;
      ex.regions.features = r.features;
      auto toks = tokenize(caption);
      ex.target = vocab.encode(toks);
      ex.coarse = extract_ordered_words(std::span<const TokenId>(ex.target), label_ids);
      ex.target.push_back(kEos);
      if (ex.coarse.empty()) {
        ++set.dropped_empty_coarse;
        if (drop_empty_coarse) continue;
      }
      set.examples.push_back(std::move(ex));
    }
  }
  return set;
}

}  // namespace nacap
