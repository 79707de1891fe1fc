#pragma once

// Binary checkpoint:
//   8-byte magic "NACAPCKP"
//   u32 format version
//   u64 length + UTF-8 JSON (model config, vocabulary, metadata)
//   per tensor until EOF: u32 name length, name bytes, u32 rank,
//                         u64 dims[rank], f64 values[] (all little-endian)

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "nacap/params.hpp"
#include "nacap/vocabulary.hpp"

namespace nacap {

inline constexpr std::array<char, 8> kCheckpointMagic = {'N', 'A', 'C', 'A', 'P', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ModelParams params;
  Vocabulary vocab;
  nlohmann::json metadata = nlohmann::json::object();
};

namespace detail {

template <class U>
void put_le(std::ostream& os, U value) {
  static_assert(std::is_unsigned_v<U>);
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  os.write(buf, sizeof(U));
}

template <class U>
bool get_le(std::istream& is, U& value) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) return false;
  value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(buf[i]) << (8 * i);
  return true;
}

template <class U>
U need_le(std::istream& is, const char* what) {
  U v{};
  if (!get_le(is, v)) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  return v;
}

}  // namespace detail

inline void save_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_le<std::uint32_t>(os, kCheckpointVersion);
  const auto& toks = ckpt.vocab.tokens();
  nlohmann::json header = {{"model", ckpt.params.config()},
                           {"vocab", std::vector<std::string>(toks.begin() + kReservedTokens, toks.end())},
                           {"metadata", ckpt.metadata}};
  const std::string text = header.dump();
  detail::put_le<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (std::size_t i = 0; i < ckpt.params.count(); ++i) {
    const std::string& name = ckpt.params.name(i);
    const Tensor& t = ckpt.params.tensor(i);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) detail::put_le<std::uint64_t>(os, d);
    for (double x : t.values) detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(x));
  }
  if (!os) throw CheckpointError("checkpoint write failed");
}

inline Checkpoint load_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic) {
    throw CheckpointError("not a checkpoint: bad magic bytes");
  }
  const auto version = detail::need_le<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto len = detail::need_le<std::uint64_t>(is, "header length");
  if (len > (1ull << 32)) throw CheckpointError("checkpoint header length is implausible");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw CheckpointError("checkpoint truncated in header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  std::vector<std::pair<std::string, Tensor>> named;
  while (true) {
    std::uint32_t name_len = 0;
    if (!detail::get_le(is, name_len)) {
      if (is.gcount() == 0 && is.eof()) break;
      throw CheckpointError("checkpoint truncated in tensor record");
    }
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw CheckpointError("checkpoint truncated in tensor name");
    const auto rank = detail::need_le<std::uint32_t>(is, "tensor rank");
    if (rank > 8) throw CheckpointError("tensor '" + name + "' has implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = detail::need_le<std::uint64_t>(is, "tensor dims");
    std::vector<double> values(shape_size(shape));
    for (double& x : values) x = std::bit_cast<double>(detail::need_le<std::uint64_t>(is, "tensor values"));
    named.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }

  Checkpoint ckpt;
  try {
    auto config = header.at("model").get<ModelConfig>();
    auto vocab_tokens = header.at("vocab").get<std::vector<std::string>>();
    ckpt.vocab = Vocabulary::from_tokens(vocab_tokens);
    if (config.vocab_size != ckpt.vocab.size()) throw CheckpointError("checkpoint vocabulary size mismatch");
    ckpt.metadata = header.value("metadata", nlohmann::json::object());
    ckpt.params = ModelParams::from_named(config, std::move(named));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header: ") + e.what());
  }
  return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  save_checkpoint(os, ckpt);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  return load_checkpoint(is);
}

}  // namespace nacap
