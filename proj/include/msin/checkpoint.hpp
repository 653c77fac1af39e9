// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msin/model.hpp"
#include "msin/trainer.hpp"

namespace msin {

inline constexpr char kCheckpointMagic[4] = {'M', 'S', 'N', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  nlohmann::json meta = nlohmann::json::object();  // step, seed, metric, vocab, normalizer
  ModelParams<float> params;
};

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    out_.insert(out_.end(), c, c + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  std::vector<unsigned char>& bytes() { return out_; }

 private:
  std::vector<unsigned char> out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<unsigned char>& in) : in_(in) {}

  void need(std::size_t n, const std::string& what) {
    if (in_.size() - pos_ < n) {
      throw CheckpointError("checkpoint truncated while reading " + what + " (needs " +
                            std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                            ", " + std::to_string(in_.size() - pos_) + " left)");
    }
  }
  template <typename U>
  U le(const std::string& what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::string str(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<unsigned char>& in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> checkpoint_bytes(Checkpoint& ck) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  const nlohmann::json header = {
      {"model", to_json(ck.model)}, {"train", to_json(ck.train)}, {"meta", ck.meta}};
  const std::string text = header.dump();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.raw(text.data(), text.size());
  auto slots = ck.params.slots();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(slots.size()));
  for (auto& s : slots) {
    if (s.name.size() > 0xffff) throw CheckpointError("tensor name too long: " + s.name);
    w.le<std::uint16_t>(static_cast<std::uint16_t>(s.name.size()));
    w.raw(s.name.data(), s.name.size());
    const auto& shape = s.tensor->shape();
    w.le<std::uint8_t>(static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (float v : s.tensor->values()) w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(v));
  }
  return std::move(w.bytes());
}

inline void save_checkpoint(Checkpoint& ck, const std::string& path) {
  const auto bytes = checkpoint_bytes(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw DatasetError("failed writing checkpoint " + path);
}

/// Parses a checkpoint image. Tensor names and shapes must match the
/// structure implied by the stored model config and, when given, by
/// `expected`.
inline Checkpoint parse_checkpoint(const std::vector<unsigned char>& bytes,
                                   const std::optional<ModelConfig>& expected = std::nullopt) {
  detail::ByteReader r(bytes);
  if (r.str(4, "magic") != std::string(kCheckpointMagic, 4)) {
    throw CheckpointError("not a checkpoint: bad magic (expected MSN1)");
  }
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto json_len = r.le<std::uint32_t>("config length");
  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(r.str(json_len, "config"));
    ck.model = model_config_from_json(header.at("model"));
    ck.train = train_config_from_json(header.at("train"));
    ck.meta = header.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint config: ") + e.what());
  } catch (const UsageError& e) {
    throw CheckpointError(std::string("bad checkpoint config: ") + e.what());
  }
  if (expected) {
    const auto want = to_json(*expected), have = to_json(ck.model);
    for (auto it = want.begin(); it != want.end(); ++it) {
      if (have.at(it.key()) != it.value()) {
        throw CheckpointError("checkpoint model config mismatch on '" + it.key() + "': stored " +
                              have.at(it.key()).dump() + ", expected " + it.value().dump());
      }
    }
  }

  Rng dummy(0);
  ck.params = init_params(ck.model, dummy);
  std::map<std::string, BasicTensor<float>*> slots;
  for (auto& s : ck.params.slots()) slots[s.name] = s.tensor;
  std::map<std::string, bool> seen;

  const auto count = r.le<std::uint32_t>("tensor count");
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = r.le<std::uint16_t>("tensor name length");
    const auto name = r.str(name_len, "tensor name");
    auto it = slots.find(name);
    if (it == slots.end()) {
      throw CheckpointError("unknown tensor '" + name + "' for variant " +
                            to_string(ck.model.variant));
    }
    if (seen[name]) throw CheckpointError("duplicate tensor '" + name + "'");
    seen[name] = true;
    const auto rank = r.le<std::uint8_t>("rank of " + name);
    Shape shape;
    for (std::uint8_t k = 0; k < rank; ++k) shape.push_back(r.le<std::uint32_t>("dims of " + name));
    auto& tensor = *it->second;
    if (shape != tensor.shape()) {
      throw CheckpointError("tensor '" + name + "' has shape " + shape_str(shape) +
                            ", config implies " + shape_str(tensor.shape()));
    }
    r.need(4 * tensor.numel(), "data of " + name);
    for (auto& v : tensor.values()) v = std::bit_cast<float>(r.le<std::uint32_t>("data of " + name));
  }
  for (auto& [name, _] : slots) {
    if (!seen[name]) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
  }
  if (!r.done()) {
    throw CheckpointError("trailing bytes after last tensor at offset " + std::to_string(r.pos()));
  }
  return ck;
}

inline std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Checkpoint load_checkpoint(const std::string& path,
                                  const std::optional<ModelConfig>& expected = std::nullopt) {
  try {
    return parse_checkpoint(read_bytes(path), expected);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path + ": " + e.what());
  }
}

}  // namespace msin
