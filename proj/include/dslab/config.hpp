#pragma once

#include <cstdint>
#include <fstream>
#include <ostream>
#include <string>
#include <tuple>

#include <json.hpp>

#include "dslab/common.hpp"

namespace dslab {

// Encoder shape. Written (E, H, I, L, A) in tables, matching the usual
// embedding / hidden / intermediate / layers / heads ordering.
struct ModelConfig {
  std::int64_t embedding = 256;     // E
  std::int64_t hidden = 256;        // H
  std::int64_t intermediate = 1024; // I
  std::int64_t layers = 8;          // L
  std::int64_t heads = 8;           // A
  std::int64_t vocab = 19000;       // V
  std::int64_t seq_len = 128;       // S, training sequence length
  std::int64_t max_positions = 512; // learned position slots
  double dropout = 0.10;

  std::int64_t key_size() const { return hidden / heads; }

  void validate() const {
    if (embedding < 1 || hidden < 1 || intermediate < 1 || layers < 1 || heads < 1)
      throw Error("model config: E, H, I, L, A must all be >= 1");
    if (hidden % heads != 0)
      throw Error("model config: hidden size " + std::to_string(hidden) + " not divisible by " +
                  std::to_string(heads) + " heads");
    if (vocab < 1 || seq_len < 1) throw Error("model config: V and S must be >= 1");
    if (max_positions < seq_len) throw Error("model config: max_positions must cover seq_len");
    if (dropout < 0.0 || dropout >= 1.0) throw Error("model config: dropout must be in [0, 1)");
  }

  std::string shape() const {
    return "(" + std::to_string(embedding) + ", " + std::to_string(hidden) + ", " + std::to_string(intermediate) +
           ", " + std::to_string(layers) + ", " + std::to_string(heads) + ")";
  }

  auto tie() const { return std::tie(embedding, hidden, intermediate, layers, heads, vocab, seq_len, max_positions); }
  bool operator==(const ModelConfig& o) const { return tie() == o.tie() && dropout == o.dropout; }
  bool operator<(const ModelConfig& o) const { return tie() < o.tie(); }
};

inline ModelConfig make_config(std::int64_t E, std::int64_t H, std::int64_t I, std::int64_t L, std::int64_t A,
                               std::int64_t V = 19000, std::int64_t S = 128) {
  ModelConfig c;
  c.embedding = E;
  c.hidden = H;
  c.intermediate = I;
  c.layers = L;
  c.heads = A;
  c.vocab = V;
  c.seq_len = S;
  return c;
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"E", c.embedding}, {"H", c.hidden},   {"I", c.intermediate},      {"L", c.layers},
       {"A", c.heads},     {"V", c.vocab},    {"S", c.seq_len},           {"max_positions", c.max_positions},
       {"dropout", c.dropout}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.embedding = j.value("E", d.embedding);
  c.hidden = j.value("H", d.hidden);
  c.intermediate = j.value("I", d.intermediate);
  c.layers = j.value("L", d.layers);
  c.heads = j.value("A", d.heads);
  c.vocab = j.value("V", d.vocab);
  c.seq_len = j.value("S", d.seq_len);
  c.max_positions = j.value("max_positions", d.max_positions);
  c.dropout = j.value("dropout", d.dropout);
}

inline ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  try {
    auto j = nlohmann::json::parse(in);
    ModelConfig c = j.contains("model") ? j["model"].get<ModelConfig>() : j.get<ModelConfig>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": " + e.what());
  }
}

}  // namespace dslab
