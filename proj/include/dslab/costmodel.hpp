#pragma once

// Parameter counting and analytic training FLOPs for the encoder.

#include <cstdint>
#include <string>

#include <json.hpp>

#include "dslab/config.hpp"

namespace dslab {

enum class FfnCostMode {
  verbatim,     // feed-forward term without the sequence-length factor
  s_corrected,  // feed-forward term scaled by S, as every other per-token term
};

inline std::string to_string(FfnCostMode m) { return m == FfnCostMode::verbatim ? "verbatim" : "s_corrected"; }

inline FfnCostMode parse_cost_mode(const std::string& s) {
  if (s == "verbatim") return FfnCostMode::verbatim;
  if (s == "s_corrected") return FfnCostMode::s_corrected;
  throw Error("unknown FLOPs mode '" + s + "' (expected verbatim or s_corrected)");
}

// Trainable parameters, embeddings included:
//   token V*E + positions P*E + embedding LN 2E
//   projection E*H + H + LN 2H
//   per layer: Q,K,V,O 4(H^2 + H) + FFN (H*I + I + I*H + H) + 2 LN (4H)
//   MLM head transform H^2 + H + LN 2H, untied decoder H*V + V
inline std::int64_t count_params(const ModelConfig& c) {
  const std::int64_t E = c.embedding, H = c.hidden, I = c.intermediate, L = c.layers, V = c.vocab,
                     P = c.max_positions;
  std::int64_t n = V * E + P * E + 2 * E;
  n += E * H + H + 2 * H;
  n += L * (4 * (H * H + H) + (H * I + I + I * H + H) + 4 * H);
  n += H * H + H + 2 * H;
  n += H * V + V;
  return n;
}

struct CostBreakdown {
  double c_emb = 0;       // per sequence
  double c_att = 0;       // per layer
  double c_int = 0;       // per layer
  double c_lmh = 0;
  double c_forward = 0;
  double c_backward = 0;
  double c_seq = 0;
  // attention sub-terms, per layer
  double att_qkv = 0, att_logits = 0, att_softmax = 0, att_reduce = 0, att_out = 0;
  FfnCostMode mode = FfnCostMode::s_corrected;
};

inline CostBreakdown flops_per_sequence(const ModelConfig& c, FfnCostMode mode = FfnCostMode::s_corrected) {
  c.validate();
  const double S = static_cast<double>(c.seq_len), V = static_cast<double>(c.vocab),
               E = static_cast<double>(c.embedding), H = static_cast<double>(c.hidden),
               I = static_cast<double>(c.intermediate), L = static_cast<double>(c.layers),
               A = static_cast<double>(c.heads), K = static_cast<double>(c.key_size());
  CostBreakdown b;
  b.mode = mode;
  b.c_emb = 2.0 * S * (V * E + E * H);
  b.att_qkv = 2.0 * 3.0 * S * H * (K * A);
  b.att_logits = 2.0 * S * S * (K * A);
  b.att_softmax = 3.0 * S * S * A;
  b.att_reduce = 2.0 * S * S * (K * A);
  b.att_out = 2.0 * S * H * (K * A);
  b.c_att = b.att_qkv + b.att_logits + b.att_softmax + b.att_reduce + b.att_out;
  b.c_int = 2.0 * (H * I + I * H);
  if (mode == FfnCostMode::s_corrected) b.c_int *= S;
  b.c_lmh = 2.0 * S * H * V;
  b.c_forward = b.c_emb + b.c_lmh + L * (b.c_att + b.c_int);
  b.c_backward = 2.0 * b.c_forward;
  b.c_seq = b.c_forward + b.c_backward;
  return b;
}

inline double total_flops(double c_seq, std::uint64_t updates, std::uint64_t batch) {
  return static_cast<double>(updates) * static_cast<double>(batch) * c_seq;
}

inline nlohmann::json to_json(const CostBreakdown& b) {
  return {{"mode", to_string(b.mode)},
          {"c_emb", b.c_emb},
          {"c_att", b.c_att},
          {"c_att_terms",
           {{"qkv_projection", b.att_qkv},
            {"key_query_dot", b.att_logits},
            {"softmax", b.att_softmax},
            {"query_reduction", b.att_reduce},
            {"output_projection", b.att_out}}},
          {"c_int", b.c_int},
          {"c_lmh", b.c_lmh},
          {"c_forward", b.c_forward},
          {"c_backward", b.c_backward},
          {"c_seq", b.c_seq}};
}

}  // namespace dslab
