#include <gtest/gtest.h>

#include <cmath>

#include "dslab/costmodel.hpp"
#include "dslab/model.hpp"

using namespace dslab;

namespace {

// Straight evaluation of the per-sequence terms, written independently of
// flops_per_sequence.
double hand_c_seq(double S, double V, double E, double H, double I, double L, double A, bool s_factor) {
  double K = H / A;
  double emb = 2 * S * (V * E + E * H);
  double att = 6 * S * H * K * A + 2 * S * S * K * A + 3 * S * S * A + 2 * S * S * K * A + 2 * S * H * K * A;
  double ffn = 2 * (H * I + I * H) * (s_factor ? S : 1.0);
  double lmh = 2 * S * H * V;
  return 3 * (emb + lmh + L * (att + ffn));
}

}  // namespace

TEST(CostModel, EmbeddingTermSmallCase) {
  auto c = make_config(3, 4, 4, 1, 1, 2, 1);
  auto b = flops_per_sequence(c);
  EXPECT_DOUBLE_EQ(b.c_emb, 36.0);
}

TEST(CostModel, BreakdownIdentities) {
  for (auto mode : {FfnCostMode::verbatim, FfnCostMode::s_corrected}) {
    auto b = flops_per_sequence(make_config(64, 128, 256, 3, 4, 1000, 32), mode);
    EXPECT_DOUBLE_EQ(b.c_backward, 2 * b.c_forward);
    EXPECT_DOUBLE_EQ(b.c_seq, b.c_forward + b.c_backward);
    EXPECT_DOUBLE_EQ(b.c_att, b.att_qkv + b.att_logits + b.att_softmax + b.att_reduce + b.att_out);
    for (double t : {b.c_emb, b.c_att, b.c_int, b.c_lmh}) EXPECT_GE(t, 0.0);
  }
}

TEST(CostModel, MatchesHandEvaluation) {
  struct Row {
    int E, H, I, L, A;
  };
  for (auto r : {Row{256, 256, 1024, 8, 8}, Row{32, 32, 128, 2, 2}, Row{512, 1024, 2048, 8, 8}, Row{32, 64, 64, 1, 4}})
    for (bool s : {false, true}) {
      auto c = make_config(r.E, r.H, r.I, r.L, r.A);
      auto got = flops_per_sequence(c, s ? FfnCostMode::s_corrected : FfnCostMode::verbatim).c_seq;
      EXPECT_NEAR(got, hand_c_seq(128, 19000, r.E, r.H, r.I, r.L, r.A, s), 1e-9 * got);
    }
}

TEST(CostModel, TotalFlops) {
  EXPECT_EQ(total_flops(0, 12, 7), 0.0);
  EXPECT_EQ(total_flops(10, 3, 2), 60.0);
  auto c = flops_per_sequence(make_config(256, 256, 1024, 8, 8)).c_seq;
  EXPECT_NEAR(total_flops(c, 35000, 256), hand_c_seq(128, 19000, 256, 256, 1024, 8, 8, true) * 35000 * 256,
              1e-6 * c * 35000 * 256);
}

TEST(CostModel, AnchorAndSmallModelNearReportedFlops) {
  auto anchor = total_flops(flops_per_sequence(make_config(256, 256, 1024, 8, 8)).c_seq, 35000, 256);
  EXPECT_NEAR(anchor / 110e15, 1.0, 0.05);
  EXPECT_NEAR(anchor / 1.14e17, 1.0, 0.01);
  auto small = total_flops(flops_per_sequence(make_config(32, 32, 128, 2, 2)).c_seq, 35000, 256);
  EXPECT_NEAR(small / 8.57e15, 1.0, 0.05);
}

TEST(CostModel, ParameterCountsNearReported) {
  EXPECT_NEAR(count_params(make_config(256, 256, 1024, 8, 8)) / 16.24e6, 1.0, 0.02);
  EXPECT_NEAR(count_params(make_config(32, 32, 128, 2, 2)) / 1.27e6, 1.0, 0.02);
  EXPECT_NEAR(count_params(make_config(32, 32, 128, 1, 1)) / 1.25e6, 1.0, 0.02);
  EXPECT_NEAR(count_params(make_config(512, 1024, 2048, 8, 8)) / 98.06e6, 1.0, 0.02);
}

TEST(CostModel, ParamCountEqualsAllocatedTensors) {
  for (auto c : {make_config(8, 12, 20, 2, 3, 50, 16), make_config(32, 32, 128, 2, 2, 300, 64)}) {
    auto p = zero_params(c);
    EXPECT_EQ(p.size(), count_params(c));
  }
}

TEST(CostModel, MonotoneInEachSizeAxis) {
  auto base = make_config(64, 64, 256, 2, 4);
  for (int axis = 0; axis < 4; ++axis) {
    auto bigger = base;
    switch (axis) {
      case 0: bigger.embedding *= 2; break;
      case 1: bigger.hidden *= 2; break;
      case 2: bigger.intermediate *= 2; break;
      default: bigger.layers *= 2; break;
    }
    for (auto mode : {FfnCostMode::verbatim, FfnCostMode::s_corrected})
      EXPECT_GE(flops_per_sequence(bigger, mode).c_seq, flops_per_sequence(base, mode).c_seq);
    EXPECT_GE(count_params(bigger), count_params(base));
  }
}

TEST(CostModel, HeadsOnlyMoveSoftmaxTerm) {
  auto a = flops_per_sequence(make_config(256, 256, 1024, 8, 2));
  auto b = flops_per_sequence(make_config(256, 256, 1024, 8, 8));
  EXPECT_DOUBLE_EQ(a.c_int, b.c_int);
  EXPECT_DOUBLE_EQ(a.att_qkv, b.att_qkv);
  EXPECT_DOUBLE_EQ(a.att_logits, b.att_logits);
  EXPECT_DOUBLE_EQ(a.att_reduce, b.att_reduce);
  EXPECT_DOUBLE_EQ(a.att_out, b.att_out);
  EXPECT_NE(a.att_softmax, b.att_softmax);
  EXPECT_DOUBLE_EQ(b.att_softmax - a.att_softmax, 3.0 * 128 * 128 * 6);
  EXPECT_EQ(count_params(make_config(256, 256, 1024, 8, 2)), count_params(make_config(256, 256, 1024, 8, 8)));
}

TEST(CostModel, FfnTermScalingBySequenceLength) {
  auto c1 = make_config(32, 32, 128, 2, 2, 1000, 64);
  auto c2 = c1;
  c2.seq_len = 128;
  EXPECT_DOUBLE_EQ(flops_per_sequence(c1, FfnCostMode::verbatim).c_int, flops_per_sequence(c2, FfnCostMode::verbatim).c_int);
  EXPECT_DOUBLE_EQ(2 * flops_per_sequence(c1, FfnCostMode::s_corrected).c_int,
                   flops_per_sequence(c2, FfnCostMode::s_corrected).c_int);
}

TEST(CostModel, ModeParsing) {
  EXPECT_EQ(parse_cost_mode("verbatim"), FfnCostMode::verbatim);
  EXPECT_EQ(parse_cost_mode(to_string(FfnCostMode::s_corrected)), FfnCostMode::s_corrected);
  EXPECT_THROW(parse_cost_mode("exact"), Error);
}

TEST(CostModel, JsonCarriesAllTerms) {
  auto j = to_json(flops_per_sequence(make_config(32, 32, 128, 2, 2)));
  for (auto k : {"c_emb", "c_att", "c_int", "c_lmh", "c_forward", "c_backward", "c_seq", "mode"}) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["c_att_terms"].size(), 5u);
}

TEST(CostModel, InvalidConfigRejected) {
  EXPECT_THROW(flops_per_sequence(make_config(32, 30, 128, 2, 4)), Error);
}
