#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dslab/analysis.hpp"
#include "dslab/grid.hpp"
#include "dslab/report.hpp"

using namespace dslab;

namespace {

RunLog make_run(const std::string& id, std::vector<std::pair<double, double>> flops_loss) {
  RunLog r;
  r.run_id = id;
  r.config = make_config(32, 32, 128, 2, 2);
  std::int64_t step = 0;
  for (auto [f, l] : flops_loss) {
    step += 10;
    RunRecord rec;
    rec.step = step;
    rec.tokens_seen = step * 64;
    rec.flops = f;
    rec.eval_loss = l;
    r.records.push_back(rec);
  }
  return r;
}

// Independent bin lookup: linear scan over geometric edges.
std::size_t scan_bin(double lo, double hi, std::size_t n, double x) {
  for (std::size_t i = 0; i < n; ++i) {
    double upper = lo * std::pow(hi / lo, static_cast<double>(i + 1) / static_cast<double>(n));
    if (i + 1 == n) upper = hi;
    if (x < upper || i + 1 == n) return i;
  }
  return n - 1;
}

std::vector<Point> power_points(double c, double e, double lo, double hi, int n) {
  std::vector<Point> pts;
  for (int i = 0; i < n; ++i) {
    double x = lo * std::pow(hi / lo, i / double(n - 1));
    pts.push_back({x, c * std::pow(x, e)});
  }
  return pts;
}

}  // namespace

// ---- frontier ----

TEST(Frontier, SingleMonotoneRunKeepsLastRecordPerBin) {
  std::vector<std::pair<double, double>> recs;
  for (int i = 0; i < 40; ++i) recs.push_back({1e9 * std::pow(1.3, i), 8.0 - 0.1 * i});
  auto run = make_run("r", recs);
  std::vector<double> edges;
  auto fr = compute_optimal_frontier({run}, 8, &edges);
  ASSERT_EQ(edges.size(), 9u);
  for (const auto& p : fr) {
    double last = 0;
    for (auto [f, l] : recs)
      if (f >= p.bin_lo && (f < p.bin_hi || p.bin_hi == edges.back())) last = f;
    EXPECT_EQ(p.flops, last);
  }
}

TEST(Frontier, MatchesBruteForceOnCrossingRuns) {
  Rng rng(11);
  std::vector<RunLog> runs;
  for (int r = 0; r < 5; ++r) {
    std::vector<std::pair<double, double>> recs;
    double f = 1e10 * (1 + r);
    for (int i = 0; i < 30; ++i) {
      f *= 1.0 + 0.5 * uniform01(rng);
      recs.push_back({f, 3.0 + 5.0 / std::pow(f / 1e10, 0.1 + 0.05 * r) + 0.05 * uniform01(rng)});
    }
    runs.push_back(make_run("run" + std::to_string(r), recs));
  }
  const std::size_t n = 16;
  auto fr = compute_optimal_frontier(runs, n);
  double lo = INFINITY, hi = 0;
  for (auto& r : runs)
    for (auto& x : r.records) lo = std::min(lo, x.flops), hi = std::max(hi, x.flops);
  std::vector<const RunRecord*> best(n, nullptr);
  std::vector<std::string> who(n);
  for (auto& r : runs)
    for (auto& x : r.records) {
      auto b = scan_bin(lo, hi, n, x.flops);
      if (!best[b] || x.eval_loss < best[b]->eval_loss) best[b] = &x, who[b] = r.run_id;
    }
  std::size_t k = 0;
  for (std::size_t b = 0; b < n; ++b) {
    if (!best[b]) continue;
    ASSERT_LT(k, fr.size());
    EXPECT_EQ(fr[k].flops, best[b]->flops);
    EXPECT_EQ(fr[k].loss, best[b]->eval_loss);
    EXPECT_EQ(fr[k].run_id, who[b]);
    ++k;
  }
  EXPECT_EQ(k, fr.size());
}

TEST(Frontier, OneBinIsGlobalMinimum) {
  auto a = make_run("a", {{1e9, 5.0}, {2e9, 4.0}, {3e9, 4.5}});
  auto b = make_run("b", {{5e8, 6.0}, {4e9, 3.9}});
  auto fr = compute_optimal_frontier({a, b}, 1);
  ASSERT_EQ(fr.size(), 1u);
  EXPECT_EQ(fr[0].loss, 3.9);
  EXPECT_EQ(fr[0].run_id, "b");
}

TEST(Frontier, NoRecordInBinBeatsFrontier) {
  Rng rng(3);
  std::vector<RunLog> runs;
  for (int r = 0; r < 4; ++r) {
    std::vector<std::pair<double, double>> recs;
    for (int i = 0; i < 25; ++i) recs.push_back({std::pow(10.0, 9 + 4 * uniform01(rng)), 2 + 4 * uniform01(rng)});
    runs.push_back(make_run(std::to_string(r), recs));
  }
  auto fr = compute_optimal_frontier(runs, 10);
  for (auto& r : runs)
    for (auto& x : r.records)
      for (auto& p : fr)
        if (x.flops >= p.bin_lo && x.flops < p.bin_hi) {
          EXPECT_GE(x.eval_loss, p.loss);
        }
}

TEST(Frontier, TiesGoToEarlierRun) {
  auto a = make_run("a", {{1e9, 4.0}});
  auto b = make_run("b", {{1e9, 4.0}});
  auto fr = compute_optimal_frontier({a, b}, 4);
  ASSERT_EQ(fr.size(), 1u);
  EXPECT_EQ(fr[0].run_id, "a");
}

TEST(Frontier, Errors) {
  EXPECT_THROW(compute_optimal_frontier({}, 4), Error);
  EXPECT_THROW(compute_optimal_frontier({make_run("a", {{0.0, 4.0}})}, 4), Error);
  EXPECT_THROW(compute_optimal_frontier({make_run("a", {{1e9, 4.0}})}, 0), Error);
}

TEST(Frontier, CsvRoundTrip) {
  auto a = make_run("a", {{1e9, 5.0}, {2.5e10, 4.0}, {3e11, 3.25}});
  auto fr = compute_optimal_frontier({a}, 4);
  std::stringstream ss;
  write_frontier_csv(ss, fr);
  auto back = read_frontier_csv(ss);
  ASSERT_EQ(back.size(), fr.size());
  for (std::size_t i = 0; i < fr.size(); ++i) {
    EXPECT_EQ(back[i].flops, fr[i].flops);
    EXPECT_EQ(back[i].loss, fr[i].loss);
    EXPECT_EQ(back[i].bin_lo, fr[i].bin_lo);
    EXPECT_EQ(back[i].run_id, fr[i].run_id);
    EXPECT_EQ(back[i].step, fr[i].step);
    EXPECT_EQ(back[i].params, fr[i].params);
  }
  std::stringstream bad("x,y\n1,2\n");
  EXPECT_THROW(read_frontier_csv(bad), Error);
}

// ---- power-law fit ----

TEST(PowerFit, RecoversNoiselessLaw) {
  auto pts = power_points(3.0, -0.5, 1.0, 1e6, 20);
  auto f = fit_power_law(pts);
  EXPECT_NEAR(f.C, 3.0, 3e-6);
  EXPECT_NEAR(f.e, -0.5, 1e-6);
  EXPECT_NEAR(f.r2, 1.0, 1e-12);
  EXPECT_TRUE(f.converged);
  EXPECT_EQ(f.n, 20u);
  EXPECT_EQ(f.x_min, 1.0);
}

TEST(PowerFit, LargeScaleInputs) {
  auto pts = power_points(40.0, -0.0929, 1e13, 1e17, 25);
  auto f = fit_power_law(pts);
  EXPECT_NEAR(f.e, -0.0929, 1e-7);
  EXPECT_NEAR(f.C / 40.0, 1.0, 1e-6);
}

TEST(PowerFit, NoisyExponentWithinTolerance) {
  Rng rng(5);
  int good = 0;
  for (int t = 0; t < 20; ++t) {
    auto pts = power_points(3.0, -0.3, 1e3, 1e9, 30);
    for (auto& p : pts) p.y *= 1.0 + 0.01 * normal01(rng);
    auto f = fit_power_law(pts);
    good += std::abs(f.e + 0.3) <= 0.02 && std::abs(f.C / 3.0 - 1.0) <= 0.05;
  }
  EXPECT_EQ(good, 20);
}

TEST(PowerFit, LeastSquaresBeatsLogspaceInLinearSse) {
  Rng rng(8);
  auto pts = power_points(5.0, -0.2, 1.0, 1e5, 25);
  for (auto& p : pts) p.y += 0.05 * normal01(rng);
  auto lm = fit_power_law(pts);
  auto ls = fit_power_law_logspace(pts);
  auto sse = [&](const PowerFit& f) {
    double s = 0;
    for (auto& p : pts) s += (p.y - f(p.x)) * (p.y - f(p.x));
    return s;
  };
  EXPECT_LE(sse(lm), sse(ls) + 1e-12);
  EXPECT_NEAR(lm.sse, sse(lm), 1e-12);
  // nudging either parameter does not lower the error
  for (double dc : {-1e-4, 1e-4})
    for (double de : {-1e-5, 1e-5}) {
      PowerFit g = lm;
      g.C *= 1 + dc;
      g.e += de;
      EXPECT_GE(sse(g), sse(lm) - 1e-12);
    }
}

TEST(PowerFit, RSquaredOracle) {
  auto pts = power_points(2.0, -0.4, 1.0, 100.0, 10);
  PowerFit perfect;
  perfect.C = 2.0;
  perfect.e = -0.4;
  EXPECT_NEAR(r_squared(pts, perfect), 1.0, 1e-12);
  double mean = 0;
  for (auto& p : pts) mean += p.y;
  mean /= pts.size();
  PowerFit flat;
  flat.C = mean;
  flat.e = 0;
  EXPECT_NEAR(r_squared(pts, flat), 0.0, 1e-12);
  // two-pass textbook formula
  PowerFit off;
  off.C = 2.1;
  off.e = -0.38;
  double ss_res = 0, ss_tot = 0;
  for (auto& p : pts) {
    ss_res += std::pow(p.y - 2.1 * std::pow(p.x, -0.38), 2);
    ss_tot += std::pow(p.y - mean, 2);
  }
  EXPECT_NEAR(r_squared(pts, off), 1.0 - ss_res / ss_tot, 1e-12);
}

TEST(PowerFit, ScaleEquivariance) {
  Rng rng(2);
  auto pts = power_points(3.0, -0.25, 10.0, 1e6, 15);
  for (auto& p : pts) p.y *= 1.0 + 0.02 * normal01(rng);
  auto f = fit_power_law(pts);
  auto sy = pts, sx = pts;
  for (auto& p : sy) p.y *= 7.0;
  for (auto& p : sx) p.x *= 1000.0;
  auto fy = fit_power_law(sy), fx = fit_power_law(sx);
  EXPECT_NEAR(fy.e, f.e, 1e-6);
  EXPECT_NEAR(fy.C / (7.0 * f.C), 1.0, 1e-6);
  EXPECT_NEAR(fx.e, f.e, 1e-6);
  EXPECT_NEAR(fx.C / (f.C * std::pow(1000.0, -f.e)), 1.0, 1e-5);
  EXPECT_NEAR(fx.r2, f.r2, 1e-9);
}

TEST(PowerFit, RejectsBadInput) {
  EXPECT_THROW(fit_power_law({{1, 1}, {2, 0.5}}), Error);
  EXPECT_THROW(fit_power_law({{1, 1}, {2, 0.5}, {-3, 0.2}}), Error);
  EXPECT_THROW(fit_power_law({{1, 1}, {2, 0.5}, {3, 0.0}}), Error);
  EXPECT_THROW(fit_power_law({{2, 1}, {2, 0.5}, {2, 0.2}}), Error);
}

TEST(PowerFit, JsonFields) {
  auto f = fit_power_law(power_points(3.0, -0.5, 1.0, 1e3, 5));
  auto j = to_json(f);
  EXPECT_NEAR(j["e"].get<double>(), -0.5, 1e-6);
  EXPECT_EQ(j["n"].get<int>(), 5);
  EXPECT_EQ(j["domain"][1].get<double>(), 1e3);
}

// ---- break detection ----

TEST(Break, FindsPiecewiseThresholdWithinOneBin) {
  const double t = 2.2e15, e1 = -0.0929, e2 = -0.1412, c1 = 40.0;
  const double c2 = c1 * std::pow(t, e1 - e2);
  auto edges = log_bin_edges(1e13, 1e17, 32);
  std::vector<Point> pts;
  for (std::size_t i = 0; i < 32; ++i) {
    double x = std::sqrt(edges[i] * edges[i + 1]);
    pts.push_back({x, x < t ? c1 * std::pow(x, e1) : c2 * std::pow(x, e2)});
  }
  auto r = detect_break(pts, edges);
  EXPECT_TRUE(r.has_break);
  EXPECT_LE(std::abs(double(bin_index(edges, r.threshold)) - double(bin_index(edges, t))), 1.0);
  EXPECT_NEAR(r.low.e, e1, 0.01);
  EXPECT_NEAR(r.high.e, e2, 0.01);
}

TEST(Break, PureLawHasNoBreak) {
  auto edges = log_bin_edges(1e13, 1e17, 20);
  auto pts = power_points(40.0, -0.1, 1e13, 1e17, 20);
  auto r = detect_break(pts, edges);
  EXPECT_FALSE(r.has_break);
  EXPECT_NEAR(r.combined_r2, 1.0, 1e-9);
}

TEST(Break, RespectsMinSide) {
  auto pts = power_points(1.0, -0.5, 1.0, 100.0, 6);
  EXPECT_THROW(detect_break(pts, {1.5, 90.0}), Error);
  auto r = detect_break(pts, {1.5, 90.0, pts[3].x});
  EXPECT_EQ(r.threshold, pts[3].x);
}

// ---- ICER ----

TEST(Icer, WorkedExample) {
  std::vector<LadderRung> ladder{{make_config(64, 64, 256, 2, 2), 10.42, 42e15},
                                 {make_config(64, 128, 256, 2, 2), 7.56, 50e15}};
  auto out = icer(ladder);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_NEAR(out[0].icer_per_pflop, 0.3575, 1e-12);
  EXPECT_NEAR(out[0].icer, 0.3575e-15, 1e-27);
}

TEST(Icer, EqualPerplexityGivesZero) {
  std::vector<LadderRung> ladder{{make_config(64, 64, 256, 2, 2), 9.0, 1e15},
                                 {make_config(64, 64, 256, 4, 2), 9.0, 2e15}};
  EXPECT_EQ(icer(ladder)[0].icer, 0.0);
}

TEST(Icer, ThreeRungsAndTelescoping) {
  std::vector<LadderRung> ladder{{make_config(64, 64, 256, 1, 2), 20.0, 1e15},
                                 {make_config(64, 64, 256, 2, 2), 16.0, 3e15},
                                 {make_config(64, 64, 256, 4, 2), 15.0, 7e15}};
  auto out = icer(ladder);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_DOUBLE_EQ(out[0].icer_per_pflop, 2.0);
  EXPECT_DOUBLE_EQ(out[1].icer_per_pflop, 0.25);
  double dp = 0, weighted = 0;
  for (auto& e : out) dp += e.delta_perplexity, weighted += e.icer * e.delta_flops;
  EXPECT_DOUBLE_EQ(dp, 5.0);
  EXPECT_DOUBLE_EQ(weighted, 5.0);
}

TEST(Icer, Errors) {
  std::vector<LadderRung> flat{{make_config(64, 64, 256, 1, 2), 20.0, 1e15},
                               {make_config(64, 64, 256, 2, 2), 16.0, 1e15}};
  EXPECT_THROW(icer(flat), Error);
  std::vector<LadderRung> two_axes{{make_config(64, 64, 256, 1, 2), 20.0, 1e15},
                                   {make_config(64, 128, 256, 2, 2), 16.0, 2e15}};
  EXPECT_THROW(icer(two_axes), Error);
  EXPECT_NO_THROW(icer(two_axes, false));
  EXPECT_TRUE(icer({}).empty());
}

// ---- Spearman ----

TEST(Spearman, MonotoneDecreaseIsMinusOne) {
  std::vector<double> x, y;
  for (int i = 0; i < 30; ++i) x.push_back(i), y.push_back(std::exp(-0.1 * i));
  auto r = spearman(x, y);
  EXPECT_DOUBLE_EQ(r.rho, -1.0);
  EXPECT_FALSE(r.exact);
  EXPECT_EQ(r.p_value, 0.0);
}

TEST(Spearman, TiesFixture) {
  auto rk = average_ranks({10, 20, 20, 5, 20});
  std::vector<double> want{2, 4, 4, 1, 4};
  EXPECT_EQ(rk, want);
  // hand computed: ranks x = {1,2.5,2.5,4}, y = {1,2,3,4}
  auto r = spearman({1, 2, 2, 3}, {1, 2, 3, 4});
  double mx = 2.5, sxy = 0, sxx = 0, syy = 0;
  double rx[4] = {1, 2.5, 2.5, 4}, ry[4] = {1, 2, 3, 4};
  for (int i = 0; i < 4; ++i) sxy += (rx[i] - mx) * (ry[i] - mx), sxx += std::pow(rx[i] - mx, 2), syy += std::pow(ry[i] - mx, 2);
  EXPECT_NEAR(r.rho, sxy / std::sqrt(sxx * syy), 1e-15);
  EXPECT_NEAR(r.rho, 4.5 / std::sqrt(4.5 * 5.0), 1e-15);
}

TEST(Spearman, ClassicFixture) {
  // no ties: rho = 1 - 6 sum d^2 / (n (n^2 - 1))
  std::vector<double> x{106, 86, 100, 101, 99, 103, 97, 113, 112, 110};
  std::vector<double> y{7, 0, 27, 50, 28, 29, 20, 12, 6, 17};
  auto rx = average_ranks(x), ry = average_ranks(y);
  double d2 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) d2 += std::pow(rx[i] - ry[i], 2);
  double n = x.size();
  EXPECT_NEAR(spearman(x, y).rho, 1.0 - 6.0 * d2 / (n * (n * n - 1)), 1e-14);
  EXPECT_NEAR(spearman(x, y).rho, -29.0 / 165.0, 1e-14);
}

TEST(Spearman, InvariantUnderMonotoneTransforms) {
  Rng rng(21);
  std::vector<double> x, y, fx, gy;
  for (int i = 0; i < 40; ++i) {
    double a = uniform01(rng), b = a + 0.5 * uniform01(rng);
    x.push_back(a), y.push_back(b), fx.push_back(std::exp(5 * a)), gy.push_back(-1.0 / (b + 1));
  }
  EXPECT_NEAR(spearman(fx, gy).rho, spearman(x, y).rho, 1e-12);
  EXPECT_NEAR(spearman(y, x).rho, spearman(x, y).rho, 1e-15);
}

TEST(Spearman, NullIsNearZero) {
  Rng rng(99);
  std::vector<double> x(10000), y(10000);
  for (auto& v : x) v = uniform01(rng);
  for (auto& v : y) v = uniform01(rng);
  auto r = spearman(x, y);
  EXPECT_LT(std::abs(r.rho), 0.05);
  EXPECT_GT(r.p_value, 0.001);
}

TEST(Spearman, ExactPMatchesPermutationEnumeration) {
  auto brute = [](std::vector<double> x, std::vector<double> y) {
    auto rx = average_ranks(x), ry = average_ranks(y);
    double obs = std::abs(pearson(rx, ry));
    std::vector<std::size_t> perm(y.size());
    std::iota(perm.begin(), perm.end(), 0);
    double hit = 0, tot = 0;
    do {
      std::vector<double> py;
      for (auto k : perm) py.push_back(ry[k]);
      tot += 1;
      hit += std::abs(pearson(rx, py)) >= obs - 1e-12;
    } while (std::next_permutation(perm.begin(), perm.end()));
    return hit / tot;
  };
  std::vector<std::vector<double>> xs{{1, 2, 3, 4, 5, 6, 7}, {3, 1, 4, 1, 5, 9, 2}, {2, 7, 1, 8, 2, 8}};
  std::vector<std::vector<double>> ys{{2, 1, 4, 3, 7, 5, 6}, {2, 7, 1, 8, 2, 8, 1}, {1, 4, 1, 4, 2, 1}};
  for (std::size_t i = 0; i < xs.size(); ++i) {
    auto r = spearman(xs[i], ys[i]);
    EXPECT_TRUE(r.exact);
    EXPECT_NEAR(r.p_value, brute(xs[i], ys[i]), 1e-12) << i;
  }
}

TEST(Spearman, TApproximationIsSane) {
  Rng rng(4);
  std::vector<double> x, y;
  for (int i = 0; i < 30; ++i) x.push_back(i), y.push_back(-i + 10 * normal01(rng));
  auto r = spearman(x, y);
  EXPECT_LT(r.rho, 0);
  EXPECT_GT(r.p_value, 0.0);
  EXPECT_LT(r.p_value, 0.05);
}

TEST(Spearman, Errors) {
  EXPECT_THROW(spearman({1, 2, 3}, {1, 2}), Error);
  EXPECT_THROW(spearman({1, 2}, {1, 2}), Error);
  EXPECT_THROW(spearman({1, 1, 1}, {1, 2, 3}), Error);
}

// ---- grid ----

TEST(Grid, UnidirectionalDefault) {
  GridSpec g;
  auto cfgs = generate_grid(g);
  EXPECT_EQ(cfgs.size(), 16u);
  EXPECT_EQ(cfgs.front(), g.anchor);
  for (auto& c : cfgs) {
    EXPECT_LE(differing_axes(c, g.anchor), 1);
    EXPECT_EQ(c.hidden % c.heads, 0);
  }
  std::set<ModelConfig> uniq(cfgs.begin(), cfgs.end());
  EXPECT_EQ(uniq.size(), cfgs.size());
}

TEST(Grid, DropsIndivisibleHeads) {
  GridSpec g;
  g.anchor = make_config(64, 48, 256, 2, 3);
  g.axes = {{{}, {32, 96}, {}, {}, {}}};
  auto cfgs = generate_grid(g);
  // 32 is not divisible by 3
  ASSERT_EQ(cfgs.size(), 2u);
  EXPECT_EQ(cfgs[1].hidden, 96);
}

TEST(Grid, RandomModeExcludesUnidirectionalSet) {
  GridSpec g;
  g.anchor = make_config(64, 64, 256, 4, 4);
  g.axes = {{{32}, {32}, {128}, {2}, {2}}};
  g.mode = GridMode::random_sample;
  g.sample_count = 30;
  g.seed = 5;
  auto cfgs = generate_grid(g);
  ASSERT_EQ(cfgs.size(), 30u);
  GridSpec uni = g;
  uni.mode = GridMode::unidirectional;
  auto u = generate_grid(uni);
  std::set<ModelConfig> us(u.begin(), u.end()), rs(cfgs.begin(), cfgs.end());
  EXPECT_EQ(rs.size(), cfgs.size());
  for (auto& c : cfgs) {
    EXPECT_FALSE(us.count(c));
    EXPECT_EQ(c.hidden % c.heads, 0);
    EXPECT_LE(c.hidden, 64);
  }
  EXPECT_EQ(generate_grid(g), cfgs);
  g.seed = 6;
  EXPECT_NE(generate_grid(g), cfgs);
  g.sample_count = 100000;
  EXPECT_THROW(generate_grid(g), Error);
}

TEST(Grid, JsonSpec) {
  auto path = std::filesystem::temp_directory_path() / "dslab_grid_spec.json";
  {
    std::ofstream f(path);
    f << R"({"anchor":{"E":64,"H":64,"I":256,"L":2,"A":2},"axes":{"L":[1,4]},"mode":"random_sample","sample_count":3})";
  }
  auto g = load_grid_spec(path.string());
  EXPECT_EQ(g.anchor.hidden, 64);
  EXPECT_EQ(g.mode, GridMode::random_sample);
  EXPECT_EQ(g.sample_count, 3u);
  EXPECT_EQ(g.axes[3], (std::vector<std::int64_t>{1, 4}));
  {
    std::ofstream f(path);
    f << R"({"mode":"spiral"})";
  }
  EXPECT_THROW(load_grid_spec(path.string()), Error);
  std::filesystem::remove(path);
}

// ---- report ----

TEST(Report, PlotMarkersMatchCsvData) {
  auto dir = std::filesystem::temp_directory_path() / "dslab_report_test";
  std::filesystem::remove_all(dir);
  std::vector<RunLog> runs;
  for (int r = 0; r < 3; ++r) {
    std::vector<std::pair<double, double>> recs;
    for (int i = 1; i <= 8; ++i) recs.push_back({1e12 * (r + 1) * i, 6.0 / std::pow(i * (r + 1.0), 0.2)});
    runs.push_back(make_run("run" + std::to_string(r), recs));
  }
  auto sum = write_report(runs, dir.string(), {8, "unit"});
  ASSERT_TRUE(sum.frontier_fit.has_value());
  for (auto f : {"records.csv", "frontier.csv", "final.csv", "frontier_fit.json", "loss_vs_flops.svg",
                 "loss_vs_tokens.svg", "loss_vs_params.svg"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;

  std::ifstream fs(dir / "loss_vs_flops.svg");
  std::string svg((std::istreambuf_iterator<char>(fs)), {});
  EXPECT_NE(svg.find("records.csv"), std::string::npos);
  auto markers = svg_markers(svg);
  std::ifstream fc(dir / "frontier.csv");
  auto front = read_frontier_csv(fc);
  ASSERT_EQ(markers.size(), 24 + front.size());
  std::size_t k = 0;
  for (auto& r : runs)
    for (auto& x : r.records) {
      EXPECT_DOUBLE_EQ(markers[k].x, x.flops);
      EXPECT_DOUBLE_EQ(markers[k].y, x.eval_loss);
      ++k;
    }
  for (auto& p : front) {
    EXPECT_DOUBLE_EQ(markers[k].x, p.flops);
    EXPECT_DOUBLE_EQ(markers[k].y, p.loss);
    ++k;
  }
  std::filesystem::remove_all(dir);
}

TEST(Report, RejectsNonPositiveOnLogAxis) {
  PlotSpec p{"t", "x", "y", true, false, ""};
  EXPECT_THROW(svg_plot(p, {{"s", "#000", {{0.0, 1.0}}, false}}), Error);
  EXPECT_THROW(write_report({}, "/tmp/never"), Error);
}
