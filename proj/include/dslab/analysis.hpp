#pragma once

// Compute-optimal frontier, power-law fitting (Levenberg-Marquardt), break
// detection, incremental cost-effectiveness ratios and Spearman correlation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <istream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "dslab/common.hpp"
#include "dslab/config.hpp"
#include "dslab/costmodel.hpp"
#include "dslab/trainer.hpp"

namespace dslab {

// ---- frontier ------------------------------------------------------------------

struct FrontierPoint {
  double bin_lo = 0, bin_hi = 0;
  double flops = 0;
  double loss = 0;
  std::string run_id;
  std::int64_t step = 0;
  std::int64_t params = 0;
  std::int64_t tokens_seen = 0;
};

// Log-spaced edges from lo to hi, n + 1 values; the last edge is exactly hi.
inline std::vector<double> log_bin_edges(double lo, double hi, std::size_t n) {
  if (!(lo > 0) || !(hi >= lo) || n == 0) throw Error("log_bin_edges: need 0 < lo <= hi and n >= 1");
  if (hi == lo) hi = lo * (1.0 + 1e-9);
  std::vector<double> e(n + 1);
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i <= n; ++i) e[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(n));
  e.front() = lo;
  e.back() = hi;
  return e;
}

// Index of the bin holding x: [e_i, e_{i+1}), with the top edge closed.
inline std::size_t bin_index(const std::vector<double>& edges, double x) {
  auto it = std::upper_bound(edges.begin(), edges.end(), x);
  auto i = static_cast<std::size_t>(std::distance(edges.begin(), it));
  if (i == 0) return 0;
  return std::min(i - 1, edges.size() - 2);
}

// Per log-spaced FLOPs bin, the record with the lowest eval loss across all
// runs (ties go to the earlier run, then the earlier record). Empty bins are
// omitted. Records with non-positive FLOPs are ignored.
inline std::vector<FrontierPoint> compute_optimal_frontier(const std::vector<RunLog>& runs, std::size_t n_bins = 32,
                                                           std::vector<double>* edges_out = nullptr) {
  if (n_bins == 0) throw Error("frontier: need at least one bin");
  double lo = std::numeric_limits<double>::infinity(), hi = 0;
  for (const auto& r : runs)
    for (const auto& rec : r.records)
      if (rec.flops > 0) {
        lo = std::min(lo, rec.flops);
        hi = std::max(hi, rec.flops);
      }
  if (!(hi > 0)) throw Error("frontier: no run records with positive FLOPs");
  auto edges = log_bin_edges(lo, hi, n_bins);
  std::vector<std::optional<FrontierPoint>> best(n_bins);
  for (const auto& r : runs) {
    const auto params = count_params(r.config);
    for (const auto& rec : r.records) {
      if (!(rec.flops > 0)) continue;
      auto i = bin_index(edges, rec.flops);
      if (!best[i] || rec.eval_loss < best[i]->loss)
        best[i] = FrontierPoint{edges[i], edges[i + 1], rec.flops, rec.eval_loss, r.run_id, rec.step, params, rec.tokens_seen};
    }
  }
  std::vector<FrontierPoint> out;
  for (auto& b : best)
    if (b) out.push_back(*b);
  if (edges_out) *edges_out = edges;
  return out;
}

// ---- power-law fit ----------------------------------------------------------------

struct Point {
  double x = 0, y = 0;
};

struct PowerFit {
  double C = 0;
  double e = 0;
  double r2 = 0;
  double sse = 0;
  std::size_t n = 0;
  double x_min = 0, x_max = 0;
  bool converged = false;
  int iterations = 0;

  double operator()(double x) const { return C * std::pow(x, e); }
};

inline double r_squared(const std::vector<Point>& pts, const PowerFit& fit) {
  if (pts.size() < 2) throw Error("r_squared: need at least 2 points");
  double mean = 0;
  for (auto& p : pts) mean += p.y;
  mean /= static_cast<double>(pts.size());
  double ss_tot = 0, ss_res = 0;
  for (auto& p : pts) {
    ss_tot += (p.y - mean) * (p.y - mean);
    ss_res += (p.y - fit(p.x)) * (p.y - fit(p.x));
  }
  if (!(ss_tot > 0)) throw Error("r_squared: y has zero variance");
  return 1.0 - ss_res / ss_tot;
}

inline void check_fit_input(const std::vector<Point>& pts) {
  if (pts.size() < 3) throw Error("power-law fit: need at least 3 points, got " + std::to_string(pts.size()));
  for (auto& p : pts)
    if (!(p.x > 0) || !(p.y > 0) || !std::isfinite(p.x) || !std::isfinite(p.y))
      throw Error("power-law fit: data must be positive and finite");
}

// Ordinary least squares of ln y on ln x.
inline PowerFit fit_power_law_logspace(const std::vector<Point>& pts) {
  check_fit_input(pts);
  const double n = static_cast<double>(pts.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (auto& p : pts) {
    double lx = std::log(p.x), ly = std::log(p.y);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  if (std::all_of(pts.begin(), pts.end(), [&](auto& p) { return p.x == pts[0].x; }))
    throw Error("power-law fit: all x values are equal");
  const double den = n * sxx - sx * sx;
  PowerFit f;
  f.e = (n * sxy - sx * sy) / den;
  f.C = std::exp((sy - f.e * sx) / n);
  f.n = pts.size();
  f.x_min = std::min_element(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.x < b.x; })->x;
  f.x_max = std::max_element(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.x < b.x; })->x;
  f.converged = true;
  f.sse = 0;
  for (auto& p : pts) f.sse += (p.y - f(p.x)) * (p.y - f(p.x));
  try {
    f.r2 = r_squared(pts, f);
  } catch (const Error&) {
    f.r2 = 1.0;
  }
  return f;
}

struct LmOptions {
  double lambda0 = 1e-3;
  double lambda_up = 10.0;
  double lambda_down = 10.0;
  double rel_step_tol = 1e-10;
  int max_iterations = 500;
};

// Least squares of y - C x^e on raw values by Levenberg-Marquardt with
// Marquardt diagonal scaling, started from the log-space OLS solution.
// Internally x is divided by its geometric mean, so C is carried as
// C' = C * x_ref^e during the iterations.
inline PowerFit fit_power_law(const std::vector<Point>& pts, const LmOptions& o = {}) {
  PowerFit init = fit_power_law_logspace(pts);
  double log_ref = 0;
  for (auto& p : pts) log_ref += std::log(p.x);
  log_ref /= static_cast<double>(pts.size());
  std::vector<double> u(pts.size()), lu(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    lu[i] = std::log(pts[i].x) - log_ref;
    u[i] = std::exp(lu[i]);
  }
  auto sse_of = [&](double c, double e) {
    double s = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double r = pts[i].y - c * std::pow(u[i], e);
      s += r * r;
    }
    return s;
  };
  double c = init.C * std::exp(init.e * log_ref), e = init.e;
  double sse = sse_of(c, e), lambda = o.lambda0;
  bool converged = false;
  int it = 0;
  for (; it < o.max_iterations; ++it) {
    // normal equations for (c, e)
    double a11 = 0, a12 = 0, a22 = 0, g1 = 0, g2 = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double pw = std::pow(u[i], e);
      double j1 = pw, j2 = c * pw * lu[i];
      double r = pts[i].y - c * pw;
      a11 += j1 * j1;
      a12 += j1 * j2;
      a22 += j2 * j2;
      g1 += j1 * r;
      g2 += j2 * r;
    }
    if (g1 == 0 && g2 == 0) {
      converged = true;
      break;
    }
    bool accepted = false;
    while (!accepted) {
      double m11 = a11 * (1 + lambda), m22 = a22 * (1 + lambda);
      double det = m11 * m22 - a12 * a12;
      if (!(std::abs(det) > 0) || !std::isfinite(det)) {
        lambda *= o.lambda_up;
        if (lambda > 1e30) break;
        continue;
      }
      double dc = (g1 * m22 - g2 * a12) / det;
      double de = (m11 * g2 - a12 * g1) / det;
      double nc = c + dc, ne = e + de;
      double nsse = sse_of(nc, ne);
      if (std::isfinite(nsse) && nsse <= sse) {
        double rel = std::sqrt(dc * dc + de * de) / (std::sqrt(c * c + e * e) + 1e-300);
        c = nc;
        e = ne;
        sse = nsse;
        lambda = std::max(lambda / o.lambda_down, 1e-300);
        accepted = true;
        if (rel < o.rel_step_tol) converged = true;
      } else {
        lambda *= o.lambda_up;
        // no downhill step exists at any damping: stationary to precision
        if (lambda > 1e30) break;
      }
    }
    if (!accepted) {
      converged = true;
      break;
    }
    if (converged) {
      ++it;
      break;
    }
  }
  PowerFit f;
  f.e = e;
  f.C = c * std::exp(-e * log_ref);
  f.n = pts.size();
  f.x_min = init.x_min;
  f.x_max = init.x_max;
  f.sse = sse;
  f.converged = converged;
  f.iterations = it;
  f.r2 = r_squared(pts, f);
  return f;
}

struct BreakResult {
  double threshold = 0;
  PowerFit low, high;
  double combined_r2 = 0;  // 1 - (SSE_low + SSE_high) / SS_tot
  bool has_break = false;  // |e_low - e_high| >= min_exponent_gap
};

// Splits at each candidate (low: x < t, high: x >= t), fits both sides, and
// keeps the split with the highest combined R^2. Candidates leaving fewer than
// `min_side` points on either side are skipped.
inline BreakResult detect_break(std::vector<Point> pts, const std::vector<double>& candidates,
                                double min_exponent_gap = 0.02, std::size_t min_side = 3) {
  std::sort(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.x < b.x; });
  double mean = 0;
  for (auto& p : pts) mean += p.y;
  mean /= static_cast<double>(std::max<std::size_t>(pts.size(), 1));
  double ss_tot = 0;
  for (auto& p : pts) ss_tot += (p.y - mean) * (p.y - mean);
  std::optional<BreakResult> best;
  std::vector<double> cand(candidates);
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
  for (double t : cand) {
    std::vector<Point> lo, hi;
    for (auto& p : pts) (p.x < t ? lo : hi).push_back(p);
    if (lo.size() < min_side || hi.size() < min_side) continue;
    PowerFit fl, fh;
    try {
      fl = fit_power_law(lo);
      fh = fit_power_law(hi);
    } catch (const Error&) {
      continue;  // a side with constant y has no defined R^2
    }
    BreakResult r{t, fl, fh, ss_tot > 0 ? 1.0 - (fl.sse + fh.sse) / ss_tot : 1.0, false};
    if (!best || r.combined_r2 > best->combined_r2) best = r;
  }
  if (!best) throw Error("detect_break: no candidate threshold leaves " + std::to_string(min_side) + " points per side");
  best->has_break = std::abs(best->low.e - best->high.e) >= min_exponent_gap;
  return *best;
}

// ---- ICER ------------------------------------------------------------------------

struct LadderRung {
  ModelConfig config;
  double perplexity = 0;
  double flops = 0;
};

struct IcerEntry {
  ModelConfig from, to;
  double delta_perplexity = 0;  // ppl[i-1] - ppl[i]
  double delta_flops = 0;       // flops[i] - flops[i-1]
  double icer = 0;              // per FLOP
  double icer_per_pflop = 0;    // per 1e15 FLOPs
};

inline int differing_axes(const ModelConfig& a, const ModelConfig& b) {
  return (a.embedding != b.embedding) + (a.hidden != b.hidden) + (a.intermediate != b.intermediate) +
         (a.layers != b.layers) + (a.heads != b.heads);
}

// Each rung against the next cheaper one; none for the first rung.
inline std::vector<IcerEntry> icer(const std::vector<LadderRung>& ladder, bool require_single_axis = true) {
  std::vector<IcerEntry> out;
  for (std::size_t i = 1; i < ladder.size(); ++i) {
    const auto& a = ladder[i - 1];
    const auto& b = ladder[i];
    IcerEntry e{a.config, b.config, a.perplexity - b.perplexity, b.flops - a.flops, 0, 0};
    if (!(e.delta_flops > 0))
      throw Error("icer: ladder is not strictly cost-increasing at rung " + std::to_string(i));
    if (require_single_axis && differing_axes(a.config, b.config) != 1)
      throw Error("icer: rungs " + std::to_string(i - 1) + " and " + std::to_string(i) +
                  " differ in more than one hyperparameter");
    e.icer = e.delta_perplexity / e.delta_flops;
    e.icer_per_pflop = e.delta_perplexity / (e.delta_flops / 1e15);
    out.push_back(e);
  }
  return out;
}

// ---- Spearman ----------------------------------------------------------------------

// 1-based ranks, ties get their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0) || !(syy > 0)) throw Error("correlation undefined for a constant series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// Exact two-sided permutation p-value for rank vectors rx, ry (ranks may be
// half-integers). With rx fixed, rho is affine in T = sum rx_i * ry_pi(i), so
// the null distribution is counted by a DP over subsets of used y ranks.
inline double spearman_exact_p(const std::vector<double>& rx, const std::vector<double>& ry) {
  const std::size_t n = rx.size();
  if (n > 20) throw Error("spearman_exact_p: n too large for exact enumeration");
  std::vector<std::int64_t> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = std::llround(2 * rx[i]);
    b[i] = std::llround(2 * ry[i]);
  }
  const std::int64_t sa = std::accumulate(a.begin(), a.end(), std::int64_t{0});
  const std::int64_t sb = std::accumulate(b.begin(), b.end(), std::int64_t{0});
  auto centered = [&](std::int64_t t) { return static_cast<std::int64_t>(n) * t - sa * sb; };
  std::int64_t t_obs = 0;
  for (std::size_t i = 0; i < n; ++i) t_obs += a[i] * b[i];
  const std::int64_t d_obs = std::llabs(centered(t_obs));

  // layer[mask] = {partial sum -> number of ways}; position k takes a y rank
  // from the unused set, where k = popcount(mask).
  std::unordered_map<std::uint32_t, std::unordered_map<std::int64_t, double>> layer, next;
  layer[0][0] = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    next.clear();
    for (auto& [mask, sums] : layer)
      for (std::size_t j = 0; j < n; ++j) {
        if (mask & (1u << j)) continue;
        auto& dst = next[mask | (1u << j)];
        for (auto& [s, ways] : sums) dst[s + a[k] * b[j]] += ways;
      }
    std::swap(layer, next);
  }
  double total = 0, extreme = 0;
  for (auto& [mask, sums] : layer)
    for (auto& [s, ways] : sums) {
      total += ways;
      if (std::llabs(centered(s)) >= d_obs) extreme += ways;
    }
  return extreme / total;
}

struct SpearmanResult {
  double rho = 0;
  double p_value = 1;
  std::size_t n = 0;
  bool exact = false;
};

// Pearson correlation of average ranks. Two-sided p: exact permutation
// distribution for n <= 12, Student-t approximation with n - 2 dof above.
inline SpearmanResult spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw Error("spearman: series lengths differ");
  if (x.size() < 3) throw Error("spearman: need at least 3 pairs");
  auto rx = average_ranks(x), ry = average_ranks(y);
  SpearmanResult r;
  r.n = x.size();
  r.rho = pearson(rx, ry);
  if (r.n <= 12) {
    r.exact = true;
    r.p_value = spearman_exact_p(rx, ry);
  } else if (std::abs(r.rho) >= 1.0) {
    r.p_value = 0.0;
  } else {
    const double dof = static_cast<double>(r.n) - 2.0;
    const double t = r.rho * std::sqrt(dof / (1.0 - r.rho * r.rho));
    boost::math::students_t dist(dof);
    r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  }
  return r;
}

// ---- serialization -------------------------------------------------------------------

inline nlohmann::json to_json(const PowerFit& f) {
  return {{"C", f.C},   {"e", f.e},         {"r2", f.r2},
          {"n", f.n},   {"domain", {f.x_min, f.x_max}}, {"sse", f.sse},
          {"converged", f.converged}, {"iterations", f.iterations}};
}

inline void write_frontier_csv(std::ostream& os, const std::vector<FrontierPoint>& pts) {
  os << "bin_lo,bin_hi,flops,loss,run_id,step,params,tokens_seen\n";
  for (const auto& p : pts)
    os << format_double(p.bin_lo) << ',' << format_double(p.bin_hi) << ',' << format_double(p.flops) << ','
       << format_double(p.loss) << ',' << p.run_id << ',' << p.step << ',' << p.params << ',' << p.tokens_seen << '\n';
}

inline std::vector<FrontierPoint> read_frontier_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error("frontier csv: empty file");
  auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (auto k : {"flops", "loss"})
    if (!col.count(k)) throw Error(std::string("frontier csv: missing column ") + k);
  std::vector<FrontierPoint> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != header.size()) throw Error("frontier csv line " + std::to_string(lineno) + ": wrong field count");
    FrontierPoint p;
    auto num = [&](const char* k, double d) { return col.count(k) ? std::stod(f[col[k]]) : d; };
    try {
      p.flops = std::stod(f[col["flops"]]);
      p.loss = std::stod(f[col["loss"]]);
      p.bin_lo = num("bin_lo", p.flops);
      p.bin_hi = num("bin_hi", p.flops);
      if (col.count("run_id")) p.run_id = f[col["run_id"]];
      p.step = static_cast<std::int64_t>(num("step", 0));
      p.params = static_cast<std::int64_t>(num("params", 0));
      p.tokens_seen = static_cast<std::int64_t>(num("tokens_seen", 0));
    } catch (const std::exception&) {
      throw Error("frontier csv line " + std::to_string(lineno) + ": unparsable number");
    }
    out.push_back(p);
  }
  return out;
}

inline void write_icer_csv(std::ostream& os, const std::vector<IcerEntry>& entries) {
  os << "from,to,delta_perplexity,delta_flops,icer_per_flop,icer_per_1e15_flops\n";
  for (const auto& e : entries)
    os << '"' << e.from.shape() << "\",\"" << e.to.shape() << "\"," << format_double(e.delta_perplexity) << ','
       << format_double(e.delta_flops) << ',' << format_double(e.icer) << ',' << format_double(e.icer_per_pflop)
       << '\n';
}

}  // namespace dslab
