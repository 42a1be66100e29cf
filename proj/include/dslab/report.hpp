#pragma once

// Report bundle: CSV tables and plain SVG scatter plots built only from the
// rows written to those tables. Each plotted marker carries its data values in
// data-x / data-y attributes so the figure can be audited against the CSV.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dslab/analysis.hpp"
#include "dslab/common.hpp"
#include "dslab/costmodel.hpp"
#include "dslab/trainer.hpp"

namespace dslab {

struct Series {
  std::string name;
  std::string color;
  std::vector<Point> points;
  bool connect = false;
};

struct PlotSpec {
  std::string title, x_label, y_label;
  bool log_x = true, log_y = false;
  std::string provenance;  // written as an XML comment
  int width = 720, height = 480;
};

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string svg_plot(const PlotSpec& spec, const std::vector<Series>& series) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  auto tx = [&](double v) { return spec.log_x ? std::log10(v) : v; };
  auto ty = [&](double v) { return spec.log_y ? std::log10(v) : v; };
  for (const auto& s : series)
    for (const auto& p : s.points) {
      if ((spec.log_x && !(p.x > 0)) || (spec.log_y && !(p.y > 0))) throw Error("svg_plot: non-positive value on a log axis");
      x0 = std::min(x0, tx(p.x));
      x1 = std::max(x1, tx(p.x));
      y0 = std::min(y0, ty(p.y));
      y1 = std::max(y1, ty(p.y));
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double ml = 70, mr = 20, mt = 40, mb = 50;
  const double pw = spec.width - ml - mr, ph = spec.height - mt - mb;
  auto px = [&](double v) { return ml + (tx(v) - x0) / (x1 - x0) * pw; };
  auto py = [&](double v) { return mt + ph - (ty(v) - y0) / (y1 - y0) * ph; };

  std::ostringstream o;
  char buf[256];
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\"" << spec.height << "\">\n";
  if (!spec.provenance.empty()) {
    std::string prov = spec.provenance;
    for (std::size_t k; (k = prov.find("--")) != std::string::npos;) prov.replace(k, 2, "- -");
    o << "<!-- " << prov << " -->\n";
  }
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << spec.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(spec.title)
    << "</text>\n";
  std::snprintf(buf, sizeof buf, "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"none\" stroke=\"black\"/>\n", ml,
                mt, pw, ph);
  o << buf;
  for (int i = 0; i <= 4; ++i) {  // ticks at quarter points of the data range
    double fx = x0 + (x1 - x0) * i / 4.0, fy = y0 + (y1 - y0) * i / 4.0;
    double vx = spec.log_x ? std::pow(10.0, fx) : fx, vy = spec.log_y ? std::pow(10.0, fy) : fy;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\" font-size=\"11\">%.3g</text>\n",
                  ml + pw * i / 4.0, mt + ph + 16, vx);
    o << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"end\" font-size=\"11\">%.3g</text>\n", ml - 6,
                  mt + ph - ph * i / 4.0 + 4, vy);
    o << buf;
  }
  o << "<text x=\"" << ml + pw / 2 << "\" y=\"" << spec.height - 10 << "\" text-anchor=\"middle\" font-size=\"13\">"
    << xml_escape(spec.x_label) << (spec.log_x ? " (log)" : "") << "</text>\n";
  o << "<text x=\"16\" y=\"" << mt + ph / 2 << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 "
    << mt + ph / 2 << ")\">" << xml_escape(spec.y_label) << (spec.log_y ? " (log)" : "") << "</text>\n";
  int legend_y = static_cast<int>(mt) + 14;
  for (const auto& s : series) {
    o << "<g class=\"series\" data-name=\"" << xml_escape(s.name) << "\" fill=\"" << s.color << "\" stroke=\"" << s.color
      << "\">\n";
    if (s.connect && s.points.size() > 1) {
      o << "<polyline fill=\"none\" points=\"";
      for (const auto& p : s.points) {
        std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(p.x), py(p.y));
        o << buf;
      }
      o << "\"/>\n";
    }
    for (const auto& p : s.points) {
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2.5\" data-x=\"%.17g\" data-y=\"%.17g\"/>\n",
                    px(p.x), py(p.y), p.x, p.y);
      o << buf;
    }
    o << "</g>\n";
    o << "<text x=\"" << ml + pw - 8 << "\" y=\"" << legend_y << "\" text-anchor=\"end\" font-size=\"11\" fill=\""
      << s.color << "\">" << xml_escape(s.name) << "</text>\n";
    legend_y += 14;
  }
  o << "</svg>\n";
  return o.str();
}

// Extracts (data-x, data-y) pairs of every marker, in document order.
inline std::vector<Point> svg_markers(const std::string& svg) {
  std::vector<Point> out;
  std::size_t pos = 0;
  while ((pos = svg.find("data-x=\"", pos)) != std::string::npos) {
    pos += 8;
    double x = std::stod(svg.substr(pos, svg.find('"', pos) - pos));
    auto q = svg.find("data-y=\"", pos) + 8;
    double y = std::stod(svg.substr(q, svg.find('"', q) - q));
    out.push_back({x, y});
    pos = q;
  }
  return out;
}

struct ReportOptions {
  std::size_t n_bins = 32;
  std::string source_label;  // e.g. the input directory, recorded in provenance
};

struct ReportSummary {
  std::vector<FrontierPoint> frontier;
  std::optional<PowerFit> frontier_fit;
  std::vector<std::string> files;
};

namespace detail {
inline void write_text(const std::filesystem::path& p, const std::string& s, std::vector<std::string>& files) {
  std::ofstream f(p);
  if (!f) throw Error("cannot write " + p.string());
  f << s;
  files.push_back(p.filename().string());
}
}  // namespace detail

// Writes into out_dir:
//   records.csv              every record of every run (loss vs flops / tokens)
//   frontier.csv             compute-optimal frontier
//   final.csv                final record per run with parameter count
//   frontier_fit.json        power-law fit of the frontier (when >= 3 points)
//   loss_vs_flops.svg, loss_vs_tokens.svg, loss_vs_params.svg
inline ReportSummary write_report(const std::vector<RunLog>& runs, const std::string& out_dir,
                                  const ReportOptions& opt = {}) {
  if (runs.empty()) throw Error("report: no runs");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  ReportSummary sum;

  std::ostringstream rec;
  rec << "run_id,step,tokens_seen,flops,eval_loss\n";
  std::vector<Point> by_flops, by_tokens;
  for (const auto& r : runs)
    for (const auto& x : r.records) {
      rec << r.run_id << ',' << x.step << ',' << x.tokens_seen << ',' << format_double(x.flops) << ','
          << format_double(x.eval_loss) << '\n';
      if (x.flops > 0) by_flops.push_back({x.flops, x.eval_loss});
      if (x.tokens_seen > 0) by_tokens.push_back({static_cast<double>(x.tokens_seen), x.eval_loss});
    }
  detail::write_text(dir / "records.csv", rec.str(), sum.files);

  sum.frontier = compute_optimal_frontier(runs, opt.n_bins);
  std::ostringstream fr;
  write_frontier_csv(fr, sum.frontier);
  detail::write_text(dir / "frontier.csv", fr.str(), sum.files);
  std::vector<Point> front;
  for (const auto& p : sum.frontier) front.push_back({p.flops, p.loss});

  if (front.size() >= 3) {
    try {
      sum.frontier_fit = fit_power_law(front);
      detail::write_text(dir / "frontier_fit.json", to_json(*sum.frontier_fit).dump(2) + "\n", sum.files);
    } catch (const Error& e) {
      std::cerr << "report: frontier fit skipped: " << e.what() << '\n';
    }
  }

  std::ostringstream fin;
  fin << "run_id,params,flops,tokens_seen,eval_loss\n";
  std::vector<Point> by_params;
  for (const auto& r : runs) {
    if (r.records.empty()) continue;
    const auto& last = r.records.back();
    auto n = count_params(r.config);
    fin << r.run_id << ',' << n << ',' << format_double(last.flops) << ',' << last.tokens_seen << ','
        << format_double(last.eval_loss) << '\n';
    by_params.push_back({static_cast<double>(n), last.eval_loss});
  }
  detail::write_text(dir / "final.csv", fin.str(), sum.files);

  const std::string src = opt.source_label.empty() ? "" : " source=" + opt.source_label;
  PlotSpec p1{"MLM loss vs training FLOPs", "FLOPs", "eval loss", true, false,
              "data: records.csv (flops, eval_loss), frontier.csv (flops, loss);" + src};
  detail::write_text(dir / "loss_vs_flops.svg",
                     svg_plot(p1, {{"records", "#9aa7b8", by_flops, false}, {"frontier", "#c0392b", front, true}}),
                     sum.files);
  PlotSpec p2{"MLM loss vs tokens seen", "tokens", "eval loss", true, false,
              "data: records.csv (tokens_seen, eval_loss);" + src};
  detail::write_text(dir / "loss_vs_tokens.svg", svg_plot(p2, {{"records", "#2e86c1", by_tokens, false}}), sum.files);
  PlotSpec p3{"Final MLM loss vs parameters", "parameters", "eval loss", true, false,
              "data: final.csv (params, eval_loss);" + src};
  detail::write_text(dir / "loss_vs_params.svg", svg_plot(p3, {{"final", "#27ae60", by_params, false}}), sum.files);
  return sum;
}

}  // namespace dslab
