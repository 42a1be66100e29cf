#pragma once

// Configuration grids: one-axis-at-a-time sweeps around an anchor, and seeded
// random draws from the power-of-two lattice.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dslab/common.hpp"
#include "dslab/config.hpp"

namespace dslab {

enum class GridMode { unidirectional, random_sample };

struct GridSpec {
  ModelConfig anchor = make_config(256, 256, 1024, 8, 8);
  // values per axis, ordered E, H, I, L, A
  std::array<std::vector<std::int64_t>, 5> axes{{{32, 64, 128}, {32, 64, 128}, {128, 256, 512}, {1, 2, 4}, {1, 2, 4}}};
  GridMode mode = GridMode::unidirectional;
  std::size_t sample_count = 16;
  std::uint64_t seed = 0;
  std::vector<ModelConfig> exclude;  // e.g. an earlier unidirectional set

  void validate() const {
    anchor.validate();
    for (const auto& ax : axes)
      for (auto v : ax)
        if (v < 1) throw Error("grid: axis values must be >= 1");
  }
};

inline std::int64_t& axis_ref(ModelConfig& c, std::size_t axis) {
  switch (axis) {
    case 0: return c.embedding;
    case 1: return c.hidden;
    case 2: return c.intermediate;
    case 3: return c.layers;
    default: return c.heads;
  }
}

inline bool is_power_of_two(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

// Every power of two up to the bound, for the random lattice.
inline std::vector<std::int64_t> powers_of_two_upto(std::int64_t bound) {
  std::vector<std::int64_t> out;
  for (std::int64_t v = 1; v <= bound; v *= 2) out.push_back(v);
  return out;
}

inline std::vector<ModelConfig> generate_grid(const GridSpec& spec) {
  spec.validate();
  std::set<ModelConfig> seen(spec.exclude.begin(), spec.exclude.end());
  std::vector<ModelConfig> out;
  auto push = [&](const ModelConfig& c) {
    if (c.hidden % c.heads != 0) return;
    if (seen.insert(c).second) out.push_back(c);
  };
  if (spec.mode == GridMode::unidirectional) {
    push(spec.anchor);
    for (std::size_t ax = 0; ax < 5; ++ax)
      for (auto v : spec.axes[ax]) {
        ModelConfig c = spec.anchor;
        axis_ref(c, ax) = v;
        push(c);
      }
    return out;
  }
  if (spec.sample_count == 0) return out;
  // The unidirectional set around the same anchor is always excluded.
  GridSpec uni = spec;
  uni.mode = GridMode::unidirectional;
  uni.exclude.clear();
  for (const auto& c : generate_grid(uni)) seen.insert(c);
  // Lattice: powers of two bounded per axis by the anchor value.
  std::array<std::vector<std::int64_t>, 5> values;
  ModelConfig a = spec.anchor;
  for (std::size_t ax = 0; ax < 5; ++ax) values[ax] = powers_of_two_upto(axis_ref(a, ax));
  std::vector<ModelConfig> pool;
  for (auto e : values[0])
    for (auto h : values[1])
      for (auto i : values[2])
        for (auto l : values[3])
          for (auto hd : values[4]) {
            ModelConfig c = spec.anchor;
            c.embedding = e;
            c.hidden = h;
            c.intermediate = i;
            c.layers = l;
            c.heads = hd;
            if (h % hd != 0 || seen.count(c)) continue;
            pool.push_back(c);
          }
  if (spec.sample_count > pool.size())
    throw Error("grid: sample_count " + std::to_string(spec.sample_count) + " exceeds the " +
                std::to_string(pool.size()) + " available lattice configs");
  Rng rng(mix_seed(spec.seed, {0x67726964}));
  stable_shuffle(pool, rng);
  pool.resize(spec.sample_count);
  return pool;
}

inline void from_json(const nlohmann::json& j, GridSpec& g) {
  if (j.contains("anchor")) g.anchor = j["anchor"].get<ModelConfig>();
  if (j.contains("axes")) {
    const auto& ax = j["axes"];
    const char* keys[5] = {"E", "H", "I", "L", "A"};
    for (std::size_t i = 0; i < 5; ++i)
      if (ax.contains(keys[i])) g.axes[i] = ax[keys[i]].get<std::vector<std::int64_t>>();
  }
  auto mode = j.value("mode", std::string("unidirectional"));
  if (mode == "unidirectional")
    g.mode = GridMode::unidirectional;
  else if (mode == "random_sample")
    g.mode = GridMode::random_sample;
  else
    throw Error("grid: unknown mode '" + mode + "'");
  g.sample_count = j.value("sample_count", g.sample_count);
  g.seed = j.value("seed", g.seed);
  if (j.contains("exclude")) g.exclude = j["exclude"].get<std::vector<ModelConfig>>();
}

inline GridSpec load_grid_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  try {
    return nlohmann::json::parse(in).get<GridSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": " + e.what());
  }
}

}  // namespace dslab
