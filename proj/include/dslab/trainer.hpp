#pragma once

// Optimization loops: learning-rate schedules, AdamW, MLM pre-training and
// classification fine-tuning, plus the RunLog and checkpoint file formats.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dslab/common.hpp"
#include "dslab/config.hpp"
#include "dslab/corpus.hpp"
#include "dslab/costmodel.hpp"
#include "dslab/model.hpp"
#include "dslab/tokenizer.hpp"

namespace dslab {

enum class Schedule { inverse_sqrt, linear };

inline std::string to_string(Schedule s) { return s == Schedule::inverse_sqrt ? "inverse_sqrt" : "linear"; }
inline Schedule parse_schedule(const std::string& s) {
  if (s == "inverse_sqrt") return Schedule::inverse_sqrt;
  if (s == "linear") return Schedule::linear;
  throw Error("unknown schedule '" + s + "'");
}

struct OptimizerHyper {
  double peak_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
  Schedule schedule = Schedule::inverse_sqrt;
  double warmup_fraction = 0.05;
  std::int64_t total_steps = 35000;
  std::int64_t batch_size = 256;
  double grad_clip = 1.0;  // global-norm clip; 0 disables

  void validate() const {
    if (!(peak_lr > 0)) throw Error("optimizer: peak_lr must be positive");
    if (!(warmup_fraction > 0 && warmup_fraction < 1)) throw Error("optimizer: warmup_fraction must be in (0, 1)");
    if (total_steps < 1 || batch_size < 1) throw Error("optimizer: total_steps and batch_size must be >= 1");
  }

  std::int64_t warmup_steps() const {
    return std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps) - 1e-9)));
  }
};

inline void to_json(nlohmann::json& j, const OptimizerHyper& h) {
  j = {{"peak_lr", h.peak_lr},         {"beta1", h.beta1},
       {"beta2", h.beta2},             {"eps", h.eps},
       {"weight_decay", h.weight_decay}, {"schedule", to_string(h.schedule)},
       {"warmup_fraction", h.warmup_fraction}, {"total_steps", h.total_steps},
       {"batch_size", h.batch_size},   {"grad_clip", h.grad_clip}};
}

inline void from_json(const nlohmann::json& j, OptimizerHyper& h) {
  OptimizerHyper d;
  h.peak_lr = j.value("peak_lr", d.peak_lr);
  h.beta1 = j.value("beta1", d.beta1);
  h.beta2 = j.value("beta2", d.beta2);
  h.eps = j.value("eps", d.eps);
  h.weight_decay = j.value("weight_decay", d.weight_decay);
  h.schedule = parse_schedule(j.value("schedule", to_string(d.schedule)));
  h.warmup_fraction = j.value("warmup_fraction", d.warmup_fraction);
  h.total_steps = j.value("total_steps", d.total_steps);
  h.batch_size = j.value("batch_size", d.batch_size);
  h.grad_clip = j.value("grad_clip", d.grad_clip);
}

// Linear ramp to peak over W = ceil(warmup_fraction * total) steps, then
// either peak * sqrt(W / step) or a linear decay reaching 0 at total_steps.
inline double lr_at(const OptimizerHyper& h, std::int64_t step) {
  if (step < 0) throw Error("lr_at: negative step");
  if (step > h.total_steps) {
    static bool warned = false;
    if (!warned) {
      std::cerr << "warning: lr_at step " << step << " beyond total_steps " << h.total_steps << ", clamping\n";
      warned = true;
    }
    step = h.total_steps;
  }
  const auto W = h.warmup_steps();
  const double s = static_cast<double>(step), w = static_cast<double>(W);
  if (step <= W) return h.peak_lr * s / w;
  if (h.schedule == Schedule::inverse_sqrt) return h.peak_lr * std::sqrt(w / s);
  const double T = static_cast<double>(h.total_steps);
  return h.peak_lr * std::max(0.0, (T - s) / (T - w));
}

// AdamW with bias correction and decoupled weight decay. Decay applies only
// to ParamKind::weight tensors; biases, norms and embeddings are exempt.
// Works on any container exposing for_each(name, Mat&, ParamKind).
class AdamW {
 public:
  explicit AdamW(const OptimizerHyper& h) : h_(h) {}

  std::int64_t steps_taken() const { return t_; }

  template <typename Params>
  void step(Params& params, const Params& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(h_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(h_.beta2, static_cast<double>(t_));
    std::size_t i = 0;
    zip_params(params, grads, [&](const std::string& name, Mat& p, const Mat& g, ParamKind kind) {
      if (!g.allFinite()) throw Error("non-finite gradient in " + name + " at step " + std::to_string(t_));
      if (i == m_.size()) {
        m_.push_back(Mat::Zero(p.rows(), p.cols()));
        v_.push_back(Mat::Zero(p.rows(), p.cols()));
      }
      Mat& m = m_[i];
      Mat& v = v_[i];
      ++i;
      m = h_.beta1 * m + (1.0 - h_.beta1) * g;
      v = h_.beta2 * v + (1.0 - h_.beta2) * g.cwiseAbs2();
      if (kind == ParamKind::weight && h_.weight_decay != 0.0) p *= (1.0 - lr * h_.weight_decay);
      p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + h_.eps);
    });
  }

 private:
  OptimizerHyper h_;
  std::int64_t t_ = 0;
  std::vector<Mat> m_, v_;
};

template <typename... Ps>
double global_norm(const Ps&... grads) {
  double sq = 0.0;
  auto add = [&](const auto& g) { g.for_each([&](const std::string&, const Mat& m, ParamKind) { sq += m.squaredNorm(); }); };
  (add(grads), ...);
  return std::sqrt(sq);
}

// Scales gradients so their joint norm is at most max_norm; returns the
// pre-clip norm.
template <typename... Ps>
double clip_global_norm(double max_norm, Ps&... grads) {
  double n = global_norm(grads...);
  if (max_norm > 0 && n > max_norm) {
    double s = max_norm / (n + 1e-12);
    auto mul = [&](auto& g) { g.for_each([&](const std::string&, Mat& m, ParamKind) { m *= s; }); };
    (mul(grads), ...);
  }
  return n;
}

// ---- run log -----------------------------------------------------------------

struct RunRecord {
  std::int64_t step = 0;
  std::int64_t tokens_seen = 0;
  double flops = 0;
  double train_loss = 0;
  double eval_loss = 0;
  double eval_ppl = 0;
};

struct RunLog {
  std::string run_id;
  ModelConfig config;
  OptimizerHyper hyper;
  std::uint64_t seed = 0;
  FfnCostMode cost_mode = FfnCostMode::s_corrected;
  double c_seq = 0;
  double initial_eval_loss = 0;
  std::int64_t steps_completed = 0;
  bool data_exhausted = false;
  std::vector<RunRecord> records;
};

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_runlog_csv(std::ostream& os, const RunLog& log) {
  os << "step,tokens_seen,flops,train_loss,eval_loss,eval_ppl\n";
  for (const auto& r : log.records)
    os << r.step << ',' << r.tokens_seen << ',' << format_double(r.flops) << ',' << format_double(r.train_loss) << ','
       << format_double(r.eval_loss) << ',' << format_double(r.eval_ppl) << '\n';
}

inline nlohmann::json runlog_sidecar(const RunLog& log) {
  return {{"run_id", log.run_id},
          {"config", log.config},
          {"hyper", log.hyper},
          {"seed", log.seed},
          {"cost_mode", to_string(log.cost_mode)},
          {"c_seq", log.c_seq},
          {"params", count_params(log.config)},
          {"initial_eval_loss", log.initial_eval_loss},
          {"steps_completed", log.steps_completed},
          {"data_exhausted", log.data_exhausted}};
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::vector<RunRecord> read_runlog_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error("runlog csv: empty file");
  auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (auto k : {"step", "tokens_seen", "flops", "train_loss", "eval_loss", "eval_ppl"})
    if (!col.count(k)) throw Error(std::string("runlog csv: missing column ") + k);
  std::vector<RunRecord> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != header.size()) throw Error("runlog csv line " + std::to_string(lineno) + ": wrong field count");
    RunRecord r;
    try {
      r.step = std::stoll(f[col["step"]]);
      r.tokens_seen = std::stoll(f[col["tokens_seen"]]);
      r.flops = std::stod(f[col["flops"]]);
      r.train_loss = std::stod(f[col["train_loss"]]);
      r.eval_loss = std::stod(f[col["eval_loss"]]);
      r.eval_ppl = std::stod(f[col["eval_ppl"]]);
    } catch (const std::exception&) {
      throw Error("runlog csv line " + std::to_string(lineno) + ": unparsable number");
    }
    out.push_back(r);
  }
  return out;
}

// Loads <path> and, when present, the JSON sidecar <path minus .csv>.json.
inline RunLog load_runlog(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw Error("cannot open " + csv_path);
  RunLog log;
  log.records = read_runlog_csv(in);
  std::filesystem::path p(csv_path);
  log.run_id = p.stem().string();
  auto side = p;
  side.replace_extension(".json");
  if (std::filesystem::exists(side)) {
    std::ifstream js(side);
    auto j = nlohmann::json::parse(js);
    log.run_id = j.value("run_id", log.run_id);
    if (j.contains("config")) log.config = j["config"].get<ModelConfig>();
    if (j.contains("hyper")) log.hyper = j["hyper"].get<OptimizerHyper>();
    log.seed = j.value("seed", std::uint64_t{0});
    log.c_seq = j.value("c_seq", 0.0);
    log.initial_eval_loss = j.value("initial_eval_loss", 0.0);
    log.steps_completed = j.value("steps_completed", std::int64_t{0});
    log.data_exhausted = j.value("data_exhausted", false);
    if (j.contains("cost_mode")) log.cost_mode = parse_cost_mode(j["cost_mode"].get<std::string>());
  }
  return log;
}

inline void save_runlog(const std::string& csv_path, const RunLog& log) {
  std::filesystem::path p(csv_path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(csv_path);
  if (!out) throw Error("cannot write " + csv_path);
  write_runlog_csv(out, log);
  auto side = p;
  side.replace_extension(".json");
  std::ofstream js(side);
  js << runlog_sidecar(log).dump(2) << '\n';
}

// ---- checkpoints -------------------------------------------------------------
//
//   8 bytes   magic "DSLABCKP"
//   8 bytes   little-endian u64 header length N
//   N bytes   JSON header: version, config, step, tokens_seen, tensors[]
//             (name, rows, cols, offset in doubles), extra
//   ...       tensor payload, little-endian IEEE-754 doubles, row-major

inline constexpr char kCheckpointMagic[8] = {'D', 'S', 'L', 'A', 'B', 'C', 'K', 'P'};
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  std::optional<ClassifierHead> head;
  std::int64_t step = 0;
  std::int64_t tokens_seen = 0;
  nlohmann::json extra = nlohmann::json::object();
};

inline void save_checkpoint(const std::string& path, const ModelParams& params, std::int64_t step,
                            std::int64_t tokens_seen, const ClassifierHead* head = nullptr,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
  nlohmann::json hdr = {{"version", kCheckpointVersion}, {"config", params.config}, {"step", step},
                        {"tokens_seen", tokens_seen},   {"extra", extra}};
  std::vector<const Mat*> tensors;
  nlohmann::json list = nlohmann::json::array();
  std::int64_t offset = 0;
  auto add = [&](const std::string& name, const Mat& m, ParamKind) {
    list.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
    offset += m.size();
    tensors.push_back(&m);
  };
  params.for_each(add);
  if (head) head->for_each(add);
  hdr["tensors"] = list;
  std::string h = hdr.dump();
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out.write(kCheckpointMagic, 8);
  std::uint64_t n = h.size();
  out.write(reinterpret_cast<const char*>(&n), 8);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const Mat* m : tensors)
    out.write(reinterpret_cast<const char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(double)));
  if (!out) throw Error("short write to " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw Error(path + ": not a checkpoint file");
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), 8);
  if (!in || n > (1u << 30)) throw Error(path + ": corrupt header length");
  std::string h(n, '\0');
  in.read(h.data(), static_cast<std::streamsize>(n));
  auto hdr = nlohmann::json::parse(h);
  if (!hdr.contains("version")) throw Error(path + ": missing version field");
  if (hdr["version"].get<int>() != kCheckpointVersion)
    throw Error(path + ": unsupported checkpoint version " + hdr["version"].dump());
  Checkpoint ck;
  ck.params = zero_params(hdr.at("config").get<ModelConfig>());
  ck.step = hdr.value("step", std::int64_t{0});
  ck.tokens_seen = hdr.value("tokens_seen", std::int64_t{0});
  ck.extra = hdr.value("extra", nlohmann::json::object());
  std::map<std::string, nlohmann::json> index;
  for (auto& t : hdr.at("tensors")) index[t.at("name").get<std::string>()] = t;
  const auto payload = static_cast<std::streamoff>(16 + n);
  auto fill = [&](const std::string& name, Mat& m, ParamKind) {
    auto it = index.find(name);
    if (it == index.end()) throw Error(path + ": missing tensor " + name);
    if (it->second["rows"].get<Eigen::Index>() != m.rows() || it->second["cols"].get<Eigen::Index>() != m.cols())
      throw Error(path + ": tensor " + name + " has the wrong shape");
    in.seekg(payload + static_cast<std::streamoff>(it->second["offset"].get<std::int64_t>() * 8));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw Error(path + ": truncated tensor " + name);
  };
  ck.params.for_each(fill);
  if (index.count("cls.w")) {
    const auto& w = index["cls.w"];
    ClassifierHead head{Mat::Zero(w["rows"].get<Eigen::Index>(), w["cols"].get<Eigen::Index>()),
                        Mat::Zero(1, w["cols"].get<Eigen::Index>())};
    head.for_each(fill);
    ck.head = std::move(head);
  }
  return ck;
}

// ---- data --------------------------------------------------------------------

// "<s> tokens </s>", truncated to seq_len.
inline std::vector<std::vector<TokenId>> tokenize_spans(const TokenizerModel& tok, const std::vector<TextSpan>& spans,
                                                        std::int64_t seq_len, unsigned threads = 1) {
  std::vector<std::vector<TokenId>> out(spans.size());
  parallel_for(spans.size(), threads, [&](std::size_t i) {
    std::vector<TokenId> ids{SpecialTokens::bos};
    auto e = tok.encode(spans[i].text);
    ids.insert(ids.end(), e.begin(), e.end());
    ids.push_back(SpecialTokens::eos);
    if (static_cast<std::int64_t>(ids.size()) > seq_len) ids.resize(static_cast<std::size_t>(seq_len));
    out[i] = std::move(ids);
  });
  return out;
}

// Perplexity of the unigram distribution of non-special tokens; the floor a
// context-free predictor can reach on this data.
inline double unigram_perplexity(const std::vector<std::vector<TokenId>>& seqs) {
  std::map<TokenId, double> freq;
  double n = 0;
  for (const auto& s : seqs)
    for (auto t : s)
      if (!SpecialTokens::is_special(t)) {
        freq[t] += 1;
        n += 1;
      }
  if (n == 0) throw Error("unigram_perplexity: no tokens");
  double h = 0;
  for (auto& [t, c] : freq) h -= (c / n) * std::log(c / n);
  return std::exp(h);
}

// Eval loss with masks fixed by `mask_seed`, so evaluations are comparable
// across steps.
inline double evaluate_mlm(const ModelParams& P, const std::vector<std::vector<TokenId>>& seqs, double mask_rate,
                           std::uint64_t mask_seed, std::int64_t batch, unsigned threads = 1) {
  double total = 0.0;
  std::int64_t labels = 0;
  for (std::size_t start = 0; start < seqs.size(); start += static_cast<std::size_t>(batch)) {
    std::vector<std::vector<TokenId>> chunk(seqs.begin() + static_cast<std::ptrdiff_t>(start),
                                            seqs.begin() + static_cast<std::ptrdiff_t>(std::min(seqs.size(), start + static_cast<std::size_t>(batch))));
    auto b = make_masked_batch(chunk, P.config.seq_len, mask_rate, mix_seed(mask_seed, {start}));
    auto n = b.labeled();
    if (n == 0) continue;
    total += forward_mlm(P, b, {false, 0, threads}).loss * static_cast<double>(n);
    labels += n;
  }
  if (labels == 0) throw Error("evaluate_mlm: evaluation set has no maskable tokens");
  return total / static_cast<double>(labels);
}

// ---- pre-training --------------------------------------------------------------

struct PretrainOptions {
  std::string run_id = "run";
  std::uint64_t seed = 0;
  double mask_rate = 0.15;
  std::int64_t log_every = 100;
  std::int64_t eval_batch = 64;
  FfnCostMode cost_mode = FfnCostMode::s_corrected;
  unsigned threads = 1;
  std::string checkpoint_dir;  // writes <dir>/<run_id>/step_N.ckpt at each log point when set
  std::function<void(const RunRecord&, const ModelParams&)> on_record;
};

struct PretrainResult {
  RunLog log;
  ModelParams params;
};

// Single pass over `train` in order: mask -> forward -> backward -> clip ->
// AdamW -> schedule. Eval loss is logged every log_every steps and at the
// end. Stops early, recording the actual step count, if the data runs out.
inline PretrainResult pretrain(const ModelConfig& config, const std::vector<std::vector<TokenId>>& train,
                               const std::vector<std::vector<TokenId>>& eval, const OptimizerHyper& hyper,
                               const PretrainOptions& opt) {
  config.validate();
  hyper.validate();
  if (eval.empty()) throw Error("pretrain: empty evaluation set");
  PretrainResult res{{}, init_model(config, opt.seed)};
  RunLog& log = res.log;
  log.run_id = opt.run_id;
  log.config = config;
  log.hyper = hyper;
  log.seed = opt.seed;
  log.cost_mode = opt.cost_mode;
  log.c_seq = flops_per_sequence(config, opt.cost_mode).c_seq;
  const std::uint64_t eval_mask_seed = mix_seed(opt.seed, {0xe7a1ULL});
  log.initial_eval_loss = evaluate_mlm(res.params, eval, opt.mask_rate, eval_mask_seed, opt.eval_batch, opt.threads);

  const auto B = hyper.batch_size;
  const auto available = static_cast<std::int64_t>(train.size()) / B;
  const auto steps = std::min(hyper.total_steps, available);
  log.data_exhausted = steps < hyper.total_steps;
  if (log.data_exhausted)
    std::cerr << "warning: " << opt.run_id << ": data supports " << available << " of " << hyper.total_steps
              << " steps\n";

  AdamW adam(hyper);
  ModelParams grads = zero_params(config);
  double loss_acc = 0.0;
  std::int64_t loss_n = 0;
  for (std::int64_t step = 1; step <= steps; ++step) {
    auto first = train.begin() + (step - 1) * B;
    std::vector<std::vector<TokenId>> seqs(first, first + B);
    auto batch = make_masked_batch(seqs, config.seq_len, opt.mask_rate, mix_seed(opt.seed, {0xba7cULL, static_cast<std::uint64_t>(step)}));
    grads.set_zero();
    if (batch.labeled() == 0) continue;
    double loss = mlm_loss_and_grad(res.params, batch, grads,
                                    {true, mix_seed(opt.seed, {0xd509ULL, static_cast<std::uint64_t>(step)}), opt.threads});
    if (!std::isfinite(loss)) throw Error(opt.run_id + ": non-finite training loss at step " + std::to_string(step));
    clip_global_norm(hyper.grad_clip, grads);
    adam.step(res.params, grads, lr_at(hyper, step));
    loss_acc += loss;
    ++loss_n;
    log.steps_completed = step;
    if (step % opt.log_every == 0 || step == steps) {
      RunRecord r;
      r.step = step;
      r.tokens_seen = step * B * config.seq_len;
      r.flops = total_flops(log.c_seq, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(B));
      r.train_loss = loss_n ? loss_acc / static_cast<double>(loss_n) : 0.0;
      r.eval_loss = evaluate_mlm(res.params, eval, opt.mask_rate, eval_mask_seed, opt.eval_batch, opt.threads);
      r.eval_ppl = perplexity(r.eval_loss);
      log.records.push_back(r);
      loss_acc = 0.0;
      loss_n = 0;
      if (!opt.checkpoint_dir.empty())
        save_checkpoint(opt.checkpoint_dir + "/" + opt.run_id + "/step_" + std::to_string(step) + ".ckpt", res.params,
                        step, r.tokens_seen);
      if (opt.on_record) opt.on_record(r, res.params);
    }
  }
  return res;
}

// ---- fine-tuning -----------------------------------------------------------------

struct TaskExample {
  std::string text;
  std::optional<std::string> text_b;
  std::int64_t label = 0;
};

struct ClassificationTask {
  std::string name;
  std::int64_t num_classes = 2;
  std::vector<TaskExample> train, validation;
};

inline std::vector<TaskExample> read_task_jsonl(std::istream& is) {
  std::vector<TaskExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      TaskExample e;
      e.text = j.at("text").get<std::string>();
      if (j.contains("text_b") && !j["text_b"].is_null()) e.text_b = j["text_b"].get<std::string>();
      e.label = j.at("label").get<std::int64_t>();
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& e) {
      throw Error("task jsonl line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline void write_task_jsonl(std::ostream& os, const std::vector<TaskExample>& ex) {
  for (const auto& e : ex) {
    nlohmann::json j = {{"text", e.text}, {"label", e.label}};
    if (e.text_b) j["text_b"] = *e.text_b;
    os << j.dump() << '\n';
  }
}

struct FinetuneOptions {
  std::int64_t epochs = 5;
  std::int64_t batch_size = 32;
  double peak_lr = 1e-4;
  double warmup_fraction = 0.05;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::int64_t seq_len = 32;
  unsigned threads = 1;
};

struct FinetuneResult {
  double mean_metric = 0.0;
  std::vector<double> per_seed;           // best validation accuracy per seed
  std::vector<std::int64_t> best_epoch;   // 1-based
};

struct EncodedTask {
  std::vector<std::vector<TokenId>> train, validation;
  std::vector<std::int64_t> train_labels, validation_labels;
};

inline EncodedTask encode_task(const TokenizerModel& tok, const ClassificationTask& task, std::int64_t seq_len) {
  EncodedTask e;
  auto enc = [&](const std::vector<TaskExample>& ex, auto& ids, auto& labels) {
    for (const auto& x : ex) {
      std::optional<std::string_view> b;
      if (x.text_b) b = *x.text_b;
      ids.push_back(classification_ids(tok, x.text, b, seq_len));
      labels.push_back(x.label);
    }
  };
  enc(task.train, e.train, e.train_labels);
  enc(task.validation, e.validation, e.validation_labels);
  return e;
}

inline double evaluate_classifier(const ModelParams& P, const ClassifierHead& head, const std::vector<std::vector<TokenId>>& seqs,
                                  const std::vector<std::int64_t>& labels, std::int64_t seq_len, std::int64_t num_classes,
                                  unsigned threads = 1) {
  auto b = make_class_batch(seqs, labels, seq_len);
  auto out = forward_classifier(P, head, b, num_classes, {false, 0, threads});
  return accuracy(out.logits, labels);
}

// Per seed: fresh head, per-epoch seeded shuffle, linear schedule with warmup,
// validation accuracy after every epoch. Reports the best epoch per seed and
// the mean over seeds.
inline FinetuneResult finetune(const ModelParams& pretrained, const TokenizerModel& tok, const ClassificationTask& task,
                               const FinetuneOptions& opt) {
  if (task.validation.empty()) throw Error("finetune: empty validation split");
  if (task.train.empty()) throw Error("finetune: empty training split");
  if (opt.seeds.empty()) throw Error("finetune: no seeds");
  if (opt.seq_len > pretrained.config.max_positions) throw Error("finetune: seq_len exceeds position slots");
  for (const auto* split : {&task.train, &task.validation})
    for (const auto& e : *split)
      if (e.label < 0 || e.label >= task.num_classes)
        throw Error("finetune: label " + std::to_string(e.label) + " outside [0, " + std::to_string(task.num_classes) +
                    ")");
  auto data = encode_task(tok, task, opt.seq_len);
  const auto n = static_cast<std::int64_t>(data.train.size());
  const auto steps_per_epoch = (n + opt.batch_size - 1) / opt.batch_size;
  OptimizerHyper h;
  h.peak_lr = opt.peak_lr;
  h.schedule = Schedule::linear;
  h.warmup_fraction = opt.warmup_fraction;
  h.weight_decay = opt.weight_decay;
  h.total_steps = std::max<std::int64_t>(1, steps_per_epoch * opt.epochs);
  h.batch_size = opt.batch_size;
  h.grad_clip = opt.grad_clip;

  FinetuneResult res;
  for (auto seed : opt.seeds) {
    ModelParams P = pretrained;
    ClassifierHead head = init_classifier(P.config, task.num_classes, seed);
    AdamW adam_body(h), adam_head(h);
    ModelParams g = zero_params(P.config);
    ClassifierHead gh{Mat::Zero(head.w.rows(), head.w.cols()), Mat::Zero(1, head.b.cols())};
    std::vector<std::size_t> order(data.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    double best = -1.0;
    std::int64_t best_epoch = 0, step = 0;
    for (std::int64_t epoch = 1; epoch <= opt.epochs; ++epoch) {
      Rng rng(mix_seed(seed, {0xf17eULL, static_cast<std::uint64_t>(epoch)}));
      stable_shuffle(order, rng);
      for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
        ++step;
        std::vector<std::vector<TokenId>> seqs;
        std::vector<std::int64_t> labels;
        for (auto k = s * opt.batch_size; k < std::min(n, (s + 1) * opt.batch_size); ++k) {
          seqs.push_back(data.train[order[static_cast<std::size_t>(k)]]);
          labels.push_back(data.train_labels[order[static_cast<std::size_t>(k)]]);
        }
        auto batch = make_class_batch(seqs, labels, opt.seq_len);
        g.set_zero();
        gh.w.setZero();
        gh.b.setZero();
        classifier_loss_and_grad(P, head, batch, task.num_classes, g, gh,
                                 {true, mix_seed(seed, {0xf00dULL, static_cast<std::uint64_t>(step)}), opt.threads});
        clip_global_norm(opt.grad_clip, g, gh);
        double lr = lr_at(h, step);
        adam_body.step(P, g, lr);
        adam_head.step(head, gh, lr);
      }
      double acc = evaluate_classifier(P, head, data.validation, data.validation_labels, opt.seq_len, task.num_classes,
                                       opt.threads);
      if (acc > best) {
        best = acc;
        best_epoch = epoch;
      }
    }
    res.per_seed.push_back(best);
    res.best_epoch.push_back(best_epoch);
  }
  double sum = 0.0;
  for (double a : res.per_seed) sum += a;
  res.mean_metric = sum / static_cast<double>(res.per_seed.size());
  return res;
}

}  // namespace dslab
