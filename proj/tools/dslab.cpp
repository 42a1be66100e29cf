// dslab: command-line driver for the downscaled pre-training pipeline.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dslab/analysis.hpp"
#include "dslab/config.hpp"
#include "dslab/corpus.hpp"
#include "dslab/costmodel.hpp"
#include "dslab/grid.hpp"
#include "dslab/model.hpp"
#include "dslab/report.hpp"
#include "dslab/synthetic.hpp"
#include "dslab/tokenizer.hpp"
#include "dslab/trainer.hpp"

namespace fs = std::filesystem;
using namespace dslab;
using nlohmann::json;

namespace {

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f) throw Error("cannot write " + p.string());
  return f;
}

std::ifstream open_in(const std::string& p) {
  std::ifstream f(p);
  if (!f) throw Error("cannot open " + p);
  return f;
}

void emit_json(const json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    auto f = open_out(out);
    f << j.dump(2) << '\n';
  }
}

std::set<std::string, std::less<>> read_stoplist(const std::string& path) {
  std::set<std::string, std::less<>> s;
  if (path.empty()) return s;
  for (auto& l : read_lines(path)) {
    auto w = split_whitespace(l);
    if (!w.empty()) s.insert(normalize_word(w[0]));
  }
  return s;
}

// Columns by header name from a small CSV file.
std::map<std::string, std::vector<std::string>> read_columns(const std::string& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw Error(path + ": empty file");
  auto header = split_csv_line(line);
  std::map<std::string, std::vector<std::string>> cols;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != header.size()) throw Error(path + " line " + std::to_string(lineno) + ": wrong field count");
    for (std::size_t i = 0; i < f.size(); ++i) cols[header[i]].push_back(f[i]);
  }
  return cols;
}

std::vector<double> numeric_column(const std::map<std::string, std::vector<std::string>>& cols, const std::string& name,
                                   const std::string& path) {
  auto it = cols.find(name);
  if (it == cols.end()) throw Error(path + ": no column '" + name + "'");
  std::vector<double> v;
  for (auto& s : it->second) {
    try {
      v.push_back(std::stod(s));
    } catch (const std::exception&) {
      throw Error(path + ": column '" + name + "' has a non-numeric value '" + s + "'");
    }
  }
  return v;
}

std::vector<Point> frontier_points(const std::string& path) {
  auto in = open_in(path);
  std::vector<Point> pts;
  for (const auto& p : read_frontier_csv(in)) pts.push_back({p.flops, p.loss});
  return pts;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dslab: vocabulary-limited corpus filtering, tokenizer selection, tiny encoder pre-training and "
               "scaling analysis"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // synth
  auto* synth = app.add_subcommand("synth", "Write the synthetic fixture language (documents, transcripts, task)");
  std::string synth_out;
  std::size_t synth_docs = 500, synth_train = 2000, synth_valid = 500;
  std::uint64_t synth_seed = 0;
  double synth_oov = 0.02;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--docs", synth_docs, "Number of documents");
  synth->add_option("--task-train", synth_train, "Task training examples");
  synth->add_option("--task-validation", synth_valid, "Task validation examples");
  synth->add_option("--oov-rate", synth_oov, "Per-sentence out-of-vocabulary injection rate");
  synth->add_option("--seed", synth_seed, "Seed");

  // build-vocab
  auto* bv = app.add_subcommand("build-vocab", "Build the closed word vocabulary from transcript lines");
  std::string bv_in, bv_stop, bv_out;
  bool bv_flag = false;
  bv->add_option("--transcripts", bv_in, "Text file, one utterance per line")->required()->check(CLI::ExistingFile);
  bv->add_option("--stoplist", bv_stop, "Words to exclude, one per line")->check(CLI::ExistingFile);
  bv->add_option("--out", bv_out, "Vocabulary file to write")->required();
  bv->add_flag("--flag-gibberish", bv_flag, "Report words that look like babble (never removes them)");

  // filter
  auto* flt = app.add_subcommand("filter", "Filter JSONL documents to vocabulary-closed spans");
  std::string f_docs, f_vocab, f_stop, f_out, f_mode = "span", f_corpus = "corpus";
  FilterConfig fcfg;
  std::size_t f_dev = 0, f_test = 0;
  std::uint64_t f_seed = 0;
  flt->add_option("--docs", f_docs, "JSONL documents with a \"text\" field")->required()->check(CLI::ExistingFile);
  flt->add_option("--vocab", f_vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  flt->add_option("--stoplist", f_stop, "Stoplist file")->check(CLI::ExistingFile);
  flt->add_option("--mode", f_mode, "span or sentence")->check(CLI::IsMember({"span", "sentence"}));
  flt->add_option("--span-size", fcfg.span_size, "Window size in words");
  flt->add_option("--stride", fcfg.stride, "Window stride in words");
  flt->add_option("--target-words", fcfg.target_span_words, "Target words per concatenated span (sentence mode)");
  flt->add_option("--corpus-id", f_corpus, "Corpus id recorded in span origins");
  flt->add_option("--dev", f_dev, "Development spans to hold out");
  flt->add_option("--test", f_test, "Test spans to hold out");
  flt->add_option("--seed", f_seed, "Split seed");
  flt->add_option("--out", f_out, "Output directory")->required();

  // train-tokenizer
  auto* tt = app.add_subcommand("train-tokenizer", "Train a byte-level BPE tokenizer");
  std::string tt_spans, tt_out;
  std::size_t tt_vocab = 19000;
  std::uint64_t tt_minfreq = 2, tt_seed = 0;
  tt->add_option("--spans", tt_spans, "JSONL spans")->required()->check(CLI::ExistingFile);
  tt->add_option("--vocab-size", tt_vocab, "Target vocabulary size");
  tt->add_option("--min-frequency", tt_minfreq, "Minimum pair count for a merge");
  tt->add_option("--seed", tt_seed, "Recorded seed");
  tt->add_option("--out", tt_out, "Tokenizer file to write")->required();

  // eval-tokenizer
  auto* et = app.add_subcommand("eval-tokenizer", "Word-split ratio, ESMS and selection over candidate tokenizers");
  std::vector<std::string> et_toks, et_refs;
  std::string et_sample, et_esms, et_out;
  std::uint64_t et_seed = 0;
  et->add_option("--tokenizer", et_toks, "Candidate tokenizer files")->required()->check(CLI::ExistingFile);
  et->add_option("--sample", et_sample, "JSONL spans to measure on")->required()->check(CLI::ExistingFile);
  et->add_option("--esms", et_esms, "ESMS reference TSV (default: the 13 published words)")->check(CLI::ExistingFile);
  et->add_option("--reference-ratio", et_refs, "family=ratio, one per family");
  et->add_option("--seed", et_seed, "Sampling seed");
  et->add_option("--out", et_out, "JSON output (default stdout)");

  // grid
  auto* gr = app.add_subcommand("grid", "Generate model configurations");
  std::string g_spec, g_out, g_mode;
  std::size_t g_count = 0;
  std::uint64_t g_seed = 0;
  gr->add_option("--spec", g_spec, "Grid spec JSON")->check(CLI::ExistingFile);
  gr->add_option("--mode", g_mode, "Override mode")->check(CLI::IsMember({"unidirectional", "random_sample"}));
  gr->add_option("--samples", g_count, "Override sample count");
  gr->add_option("--seed", g_seed, "Override seed");
  gr->add_option("--out", g_out, "JSON output (default stdout)");

  // pretrain
  auto* pt = app.add_subcommand("pretrain", "MLM pre-training of one configuration");
  std::string p_cfg, p_tok, p_train, p_eval, p_out, p_run = "run", p_sched = "inverse_sqrt", p_mode = "s_corrected";
  OptimizerHyper p_h;
  p_h.total_steps = 2000;
  p_h.batch_size = 32;
  std::int64_t p_log = 100, p_seq = 0;
  std::uint64_t p_seed = 0;
  bool p_ckpt = false;
  pt->add_option("--config", p_cfg, "Model config JSON")->required()->check(CLI::ExistingFile);
  pt->add_option("--tokenizer", p_tok, "Tokenizer file")->required()->check(CLI::ExistingFile);
  pt->add_option("--train", p_train, "Training spans JSONL")->required()->check(CLI::ExistingFile);
  pt->add_option("--eval", p_eval, "Evaluation spans JSONL")->required()->check(CLI::ExistingFile);
  pt->add_option("--steps", p_h.total_steps, "Weight updates");
  pt->add_option("--batch", p_h.batch_size, "Sequences per update");
  pt->add_option("--lr", p_h.peak_lr, "Peak learning rate");
  pt->add_option("--schedule", p_sched, "inverse_sqrt or linear")->check(CLI::IsMember({"inverse_sqrt", "linear"}));
  pt->add_option("--weight-decay", p_h.weight_decay, "Decoupled weight decay");
  pt->add_option("--clip", p_h.grad_clip, "Global gradient-norm clip (0 disables)");
  pt->add_option("--seq-len", p_seq, "Override sequence length");
  pt->add_option("--log-every", p_log, "Steps between eval records");
  pt->add_option("--flops-mode", p_mode, "verbatim or s_corrected")->check(CLI::IsMember({"verbatim", "s_corrected"}));
  pt->add_option("--seed", p_seed, "Seed");
  pt->add_option("--run-id", p_run, "Run id");
  pt->add_flag("--checkpoints", p_ckpt, "Write <out>/<run-id>/step_N.ckpt at every record");
  pt->add_option("--out", p_out, "Output directory")->required();

  // finetune
  auto* ft = app.add_subcommand("finetune", "Fine-tune a checkpoint (or a random init) on a classification task");
  std::string ft_ckpt, ft_cfg, ft_tok, ft_train, ft_valid, ft_out;
  FinetuneOptions fo;
  std::uint64_t ft_init_seed = 0;
  ft->add_option("--checkpoint", ft_ckpt, "Pre-trained checkpoint")->check(CLI::ExistingFile);
  ft->add_option("--random-init", ft_cfg, "Model config JSON; fine-tune from initialization instead")
      ->check(CLI::ExistingFile)
      ->excludes("--checkpoint");
  ft->add_option("--init-seed", ft_init_seed, "Seed for --random-init");
  ft->add_option("--tokenizer", ft_tok, "Tokenizer file")->required()->check(CLI::ExistingFile);
  ft->add_option("--task-train", ft_train, "Task JSONL (text, optional text_b, label)")->required()->check(CLI::ExistingFile);
  ft->add_option("--task-validation", ft_valid, "Validation JSONL")->required()->check(CLI::ExistingFile);
  ft->add_option("--epochs", fo.epochs, "Epochs");
  ft->add_option("--batch", fo.batch_size, "Batch size");
  ft->add_option("--lr", fo.peak_lr, "Peak learning rate")->check(CLI::Range(2e-5, 2e-4));
  ft->add_option("--seeds", fo.seeds, "Fine-tuning seeds");
  ft->add_option("--seq-len", fo.seq_len, "Sequence length");
  ft->add_option("--out", ft_out, "JSON output (default stdout)");

  // flops
  auto* fl = app.add_subcommand("flops", "Parameter count and analytic FLOPs for a config");
  std::string fl_cfg, fl_mode = "s_corrected";
  std::uint64_t fl_updates = 35000, fl_batch = 256;
  fl->add_option("--config", fl_cfg, "Model config JSON")->required()->check(CLI::ExistingFile);
  fl->add_option("--mode", fl_mode, "verbatim or s_corrected")->check(CLI::IsMember({"verbatim", "s_corrected"}));
  fl->add_option("--updates", fl_updates, "Weight updates");
  fl->add_option("--batch", fl_batch, "Batch size");

  // frontier
  auto* fr = app.add_subcommand("frontier", "Compute-optimal frontier over RunLog CSVs");
  std::vector<std::string> fr_runs;
  std::size_t fr_bins = 32;
  std::string fr_out;
  fr->add_option("--runs", fr_runs, "RunLog CSV files")->required()->check(CLI::ExistingFile);
  fr->add_option("--bins", fr_bins, "Log-spaced FLOPs bins");
  fr->add_option("--out", fr_out, "Frontier CSV (default stdout)");

  // fit
  auto* fit = app.add_subcommand("fit", "Power-law fit y = C x^e (Levenberg-Marquardt)");
  std::string fit_frontier, fit_points, fit_x = "x", fit_y = "y", fit_out;
  double fit_min_x = 0;
  bool fit_log = false;
  fit->add_option("--frontier", fit_frontier, "Frontier CSV (flops, loss)")->check(CLI::ExistingFile);
  fit->add_option("--points", fit_points, "Generic CSV")->check(CLI::ExistingFile)->excludes("--frontier");
  fit->add_option("--x", fit_x, "x column for --points");
  fit->add_option("--y", fit_y, "y column for --points");
  fit->add_option("--min-x", fit_min_x, "Drop points with x below this");
  fit->add_flag("--log-space", fit_log, "Also report the log-space least-squares fit");
  fit->add_option("--out", fit_out, "JSON output (default stdout)");

  // break
  auto* brk = app.add_subcommand("break", "Two-regime power-law break detection");
  std::string brk_frontier, brk_out;
  double brk_gap = 0.02;
  std::size_t brk_min = 3;
  brk->add_option("--frontier", brk_frontier, "Frontier CSV")->required()->check(CLI::ExistingFile);
  brk->add_option("--min-gap", brk_gap, "Exponent difference that counts as a break");
  brk->add_option("--min-side", brk_min, "Minimum points on each side");
  brk->add_option("--out", brk_out, "JSON output (default stdout)");

  // icer
  auto* ic = app.add_subcommand("icer", "Incremental cost-effectiveness along a one-axis ladder");
  std::string ic_ladder, ic_out;
  ic->add_option("--ladder", ic_ladder, "CSV with E,H,I,L,A,perplexity,flops")->required()->check(CLI::ExistingFile);
  ic->add_option("--out", ic_out, "CSV output (default stdout)");

  // correlate
  auto* co = app.add_subcommand("correlate", "Spearman correlation between two CSV columns");
  std::string co_in, co_x, co_y, co_out;
  co->add_option("--input", co_in, "CSV file")->required()->check(CLI::ExistingFile);
  co->add_option("--x", co_x, "First column")->required();
  co->add_option("--y", co_y, "Second column")->required();
  co->add_option("--out", co_out, "JSON output (default stdout)");

  // report
  auto* rp = app.add_subcommand("report", "CSV tables and SVG figures from RunLogs");
  std::vector<std::string> rp_runs;
  std::string rp_out;
  std::size_t rp_bins = 32;
  rp->add_option("--runs", rp_runs, "RunLog CSV files")->required()->check(CLI::ExistingFile);
  rp->add_option("--bins", rp_bins, "Frontier bins");
  rp->add_option("--out", rp_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const unsigned threads = thread_count();

    if (*synth) {
      fs::path out(synth_out);
      fs::create_directories(out);
      synth::DocumentOptions o;
      o.oov_rate = synth_oov;
      auto docs = synth::documents(synth_docs, synth_seed, o);
      {
        auto f = open_out(out / "documents.jsonl");
        for (auto& d : docs) f << json{{"id", d.id}, {"text", d.text}}.dump() << '\n';
      }
      {
        auto f = open_out(out / "transcripts.txt");
        for (auto& l : synth::transcripts(2000, synth_seed)) f << l << '\n';
      }
      open_out(out / "stoplist.txt") << "bababa\n";
      auto task = synth::family_task(synth_train, synth_valid, synth_seed);
      {
        auto f = open_out(out / "task_train.jsonl");
        write_task_jsonl(f, task.train);
        auto g = open_out(out / "task_validation.jsonl");
        write_task_jsonl(g, task.validation);
      }
      std::cerr << "wrote " << docs.size() << " documents and a " << task.train.size() << "/" << task.validation.size()
                << " task to " << out << '\n';
    } else if (*bv) {
      VocabularyStats st;
      auto v = build_vocabulary(read_lines(bv_in), read_stoplist(bv_stop), &st, bv_in);
      auto f = open_out(bv_out);
      save_vocabulary(f, v);
      std::cerr << v.size() << " words from " << st.lines << " lines (" << st.rejected_lines << " rejected as bad UTF-8, "
                << st.stoplisted << " stoplisted tokens)\n";
      if (bv_flag)
        for (auto& w : flag_gibberish(v)) std::cerr << "possible babble: " << w << '\n';
    } else if (*flt) {
      fcfg.mode = f_mode == "span" ? FilterMode::span : FilterMode::sentence;
      auto vocab = load_vocabulary(f_vocab, f_stop);
      auto in = open_in(f_docs);
      std::size_t unreadable = 0;
      auto docs = read_documents_jsonl(in, &unreadable);
      FilterStats st;
      auto spans = filter_corpus(docs, vocab, fcfg, &st, f_corpus, threads);
      fs::path out(f_out);
      if (f_dev + f_test > 0) {
        auto sp = split_dataset(spans, f_dev, f_test, f_seed);
        auto a = open_out(out / "train.jsonl");
        write_spans_jsonl(a, sp.train);
        auto b = open_out(out / "dev.jsonl");
        write_spans_jsonl(b, sp.dev);
        auto c = open_out(out / "test.jsonl");
        write_spans_jsonl(c, sp.test);
      } else {
        auto a = open_out(out / "spans.jsonl");
        write_spans_jsonl(a, spans);
      }
      std::cerr << st.documents << " documents, " << st.skipped + unreadable << " skipped, " << spans.size()
                << " spans\n";
    } else if (*tt) {
      auto spans = read_spans_jsonl(tt_spans);
      BpeTrainStats st;
      auto m = train_bpe(spans, tt_vocab, tt_seed, tt_minfreq, &st);
      save_tokenizer(tt_out, m);
      std::cerr << "vocabulary " << m.vocab_size() << " (" << st.merges << " merges)\n";
    } else if (*et) {
      auto sample = read_spans_jsonl(et_sample);
      EsmsReference ref = et_esms.empty() ? published_esms_reference() : load_esms_reference(et_esms);
      std::map<std::string, double> ratios;
      for (auto& r : et_refs) {
        auto eq = r.find('=');
        if (eq == std::string::npos) throw Error("--reference-ratio expects family=value, got " + r);
        ratios[r.substr(0, eq)] = std::stod(r.substr(eq + 1));
      }
      std::vector<TokenizerCandidate> cands;
      json j = json::array();
      for (auto& p : et_toks) {
        auto m = std::make_shared<const TokenizerModel>(load_tokenizer(p));
        cands.push_back(evaluate_candidate(m, sample, ref, et_seed));
        j.push_back({{"path", p},
                     {"family", cands.back().family},
                     {"vocab_size", cands.back().vocab_size},
                     {"word_split_ratio", cands.back().word_split_ratio},
                     {"esms", cands.back().esms}});
      }
      json res = {{"candidates", j}, {"esms_reference_words", ref.size()}};
      if (!ratios.empty()) {
        auto best = select_tokenizer(cands, ratios);
        for (std::size_t i = 0; i < cands.size(); ++i)
          if (cands[i].model == best.model) res["selected"] = et_toks[i];
      }
      emit_json(res, et_out);
    } else if (*gr) {
      GridSpec spec = g_spec.empty() ? GridSpec{} : load_grid_spec(g_spec);
      if (!g_mode.empty()) spec.mode = g_mode == "unidirectional" ? GridMode::unidirectional : GridMode::random_sample;
      if (gr->count("--samples")) spec.sample_count = g_count;
      if (gr->count("--seed")) spec.seed = g_seed;
      json j = json::array();
      for (auto& c : generate_grid(spec)) j.push_back(c);
      emit_json(j, g_out);
    } else if (*pt) {
      auto cfg = load_config(p_cfg);
      auto tok = load_tokenizer(p_tok);
      cfg.vocab = static_cast<std::int64_t>(tok.vocab_size());
      if (p_seq > 0) cfg.seq_len = p_seq;
      cfg.validate();
      p_h.schedule = parse_schedule(p_sched);
      auto train = tokenize_spans(tok, read_spans_jsonl(p_train), cfg.seq_len, threads);
      auto eval = tokenize_spans(tok, read_spans_jsonl(p_eval), cfg.seq_len, threads);
      PretrainOptions po;
      po.run_id = p_run;
      po.seed = p_seed;
      po.log_every = p_log;
      po.cost_mode = parse_cost_mode(p_mode);
      po.threads = threads;
      if (p_ckpt) po.checkpoint_dir = p_out;
      po.on_record = [&](const RunRecord& r, const ModelParams&) {
        std::cerr << p_run << " step " << r.step << " train " << r.train_loss << " eval " << r.eval_loss << '\n';
      };
      auto res = pretrain(cfg, train, eval, p_h, po);
      save_runlog((fs::path(p_out) / (p_run + ".csv")).string(), res.log);
      save_checkpoint((fs::path(p_out) / (p_run + ".final.ckpt")).string(), res.params, res.log.steps_completed,
                      res.log.steps_completed * p_h.batch_size * cfg.seq_len);
      std::cerr << "unigram baseline perplexity " << unigram_perplexity(eval) << '\n';
    } else if (*ft) {
      if (ft_ckpt.empty() == ft_cfg.empty()) throw Error("finetune: give exactly one of --checkpoint or --random-init");
      auto tok = load_tokenizer(ft_tok);
      ModelParams P;
      if (!ft_ckpt.empty()) {
        P = load_checkpoint(ft_ckpt).params;
        if (static_cast<std::size_t>(P.config.vocab) != tok.vocab_size())
          throw Error("finetune: checkpoint vocabulary does not match the tokenizer");
      } else {
        auto cfg = load_config(ft_cfg);
        cfg.vocab = static_cast<std::int64_t>(tok.vocab_size());
        P = init_model(cfg, ft_init_seed);
      }
      ClassificationTask task;
      task.name = fs::path(ft_train).stem().string();
      {
        auto a = open_in(ft_train);
        task.train = read_task_jsonl(a);
        auto b = open_in(ft_valid);
        task.validation = read_task_jsonl(b);
      }
      std::int64_t max_label = 0;
      for (auto& e : task.train) max_label = std::max(max_label, e.label);
      for (auto& e : task.validation) max_label = std::max(max_label, e.label);
      task.num_classes = std::max<std::int64_t>(2, max_label + 1);
      fo.threads = threads;
      auto r = finetune(P, tok, task, fo);
      emit_json({{"mean_accuracy", r.mean_metric}, {"per_seed", r.per_seed}, {"best_epoch", r.best_epoch},
                 {"seeds", fo.seeds}},
                ft_out);
    } else if (*fl) {
      auto cfg = load_config(fl_cfg);
      auto b = flops_per_sequence(cfg, parse_cost_mode(fl_mode));
      json j = to_json(b);
      j["config"] = cfg;
      j["params"] = count_params(cfg);
      j["updates"] = fl_updates;
      j["batch"] = fl_batch;
      j["total_flops"] = total_flops(b.c_seq, fl_updates, fl_batch);
      std::cout << j.dump(2) << '\n';
    } else if (*fr) {
      std::vector<RunLog> runs;
      for (auto& p : fr_runs) runs.push_back(load_runlog(p));
      auto pts = compute_optimal_frontier(runs, fr_bins);
      if (fr_out.empty()) {
        write_frontier_csv(std::cout, pts);
      } else {
        auto f = open_out(fr_out);
        write_frontier_csv(f, pts);
      }
    } else if (*fit) {
      std::vector<Point> pts;
      if (!fit_frontier.empty()) {
        pts = frontier_points(fit_frontier);
      } else if (!fit_points.empty()) {
        auto cols = read_columns(fit_points);
        auto x = numeric_column(cols, fit_x, fit_points), y = numeric_column(cols, fit_y, fit_points);
        for (std::size_t i = 0; i < x.size(); ++i) pts.push_back({x[i], y[i]});
      } else {
        throw Error("fit: give --frontier or --points");
      }
      std::erase_if(pts, [&](const Point& p) { return p.x < fit_min_x; });
      json j = to_json(fit_power_law(pts));
      if (fit_log) j["log_space"] = to_json(fit_power_law_logspace(pts));
      emit_json(j, fit_out);
    } else if (*brk) {
      auto in = open_in(brk_frontier);
      auto fp = read_frontier_csv(in);
      std::vector<Point> pts;
      std::vector<double> cand;
      for (auto& p : fp) {
        pts.push_back({p.flops, p.loss});
        cand.push_back(p.bin_lo);
      }
      auto r = detect_break(pts, cand, brk_gap, brk_min);
      emit_json({{"threshold", r.threshold},
                 {"combined_r2", r.combined_r2},
                 {"has_break", r.has_break},
                 {"low", to_json(r.low)},
                 {"high", to_json(r.high)}},
                brk_out);
    } else if (*ic) {
      auto cols = read_columns(ic_ladder);
      auto col = [&](const char* k) { return numeric_column(cols, k, ic_ladder); };
      auto E = col("E"), H = col("H"), I = col("I"), L = col("L"), A = col("A"), ppl = col("perplexity"),
           flops = col("flops");
      std::vector<LadderRung> ladder;
      for (std::size_t i = 0; i < E.size(); ++i)
        ladder.push_back({make_config(static_cast<std::int64_t>(E[i]), static_cast<std::int64_t>(H[i]),
                                      static_cast<std::int64_t>(I[i]), static_cast<std::int64_t>(L[i]),
                                      static_cast<std::int64_t>(A[i])),
                          ppl[i], flops[i]});
      auto entries = icer(ladder);
      if (ic_out.empty()) {
        write_icer_csv(std::cout, entries);
      } else {
        auto f = open_out(ic_out);
        write_icer_csv(f, entries);
      }
    } else if (*co) {
      auto cols = read_columns(co_in);
      auto r = spearman(numeric_column(cols, co_x, co_in), numeric_column(cols, co_y, co_in));
      emit_json({{"rho", r.rho}, {"p_value", r.p_value}, {"n", r.n}, {"exact_p", r.exact}, {"x", co_x}, {"y", co_y}},
                co_out);
    } else if (*rp) {
      std::vector<RunLog> runs;
      for (auto& p : rp_runs) runs.push_back(load_runlog(p));
      ReportOptions o;
      o.n_bins = rp_bins;
      auto s = write_report(runs, rp_out, o);
      for (auto& f : s.files) std::cerr << "wrote " << (fs::path(rp_out) / f).string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
