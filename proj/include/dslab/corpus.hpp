#pragma once

// Vocabulary construction and vocabulary-closed corpus filtering.

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dslab/common.hpp"

namespace dslab {

inline bool is_lower_alpha(char c) { return c >= 'a' && c <= 'z'; }
inline bool is_digit(char c) { return c >= '0' && c <= '9'; }
inline char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

// Admissibility normalization: lowercase, delete digits, trim anything that is
// not a letter from both ends. Interior characters are kept as-is.
inline std::string normalize_word(std::string_view word) {
  std::string w;
  w.reserve(word.size());
  for (char c : word)
    if (!is_digit(c)) w.push_back(ascii_lower(c));
  std::size_t b = 0, e = w.size();
  while (b < e && !is_lower_alpha(w[b])) ++b;
  while (e > b && !is_lower_alpha(w[e - 1])) --e;
  return w.substr(b, e - b);
}

// Closed set of admissible lowercase words.
class VocabularySpec {
 public:
  VocabularySpec() = default;

  VocabularySpec(std::set<std::string, std::less<>> words, std::set<std::string, std::less<>> stoplist = {},
                 std::string source_label = {})
      : words_(std::move(words)), stoplist_(std::move(stoplist)), source_label_(std::move(source_label)) {
    for (const auto& s : stoplist_) words_.erase(s);
    for (const auto& w : words_)
      if (!valid_word(w)) throw Error("vocabulary word has characters outside [a-z'-]: '" + w + "'");
  }

  static bool valid_word(std::string_view w) {
    if (w.empty()) return false;
    for (char c : w)
      if (!(is_lower_alpha(c) || c == '\'' || c == '-')) return false;
    return true;
  }

  bool contains(std::string_view w) const { return words_.find(w) != words_.end(); }
  std::size_t size() const { return words_.size(); }
  bool empty() const { return words_.empty(); }
  const auto& words() const { return words_; }
  const auto& stoplist() const { return stoplist_; }
  const std::string& source_label() const { return source_label_; }

 private:
  std::set<std::string, std::less<>> words_;
  std::set<std::string, std::less<>> stoplist_;
  std::string source_label_;
};

struct VocabularyStats {
  std::size_t lines = 0;
  std::size_t rejected_lines = 0;  // malformed UTF-8
  std::size_t non_ascii_words = 0;
  std::size_t stoplisted = 0;
};

// Lowercase, strip special characters (anything outside [a-z'-]), split on
// whitespace, trim dangling apostrophes/hyphens, drop stoplist members. Words
// carrying non-ASCII bytes are dropped rather than mangled.
inline VocabularySpec build_vocabulary(const std::vector<std::string>& lines,
                                       const std::set<std::string, std::less<>>& stoplist,
                                       VocabularyStats* stats = nullptr, std::string source_label = {}) {
  VocabularyStats local;
  std::set<std::string, std::less<>> words;
  for (const auto& line : lines) {
    ++local.lines;
    if (!valid_utf8(line)) {
      ++local.rejected_lines;
      continue;
    }
    for (auto raw : split_whitespace(line)) {
      bool non_ascii = false;
      std::string w;
      for (char c : raw) {
        if (static_cast<unsigned char>(c) >= 0x80) {
          non_ascii = true;
          break;
        }
        char l = ascii_lower(c);
        if (is_lower_alpha(l) || l == '\'' || l == '-') w.push_back(l);
      }
      if (non_ascii) {
        ++local.non_ascii_words;
        continue;
      }
      std::size_t b = 0, e = w.size();
      while (b < e && !is_lower_alpha(w[b])) ++b;
      while (e > b && !is_lower_alpha(w[e - 1])) --e;
      if (b == e) continue;
      w = w.substr(b, e - b);
      if (stoplist.count(w)) {
        ++local.stoplisted;
        continue;
      }
      words.insert(std::move(w));
    }
  }
  if (stats) *stats = local;
  return VocabularySpec(std::move(words), stoplist, std::move(source_label));
}

// Heuristic gibberish flag: some character bigram occurs at least
// `min_repeats` times ("bababa"). Flags only; removal is the stoplist's job.
inline bool looks_like_gibberish(std::string_view w, int min_repeats = 3) {
  std::map<std::string_view, int> counts;
  for (std::size_t i = 0; i + 1 < w.size(); ++i)
    if (++counts[w.substr(i, 2)] >= min_repeats) return true;
  return false;
}

inline std::vector<std::string> flag_gibberish(const VocabularySpec& vocab, int min_repeats = 3) {
  std::vector<std::string> out;
  for (const auto& w : vocab.words())
    if (looks_like_gibberish(w, min_repeats)) out.push_back(w);
  return out;
}

inline bool word_admissible(std::string_view word, const VocabularySpec& vocab) {
  std::string n = normalize_word(word);
  return n.empty() || vocab.contains(n);
}

inline bool sentence_admissible(std::string_view sentence, const VocabularySpec& vocab) {
  for (auto w : split_whitespace(sentence))
    if (!word_admissible(w, vocab)) return false;
  return true;
}

struct SpanOrigin {
  std::string corpus;
  std::string document;
  std::size_t offset = 0;  // word offset into the document
  bool operator==(const SpanOrigin&) const = default;
};

struct TextSpan {
  std::string text;
  std::size_t word_count = 0;
  SpanOrigin origin;
  bool operator==(const TextSpan&) const = default;
};

enum class FilterMode { span, sentence };

struct FilterConfig {
  FilterMode mode = FilterMode::span;
  std::size_t span_size = 110;
  std::size_t stride = 30;
  std::size_t target_span_words = 110;
  std::string sentence_terminators = ".?!";

  void validate() const {
    if (stride == 0 || stride > span_size) throw Error("filter config: need 0 < stride <= span_size");
    if (target_span_words == 0) throw Error("filter config: target_span_words must be positive");
  }
};

// Sentences end at a terminator followed by whitespace or end of text.
// Returned sentences are whitespace-normalized (single spaces).
inline std::vector<std::string> split_sentences(std::string_view text, std::string_view terminators = ".?!") {
  std::vector<std::string> out;
  std::vector<std::string_view> current;
  for (auto w : split_whitespace(text)) {
    current.push_back(w);
    if (terminators.find(w.back()) != std::string_view::npos) {
      out.push_back(join(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(join(current));
  return out;
}

struct Document {
  std::string id;
  std::string text;
};

struct FilterStats {
  std::size_t documents = 0;
  std::size_t skipped = 0;  // undecodable documents
  std::size_t spans = 0;
};

// Filter a single document. Returns nullopt when the text is not valid UTF-8.
inline std::optional<std::vector<TextSpan>> filter_document(const Document& doc, const VocabularySpec& vocab,
                                                            const FilterConfig& cfg, std::string_view corpus_id = "") {
  if (!valid_utf8(doc.text)) return std::nullopt;
  std::vector<TextSpan> out;
  auto words = split_whitespace(doc.text);
  if (cfg.mode == FilterMode::span) {
    // bad_prefix[i] = number of inadmissible words among words[0, i)
    std::vector<std::size_t> bad_prefix(words.size() + 1, 0);
    for (std::size_t i = 0; i < words.size(); ++i)
      bad_prefix[i + 1] = bad_prefix[i] + (word_admissible(words[i], vocab) ? 0 : 1);
    for (std::size_t off = 0; off + cfg.span_size <= words.size(); off += cfg.stride) {
      if (bad_prefix[off + cfg.span_size] != bad_prefix[off]) continue;
      std::vector<std::string_view> win(words.begin() + off, words.begin() + off + cfg.span_size);
      out.push_back({join(win), cfg.span_size, {std::string(corpus_id), doc.id, off}});
    }
    return out;
  }

  std::string pending;
  std::size_t pending_words = 0, pending_offset = 0, word_pos = 0;
  auto flush = [&] {
    if (pending_words == 0) return;
    out.push_back({pending, pending_words, {std::string(corpus_id), doc.id, pending_offset}});
    pending.clear();
    pending_words = 0;
  };
  for (const auto& sentence : split_sentences(doc.text, cfg.sentence_terminators)) {
    std::size_t n = split_whitespace(sentence).size();
    std::size_t at = word_pos;
    word_pos += n;
    if (!sentence_admissible(sentence, vocab)) continue;
    if (pending_words > 0 && pending_words + n > cfg.target_span_words) flush();
    if (pending_words == 0) pending_offset = at;
    if (!pending.empty()) pending += ' ';
    pending += sentence;
    pending_words += n;
  }
  flush();
  return out;
}

// Filter documents in parallel; output is concatenated in input order, so it is
// identical for any thread count.
inline std::vector<TextSpan> filter_corpus(const std::vector<Document>& docs, const VocabularySpec& vocab,
                                           const FilterConfig& cfg, FilterStats* stats = nullptr,
                                           std::string_view corpus_id = "", unsigned threads = 1) {
  cfg.validate();
  std::vector<std::optional<std::vector<TextSpan>>> slots(docs.size());
  parallel_for(docs.size(), threads, [&](std::size_t i) { slots[i] = filter_document(docs[i], vocab, cfg, corpus_id); });
  std::vector<TextSpan> out;
  FilterStats local;
  local.documents = docs.size();
  for (auto& s : slots) {
    if (!s) {
      ++local.skipped;
      continue;
    }
    for (auto& span : *s) out.push_back(std::move(span));
  }
  local.spans = out.size();
  if (stats) {
    stats->documents += local.documents;
    stats->skipped += local.skipped;
    stats->spans += local.spans;
  }
  return out;
}

struct DatasetSplit {
  std::vector<TextSpan> train, dev, test;
};

// Dev and test are drawn by a seeded shuffle of indices; train keeps the
// remaining spans in input order.
inline DatasetSplit split_dataset(const std::vector<TextSpan>& spans, std::size_t dev_size, std::size_t test_size,
                                  std::uint64_t seed) {
  if (dev_size + test_size > spans.size())
    throw Error("split_dataset: dev + test (" + std::to_string(dev_size + test_size) + ") exceeds " +
                std::to_string(spans.size()) + " spans");
  std::vector<std::size_t> idx(spans.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(mix_seed(seed, {0x5b117ULL}));
  stable_shuffle(idx, rng);
  std::vector<char> role(spans.size(), 0);
  DatasetSplit out;
  for (std::size_t k = 0; k < dev_size; ++k) {
    role[idx[k]] = 1;
    out.dev.push_back(spans[idx[k]]);
  }
  for (std::size_t k = dev_size; k < dev_size + test_size; ++k) {
    role[idx[k]] = 2;
    out.test.push_back(spans[idx[k]]);
  }
  for (std::size_t i = 0; i < spans.size(); ++i)
    if (role[i] == 0) out.train.push_back(spans[i]);
  return out;
}

// ---- file formats -----------------------------------------------------------

inline nlohmann::json to_json(const TextSpan& s) {
  return {{"text", s.text},
          {"word_count", s.word_count},
          {"origin", {{"corpus", s.origin.corpus}, {"document", s.origin.document}, {"offset", s.origin.offset}}}};
}

inline TextSpan span_from_json(const nlohmann::json& j) {
  TextSpan s;
  s.text = j.at("text").get<std::string>();
  s.word_count = j.contains("word_count") ? j.at("word_count").get<std::size_t>() : split_whitespace(s.text).size();
  if (j.contains("origin")) {
    const auto& o = j.at("origin");
    s.origin.corpus = o.value("corpus", "");
    s.origin.document = o.value("document", "");
    s.origin.offset = o.value("offset", std::size_t{0});
  }
  return s;
}

inline void write_spans_jsonl(std::ostream& os, const std::vector<TextSpan>& spans) {
  for (const auto& s : spans) os << to_json(s).dump() << '\n';
}

inline std::vector<TextSpan> read_spans_jsonl(std::istream& is) {
  std::vector<TextSpan> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(span_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error("spans jsonl line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<TextSpan> read_spans_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_spans_jsonl(in);
}

// Reads documents from JSONL with a "text" field; an "id" field is used when
// present, otherwise the 0-based line number. Lines that fail to parse count
// as skipped.
inline std::vector<Document> read_documents_jsonl(std::istream& is, std::size_t* skipped = nullptr) {
  std::vector<Document> out;
  std::string line;
  std::size_t lineno = 0, bad = 0;
  while (std::getline(is, line)) {
    std::size_t this_line = lineno++;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      Document d;
      d.text = j.at("text").get<std::string>();
      if (j.contains("id")) {
        d.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
      } else {
        d.id = std::to_string(this_line);
      }
      out.push_back(std::move(d));
    } catch (const nlohmann::json::exception&) {
      ++bad;
    }
  }
  if (skipped) *skipped += bad;
  return out;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

inline VocabularySpec load_vocabulary(const std::string& path, const std::string& stoplist_path = {}) {
  std::set<std::string, std::less<>> words, stop;
  for (auto& l : read_lines(path)) {
    auto parts = split_whitespace(l);
    if (!parts.empty()) words.emplace(parts.front());
  }
  if (!stoplist_path.empty())
    for (auto& l : read_lines(stoplist_path)) {
      auto parts = split_whitespace(l);
      if (!parts.empty()) stop.emplace(parts.front());
    }
  return VocabularySpec(std::move(words), std::move(stop), path);
}

inline void save_vocabulary(std::ostream& os, const VocabularySpec& v) {
  for (const auto& w : v.words()) os << w << '\n';
}

}  // namespace dslab
