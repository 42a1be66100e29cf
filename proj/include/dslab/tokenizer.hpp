#pragma once

// Byte-level BPE with a prefix-space word-boundary convention, plus the
// word-split-ratio / exact-subtoken-match metrics used to choose a vocabulary
// size.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dslab/common.hpp"
#include "dslab/corpus.hpp"

namespace dslab {

using TokenId = std::int32_t;

struct SpecialTokens {
  static constexpr TokenId pad = 0;
  static constexpr TokenId bos = 1;
  static constexpr TokenId eos = 2;
  static constexpr TokenId unk = 3;
  static constexpr TokenId mask = 4;
  static constexpr TokenId count = 5;
  static constexpr std::array<std::string_view, 5> names = {"<pad>", "<s>", "</s>", "<unk>", "<mask>"};
  static bool is_special(TokenId id) { return id >= 0 && id < count; }
};

// Splits text into pre-tokenization pieces. A single space preceding a
// non-space run attaches to that run (" cooking"); other whitespace forms its
// own piece. Runs are letters (ASCII letters, non-ASCII bytes, and apostrophes
// between letters), digits, or other symbols. Pieces concatenate back to the
// input exactly.
inline std::vector<std::string_view> pretokenize(std::string_view text) {
  enum Cls { kSpace, kLetter, kDigit, kOther };
  auto cls = [&](std::size_t i) -> Cls {
    auto c = static_cast<unsigned char>(text[i]);
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') return kSpace;
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80) return kLetter;
    if (c >= '0' && c <= '9') return kDigit;
    return kOther;
  };
  auto is_letter_at = [&](std::size_t i) { return i < text.size() && cls(i) == kLetter; };
  std::vector<std::string_view> out;
  std::size_t i = 0, n = text.size();
  while (i < n) {
    if (cls(i) == kSpace) {
      std::size_t j = i;
      while (j < n && cls(j) == kSpace) ++j;
      if (j < n && text[j - 1] == ' ') {
        if (j - 1 > i) out.push_back(text.substr(i, j - 1 - i));
        i = j - 1;  // fall through to a prefixed run below
      } else {
        out.push_back(text.substr(i, j - i));
        i = j;
        continue;
      }
    }
    std::size_t start = i;
    if (text[i] == ' ') ++i;
    Cls c = cls(i);
    ++i;
    while (i < n) {
      Cls d = cls(i);
      if (d == c) {
        ++i;
      } else if (c == kLetter && text[i] == '\'' && is_letter_at(i + 1)) {
        i += 2;
      } else {
        break;
      }
    }
    out.push_back(text.substr(start, i - start));
  }
  return out;
}

class TokenizerModel {
 public:
  static constexpr TokenId kFirstByte = SpecialTokens::count;
  static constexpr TokenId kFirstMerge = kFirstByte + 256;

  // Base model: specials + 256 byte tokens, no merges.
  explicit TokenizerModel(std::string family = "bpe") : family_(std::move(family)) {
    for (auto n : SpecialTokens::names) add_token(std::string(n));
    for (int b = 0; b < 256; ++b) add_token(std::string(1, static_cast<char>(b)));
  }

  const std::string& family() const { return family_; }
  std::size_t vocab_size() const { return tokens_.size(); }
  const std::vector<std::pair<TokenId, TokenId>>& merges() const { return merges_; }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  static TokenId byte_id(unsigned char b) { return kFirstByte + b; }

  // Byte-level tokens are looked up by content; special names are not.
  std::optional<TokenId> find(std::string_view bytes) const {
    auto it = by_bytes_.find(std::string(bytes));
    if (it == by_bytes_.end()) return std::nullopt;
    return it->second;
  }

  // Appends merge (a, b) with the lowest priority so far and returns the new id.
  TokenId append_merge(TokenId a, TokenId b) {
    if (SpecialTokens::is_special(a) || SpecialTokens::is_special(b)) throw Error("cannot merge special tokens");
    std::string bytes = token(a) + token(b);
    TokenId id = static_cast<TokenId>(tokens_.size());
    merges_.emplace_back(a, b);
    rank_.emplace(pair_key(a, b), static_cast<std::uint32_t>(merges_.size() - 1));
    add_token(std::move(bytes));
    return id;
  }

  std::vector<TokenId> encode_piece(std::string_view piece) const {
    std::vector<TokenId> ids;
    ids.reserve(piece.size());
    for (char c : piece) ids.push_back(byte_id(static_cast<unsigned char>(c)));
    // Merge the lowest-rank adjacent pair everywhere it occurs, repeat.
    while (ids.size() > 1) {
      std::uint32_t best = UINT32_MAX;
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
        auto it = rank_.find(pair_key(ids[i], ids[i + 1]));
        if (it != rank_.end() && it->second < best) best = it->second;
      }
      if (best == UINT32_MAX) break;
      auto [a, b] = merges_[best];
      TokenId merged = kFirstMerge + static_cast<TokenId>(best);
      std::size_t w = 0;
      for (std::size_t r = 0; r < ids.size(); ++r) {
        if (r + 1 < ids.size() && ids[r] == a && ids[r + 1] == b) {
          ids[w++] = merged;
          ++r;
        } else {
          ids[w++] = ids[r];
        }
      }
      ids.resize(w);
    }
    return ids;
  }

  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> out;
    for (auto piece : pretokenize(text)) {
      auto ids = encode_piece(piece);
      out.insert(out.end(), ids.begin(), ids.end());
    }
    return out;
  }

  // Specials decode to nothing; everything else to its bytes.
  std::string decode(const std::vector<TokenId>& ids) const {
    std::string out;
    for (auto id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw Error("decode: id out of range");
      if (!SpecialTokens::is_special(id)) out += tokens_[static_cast<std::size_t>(id)];
    }
    return out;
  }

  // Number of tokens per whitespace word of `text`. A token belongs to the
  // word holding its first non-whitespace byte; a bare boundary-space token
  // (" " before "hen" when no " h" merge exists) belongs to the word after it.
  std::vector<std::size_t> tokens_per_word(std::string_view text) const {
    std::vector<std::size_t> counts;
    bool in_word = false;
    std::size_t carry = 0;
    auto space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
    for (auto id : encode(text)) {
      const std::string& t = token(id);
      std::size_t k = 0;
      while (k < t.size() && space(t[k])) ++k;
      if (k == t.size()) {
        in_word = false;
        carry = 1;
        continue;
      }
      if (k > 0) {
        in_word = false;
        carry = 0;
      }
      if (!in_word) counts.push_back(carry);
      carry = 0;
      ++counts.back();
      in_word = true;
    }
    return counts;
  }

  bool operator==(const TokenizerModel& o) const {
    return family_ == o.family_ && tokens_ == o.tokens_ && merges_ == o.merges_;
  }

 private:
  static std::uint64_t pair_key(TokenId a, TokenId b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
  }
  void add_token(std::string bytes) {
    TokenId id = static_cast<TokenId>(tokens_.size());
    if (id >= SpecialTokens::count) by_bytes_.emplace(bytes, id);
    tokens_.push_back(std::move(bytes));
  }

  std::string family_;
  std::vector<std::string> tokens_;
  std::vector<std::pair<TokenId, TokenId>> merges_;
  std::unordered_map<std::uint64_t, std::uint32_t> rank_;
  std::unordered_map<std::string, TokenId> by_bytes_;
};

struct BpeTrainStats {
  std::size_t distinct_pieces = 0;
  std::size_t merges = 0;
  bool stopped_early = false;
};

// Pieces with their corpus frequency, sorted by piece bytes.
inline std::vector<std::pair<std::string, std::uint64_t>> piece_counts(const std::vector<TextSpan>& corpus) {
  std::map<std::string, std::uint64_t, std::less<>> counts;
  for (const auto& s : corpus)
    for (auto p : pretokenize(s.text)) {
      auto it = counts.find(p);
      if (it == counts.end())
        counts.emplace(std::string(p), 1);
      else
        ++it->second;
    }
  return {counts.begin(), counts.end()};
}

// Standard byte-level BPE: repeatedly merge the most frequent adjacent pair
// until vocab_size tokens exist. Ties go to the lexicographically smallest
// (left bytes, right bytes). Pairs seen fewer than min_frequency times are
// never merged; running out of pairs stops early with a smaller vocabulary.
// Training is deterministic; `seed` is recorded for provenance only.
inline TokenizerModel train_bpe(const std::vector<TextSpan>& corpus, std::size_t vocab_size,
                                [[maybe_unused]] std::uint64_t seed = 0, std::uint64_t min_frequency = 2,
                                BpeTrainStats* stats = nullptr) {
  TokenizerModel model("bpe");
  if (vocab_size <= static_cast<std::size_t>(TokenizerModel::kFirstMerge))
    throw Error("train_bpe: vocab_size must exceed 256 + " + std::to_string(SpecialTokens::count));

  struct Word {
    std::vector<TokenId> sym;
    std::uint64_t count;
  };
  std::vector<Word> words;
  for (auto& [piece, c] : piece_counts(corpus)) {
    Word w{{}, c};
    for (char ch : piece) w.sym.push_back(TokenizerModel::byte_id(static_cast<unsigned char>(ch)));
    words.push_back(std::move(w));
  }
  BpeTrainStats local;
  local.distinct_pieces = words.size();

  using Key = std::uint64_t;
  auto key = [](TokenId a, TokenId b) {
    return (static_cast<Key>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
  };
  std::unordered_map<Key, std::int64_t> pair_count;
  std::unordered_map<Key, std::vector<std::uint32_t>> pair_words;
  for (std::uint32_t wi = 0; wi < words.size(); ++wi) {
    const auto& s = words[wi].sym;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      Key k = key(s[i], s[i + 1]);
      pair_count[k] += static_cast<std::int64_t>(words[wi].count);
      pair_words[k].push_back(wi);
    }
  }

  struct Entry {
    std::int64_t count;
    TokenId a, b;
  };
  // Max count first; ties by smaller (bytes(a), bytes(b)).
  auto worse = [&model](const Entry& x, const Entry& y) {
    if (x.count != y.count) return x.count < y.count;
    const auto& xa = model.token(x.a);
    const auto& ya = model.token(y.a);
    if (xa != ya) return xa > ya;
    return model.token(x.b) > model.token(y.b);
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);
  for (auto& [k, c] : pair_count)
    heap.push({c, static_cast<TokenId>(k >> 32), static_cast<TokenId>(k & 0xffffffffu)});

  std::vector<std::uint32_t> stamp(words.size(), 0);
  std::uint32_t epoch = 0;
  while (model.vocab_size() < vocab_size) {
    if (heap.empty()) break;
    Entry top = heap.top();
    heap.pop();
    Key k = key(top.a, top.b);
    auto pc = pair_count.find(k);
    std::int64_t current = pc == pair_count.end() ? 0 : pc->second;
    if (current != top.count) continue;  // stale entry
    if (current < static_cast<std::int64_t>(std::max<std::uint64_t>(min_frequency, 1))) break;

    TokenId z = model.append_merge(top.a, top.b);
    ++epoch;
    std::unordered_map<Key, std::int64_t> delta;
    auto affected = std::move(pair_words[k]);
    pair_words.erase(k);
    for (auto wi : affected) {
      if (stamp[wi] == epoch) continue;
      stamp[wi] = epoch;
      auto& w = words[wi];
      auto c = static_cast<std::int64_t>(w.count);
      bool present = false;
      for (std::size_t i = 0; i + 1 < w.sym.size(); ++i)
        if (w.sym[i] == top.a && w.sym[i + 1] == top.b) present = true;
      if (!present) continue;
      for (std::size_t i = 0; i + 1 < w.sym.size(); ++i) delta[key(w.sym[i], w.sym[i + 1])] -= c;
      std::vector<TokenId> merged;
      merged.reserve(w.sym.size());
      for (std::size_t i = 0; i < w.sym.size(); ++i) {
        if (i + 1 < w.sym.size() && w.sym[i] == top.a && w.sym[i + 1] == top.b) {
          merged.push_back(z);
          ++i;
        } else {
          merged.push_back(w.sym[i]);
        }
      }
      w.sym = std::move(merged);
      for (std::size_t i = 0; i + 1 < w.sym.size(); ++i) {
        Key nk = key(w.sym[i], w.sym[i + 1]);
        delta[nk] += c;
        pair_words[nk].push_back(wi);
      }
    }
    // Apply in key order so heap contents do not depend on hash iteration.
    std::vector<std::pair<Key, std::int64_t>> changes(delta.begin(), delta.end());
    std::sort(changes.begin(), changes.end());
    for (auto& [dk, d] : changes) {
      if (d == 0) continue;
      auto& cnt = pair_count[dk];
      cnt += d;
      if (cnt <= 0) {
        pair_count.erase(dk);
      } else {
        heap.push({cnt, static_cast<TokenId>(dk >> 32), static_cast<TokenId>(dk & 0xffffffffu)});
      }
    }
    pair_count.erase(k);
    ++local.merges;
  }
  local.stopped_early = model.vocab_size() < vocab_size;
  if (local.stopped_early)
    std::cerr << "warning: train_bpe stopped at " << model.vocab_size() << " tokens (requested " << vocab_size
              << "): no pair left with frequency >= " << min_frequency << '\n';
  if (stats) *stats = local;
  return model;
}

// ---- model file -------------------------------------------------------------
//
//   <family>\t<vocab_size>\t<merge_count>
//   <left>\t<right>\t<left id>\t<right id>   one line per merge, in rank order
//   <token>\t<id>              one line per vocabulary entry
//
// Token bytes outside 0x21..0x7e, and '%', are written as %XX.

inline std::string escape_token(std::string_view t) {
  static constexpr char hex[] = "0123456789ABCDEF";
  std::string out;
  for (char ch : t) {
    auto c = static_cast<unsigned char>(ch);
    if (c < 0x21 || c > 0x7e || c == '%') {
      out += '%';
      out += hex[c >> 4];
      out += hex[c & 15];
    } else {
      out += ch;
    }
  }
  return out;
}

inline std::string unescape_token(std::string_view t) {
  auto val = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw Error("bad escape in token");
  };
  std::string out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] == '%') {
      if (i + 2 >= t.size()) throw Error("truncated escape in token");
      out += static_cast<char>(val(t[i + 1]) * 16 + val(t[i + 2]));
      i += 2;
    } else {
      out += t[i];
    }
  }
  return out;
}

inline void save_tokenizer(std::ostream& os, const TokenizerModel& m) {
  os << m.family() << '\t' << m.vocab_size() << '\t' << m.merges().size() << '\n';
  for (auto [a, b] : m.merges())
    os << escape_token(m.token(a)) << '\t' << escape_token(m.token(b)) << '\t' << a << '\t' << b << '\n';
  for (std::size_t id = 0; id < m.vocab_size(); ++id)
    os << escape_token(m.token(static_cast<TokenId>(id))) << '\t' << id << '\n';
}

inline TokenizerModel load_tokenizer(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error("tokenizer file: missing header");
  std::istringstream hdr(line);
  std::string family;
  std::size_t vocab_size = 0, n_merges = 0;
  if (!(hdr >> family >> vocab_size >> n_merges)) throw Error("tokenizer file: malformed header");
  TokenizerModel m(family);
  for (std::size_t r = 0; r < n_merges; ++r) {
    if (!std::getline(is, line)) throw Error("tokenizer file: truncated merge list");
    std::vector<std::string> cols;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, '\t');) cols.push_back(c);
    if (cols.size() != 2 && cols.size() != 4) throw Error("tokenizer file: malformed merge line");
    std::string left = unescape_token(cols[0]), right = unescape_token(cols[1]);
    std::optional<TokenId> a, b;
    if (cols.size() == 4) {
      // explicit ids disambiguate tokens reachable by more than one merge path
      a = static_cast<TokenId>(std::stol(cols[2]));
      b = static_cast<TokenId>(std::stol(cols[3]));
      if (static_cast<std::size_t>(*a) >= m.vocab_size() || static_cast<std::size_t>(*b) >= m.vocab_size() ||
          m.token(*a) != left || m.token(*b) != right)
        throw Error("tokenizer file: merge " + std::to_string(r) + " ids disagree with its tokens");
    } else {
      a = m.find(left);
      b = m.find(right);
    }
    if (!a || !b) throw Error("tokenizer file: merge " + std::to_string(r) + " references an unknown token");
    m.append_merge(*a, *b);
  }
  std::size_t seen = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw Error("tokenizer file: malformed vocab line");
    auto id = static_cast<TokenId>(std::stol(line.substr(tab + 1)));
    std::string tok = unescape_token(std::string_view(line).substr(0, tab));
    if (static_cast<std::size_t>(id) >= m.vocab_size() || m.token(id) != tok)
      throw Error("tokenizer file: vocab entry " + std::to_string(id) + " disagrees with merge list");
    ++seen;
  }
  if (seen != m.vocab_size() || m.vocab_size() != vocab_size)
    throw Error("tokenizer file: vocab size mismatch (" + std::to_string(seen) + " vs " + std::to_string(vocab_size) +
                ")");
  return m;
}

inline void save_tokenizer(const std::string& path, const TokenizerModel& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  save_tokenizer(out, m);
}

inline TokenizerModel load_tokenizer(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return load_tokenizer(in);
}

// ---- selection metrics ------------------------------------------------------

struct EsmsEntry {
  std::string word;
  std::vector<std::string> subtokens;
  bool canonical = true;
};

class EsmsReference {
 public:
  EsmsReference() = default;
  explicit EsmsReference(std::vector<EsmsEntry> entries) : entries_(std::move(entries)) {
    for (const auto& e : entries_) {
      std::string cat;
      for (const auto& s : e.subtokens) cat += s;
      if (e.subtokens.size() < 2 || cat != e.word)
        throw Error("ESMS entry '" + e.word + "': need >= 2 subtokens concatenating to the word");
    }
  }
  const std::vector<EsmsEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<EsmsEntry> entries_;
};

// The 13 published reference words, lowercased.
inline EsmsReference published_esms_reference() {
  return EsmsReference({{"cooking", {"cook", "ing"}},
                        {"dangerous", {"danger", "ous"}},
                        {"pretext", {"pre", "text"}},
                        {"fitness", {"fit", "ness"}},
                        {"antisocial", {"anti", "social"}},
                        {"podium", {"pod", "ium"}},
                        {"universe", {"uni", "verse"}},
                        {"european", {"europ", "ean"}},
                        {"decode", {"de", "code"}},
                        {"subvert", {"sub", "vert"}},
                        {"proactive", {"pro", "active"}},
                        {"concentric", {"con", "centr", "ic"}},
                        {"octopus", {"octo", "pus"}}});
}

// TSV: word \t comma-separated subtokens [\t "extension"]. Lines starting with
// '#' are comments. Words and subtokens are lowercased.
inline EsmsReference load_esms_reference(std::istream& is) {
  std::vector<EsmsEntry> entries;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() < 2) throw Error("ESMS reference: expected word<TAB>subtokens, got '" + line + "'");
    EsmsEntry e;
    for (char c : cols[0]) e.word.push_back(ascii_lower(c));
    std::string cur;
    for (char c : cols[1] + ",") {
      if (c == ',') {
        std::size_t b = cur.find_first_not_of(' '), en = cur.find_last_not_of(' ');
        if (b != std::string::npos) e.subtokens.push_back(cur.substr(b, en - b + 1));
        cur.clear();
      } else {
        cur.push_back(ascii_lower(c));
      }
    }
    e.canonical = !(cols.size() >= 3 && cols[2] == "extension");
    entries.push_back(std::move(e));
  }
  return EsmsReference(std::move(entries));
}

inline EsmsReference load_esms_reference(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return load_esms_reference(in);
}

// Tokenization of `word` as it appears mid-text (with its prefix space), with
// the boundary space stripped and empty pieces dropped.
inline std::vector<std::string> word_subtokens(const TokenizerModel& m, std::string_view word) {
  std::vector<std::string> out;
  std::string text = " " + std::string(word);
  bool first = true;
  for (auto id : m.encode(text)) {
    std::string t = m.token(id);
    if (first && !t.empty() && t[0] == ' ') t.erase(0, 1);
    first = false;
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

inline double esms(const TokenizerModel& m, const EsmsReference& ref) {
  if (ref.empty()) throw Error("esms: empty reference list");
  std::size_t hits = 0;
  for (const auto& e : ref.entries())
    if (word_subtokens(m, e.word) == e.subtokens) ++hits;
  return static_cast<double>(hits) / static_cast<double>(ref.size());
}

// Mean tokens per whitespace word over at most `max_sample` spans, drawn
// without replacement by a seeded shuffle when the sample is larger.
inline double word_split_ratio(const TokenizerModel& m, const std::vector<TextSpan>& sample, std::uint64_t seed = 0,
                               std::size_t max_sample = 5000) {
  if (sample.empty()) throw Error("word_split_ratio: empty sample");
  std::vector<std::size_t> idx(sample.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  if (idx.size() > max_sample) {
    Rng rng(mix_seed(seed, {0x3a11ULL}));
    stable_shuffle(idx, rng);
    idx.resize(max_sample);
    std::sort(idx.begin(), idx.end());
  }
  std::uint64_t tokens = 0, words = 0;
  for (auto i : idx) {
    for (auto c : m.tokens_per_word(sample[i].text)) {
      tokens += c;
      ++words;
    }
  }
  if (words == 0) throw Error("word_split_ratio: sample has no words");
  return static_cast<double>(tokens) / static_cast<double>(words);
}

// A tokenizer evaluated for selection. Families trained elsewhere (WordPiece,
// SentencePiece) enter with their metrics only and no model.
struct TokenizerCandidate {
  std::string family;
  std::size_t vocab_size = 0;
  double word_split_ratio = 0.0;
  double esms = 0.0;
  std::shared_ptr<const TokenizerModel> model;
};

inline TokenizerCandidate evaluate_candidate(std::shared_ptr<const TokenizerModel> m, const std::vector<TextSpan>& sample,
                                             const EsmsReference& ref, std::uint64_t seed = 0) {
  TokenizerCandidate c;
  c.family = m->family();
  c.vocab_size = m->vocab_size();
  c.word_split_ratio = word_split_ratio(*m, sample, seed);
  c.esms = esms(*m, ref);
  c.model = std::move(m);
  return c;
}

// Per family keep the candidate closest to the family's reference ratio (ties
// to the smaller vocabulary); among family winners return the highest ESMS
// (ties to the smaller vocabulary).
inline TokenizerCandidate select_tokenizer(const std::vector<TokenizerCandidate>& candidates,
                                           const std::map<std::string, double>& reference_ratio) {
  if (candidates.empty()) throw Error("select_tokenizer: no candidates");
  std::map<std::string, const TokenizerCandidate*> winners;
  for (const auto& c : candidates) {
    auto ref = reference_ratio.find(c.family);
    if (ref == reference_ratio.end()) throw Error("select_tokenizer: no reference ratio for family " + c.family);
    auto& w = winners[c.family];
    if (!w) {
      w = &c;
      continue;
    }
    double dc = std::abs(c.word_split_ratio - ref->second), dw = std::abs(w->word_split_ratio - ref->second);
    if (dc < dw || (dc == dw && c.vocab_size < w->vocab_size)) w = &c;
  }
  const TokenizerCandidate* best = nullptr;
  for (auto& [fam, w] : winners)
    if (!best || w->esms > best->esms || (w->esms == best->esms && w->vocab_size < best->vocab_size)) best = w;
  return *best;
}

}  // namespace dslab
