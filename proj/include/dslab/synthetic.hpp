#pragma once

// A small synthetic child-directed language used for fixtures and desk-scale
// experiments. Words come in families (animals, foods, people, ...) and each
// family has its own typical contexts, so a masked-LM can discover family
// membership from co-occurrence alone. Documents also carry digits and a few
// out-of-vocabulary words so that filtering has something to remove.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "dslab/common.hpp"
#include "dslab/corpus.hpp"
#include "dslab/trainer.hpp"

namespace dslab::synth {

inline const std::vector<std::string>& animals() {
  static const std::vector<std::string> v{"dog",   "cat",    "cow",   "pig",    "horse", "sheep", "goat",  "duck",
                                          "hen",   "frog",   "mouse", "rabbit", "bear",  "lion",  "tiger", "monkey",
                                          "fox",   "wolf",   "owl",   "deer",   "zebra", "camel", "whale", "snake"};
  return v;
}
inline const std::vector<std::string>& foods() {
  static const std::vector<std::string> v{"apple", "banana", "bread",  "cheese", "cookie", "carrot", "pizza",  "soup",
                                          "rice",  "pasta",  "cake",   "grape",  "orange", "pear",   "melon",  "butter",
                                          "egg",   "pie",    "muffin", "noodle", "salad",  "potato", "honey",  "candy"};
  return v;
}
inline const std::vector<std::string>& people() {
  static const std::vector<std::string> v{"mommy", "daddy",  "baby",   "sister", "brother", "grandma", "grandpa", "teacher",
                                          "doctor", "friend", "boy",   "girl",   "lady",    "uncle",   "aunt",    "nanny"};
  return v;
}
inline const std::vector<std::string>& places() {
  static const std::vector<std::string> v{"park", "yard", "kitchen", "garden", "house", "farm",
                                          "school", "store", "beach", "room", "barn", "forest"};
  return v;
}
inline const std::vector<std::string>& toys() {
  static const std::vector<std::string> v{"ball", "block", "truck",  "doll", "book", "car", "train",   "kite",
                                          "puzzle", "crayon", "spoon", "cup", "box",  "hat", "shoe", "blanket"};
  return v;
}
inline const std::vector<std::string>& colors() {
  static const std::vector<std::string> v{"red", "blue", "green", "yellow", "pink", "purple", "brown", "white"};
  return v;
}
inline const std::vector<std::string>& animal_verbs() {
  static const std::vector<std::string> v{"barks", "growls", "sniffs", "hops", "swims", "climbs", "howls", "purrs"};
  return v;
}
inline const std::vector<std::string>& animal_adjs() {
  static const std::vector<std::string> v{"furry", "fuzzy", "wild", "tame", "sleepy", "hungry"};
  return v;
}
inline const std::vector<std::string>& food_verbs() {
  static const std::vector<std::string> v{"eat", "cook", "bake", "cut", "taste", "share", "wash", "peel"};
  return v;
}
inline const std::vector<std::string>& food_adjs() {
  static const std::vector<std::string> v{"yummy", "sweet", "hot", "warm", "crunchy", "fresh"};
  return v;
}
inline const std::vector<std::string>& people_verbs() {
  static const std::vector<std::string> v{"reads", "sings", "walks", "laughs", "talks", "dances", "waves", "smiles"};
  return v;
}
// Never part of the vocabulary.
inline const std::vector<std::string>& oov_words() {
  static const std::vector<std::string> v{"zeitgeist", "quantum", "algorithm", "bureaucracy", "photosynthesis",
                                          "jurisprudence", "cryptocurrency", "metaphysics", "thermodynamics", "xylograph"};
  return v;
}
inline const std::vector<std::string>& function_words() {
  static const std::vector<std::string> v{"the", "a",  "in",   "at",   "is",  "so",    "to",   "we",  "i",     "can",
                                          "have", "some", "please", "with", "saw", "near", "look", "where", "like", "do",
                                          "you",  "see",  "there", "are",  "here", "wants", "said", "it's", "let's",
                                          "oh",   "my",   "now",  "and",   "again", "say"};
  return v;
}

// Every in-vocabulary word, deduplicated and sorted.
inline std::vector<std::string> vocabulary_words() {
  std::set<std::string> s;
  for (const auto* l : {&animals(), &foods(), &people(), &places(), &toys(), &colors(), &animal_verbs(),
                        &animal_adjs(), &food_verbs(), &food_adjs(), &people_verbs(), &function_words()})
    s.insert(l->begin(), l->end());
  return {s.begin(), s.end()};
}

namespace detail {

inline const std::string& pick(const std::vector<std::string>& v, Rng& rng) { return v[uniform_index(rng, v.size())]; }

// Frames that say nothing about the family of the slot word.
inline std::string neutral_sentence(const std::string& x, Rng& rng) {
  switch (uniform_index(rng, 5)) {
    case 0: return "look at the " + x + ".";
    case 1: return "where is the " + x + "?";
    case 2: return "i like the " + x + ".";
    case 3: return "do you see the " + x + "?";
    default: return "oh my the " + x + " is here!";
  }
}

inline std::string family_sentence(Rng& rng) {
  switch (uniform_index(rng, 14)) {
    case 0: return "the " + pick(animals(), rng) + " " + pick(animal_verbs(), rng) + " in the " + pick(places(), rng) + ".";
    case 1: return "look a " + pick(animal_adjs(), rng) + " " + pick(animals(), rng) + "!";
    case 2: return "the " + pick(people(), rng) + " saw a " + pick(animal_adjs(), rng) + " " + pick(animals(), rng) +
                   " near the " + pick(places(), rng) + ".";
    case 3: return "my " + pick(animals(), rng) + " " + pick(animal_verbs(), rng) + " and " + pick(animal_verbs(), rng) + ".";
    case 4: return "the " + pick(people(), rng) + " wants to " + pick(food_verbs(), rng) + " the " + pick(foods(), rng) + ".";
    case 5: return "the " + pick(foods(), rng) + " is so " + pick(food_adjs(), rng) + ".";
    case 6: return "we " + pick(food_verbs(), rng) + " " + pick(foods(), rng) + " in the kitchen.";
    case 7: return "can i have some " + pick(food_adjs(), rng) + " " + pick(foods(), rng) + " please?";
    case 8: return "the " + pick(people(), rng) + " " + pick(people_verbs(), rng) + " with the " + pick(toys(), rng) + ".";
    case 9: return "the " + pick(colors(), rng) + " " + pick(toys(), rng) + " is in the " + pick(places(), rng) + ".";
    case 10: return pick(people(), rng) + " said let's " + pick(food_verbs(), rng) + " the " + pick(foods(), rng) + " again.";
    case 11: {
      const auto& fam = uniform_index(rng, 2) ? animals() : foods();
      return neutral_sentence(pick(fam, rng), rng);
    }
    case 12: return neutral_sentence(pick(toys(), rng), rng);
    default: return "it's a " + pick(colors(), rng) + " " + pick(toys(), rng) + ".";
  }
}

}  // namespace detail

struct DocumentOptions {
  std::size_t min_words = 120;
  std::size_t max_words = 240;
  double oov_rate = 0.02;     // per sentence: one word replaced by an out-of-vocabulary word
  double number_rate = 0.05;  // per sentence: a counting sentence with digits
};

inline std::vector<Document> documents(std::size_t n, std::uint64_t seed, const DocumentOptions& opt = {}) {
  if (opt.min_words == 0 || opt.max_words < opt.min_words) throw Error("synthetic documents: bad word-count range");
  std::vector<Document> out;
  out.reserve(n);
  for (std::size_t d = 0; d < n; ++d) {
    Rng rng(mix_seed(seed, {0xd0c5ULL, d}));
    const std::size_t target = opt.min_words + uniform_index(rng, opt.max_words - opt.min_words + 1);
    std::string text;
    std::size_t words = 0;
    while (words < target) {
      std::string s;
      if (uniform01(rng) < opt.number_rate)
        s = "there are " + std::to_string(2 + uniform_index(rng, 8)) + " " + detail::pick(toys(), rng) + " here.";
      else
        s = detail::family_sentence(rng);
      auto toks = split_whitespace(s);
      if (uniform01(rng) < opt.oov_rate) {
        std::vector<std::string> w(toks.begin(), toks.end());
        auto& slot = w[uniform_index(rng, w.size())];
        char tail = slot.back();
        slot = detail::pick(oov_words(), rng);
        if (tail == '.' || tail == '?' || tail == '!') slot += tail;
        s.clear();
        for (std::size_t i = 0; i < w.size(); ++i) s += (i ? " " : "") + w[i];
      }
      words += toks.size();
      if (!text.empty()) text += ' ';
      text += s;
    }
    out.push_back({"doc-" + std::to_string(d), std::move(text)});
  }
  return out;
}

// Utterance lines covering every vocabulary word, plus a stoplisted babble
// token, for vocabulary construction.
inline std::vector<std::string> transcripts(std::size_t n, std::uint64_t seed) {
  std::vector<std::string> out;
  Rng rng(mix_seed(seed, {0x7a5cULL}));
  for (const auto& w : vocabulary_words()) out.push_back("Say " + w + "! bababa");
  for (std::size_t i = 0; i < n; ++i) {
    auto s = detail::family_sentence(rng);
    s[0] = static_cast<char>(s[0] - 'a' + 'A');
    out.push_back(s);
  }
  return out;
}

// "Is the thing in this sentence an animal (0) or a food (1)?" Sentences use
// only the neutral frames. Training draws from the even-indexed members of
// each family and validation from the odd-indexed ones, so a model can only
// generalize if it already knows which words belong together.
inline ClassificationTask family_task(std::size_t n_train, std::size_t n_validation, std::uint64_t seed) {
  ClassificationTask t;
  t.name = "animal_or_food";
  t.num_classes = 2;
  auto make = [&](std::size_t n, std::size_t parity, std::uint64_t salt) {
    std::vector<TaskExample> out;
    Rng rng(mix_seed(seed, {0x7a51ULL, salt}));
    for (std::size_t i = 0; i < n; ++i) {
      std::int64_t label = static_cast<std::int64_t>(i % 2);
      const auto& fam = label == 0 ? animals() : foods();
      std::size_t half = fam.size() / 2;
      const auto& w = fam[2 * uniform_index(rng, half) + parity];
      out.push_back({detail::neutral_sentence(w, rng), std::nullopt, label});
    }
    stable_shuffle(out, rng);
    return out;
  };
  t.train = make(n_train, 0, 1);
  t.validation = make(n_validation, 1, 2);
  return t;
}

}  // namespace dslab::synth
