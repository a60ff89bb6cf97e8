#include "xlt/cipher.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "xlt/bpe.hpp"
#include "xlt/rng.hpp"

namespace xlt {

std::vector<int> permute_positions(int n, Permutation perm) {
  std::vector<int> out(static_cast<size_t>(n));
  switch (perm) {
    case Permutation::identity:
      for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = i;
      break;
    case Permutation::reversal:
      for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = n - 1 - i;
      break;
    case Permutation::local_swaps:
      for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = i;
      for (int i = 0; i + 1 < n; i += 2) std::swap(out[static_cast<size_t>(i)], out[static_cast<size_t>(i) + 1]);
      break;
  }
  return out;
}

const char* to_string(Permutation p) {
  switch (p) {
    case Permutation::identity: return "identity";
    case Permutation::reversal: return "reversal";
    case Permutation::local_swaps: return "local_swaps";
  }
  return "?";
}

Permutation permutation_from_string(const std::string& s) {
  if (s == "identity") return Permutation::identity;
  if (s == "reversal") return Permutation::reversal;
  if (s == "local_swaps") return Permutation::local_swaps;
  throw std::invalid_argument("unknown permutation: " + s);
}

namespace {

// Bijective letter rotation keyed by the language seed; the language id
// prefix keeps vocabularies disjoint across languages and from English.
std::string cipher_word(const std::string& lang_id, uint64_t seed, const std::string& word) {
  const int shift = 1 + static_cast<int>(seed % 23);
  std::string out = "x" + lang_id + "_";
  for (char c : word) {
    if (c >= 'a' && c <= 'z')
      out.push_back(static_cast<char>('a' + (c - 'a' + shift) % 26));
    else
      out.push_back(c);
  }
  return out;
}

}  // namespace

ParallelCorpus make_cipher_language(const std::vector<std::string>& english_corpus,
                                    const CipherSpec& spec, CipherRegistry* registry) {
  if (english_corpus.empty()) throw std::invalid_argument("empty corpus for cipher language");

  ParallelCorpus out;
  out.lang_id = spec.lang_id;

  // build the substitution over the corpus vocabulary, sorted for determinism
  std::map<std::string, std::string> sorted_vocab;
  for (const auto& line : english_corpus)
    for (const auto& w : split_words(line)) sorted_vocab.emplace(w, "");
  for (auto& [eng, mapped] : sorted_vocab) {
    mapped = cipher_word(spec.lang_id, spec.seed, eng);
    if (registry) {
      if (registry->used_words.count(mapped) || sorted_vocab.count(mapped))
        throw std::runtime_error("vocabulary collision with an existing cipher: " + mapped);
      registry->used_words.insert(mapped);
    }
    out.subst.emplace(eng, mapped);
    out.inverse.emplace(mapped, eng);
  }

  out.pairs.reserve(english_corpus.size());
  out.gold_word_links.reserve(english_corpus.size());
  for (const auto& line : english_corpus) {
    const auto words = split_words(line);
    const int n = static_cast<int>(words.size());
    const auto perm = permute_positions(n, spec.perm);
    // perm[j] = english word index placed at cipher position j
    std::vector<std::string> cipher_words(static_cast<size_t>(n));
    AlignmentLinkSet gold;
    gold.src_len = n;
    gold.tgt_len = n;
    for (int j = 0; j < n; ++j) {
      const int i = perm[static_cast<size_t>(j)];
      cipher_words[static_cast<size_t>(j)] = out.subst.at(words[static_cast<size_t>(i)]);
      gold.links.insert({i, j});
    }
    std::string cipher_line;
    for (int j = 0; j < n; ++j) {
      if (j) cipher_line.push_back(' ');
      cipher_line += cipher_words[static_cast<size_t>(j)];
    }
    out.pairs.emplace_back(line, cipher_line);
    out.gold_word_links.push_back(std::move(gold));
  }
  return out;
}

namespace {

std::string make_word(Rng& rng, int min_len, int max_len) {
  // letters a..p only; q/z are reserved for the marked family prefix
  static const char letters[] = "abcdefghijklmnop";
  const int len = min_len + static_cast<int>(rng.next_below(static_cast<uint64_t>(max_len - min_len + 1)));
  std::string w;
  for (int i = 0; i < len; ++i) w.push_back(letters[rng.next_below(16)]);
  return w;
}

std::vector<std::string> make_word_list(Rng& rng, int count, const std::string& prefix,
                                        std::unordered_set<std::string>& used) {
  std::vector<std::string> out;
  while (static_cast<int>(out.size()) < count) {
    std::string w = prefix + make_word(rng, 3, 6);
    if (used.count(w)) continue;
    used.insert(w);
    out.push_back(std::move(w));
  }
  return out;
}

std::string sample_sentence(Rng& rng, const std::vector<std::string>& vocab, int min_len,
                            int max_len, const std::vector<std::string>* must_include) {
  const int len = min_len + static_cast<int>(rng.next_below(static_cast<uint64_t>(max_len - min_len + 1)));
  // sample distinct words so gold alignments stay unambiguous for the aligner
  std::vector<std::string> words;
  std::unordered_set<std::string> seen;
  if (must_include)
    for (const auto& w : *must_include) {
      words.push_back(w);
      seen.insert(w);
    }
  while (static_cast<int>(words.size()) < len) {
    const auto& w = vocab[rng.next_below(vocab.size())];
    if (seen.count(w)) continue;
    seen.insert(w);
    words.push_back(w);
  }
  rng.shuffle(words);
  std::string line;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) line.push_back(' ');
    line += words[i];
  }
  return line;
}

}  // namespace

SyntheticCorpora make_synthetic_english(uint64_t seed, const CorpusSizes& sizes) {
  Rng rng(seed);
  SyntheticCorpora c;

  std::unordered_set<std::string> used;
  const auto core = make_word_list(rng, sizes.core_words, "", used);
  const auto marked = make_word_list(rng, sizes.marked_words, "qz", used);
  const auto caption_only = make_word_list(rng, sizes.caption_only_words, "", used);
  const auto generic_only = make_word_list(rng, sizes.generic_only_words, "", used);
  c.marked_words.insert(marked.begin(), marked.end());

  std::vector<std::string> task_vocab = core;
  std::vector<std::string> caption_vocab = core;
  caption_vocab.insert(caption_vocab.end(), caption_only.begin(), caption_only.end());
  std::vector<std::string> generic_vocab = core;
  generic_vocab.insert(generic_vocab.end(), generic_only.begin(), generic_only.end());

  c.vocabulary = core;
  c.vocabulary.insert(c.vocabulary.end(), marked.begin(), marked.end());
  c.vocabulary.insert(c.vocabulary.end(), caption_only.begin(), caption_only.end());
  c.vocabulary.insert(c.vocabulary.end(), generic_only.begin(), generic_only.end());

  auto make_task = [&](int count, std::vector<std::string>& sents, std::vector<int>& labels) {
    for (int i = 0; i < count; ++i) {
      const bool positive = rng.next_double() < 0.5;
      std::vector<std::string> include;
      if (positive) include.push_back(marked[rng.next_below(marked.size())]);
      sents.push_back(sample_sentence(rng, task_vocab, 4, 8, positive ? &include : nullptr));
      labels.push_back(positive ? 1 : 0);
    }
  };
  make_task(sizes.task_train, c.task_train, c.task_train_labels);
  make_task(sizes.task_heldout, c.task_heldout, c.task_heldout_labels);

  for (int i = 0; i < sizes.caption; ++i) {
    std::vector<std::string> include{caption_only[rng.next_below(caption_only.size())]};
    c.caption.push_back(sample_sentence(rng, caption_vocab, 4, 6, &include));
  }
  for (int i = 0; i < sizes.generic; ++i) {
    std::vector<std::string> include{generic_only[rng.next_below(generic_only.size())]};
    c.generic.push_back(sample_sentence(rng, generic_vocab, 5, 9, &include));
  }
  return c;
}

}  // namespace xlt
