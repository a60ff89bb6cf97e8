#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "xlt/align.hpp"

namespace xlt {

enum class Permutation { identity, reversal, local_swaps };

// Synthetic language: a bijective word substitution from the English
// vocabulary into a disjoint vocabulary, composed with a known word-order
// permutation. Gold word alignments fall out of the permutation.
struct CipherSpec {
  std::string lang_id;
  Permutation perm = Permutation::identity;
  uint64_t seed = 0;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;                 // (english, ciphered)
  std::vector<AlignmentLinkSet> gold_word_links;   // english index → cipher index
  std::unordered_map<std::string, std::string> subst;    // english → cipher word
  std::unordered_map<std::string, std::string> inverse;  // cipher → english word
  std::string lang_id;
};

// Registry used to enforce vocabulary disjointness across cipher languages
// (and against English).
struct CipherRegistry {
  std::unordered_set<std::string> used_words;
};

ParallelCorpus make_cipher_language(const std::vector<std::string>& english_corpus,
                                    const CipherSpec& spec, CipherRegistry* registry = nullptr);

std::vector<int> permute_positions(int n, Permutation perm);
const char* to_string(Permutation p);
Permutation permutation_from_string(const std::string& s);

// Synthetic English corpora: a task-domain stream carrying a binary sentence
// property (presence of a marked word family sharing the "qz" prefix), a
// caption-styled stream, and a generic stream. Caption-only and generic-only
// words make the two separable for the caption classifier; all three share a
// core vocabulary so transfer measured on task sentences is reachable from
// any training condition.
struct SyntheticCorpora {
  std::vector<std::string> task_train;
  std::vector<std::string> task_heldout;
  std::vector<std::string> caption;
  std::vector<std::string> generic;
  std::vector<int> task_train_labels;    // marked-word presence
  std::vector<int> task_heldout_labels;
  std::unordered_set<std::string> marked_words;
  std::vector<std::string> vocabulary;  // full english word list
};

struct CorpusSizes {
  int task_train = 4000;
  int task_heldout = 300;
  int caption = 3000;
  int generic = 3000;
  int core_words = 140;
  int marked_words = 20;
  int caption_only_words = 25;
  int generic_only_words = 25;
};

SyntheticCorpora make_synthetic_english(uint64_t seed, const CorpusSizes& sizes = {});

}  // namespace xlt
