#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "xlt/bpe.hpp"

namespace xlt {

// Lexical translation model t(target | source) with a NULL source word.
// Rows are normalized over the target vocabulary after every M-step. Before
// the first M-step the table answers 1/|target vocab| for every query
// (uniform initialization).
struct TranslationTable {
  static constexpr const char* kNull = "<NULL>";

  std::unordered_map<std::string, std::unordered_map<std::string, double>> prob;
  std::unordered_set<std::string> source_vocab;  // includes kNull
  std::unordered_set<std::string> target_vocab;
  bool uniform_init = false;
  double uniform_value = 0.0;

  double lookup(const std::string& src, const std::string& tgt) const {
    if (uniform_init) return uniform_value;
    const auto row = prob.find(src);
    if (row == prob.end()) return 0.0;
    const auto it = row->second.find(tgt);
    return it == row->second.end() ? 0.0 : it->second;
  }
};

struct PriorCounts {
  std::unordered_map<std::string, std::unordered_map<std::string, double>> counts;
  double strength = 1.0;
};

// Set of aligned index pairs (source position, target position) together
// with the sequence lengths they refer to. Used both for word-level links
// (positions = whitespace words) and subword-level links (positions = token
// indices with specials included in the numbering).
struct AlignmentLinkSet {
  std::set<std::pair<int, int>> links;
  int src_len = 0;
  int tgt_len = 0;

  bool contains(int i, int j) const { return links.count({i, j}) > 0; }
};

using SentencePair = std::pair<std::string, std::string>;

// EM training of the lexical table. `iterations` full E+M passes; pass 0 to
// get the uniformly initialized table. Prior pseudo-counts, when given, are
// scaled by their strength and added to the expected counts before each
// normalization.
TranslationTable em_train(const std::vector<SentencePair>& pairs, int iterations,
                          const PriorCounts* prior = nullptr, int workers = 1);

// Sum over pairs of log P(target | source) under the table with a uniform
// alignment model: each target word draws its source uniformly from the
// source words plus NULL. Inner sums are floored at 1e-12 before the log so
// unseen words stay finite.
double corpus_log_likelihood(const TranslationTable& table,
                             const std::vector<SentencePair>& pairs);

// Directional best-link alignment: each target word links to the argmax
// source word; NULL strictly winning leaves the word unlinked; ties between
// source words break toward the smaller index.
AlignmentLinkSet viterbi_align(const TranslationTable& table, const SentencePair& pair);

enum class Symmetrization { grow_diag, intersection, union_all };

// Grow-diag symmetrization (no "final" step): start from the intersection,
// then repeatedly adopt union links that touch the 8-neighborhood of an
// accepted link and whose source or target position is still uncovered.
AlignmentLinkSet symmetrize_grow_diag(const AlignmentLinkSet& forward,
                                      const AlignmentLinkSet& reverse);
AlignmentLinkSet symmetrize(const AlignmentLinkSet& forward, const AlignmentLinkSet& reverse,
                            Symmetrization mode);

// Expands word-level links to the full cross-product of subword positions.
// Token indices refer to positions in the full token sequences (specials
// included in the numbering); special tokens themselves are never linked.
AlignmentLinkSet project_to_subwords(const AlignmentLinkSet& word_links,
                                     const TokenizedSentence& src_tok,
                                     const TokenizedSentence& tgt_tok);

// Converts pool-trained probabilities into pseudo-counts prob * strength.
PriorCounts derive_priors(const TranslationTable& pool_table, double strength);

// Identity word alignment for same-text pairs (two tokenizers over one
// sentence); bypasses EM entirely.
AlignmentLinkSet identity_word_alignment(int num_words);

// Pharaoh text format: one line per pair, links "i-j" ordered by (i, j).
std::string to_pharaoh(const AlignmentLinkSet& links);
AlignmentLinkSet from_pharaoh(const std::string& line, int src_len, int tgt_len);

void save_translation_table(const TranslationTable& table, const std::string& path);
TranslationTable load_translation_table(const std::string& path);

}  // namespace xlt
