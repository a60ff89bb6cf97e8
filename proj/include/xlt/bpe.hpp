#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace xlt {

// Word index assigned to special tokens (bos/eos/separator/pad/unk positions).
constexpr int kSpecialWord = -1;

struct SpecialIds {
  int bos = 0;
  int eos = 1;
  int unk = 2;
  int pad = 3;
  int sep = 4;  // word separator, emitted between consecutive words
};

// Deterministic BPE vocabulary. Ids are contiguous from 0: specials first,
// then base symbols in lexicographic order, then merge products in merge
// order. The separator special carries word boundaries through the id
// sequence so decode(encode(s)) can reproduce the whitespace-normalized
// surface from ids alone.
struct Vocabulary {
  std::vector<std::string> base_symbols;  // sorted unique codepoints
  std::vector<std::pair<std::string, std::string>> merges;
  std::unordered_map<std::string, int> token_to_id;
  std::vector<std::string> id_to_token;
  SpecialIds specials;

  int size() const { return static_cast<int>(id_to_token.size()); }
  bool is_special(int id) const { return id < kNumSpecials; }

  static constexpr int kNumSpecials = 5;
  static constexpr const char* kBosToken = "<s>";
  static constexpr const char* kEosToken = "</s>";
  static constexpr const char* kUnkToken = "<unk>";
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kSepToken = "<w>";
};

struct TokenizedSentence {
  std::vector<int> token_ids;   // bos ... eos, separators between words
  std::vector<int> word_index;  // same length; kSpecialWord for specials
  std::string surface;          // original text

  int length() const { return static_cast<int>(token_ids.size()); }
};

// Learns merge rules until the vocabulary reaches target_vocab_size (or no
// pair is left to merge). At each step the most frequent adjacent symbol
// pair wins; ties break lexicographically on the pair.
Vocabulary train_bpe(const std::vector<std::string>& corpus, int target_vocab_size);

TokenizedSentence encode(const Vocabulary& vocab, const std::string& text);
std::string decode(const Vocabulary& vocab, const std::vector<int>& token_ids);

void save_vocabulary(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocabulary(const std::string& path);

// Whitespace word segmentation shared by the tokenizer and the aligner.
std::vector<std::string> split_words(const std::string& text);
// Splits a word into UTF-8 codepoints; malformed bytes come back as
// single-byte symbols and later map to the unknown id.
std::vector<std::string> split_codepoints(const std::string& word);

}  // namespace xlt
