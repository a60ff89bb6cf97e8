#include "xlt/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace xlt {

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      if (!cur.empty()) {
        words.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

std::vector<std::string> split_codepoints(const std::string& word) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < word.size()) {
    const unsigned char c = static_cast<unsigned char>(word[i]);
    size_t len = 1;
    if ((c & 0x80u) == 0)
      len = 1;
    else if ((c & 0xE0u) == 0xC0u)
      len = 2;
    else if ((c & 0xF0u) == 0xE0u)
      len = 3;
    else if ((c & 0xF8u) == 0xF0u)
      len = 4;
    if (i + len > word.size()) len = 1;
    // continuation bytes must match, otherwise fall back to a single byte
    for (size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(word[i + k]) & 0xC0u) != 0x80u) {
        len = 1;
        break;
      }
    }
    out.push_back(word.substr(i, len));
    i += len;
  }
  return out;
}

namespace {

void add_token(Vocabulary& v, const std::string& tok) {
  const int id = static_cast<int>(v.id_to_token.size());
  v.id_to_token.push_back(tok);
  v.token_to_id.emplace(tok, id);
}

using SymbolSeq = std::vector<std::string>;

// Applies one merge rule left to right across a symbol sequence.
void apply_merge(SymbolSeq& syms, const std::pair<std::string, std::string>& rule,
                 const std::string& joined) {
  SymbolSeq out;
  out.reserve(syms.size());
  size_t i = 0;
  while (i < syms.size()) {
    if (i + 1 < syms.size() && syms[i] == rule.first && syms[i + 1] == rule.second) {
      out.push_back(joined);
      i += 2;
    } else {
      out.push_back(syms[i]);
      ++i;
    }
  }
  syms = std::move(out);
}

}  // namespace

Vocabulary train_bpe(const std::vector<std::string>& corpus, int target_vocab_size) {
  if (corpus.empty()) throw std::invalid_argument("empty corpus");

  // word frequency table over the whole corpus
  std::map<std::string, long long> word_freq;
  for (const auto& line : corpus)
    for (const auto& w : split_words(line)) ++word_freq[w];

  std::set<std::string> alphabet;
  for (const auto& [w, f] : word_freq)
    for (const auto& cp : split_codepoints(w)) alphabet.insert(cp);

  Vocabulary vocab;
  add_token(vocab, Vocabulary::kBosToken);
  add_token(vocab, Vocabulary::kEosToken);
  add_token(vocab, Vocabulary::kUnkToken);
  add_token(vocab, Vocabulary::kPadToken);
  add_token(vocab, Vocabulary::kSepToken);
  for (const auto& s : alphabet) {
    vocab.base_symbols.push_back(s);
    add_token(vocab, s);
  }

  if (target_vocab_size < vocab.size()) throw std::invalid_argument("vocab too small");

  // working tokenization of every distinct word
  std::vector<std::pair<SymbolSeq, long long>> words;
  words.reserve(word_freq.size());
  for (const auto& [w, f] : word_freq) words.emplace_back(split_codepoints(w), f);

  while (vocab.size() < target_vocab_size) {
    std::map<std::pair<std::string, std::string>, long long> pair_freq;
    for (const auto& [syms, f] : words)
      for (size_t i = 0; i + 1 < syms.size(); ++i)
        pair_freq[{syms[i], syms[i + 1]}] += f;
    if (pair_freq.empty()) break;

    // most frequent pair; ties break lexicographically on the pair, which the
    // ordered map gives us by visiting candidates in sorted order
    std::pair<std::string, std::string> best;
    long long best_freq = 0;
    for (const auto& [p, f] : pair_freq) {
      if (f > best_freq) {
        best = p;
        best_freq = f;
      }
    }

    const std::string joined = best.first + best.second;
    vocab.merges.push_back(best);
    add_token(vocab, joined);
    for (auto& [syms, f] : words) apply_merge(syms, best, joined);
  }
  return vocab;
}

TokenizedSentence encode(const Vocabulary& vocab, const std::string& text) {
  TokenizedSentence out;
  out.surface = text;
  out.token_ids.push_back(vocab.specials.bos);
  out.word_index.push_back(kSpecialWord);

  const auto words = split_words(text);
  for (size_t w = 0; w < words.size(); ++w) {
    if (w > 0) {
      out.token_ids.push_back(vocab.specials.sep);
      out.word_index.push_back(kSpecialWord);
    }
    SymbolSeq syms = split_codepoints(words[w]);
    // unknown codepoints are frozen as-is; merges never touch them because
    // merge rules only name known symbols
    for (const auto& rule : vocab.merges) apply_merge(syms, rule, rule.first + rule.second);
    for (const auto& s : syms) {
      const auto it = vocab.token_to_id.find(s);
      out.token_ids.push_back(it == vocab.token_to_id.end() ? vocab.specials.unk : it->second);
      out.word_index.push_back(static_cast<int>(w));
    }
  }

  out.token_ids.push_back(vocab.specials.eos);
  out.word_index.push_back(kSpecialWord);
  return out;
}

std::string decode(const Vocabulary& vocab, const std::vector<int>& token_ids) {
  std::string out;
  for (const int id : token_ids) {
    if (id < 0 || id >= vocab.size()) throw std::out_of_range("id out of range");
    if (id == vocab.specials.bos || id == vocab.specials.eos || id == vocab.specials.pad)
      continue;
    if (id == vocab.specials.sep) {
      out.push_back(' ');
      continue;
    }
    if (id == vocab.specials.unk) {
      out += "\xEF\xBF\xBD";  // U+FFFD
      continue;
    }
    out += vocab.id_to_token[static_cast<size_t>(id)];
  }
  return out;
}

void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write vocabulary file: " + path);
  f << "BPEv1 " << vocab.merges.size() << "\n";
  for (const auto& [l, r] : vocab.merges) f << l << " " << r << "\n";
  f << "#alphabet " << vocab.base_symbols.size() << "\n";
  for (const auto& s : vocab.base_symbols) f << s << "\n";
  f << "#specials 5\n";
  f << "bos " << Vocabulary::kBosToken << "\n";
  f << "eos " << Vocabulary::kEosToken << "\n";
  f << "unk " << Vocabulary::kUnkToken << "\n";
  f << "pad " << Vocabulary::kPadToken << "\n";
  f << "sep " << Vocabulary::kSepToken << "\n";
}

Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open vocabulary file: " + path);
  std::string header;
  size_t num_merges = 0;
  f >> header >> num_merges;
  if (header != "BPEv1") throw std::runtime_error("bad vocabulary header in " + path);
  std::string line;
  std::getline(f, line);

  std::vector<std::pair<std::string, std::string>> merges;
  merges.reserve(num_merges);
  for (size_t i = 0; i < num_merges; ++i) {
    if (!std::getline(f, line)) throw std::runtime_error("truncated merge list in " + path);
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw std::runtime_error("malformed merge line in " + path);
    merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }

  std::string section;
  size_t num_alpha = 0;
  f >> section >> num_alpha;
  if (section != "#alphabet") throw std::runtime_error("missing alphabet section in " + path);
  std::getline(f, line);
  Vocabulary vocab;
  vocab.id_to_token.clear();
  // reconstruct ids in canonical order: specials, alphabet, merges
  vocab.token_to_id.clear();
  const char* specials[] = {Vocabulary::kBosToken, Vocabulary::kEosToken, Vocabulary::kUnkToken,
                            Vocabulary::kPadToken, Vocabulary::kSepToken};
  for (const char* s : specials) {
    const int id = static_cast<int>(vocab.id_to_token.size());
    vocab.id_to_token.push_back(s);
    vocab.token_to_id.emplace(s, id);
  }
  for (size_t i = 0; i < num_alpha; ++i) {
    if (!std::getline(f, line)) throw std::runtime_error("truncated alphabet in " + path);
    vocab.base_symbols.push_back(line);
    const int id = static_cast<int>(vocab.id_to_token.size());
    vocab.id_to_token.push_back(line);
    vocab.token_to_id.emplace(line, id);
  }
  for (const auto& [l, r] : merges) {
    vocab.merges.emplace_back(l, r);
    const std::string joined = l + r;
    const int id = static_cast<int>(vocab.id_to_token.size());
    vocab.id_to_token.push_back(joined);
    vocab.token_to_id.emplace(joined, id);
  }
  return vocab;
}

}  // namespace xlt
