#include "xlt/align.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "xlt/parallel.hpp"

namespace xlt {

namespace {

struct WordPairCorpus {
  std::vector<std::vector<std::string>> src;
  std::vector<std::vector<std::string>> tgt;
};

WordPairCorpus segment(const std::vector<SentencePair>& pairs) {
  WordPairCorpus c;
  c.src.reserve(pairs.size());
  c.tgt.reserve(pairs.size());
  for (size_t n = 0; n < pairs.size(); ++n) {
    auto s = split_words(pairs[n].first);
    auto t = split_words(pairs[n].second);
    if (s.empty() || t.empty()) {
      throw std::invalid_argument("empty side in sentence pair at line " + std::to_string(n + 1));
    }
    c.src.push_back(std::move(s));
    c.tgt.push_back(std::move(t));
  }
  return c;
}

using CountMap = std::unordered_map<std::string, std::unordered_map<std::string, double>>;

}  // namespace

TranslationTable em_train(const std::vector<SentencePair>& pairs, int iterations,
                          const PriorCounts* prior, int workers) {
  if (pairs.empty()) throw std::invalid_argument("empty pair list");
  const WordPairCorpus corpus = segment(pairs);

  TranslationTable table;
  table.source_vocab.insert(TranslationTable::kNull);
  for (const auto& s : corpus.src) table.source_vocab.insert(s.begin(), s.end());
  for (const auto& t : corpus.tgt) table.target_vocab.insert(t.begin(), t.end());
  if (prior) {
    for (const auto& [s, row] : prior->counts) {
      table.source_vocab.insert(s);
      for (const auto& [t, c] : row) table.target_vocab.insert(t);
    }
  }
  table.uniform_init = true;
  table.uniform_value = 1.0 / static_cast<double>(table.target_vocab.size());

  for (int iter = 0; iter < iterations; ++iter) {
    // E step: expected link counts, accumulated per fixed-size chunk of
    // sentence pairs and merged in chunk order so the summation order does
    // not depend on the worker count.
    std::vector<CountMap> chunk_counts(chunk_count(pairs.size()));
    for_each_chunk(pairs.size(), workers, [&](size_t c, size_t lo, size_t hi) {
      CountMap& counts = chunk_counts[c];
      std::vector<double> p;
      for (size_t n = lo; n < hi; ++n) {
        const auto& src = corpus.src[n];
        const auto& tgt = corpus.tgt[n];
        for (const auto& t : tgt) {
          p.assign(src.size() + 1, 0.0);
          p[0] = table.lookup(TranslationTable::kNull, t);
          double denom = p[0];
          for (size_t i = 0; i < src.size(); ++i) {
            p[i + 1] = table.lookup(src[i], t);
            denom += p[i + 1];
          }
          if (denom <= 0.0) continue;
          counts[TranslationTable::kNull][t] += p[0] / denom;
          for (size_t i = 0; i < src.size(); ++i) counts[src[i]][t] += p[i + 1] / denom;
        }
      }
    });

    CountMap counts;
    for (auto& cc : chunk_counts)
      for (auto& [s, row] : cc)
        for (auto& [t, v] : row) counts[s][t] += v;

    if (prior && prior->strength > 0.0) {
      for (const auto& [s, row] : prior->counts)
        for (const auto& [t, c] : row) counts[s][t] += prior->strength * c;
    }

    // M step: normalize each source row over its targets.
    table.prob.clear();
    for (auto& [s, row] : counts) {
      double total = 0.0;
      for (const auto& [t, c] : row) total += c;
      if (total <= 0.0) continue;
      auto& out = table.prob[s];
      for (const auto& [t, c] : row) out[t] = c / total;
    }
    table.uniform_init = false;
  }
  return table;
}

double corpus_log_likelihood(const TranslationTable& table,
                             const std::vector<SentencePair>& pairs) {
  constexpr double kFloor = 1e-12;
  double ll = 0.0;
  for (const auto& [src_text, tgt_text] : pairs) {
    const auto src = split_words(src_text);
    const auto tgt = split_words(tgt_text);
    const double denom = static_cast<double>(src.size() + 1);
    for (const auto& t : tgt) {
      double inner = table.lookup(TranslationTable::kNull, t);
      for (const auto& s : src) inner += table.lookup(s, t);
      ll += std::log(std::max(inner / denom, kFloor));
    }
  }
  return ll;
}

AlignmentLinkSet viterbi_align(const TranslationTable& table, const SentencePair& pair) {
  const auto src = split_words(pair.first);
  const auto tgt = split_words(pair.second);
  AlignmentLinkSet out;
  out.src_len = static_cast<int>(src.size());
  out.tgt_len = static_cast<int>(tgt.size());
  for (int j = 0; j < out.tgt_len; ++j) {
    const double null_p = table.lookup(TranslationTable::kNull, tgt[static_cast<size_t>(j)]);
    double best = -1.0;
    int best_i = -1;
    for (int i = 0; i < out.src_len; ++i) {
      const double p = table.lookup(src[static_cast<size_t>(i)], tgt[static_cast<size_t>(j)]);
      if (p > best) {  // strict: ties keep the smaller source index
        best = p;
        best_i = i;
      }
    }
    // NULL absorbs the word only when strictly greater than every source
    if (best_i >= 0 && null_p <= best) out.links.insert({best_i, j});
  }
  return out;
}

AlignmentLinkSet symmetrize_grow_diag(const AlignmentLinkSet& forward,
                                      const AlignmentLinkSet& reverse) {
  if (forward.src_len != reverse.src_len || forward.tgt_len != reverse.tgt_len)
    throw std::invalid_argument("mismatched lengths in symmetrization");

  AlignmentLinkSet out;
  out.src_len = forward.src_len;
  out.tgt_len = forward.tgt_len;

  std::set<std::pair<int, int>> uni;
  for (const auto& l : forward.links) {
    if (reverse.links.count(l)) out.links.insert(l);
    uni.insert(l);
  }
  uni.insert(reverse.links.begin(), reverse.links.end());

  std::vector<char> src_covered(static_cast<size_t>(out.src_len), 0);
  std::vector<char> tgt_covered(static_cast<size_t>(out.tgt_len), 0);
  for (const auto& [i, j] : out.links) {
    src_covered[static_cast<size_t>(i)] = 1;
    tgt_covered[static_cast<size_t>(j)] = 1;
  }

  bool grew = true;
  while (grew) {
    grew = false;
    for (const auto& [i, j] : uni) {
      if (out.links.count({i, j})) continue;
      if (src_covered[static_cast<size_t>(i)] && tgt_covered[static_cast<size_t>(j)]) continue;
      bool adjacent = false;
      for (int di = -1; di <= 1 && !adjacent; ++di)
        for (int dj = -1; dj <= 1 && !adjacent; ++dj) {
          if (di == 0 && dj == 0) continue;
          const int ni = i + di, nj = j + dj;
          if (ni < 0 || nj < 0 || ni >= out.src_len || nj >= out.tgt_len) continue;
          if (out.links.count({ni, nj})) adjacent = true;
        }
      if (adjacent) {
        out.links.insert({i, j});
        src_covered[static_cast<size_t>(i)] = 1;
        tgt_covered[static_cast<size_t>(j)] = 1;
        grew = true;
      }
    }
  }
  return out;
}

AlignmentLinkSet symmetrize(const AlignmentLinkSet& forward, const AlignmentLinkSet& reverse,
                            Symmetrization mode) {
  if (forward.src_len != reverse.src_len || forward.tgt_len != reverse.tgt_len)
    throw std::invalid_argument("mismatched lengths in symmetrization");
  switch (mode) {
    case Symmetrization::grow_diag:
      return symmetrize_grow_diag(forward, reverse);
    case Symmetrization::intersection: {
      AlignmentLinkSet out;
      out.src_len = forward.src_len;
      out.tgt_len = forward.tgt_len;
      for (const auto& l : forward.links)
        if (reverse.links.count(l)) out.links.insert(l);
      return out;
    }
    case Symmetrization::union_all: {
      AlignmentLinkSet out = forward;
      out.links.insert(reverse.links.begin(), reverse.links.end());
      return out;
    }
  }
  throw std::logic_error("unreachable");
}

AlignmentLinkSet project_to_subwords(const AlignmentLinkSet& word_links,
                                     const TokenizedSentence& src_tok,
                                     const TokenizedSentence& tgt_tok) {
  // bucket subword positions by word index
  auto bucket = [](const TokenizedSentence& tok) {
    std::vector<std::vector<int>> by_word;
    for (int pos = 0; pos < tok.length(); ++pos) {
      const int w = tok.word_index[static_cast<size_t>(pos)];
      if (w == kSpecialWord) continue;
      if (w >= static_cast<int>(by_word.size())) by_word.resize(static_cast<size_t>(w) + 1);
      by_word[static_cast<size_t>(w)].push_back(pos);
    }
    return by_word;
  };
  const auto src_by_word = bucket(src_tok);
  const auto tgt_by_word = bucket(tgt_tok);

  AlignmentLinkSet out;
  out.src_len = src_tok.length();
  out.tgt_len = tgt_tok.length();
  for (const auto& [ws, wt] : word_links.links) {
    if (ws < 0 || ws >= static_cast<int>(src_by_word.size()) || wt < 0 ||
        wt >= static_cast<int>(tgt_by_word.size()))
      throw std::out_of_range("word index out of range in alignment projection");
    for (const int i : src_by_word[static_cast<size_t>(ws)])
      for (const int j : tgt_by_word[static_cast<size_t>(wt)]) out.links.insert({i, j});
  }
  return out;
}

PriorCounts derive_priors(const TranslationTable& pool_table, double strength) {
  if (strength < 0.0) throw std::invalid_argument("negative prior strength");
  PriorCounts prior;
  prior.strength = 1.0;  // strength is baked into the counts below
  if (strength == 0.0) return prior;
  for (const auto& [s, row] : pool_table.prob)
    for (const auto& [t, p] : row)
      if (p > 0.0) prior.counts[s][t] = p * strength;
  return prior;
}

AlignmentLinkSet identity_word_alignment(int num_words) {
  AlignmentLinkSet out;
  out.src_len = num_words;
  out.tgt_len = num_words;
  for (int i = 0; i < num_words; ++i) out.links.insert({i, i});
  return out;
}

std::string to_pharaoh(const AlignmentLinkSet& links) {
  std::string out;
  bool first = true;
  for (const auto& [i, j] : links.links) {  // std::set orders by (i, j)
    if (!first) out.push_back(' ');
    out += std::to_string(i) + "-" + std::to_string(j);
    first = false;
  }
  return out;
}

AlignmentLinkSet from_pharaoh(const std::string& line, int src_len, int tgt_len) {
  AlignmentLinkSet out;
  out.src_len = src_len;
  out.tgt_len = tgt_len;
  std::istringstream ss(line);
  std::string item;
  while (ss >> item) {
    const auto dash = item.find('-');
    if (dash == std::string::npos) throw std::runtime_error("malformed pharaoh link: " + item);
    const int i = std::stoi(item.substr(0, dash));
    const int j = std::stoi(item.substr(dash + 1));
    out.links.insert({i, j});
  }
  return out;
}

void save_translation_table(const TranslationTable& table, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write translation table: " + path);
  std::map<std::string, std::map<std::string, double>> sorted;
  for (const auto& [s, row] : table.prob)
    for (const auto& [t, p] : row) sorted[s][t] = p;
  char buf[64];
  for (const auto& [s, row] : sorted)
    for (const auto& [t, p] : row) {
      std::snprintf(buf, sizeof(buf), "%.17g", p);
      f << s << "\t" << t << "\t" << buf << "\n";
    }
}

TranslationTable load_translation_table(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open translation table: " + path);
  TranslationTable table;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      throw std::runtime_error("malformed translation table line: " + line);
    const std::string s = line.substr(0, t1);
    const std::string t = line.substr(t1 + 1, t2 - t1 - 1);
    const double p = std::stod(line.substr(t2 + 1));
    table.prob[s][t] = p;
    table.source_vocab.insert(s);
    table.target_vocab.insert(t);
  }
  return table;
}

}  // namespace xlt
