#include "xlt/filter.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

#include "xlt/bpe.hpp"
#include "xlt/matrix.hpp"
#include "xlt/rng.hpp"

namespace xlt {

std::vector<std::pair<int, double>> hashed_features(const CaptionClassifier& clf,
                                                    const std::string& sentence) {
  std::map<int, double> acc;
  auto bump = [&](const std::string& feat) {
    const uint64_t h = fnv1a_str(feat, clf.hash_seed ^ 0xcbf29ce484222325ull);
    acc[static_cast<int>(h % static_cast<uint64_t>(clf.dim))] += 1.0;
  };
  for (const auto& w : split_words(sentence)) {
    bump("W:" + w);
    const std::string padded = "^" + w + "$";
    for (size_t n = 3; n <= 5; ++n) {
      if (padded.size() < n) continue;
      for (size_t i = 0; i + n <= padded.size(); ++i) bump("C:" + padded.substr(i, n));
    }
  }
  return {acc.begin(), acc.end()};
}

double score_captionness(const CaptionClassifier& clf, const std::string& sentence) {
  double z = clf.bias;
  for (const auto& [idx, c] : hashed_features(clf, sentence))
    z += clf.weights[static_cast<size_t>(idx)] * c;
  return 1.0 / (1.0 + std::exp(-z));
}

ClassifierTrainResult train_caption_classifier(const std::vector<std::string>& positives,
                                               const std::vector<std::string>& negatives,
                                               int steps, double lr, uint64_t seed) {
  if (positives.empty() || negatives.empty())
    throw std::invalid_argument("empty class in classifier training");

  ClassifierTrainResult result;
  CaptionClassifier& clf = result.clf;
  clf.hash_seed = seed;
  clf.weights.assign(static_cast<size_t>(clf.dim), 0.0);

  struct Example {
    std::vector<std::pair<int, double>> feats;
    double label;
    bool heldout;
  };
  std::vector<Example> data;
  auto ingest = [&](const std::vector<std::string>& sents, double label) {
    for (size_t i = 0; i < sents.size(); ++i)
      data.push_back({hashed_features(clf, sents[i]), label, (i % 5) == 4});
  };
  ingest(positives, 1.0);
  ingest(negatives, 0.0);

  size_t n_train = 0;
  for (const auto& e : data)
    if (!e.heldout) ++n_train;

  for (int s = 0; s < steps; ++s) {
    std::vector<double> grad(clf.weights.size(), 0.0);
    double grad_b = 0.0;
    for (const auto& e : data) {
      if (e.heldout) continue;
      double z = clf.bias;
      for (const auto& [idx, c] : e.feats) z += clf.weights[static_cast<size_t>(idx)] * c;
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double err = p - e.label;
      for (const auto& [idx, c] : e.feats) grad[static_cast<size_t>(idx)] += err * c;
      grad_b += err;
    }
    const double scale = lr / static_cast<double>(n_train);
    for (size_t i = 0; i < clf.weights.size(); ++i) clf.weights[i] -= scale * grad[i];
    clf.bias -= scale * grad_b;
  }

  // held-out F1 with positives as the positive class
  double tp = 0, fp = 0, fn = 0;
  for (const auto& e : data) {
    if (!e.heldout) continue;
    double z = clf.bias;
    for (const auto& [idx, c] : e.feats) z += clf.weights[static_cast<size_t>(idx)] * c;
    const bool pred = z > 0.0;
    if (pred && e.label > 0.5) ++tp;
    else if (pred && e.label < 0.5) ++fp;
    else if (!pred && e.label > 0.5) ++fn;
  }
  const double denom = 2 * tp + fp + fn;
  result.heldout_f1 = denom > 0 ? 2 * tp / denom : 0.0;
  return result;
}

std::vector<ScoredPair> select_caption_like(const std::vector<ScoredPair>& pool,
                                            const CaptionClassifier& clf, int k, int token_cap) {
  // score, keep under-cap pairs, then stable-sort per language
  std::map<std::string, std::vector<ScoredPair>> by_lang;
  for (const auto& p : pool) {
    const int tokens = static_cast<int>(split_words(p.source).size() + split_words(p.target).size());
    if (tokens > token_cap) continue;
    ScoredPair s = p;
    s.captionness = score_captionness(clf, p.source);
    by_lang[p.lang].push_back(std::move(s));
  }
  std::vector<ScoredPair> out;
  for (auto& [lang, pairs] : by_lang) {
    std::stable_sort(pairs.begin(), pairs.end(),
                     [](const ScoredPair& a, const ScoredPair& b) {
                       return a.captionness > b.captionness;
                     });
    const size_t take = std::min<size_t>(pairs.size(), static_cast<size_t>(std::max(k, 0)));
    out.insert(out.end(), pairs.begin(), pairs.begin() + static_cast<long>(take));
  }
  return out;
}

MatchScore greedy_match_f1(const std::vector<std::vector<double>>& src_token_vectors,
                           const std::vector<std::vector<double>>& tgt_token_vectors) {
  if (src_token_vectors.empty() || tgt_token_vectors.empty())
    throw std::invalid_argument("empty side in greedy matching");
  auto norm = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  for (const auto& v : src_token_vectors)
    if (norm(v) == 0.0) throw std::invalid_argument("degenerate embedding");
  for (const auto& v : tgt_token_vectors)
    if (norm(v) == 0.0) throw std::invalid_argument("degenerate embedding");

  auto side_score = [&](const std::vector<std::vector<double>>& a,
                        const std::vector<std::vector<double>>& b) {
    double total = 0.0;
    for (const auto& x : a) {
      double best = 0.0;  // clamp at zero: negative cosine counts as no match
      for (const auto& y : b) best = std::max(best, cosine(x, y));
      total += best;
    }
    return total / static_cast<double>(a.size());
  };

  MatchScore m;
  m.precision = side_score(tgt_token_vectors, src_token_vectors);
  m.recall = side_score(src_token_vectors, tgt_token_vectors);
  m.f1 = (m.precision + m.recall) > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

std::vector<ScoredPair> filter_by_similarity(const std::vector<ScoredPair>& pairs,
                                             const EmbedProvider& embed, int k) {
  std::vector<ScoredPair> scored;
  scored.reserve(pairs.size());
  for (const auto& p : pairs) {
    std::vector<std::vector<double>> src_vecs, tgt_vecs;
    for (const auto& w : split_words(p.source)) src_vecs.push_back(embed("en", w));
    for (const auto& w : split_words(p.target)) tgt_vecs.push_back(embed(p.lang, w));
    ScoredPair s = p;
    s.similarity = greedy_match_f1(src_vecs, tgt_vecs).f1;
    scored.push_back(std::move(s));
  }
  std::stable_sort(scored.begin(), scored.end(), [](const ScoredPair& a, const ScoredPair& b) {
    return a.similarity > b.similarity;
  });
  if (static_cast<size_t>(std::max(k, 0)) < scored.size())
    scored.resize(static_cast<size_t>(std::max(k, 0)));
  return scored;
}

std::vector<ScoredPair> load_pair_pool(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open pair pool: " + path);
  std::vector<ScoredPair> out;
  std::string line;
  size_t ln = 0;
  while (std::getline(f, line)) {
    ++ln;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      throw std::runtime_error("malformed pair pool line " + std::to_string(ln));
    ScoredPair p;
    p.source = line.substr(0, t1);
    const auto t3 = line.find('\t', t2 + 1);
    p.target = line.substr(t1 + 1, t2 - t1 - 1);
    p.lang = t3 == std::string::npos ? line.substr(t2 + 1) : line.substr(t2 + 1, t3 - t2 - 1);
    out.push_back(std::move(p));
  }
  return out;
}

void save_scored_pairs(const std::vector<ScoredPair>& pairs, const std::string& path,
                       bool with_scores) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write pair file: " + path);
  char buf[64];
  for (const auto& p : pairs) {
    f << p.source << "\t" << p.target << "\t" << p.lang;
    if (with_scores) {
      std::snprintf(buf, sizeof(buf), "%.17g", p.captionness);
      f << "\t" << buf;
      std::snprintf(buf, sizeof(buf), "%.17g", p.similarity);
      f << "\t" << buf;
    }
    f << "\n";
  }
}

}  // namespace xlt
