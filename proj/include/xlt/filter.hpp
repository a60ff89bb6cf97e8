#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace xlt {

// Linear caption-likeness scorer over hashed character 3–5-gram and word
// unigram counts.
struct CaptionClassifier {
  int dim = 1 << 16;
  uint64_t hash_seed = 0x5eedf17e;
  std::vector<double> weights;
  double bias = 0.0;
};

// Sparse featurization as (index, count) pairs, deterministic per sentence.
std::vector<std::pair<int, double>> hashed_features(const CaptionClassifier& clf,
                                                    const std::string& sentence);

struct ClassifierTrainResult {
  CaptionClassifier clf;
  double heldout_f1 = 0.0;
};

// Full-batch logistic-loss gradient descent. A deterministic 1-in-5 slice of
// each class is held out for the reported F1.
ClassifierTrainResult train_caption_classifier(const std::vector<std::string>& positives,
                                               const std::vector<std::string>& negatives,
                                               int steps, double lr, uint64_t seed = 7);

double score_captionness(const CaptionClassifier& clf, const std::string& sentence);

struct ScoredPair {
  std::string source;
  std::string target;
  std::string lang;
  double captionness = 0.0;
  double similarity = 0.0;
};

// Keeps pairs within the combined whitespace-token cap, ranks by captionness
// of the source (English) side, and returns the top k per language tag. Ties
// keep pool order.
std::vector<ScoredPair> select_caption_like(const std::vector<ScoredPair>& pool,
                                            const CaptionClassifier& clf, int k,
                                            int token_cap = 450);

struct MatchScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Greedy maximum-cosine token matching: precision averages each target
// token's best cosine against the source side, recall the converse, f1 the
// harmonic mean (0 when both sides are orthogonal). Per-token best scores
// clamp at zero so results stay in [0,1].
MatchScore greedy_match_f1(const std::vector<std::vector<double>>& src_token_vectors,
                           const std::vector<std::vector<double>>& tgt_token_vectors);

// Token embedding provider: (language tag, word) → vector. The source side
// uses the reserved tag "en".
using EmbedProvider = std::function<std::vector<double>(const std::string&, const std::string&)>;

// Scores each pair with greedy_match_f1 over word embeddings and returns the
// top k; equal scores keep input order.
std::vector<ScoredPair> filter_by_similarity(const std::vector<ScoredPair>& pairs,
                                             const EmbedProvider& embed, int k);

// Pair pool file: "source<TAB>target<TAB>langtag" per line; the scored
// variant appends captionness and similarity columns.
std::vector<ScoredPair> load_pair_pool(const std::string& path);
void save_scored_pairs(const std::vector<ScoredPair>& pairs, const std::string& path,
                       bool with_scores = true);

}  // namespace xlt
