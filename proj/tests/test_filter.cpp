#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "xlt/bpe.hpp"
#include "xlt/filter.hpp"
#include "xlt/rng.hpp"

using namespace xlt;

namespace {

std::vector<std::string> sentences_from(const std::vector<std::string>& vocab, int count,
                                        uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> out;
  for (int i = 0; i < count; ++i) {
    const int len = 3 + static_cast<int>(rng.next_below(4));
    std::string s;
    for (int w = 0; w < len; ++w)
      s += std::string(w ? " " : "") + vocab[rng.next_below(vocab.size())];
    out.push_back(std::move(s));
  }
  return out;
}

const std::vector<std::string> kVocabA{"lake", "stone", "river", "cloud", "grass", "birch"};
const std::vector<std::string> kVocabB{"tariff", "clause", "treaty", "quorum", "minute", "annex"};

}  // namespace

TEST_CASE("featurization is deterministic") {
  CaptionClassifier clf;
  clf.weights.assign(static_cast<size_t>(clf.dim), 0.0);
  const auto f1 = hashed_features(clf, "a lake beside the stone");
  const auto f2 = hashed_features(clf, "a lake beside the stone");
  CHECK(f1 == f2);
  CHECK_FALSE(f1 == hashed_features(clf, "a river beside the stone"));
}

TEST_CASE("zero-weight classifier scores one half everywhere") {
  CaptionClassifier clf;
  clf.weights.assign(static_cast<size_t>(clf.dim), 0.0);
  CHECK(score_captionness(clf, "anything at all") == doctest::Approx(0.5));
  CHECK(score_captionness(clf, "") == doctest::Approx(0.5));
  clf.bias = 1.25;
  CHECK(score_captionness(clf, "") == doctest::Approx(1.0 / (1.0 + std::exp(-1.25))));
}

TEST_CASE("classifier separates disjoint vocabularies") {
  const auto pos = sentences_from(kVocabA, 400, 1);
  const auto neg = sentences_from(kVocabB, 400, 2);
  const auto trained = train_caption_classifier(pos, neg, 100, 2.0);
  CHECK(trained.heldout_f1 >= 0.99);
  // a training positive outscores a training negative
  CHECK(score_captionness(trained.clf, pos[0]) > score_captionness(trained.clf, neg[0]));
}

TEST_CASE("classifier has no signal on identical distributions") {
  const auto pos = sentences_from(kVocabA, 600, 3);
  const auto neg = sentences_from(kVocabA, 600, 4);
  const auto trained = train_caption_classifier(pos, neg, 100, 2.0);
  CHECK(trained.heldout_f1 >= 0.4);
  CHECK(trained.heldout_f1 <= 0.6);
}

TEST_CASE("classifier rejects an empty class") {
  CHECK_THROWS_AS(train_caption_classifier({}, {"x"}, 10, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(train_caption_classifier({"x"}, {}, 10, 1.0), std::invalid_argument);
}

TEST_CASE("caption-like selection ranks by captionness and caps length") {
  const auto pos = sentences_from(kVocabA, 300, 5);
  const auto neg = sentences_from(kVocabB, 300, 6);
  const auto trained = train_caption_classifier(pos, neg, 100, 2.0);

  std::vector<ScoredPair> pool;
  pool.push_back({pos[0], "t0", "l0", 0, 0});
  pool.push_back({neg[0], "t1", "l0", 0, 0});
  pool.push_back({pos[1], "t2", "l0", 0, 0});
  // an over-long pair is excluded regardless of its score
  std::string longest;
  for (int i = 0; i < 500; ++i) longest += (i ? " " : "") + std::string("lake");
  pool.push_back({longest, "t3", "l0", 0, 0});

  const auto all = select_caption_like(pool, trained.clf, 10, 450);
  REQUIRE(all.size() == 3);
  CHECK(all[0].captionness >= all[1].captionness);
  CHECK(all[1].captionness >= all[2].captionness);
  for (const auto& p : all) CHECK(p.source != longest);

  const auto top1 = select_caption_like(pool, trained.clf, 1, 450);
  REQUIRE(top1.size() == 1);
  for (const auto& p : all) CHECK(top1[0].captionness >= p.captionness);

  // k per language tag
  std::vector<ScoredPair> two_langs = pool;
  two_langs.push_back({pos[2], "u0", "l1", 0, 0});
  two_langs.push_back({neg[1], "u1", "l1", 0, 0});
  const auto per_lang = select_caption_like(two_langs, trained.clf, 1, 450);
  CHECK(per_lang.size() == 2);
}

TEST_CASE("ties in caption selection keep pool order") {
  CaptionClassifier clf;
  clf.weights.assign(static_cast<size_t>(clf.dim), 0.0);  // every sentence scores 0.5
  std::vector<ScoredPair> pool{{"s0", "t0", "l0", 0, 0},
                               {"s1", "t1", "l0", 0, 0},
                               {"s2", "t2", "l0", 0, 0}};
  const auto ranked = select_caption_like(pool, clf, 2, 450);
  REQUIRE(ranked.size() == 2);
  CHECK(ranked[0].source == "s0");
  CHECK(ranked[1].source == "s1");
}

TEST_CASE("greedy matching hand values") {
  const std::vector<std::vector<double>> e1{{1.0, 0.0}};
  const std::vector<std::vector<double>> e2{{1.0, 0.0}, {0.0, 1.0}};
  const auto m = greedy_match_f1(e1, e2);
  CHECK(m.precision == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(m.recall == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  const auto same = greedy_match_f1(e2, e2);
  CHECK(same.precision == doctest::Approx(1.0));
  CHECK(same.recall == doctest::Approx(1.0));
  CHECK(same.f1 == doctest::Approx(1.0));

  const std::vector<std::vector<double>> ortho{{0.0, 1.0}};
  const auto zero = greedy_match_f1(e1, ortho);
  CHECK(zero.precision == 0.0);
  CHECK(zero.recall == 0.0);
  CHECK(zero.f1 == 0.0);

  CHECK_THROWS_WITH_AS(greedy_match_f1({{0.0, 0.0}}, e1), "degenerate embedding",
                       std::invalid_argument);
}

TEST_CASE("greedy matching ranges and side-swap symmetry") {
  Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    auto sample_side = [&] {
      std::vector<std::vector<double>> side(1 + rng.next_below(4));
      for (auto& v : side) {
        v.resize(3);
        double norm = 0.0;
        for (auto& x : v) {
          x = rng.uniform(-1.0, 1.0);
          norm += x * x;
        }
        if (norm == 0.0) v[0] = 1.0;
      }
      return side;
    };
    const auto a = sample_side();
    const auto b = sample_side();
    const auto m = greedy_match_f1(a, b);
    CHECK(m.precision >= 0.0);
    CHECK(m.precision <= 1.0 + 1e-12);
    CHECK(m.recall >= 0.0);
    CHECK(m.recall <= 1.0 + 1e-12);
    CHECK(m.f1 >= 0.0);
    CHECK(m.f1 <= 1.0 + 1e-12);
    const auto swapped = greedy_match_f1(b, a);
    CHECK(swapped.precision == doctest::Approx(m.recall).epsilon(1e-12));
    CHECK(swapped.recall == doctest::Approx(m.precision).epsilon(1e-12));
    CHECK(swapped.f1 == doctest::Approx(m.f1).epsilon(1e-12));
  }
}

TEST_CASE("similarity filter ranks true translations above shuffled ones") {
  // word embeddings shared through the cipher map: ciphered copies of the
  // same sentence match exactly, shuffled pairings do not
  auto embed = [](const std::string&, const std::string& w) {
    std::string base = w;
    if (base.rfind("zz", 0) == 0) base = base.substr(2);
    std::vector<double> v(8);
    Rng rng(fnv1a_str(base));
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
  };
  const auto english = sentences_from(kVocabA, 12, 7);
  std::vector<ScoredPair> pairs;
  for (size_t i = 0; i < english.size(); ++i) {
    std::string cipher;
    for (const auto& w : split_words(english[i])) cipher += (cipher.empty() ? "" : " ") + ("zz" + w);
    pairs.push_back({english[i], cipher, "l0", 0, 0});
  }
  // mismatched pairs: english side i with the cipher of i+1
  for (size_t i = 0; i + 1 < 6; ++i) {
    std::string cipher;
    for (const auto& w : split_words(english[i + 1])) cipher += (cipher.empty() ? "" : " ") + ("zz" + w);
    pairs.push_back({english[i], cipher, "l0", 0, 0});
  }

  const auto kept = filter_by_similarity(pairs, embed, static_cast<int>(english.size()));
  REQUIRE(kept.size() == english.size());
  for (const auto& p : kept) CHECK(p.similarity == doctest::Approx(1.0).epsilon(1e-9));

  CHECK(filter_by_similarity(pairs, embed, 0).empty());

  // stable order under equal scores
  const auto top3 = filter_by_similarity(pairs, embed, 3);
  CHECK(top3[0].source == pairs[0].source);
  CHECK(top3[1].source == pairs[1].source);
  CHECK(top3[2].source == pairs[2].source);
}

TEST_CASE("pair pool file round trip") {
  std::vector<ScoredPair> pairs{{"a b", "x y", "l0", 0.25, 0.5}, {"c", "z", "l1", 0.75, 0.125}};
  const std::string path = "test_pool_roundtrip.tsv";
  save_scored_pairs(pairs, path, true);
  const auto loaded = load_pair_pool(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].source == "a b");
  CHECK(loaded[0].target == "x y");
  CHECK(loaded[0].lang == "l0");
  CHECK(loaded[1].lang == "l1");
  std::remove(path.c_str());
}
