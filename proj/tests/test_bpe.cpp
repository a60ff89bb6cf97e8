#include <doctest.h>

#include <set>
#include <stdexcept>

#include "xlt/bpe.hpp"
#include "xlt/rng.hpp"

using namespace xlt;

namespace {

// target size that leaves exactly `budget` merges for the corpus alphabet
int target_for(const std::vector<std::string>& corpus, int budget) {
  std::set<std::string> alphabet;
  for (const auto& line : corpus)
    for (const auto& w : split_words(line))
      for (const auto& cp : split_codepoints(w)) alphabet.insert(cp);
  return static_cast<int>(alphabet.size()) + Vocabulary::kNumSpecials + budget;
}

std::string random_sentence(Rng& rng, int max_words) {
  static const char letters[] = "abc";
  const int n = 1 + static_cast<int>(rng.next_below(static_cast<uint64_t>(max_words)));
  std::string s;
  for (int w = 0; w < n; ++w) {
    if (w) s.push_back(' ');
    const int len = 1 + static_cast<int>(rng.next_below(4));
    for (int i = 0; i < len; ++i) s.push_back(letters[rng.next_below(3)]);
  }
  return s;
}

}  // namespace

TEST_CASE("bpe merges the most frequent pair") {
  const std::vector<std::string> corpus{"ab ab"};
  const auto vocab = train_bpe(corpus, target_for(corpus, 1));
  REQUIRE(vocab.merges.size() == 1);
  CHECK(vocab.merges[0] == std::pair<std::string, std::string>{"a", "b"});
}

TEST_CASE("bpe with zero merge budget") {
  const std::vector<std::string> corpus{"ab ab"};
  const auto vocab = train_bpe(corpus, target_for(corpus, 0));
  CHECK(vocab.merges.empty());
}

TEST_CASE("bpe merges a repeated letter pair") {
  const std::vector<std::string> corpus{"aa"};
  const auto vocab = train_bpe(corpus, target_for(corpus, 1));
  REQUIRE(vocab.merges.size() == 1);
  CHECK(vocab.merges[0] == std::pair<std::string, std::string>{"a", "a"});
}

TEST_CASE("bpe tie-break is lexicographic on the pair") {
  // "ba" and "ab" each occur twice: pairs (b,a) and (a,b) tie at 2
  const std::vector<std::string> corpus{"ba ab", "ab ba"};
  const auto vocab = train_bpe(corpus, target_for(corpus, 1));
  REQUIRE(vocab.merges.size() == 1);
  CHECK(vocab.merges[0] == std::pair<std::string, std::string>{"a", "b"});
}

TEST_CASE("bpe errors") {
  CHECK_THROWS_WITH_AS(train_bpe({}, 100), "empty corpus", std::invalid_argument);
  CHECK_THROWS_WITH_AS(train_bpe({"abc"}, 3), "vocab too small", std::invalid_argument);
}

TEST_CASE("bpe vocabulary invariants") {
  const std::vector<std::string> corpus{"abc abd", "bcd cde", "ab ab ab"};
  const auto vocab = train_bpe(corpus, target_for(corpus, 6));
  // contiguous bijective ids
  REQUIRE(static_cast<int>(vocab.id_to_token.size()) == vocab.size());
  for (int id = 0; id < vocab.size(); ++id) {
    const auto& tok = vocab.id_to_token[static_cast<size_t>(id)];
    REQUIRE(vocab.token_to_id.count(tok) == 1);
    CHECK(vocab.token_to_id.at(tok) == id);
  }
  // merged tokens concatenate their parents, and never produce specials
  for (const auto& [l, r] : vocab.merges) {
    CHECK(vocab.token_to_id.count(l + r) == 1);
    CHECK(vocab.token_to_id.at(l + r) >= Vocabulary::kNumSpecials);
  }
  // specials distinct
  const std::set<int> specials{vocab.specials.bos, vocab.specials.eos, vocab.specials.unk,
                               vocab.specials.pad, vocab.specials.sep};
  CHECK(specials.size() == 5);
}

TEST_CASE("bpe training is deterministic") {
  const std::vector<std::string> corpus{"abc abd bcd", "ab cd ab", "ccc bbb"};
  const auto v1 = train_bpe(corpus, target_for(corpus, 8));
  const auto v2 = train_bpe(corpus, target_for(corpus, 8));
  CHECK(v1.merges == v2.merges);
  CHECK(v1.id_to_token == v2.id_to_token);
}

TEST_CASE("encode of empty text") {
  const auto vocab = train_bpe({"a"}, target_for({"a"}, 0));
  const auto tok = encode(vocab, "");
  CHECK(tok.token_ids == std::vector<int>{vocab.specials.bos, vocab.specials.eos});
  CHECK(tok.word_index == std::vector<int>{kSpecialWord, kSpecialWord});
}

TEST_CASE("encode applies merges and tracks word indices") {
  const std::vector<std::string> corpus{"ab ab"};
  const auto vocab = train_bpe(corpus, target_for(corpus, 1));
  const auto tok = encode(vocab, "ab");
  REQUIRE(tok.token_ids.size() == 3);  // bos "ab" eos
  CHECK(vocab.id_to_token[static_cast<size_t>(tok.token_ids[1])] == "ab");
  CHECK(tok.word_index == std::vector<int>{kSpecialWord, 0, kSpecialWord});
}

TEST_CASE("decode inverts encode") {
  const std::vector<std::string> corpus{"ab ab c", "a b c"};
  const auto vocab = train_bpe(corpus, target_for(corpus, 1));
  CHECK(decode(vocab, {vocab.specials.bos, vocab.specials.eos}) == "");
  CHECK(decode(vocab, encode(vocab, "a b").token_ids) == "a b");
  // the merge example, inverted: tokens "ab" and "c" across a word boundary
  const auto tok = encode(vocab, "ab c");
  CHECK(decode(vocab, tok.token_ids) == "ab c");
}

TEST_CASE("decode rejects out-of-range ids") {
  const auto vocab = train_bpe({"a"}, target_for({"a"}, 0));
  CHECK_THROWS_WITH_AS(decode(vocab, {vocab.size()}), "id out of range", std::out_of_range);
}

TEST_CASE("unknown characters map to the unknown id") {
  const auto vocab = train_bpe({"ab ab"}, target_for({"ab ab"}, 1));
  const auto tok = encode(vocab, "aq");
  REQUIRE(tok.token_ids.size() == 4);  // bos a <unk> eos
  CHECK(tok.token_ids[2] == vocab.specials.unk);
  CHECK(tok.word_index[1] == 0);
  CHECK(tok.word_index[2] == 0);
}

TEST_CASE("round trip and word-index monotonicity over random corpora") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::string> corpus;
    for (int i = 0; i < 30; ++i) corpus.push_back(random_sentence(rng, 6));
    const auto vocab = train_bpe(corpus, target_for(corpus, 10));
    for (int i = 0; i < 10; ++i) {
      const std::string s = random_sentence(rng, 6);
      const auto tok = encode(vocab, s);
      CHECK(decode(vocab, tok.token_ids) == s);
      REQUIRE(tok.token_ids.size() == tok.word_index.size());
      int prev = -1;
      for (size_t p = 0; p < tok.word_index.size(); ++p) {
        const int w = tok.word_index[p];
        if (w == kSpecialWord) continue;
        CHECK(w >= prev);
        prev = w;
      }
    }
  }
}

TEST_CASE("whitespace normalization in round trip") {
  const std::vector<std::string> corpus{"ab ab c"};
  const auto vocab = train_bpe(corpus, target_for(corpus, 2));
  CHECK(decode(vocab, encode(vocab, "  ab\t c ").token_ids) == "ab c");
}

TEST_CASE("vocabulary file round trip") {
  const std::vector<std::string> corpus{"abc abd bcd", "ab cd ab"};
  const auto vocab = train_bpe(corpus, target_for(corpus, 5));
  const std::string path = "test_vocab_roundtrip.txt";
  save_vocabulary(vocab, path);
  const auto loaded = load_vocabulary(path);
  CHECK(loaded.merges == vocab.merges);
  CHECK(loaded.id_to_token == vocab.id_to_token);
  CHECK(loaded.base_symbols == vocab.base_symbols);
  std::remove(path.c_str());
}
