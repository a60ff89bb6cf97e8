#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "xlt/experiment.hpp"

using namespace xlt;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Small enough to run in seconds, big enough that the probe and classifier
// have signal.
ExperimentSpec tiny_spec() {
  ExperimentSpec s;
  s.kind = ExperimentKind::data_type;
  s.num_languages = 2;
  s.pairs_per_language = 60;
  s.english_sentences = 80;
  s.retrieval_candidates = 50;
  s.em_iterations = 3;
  s.corpus_sizes.task_train = 600;
  s.corpus_sizes.task_heldout = 120;
  s.corpus_sizes.caption = 300;
  s.corpus_sizes.generic = 300;
  s.teacher_vocab_size = 256;
  s.student_vocab_size = 256;
  s.encoder.hidden_dim = 32;
  s.encoder.num_layers = 2;
  s.encoder.num_heads = 4;
  s.encoder.ffn_dim = 32;
  s.encoder.max_positions = 48;
  s.transfer.epochs = 2;
  s.transfer.batch_size = 16;
  s.transfer.learning_rate = 5e-3;
  s.transfer.trainable_layers = 2;
  s.classifier_steps = 80;
  s.workers = 1;
  s.seed = 2024;
  return s;
}

}  // namespace

TEST_CASE("position permutations") {
  CHECK(permute_positions(3, Permutation::identity) == std::vector<int>{0, 1, 2});
  CHECK(permute_positions(3, Permutation::reversal) == std::vector<int>{2, 1, 0});
  CHECK(permute_positions(4, Permutation::local_swaps) == std::vector<int>{1, 0, 3, 2});
  CHECK(permute_positions(3, Permutation::local_swaps) == std::vector<int>{1, 0, 2});
}

TEST_CASE("cipher language with identity permutation aligns on the diagonal") {
  const std::vector<std::string> corpus{"aa bb cc", "bb cc"};
  CipherSpec spec;
  spec.lang_id = "t0";
  spec.perm = Permutation::identity;
  spec.seed = 3;
  const auto out = make_cipher_language(corpus, spec);
  REQUIRE(out.pairs.size() == 2);
  CHECK(out.gold_word_links[0].links ==
        std::set<std::pair<int, int>>{{0, 0}, {1, 1}, {2, 2}});
  // round trip through the inverse substitution
  for (const auto& [eng, cip] : out.pairs) {
    std::string back;
    for (const auto& w : split_words(cip)) back += (back.empty() ? "" : " ") + out.inverse.at(w);
    CHECK(back == eng);
  }
}

TEST_CASE("cipher reversal gold alignment") {
  CipherSpec spec;
  spec.lang_id = "t1";
  spec.perm = Permutation::reversal;
  spec.seed = 5;
  const auto out = make_cipher_language({"a b c"}, spec);
  CHECK(out.gold_word_links[0].links ==
        std::set<std::pair<int, int>>{{0, 2}, {1, 1}, {2, 0}});
  const auto words = split_words(out.pairs[0].second);
  REQUIRE(words.size() == 3);
  CHECK(words[0] == out.subst.at("c"));
  CHECK(words[2] == out.subst.at("a"));
}

TEST_CASE("cipher vocabulary collisions are rejected") {
  CipherRegistry registry;
  CipherSpec spec;
  spec.lang_id = "t2";
  spec.perm = Permutation::identity;
  spec.seed = 7;
  make_cipher_language({"aa bb"}, spec, &registry);
  CHECK_THROWS_AS(make_cipher_language({"aa cc"}, spec, &registry), std::runtime_error);
}

TEST_CASE("synthetic corpora are deterministic and labeled") {
  CorpusSizes sizes;
  sizes.task_train = 50;
  sizes.task_heldout = 20;
  sizes.caption = 30;
  sizes.generic = 30;
  const auto a = make_synthetic_english(11, sizes);
  const auto b = make_synthetic_english(11, sizes);
  CHECK(a.task_train == b.task_train);
  CHECK(a.caption == b.caption);
  REQUIRE(a.task_train.size() == 50);
  REQUIRE(a.task_train_labels.size() == 50);
  for (size_t i = 0; i < a.task_train.size(); ++i) {
    bool has_marked = false;
    for (const auto& w : split_words(a.task_train[i]))
      if (a.marked_words.count(w)) has_marked = true;
    CHECK(has_marked == (a.task_train_labels[i] == 1));
  }
  for (const auto& w : a.marked_words) CHECK(w.rfind("qz", 0) == 0);
}

TEST_CASE("experiment spec parses from key=value text") {
  const auto cfg = KeyValueConfig::parse_string(
      "experiment = num_languages\n"
      "language_counts = 2, 3\n"
      "pairs_per_language = 77\n"
      "learning_rate = 0.5   # inline comment\n"
      "projection_variant = linear\n"
      "seed = 99\n");
  const auto spec = spec_from_config(cfg);
  CHECK(spec.kind == ExperimentKind::num_languages);
  CHECK(spec.language_counts == std::vector<int>{2, 3});
  CHECK(spec.pairs_per_language == 77);
  CHECK(spec.transfer.learning_rate == doctest::Approx(0.5));
  CHECK(spec.transfer.projection_variant == ProjectionVariant::linear);
  CHECK(spec.seed == 99);
  // defaults hold where unspecified
  CHECK(spec.transfer.batch_size == 128);
  CHECK(spec.transfer.epochs == 50);
  CHECK(spec.transfer.warmup_ratio == doctest::Approx(0.10));
  CHECK(spec.transfer.weight_decay == doctest::Approx(1e-2));
  CHECK(spec.transfer.trainable_layers == 6);
}

TEST_CASE("unknown config keys are rejected") {
  const auto cfg = KeyValueConfig::parse_string("seed = 1\nnot_a_real_key = 5\n");
  CHECK_THROWS_AS(spec_from_config(cfg), std::runtime_error);
}

TEST_CASE("condition data construction") {
  auto spec = tiny_spec();
  spec.pairs_per_language = 20;
  auto wb = prepare_experiment(spec);
  REQUIRE(wb.languages.size() == 2);
  const std::vector<size_t> langs{0, 1};

  CHECK(build_condition_items(wb, DataCondition::english_only, langs, 20).empty());

  const auto task_items = build_condition_items(wb, DataCondition::task_mt, langs, 20);
  const auto caption_items = build_condition_items(wb, DataCondition::caption_mt, langs, 20);
  CHECK(task_items.size() == 40);
  CHECK(caption_items.size() == task_items.size());

  const auto caption_like = build_condition_items(wb, DataCondition::caption_like, langs, 20);
  CHECK(caption_like.size() <= 40);
  CHECK(!caption_like.empty());

  // asking for more than the corpus holds names the shortfall
  CHECK_THROWS_AS(build_condition_items(wb, DataCondition::task_mt, langs, 100000),
                  std::runtime_error);

  // every item's links refer to valid token positions and never to specials
  for (const auto& item : task_items) {
    for (const auto& [i, j] : item.links.links) {
      REQUIRE(i < item.teacher_tok.length());
      REQUIRE(j < item.student_tok.length());
      CHECK(item.teacher_tok.word_index[static_cast<size_t>(i)] != kSpecialWord);
      CHECK(item.student_tok.word_index[static_cast<size_t>(j)] != kSpecialWord);
    }
  }
}

TEST_CASE("teacher probe and caption classifier have signal on the synthetic corpora") {
  const auto spec = tiny_spec();
  auto wb = prepare_experiment(spec);
  CHECK(wb.teacher_probe_accuracy >= 0.95);
  CHECK(wb.caption_clf_f1 >= 0.95);
}

TEST_CASE("experiment run is reproducible and complete") {
  auto spec = tiny_spec();
  spec.conditions = {DataCondition::english_only, DataCondition::task_mt};

  const std::string dir1 = "test_exp_out1";
  const std::string dir2 = "test_exp_out2";
  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);

  const auto report1 = run_experiment(spec, dir1);
  spec.workers = 2;  // worker count must not affect any output byte
  const auto report2 = run_experiment(spec, dir2);

  REQUIRE(report1.rows.size() == 2);
  CHECK(report1.rows[0].name == "english_only");
  CHECK(report1.rows[1].name == "task_mt");
  for (const auto& row : report1.rows) {
    CHECK(row.languages.size() == 2);
    for (const auto& lm : row.languages) {
      CHECK(lm.retrieval_accuracy >= 0.0);
      CHECK(lm.retrieval_accuracy <= 1.0);
      CHECK(lm.proxy_accuracy >= 0.0);
      CHECK(lm.proxy_accuracy <= 1.0);
      CHECK(lm.teacher_mse_per_layer.size() == 2);
    }
    CHECK(row.english_teacher_mse.size() == 2);
  }

  CHECK(slurp(dir1 + "/metrics.json") == slurp(dir2 + "/metrics.json"));
  CHECK(slurp(dir1 + "/report.tsv") == slurp(dir2 + "/report.tsv"));
  CHECK(std::filesystem::exists(dir1 + "/teacher.ckpt"));
  CHECK(std::filesystem::exists(dir1 + "/english_only/student.ckpt"));
  CHECK(std::filesystem::exists(dir1 + "/task_mt/train_log.jsonl"));

  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("language sweep runs every count and reports all languages") {
  auto spec = tiny_spec();
  spec.kind = ExperimentKind::num_languages;
  spec.language_counts = {1, 2};
  spec.pairs_per_language = 30;
  const std::string dir = "test_exp_sweep";
  std::filesystem::remove_all(dir);
  const auto report = run_experiment(spec, dir);
  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[0].name == "langs_1");
  CHECK(report.rows[0].languages.size() == 1);
  CHECK(report.rows[1].name == "langs_2");
  CHECK(report.rows[1].languages.size() == 2);
  std::filesystem::remove_all(dir);
}
