#include "xlt/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "xlt/parallel.hpp"
#include "xlt/rng.hpp"

namespace xlt {

using ordered_json = nlohmann::ordered_json;

const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::data_type: return "data_type";
    case ExperimentKind::num_languages: return "num_languages";
    case ExperimentKind::bilingual_vs_multilingual: return "bilingual_vs_multilingual";
    case ExperimentKind::architecture_ablation: return "architecture_ablation";
  }
  return "?";
}

const char* to_string(DataCondition c) {
  switch (c) {
    case DataCondition::english_only: return "english_only";
    case DataCondition::task_mt: return "task_mt";
    case DataCondition::caption_mt: return "caption_mt";
    case DataCondition::generic: return "generic";
    case DataCondition::caption_like: return "caption_like";
  }
  return "?";
}

ExperimentKind experiment_kind_from_string(const std::string& s) {
  if (s == "data_type") return ExperimentKind::data_type;
  if (s == "num_languages") return ExperimentKind::num_languages;
  if (s == "bilingual_vs_multilingual") return ExperimentKind::bilingual_vs_multilingual;
  if (s == "architecture_ablation") return ExperimentKind::architecture_ablation;
  throw std::invalid_argument("unknown experiment kind: " + s);
}

DataCondition condition_from_string(const std::string& s) {
  if (s == "english_only") return DataCondition::english_only;
  if (s == "task_mt") return DataCondition::task_mt;
  if (s == "caption_mt") return DataCondition::caption_mt;
  if (s == "generic") return DataCondition::generic;
  if (s == "caption_like") return DataCondition::caption_like;
  throw std::invalid_argument("unknown data condition: " + s);
}

ExperimentSpec spec_from_config(const KeyValueConfig& cfg) {
  ExperimentSpec s;
  s.kind = experiment_kind_from_string(cfg.get_string("experiment", "data_type"));
  for (const auto& c : cfg.get_string_list("conditions", {}))
    s.conditions.push_back(condition_from_string(c));
  s.num_languages = static_cast<int>(cfg.get_int("num_languages", s.num_languages));
  s.language_counts = cfg.get_int_list("language_counts", s.language_counts);
  s.pairs_per_language = static_cast<int>(cfg.get_int("pairs_per_language", s.pairs_per_language));
  s.english_sentences = static_cast<int>(cfg.get_int("english_sentences", s.english_sentences));
  s.retrieval_candidates =
      static_cast<int>(cfg.get_int("retrieval_candidates", s.retrieval_candidates));
  s.em_iterations = static_cast<int>(cfg.get_int("em_iterations", s.em_iterations));
  s.prior_strength = cfg.get_double("prior_strength", s.prior_strength);
  s.pool_mismatch_fraction = cfg.get_double("pool_mismatch_fraction", s.pool_mismatch_fraction);
  const std::string sym = cfg.get_string("symmetrization", "grow_diag");
  if (sym == "grow_diag") s.symmetrization = Symmetrization::grow_diag;
  else if (sym == "intersection") s.symmetrization = Symmetrization::intersection;
  else if (sym == "union") s.symmetrization = Symmetrization::union_all;
  else throw std::invalid_argument("unknown symmetrization: " + sym);

  s.corpus_sizes.task_train = static_cast<int>(cfg.get_int("task_train_sentences", s.corpus_sizes.task_train));
  s.corpus_sizes.task_heldout = static_cast<int>(cfg.get_int("task_heldout_sentences", s.corpus_sizes.task_heldout));
  s.corpus_sizes.caption = static_cast<int>(cfg.get_int("caption_sentences", s.corpus_sizes.caption));
  s.corpus_sizes.generic = static_cast<int>(cfg.get_int("generic_sentences", s.corpus_sizes.generic));
  s.corpus_sizes.core_words = static_cast<int>(cfg.get_int("core_words", s.corpus_sizes.core_words));
  s.corpus_sizes.marked_words = static_cast<int>(cfg.get_int("marked_words", s.corpus_sizes.marked_words));
  s.corpus_sizes.caption_only_words = static_cast<int>(cfg.get_int("caption_only_words", s.corpus_sizes.caption_only_words));
  s.corpus_sizes.generic_only_words = static_cast<int>(cfg.get_int("generic_only_words", s.corpus_sizes.generic_only_words));

  s.teacher_vocab_size = static_cast<int>(cfg.get_int("teacher_vocab_size", s.teacher_vocab_size));
  s.student_vocab_size = static_cast<int>(cfg.get_int("student_vocab_size", s.student_vocab_size));
  s.encoder.hidden_dim = static_cast<int>(cfg.get_int("hidden_dim", s.encoder.hidden_dim));
  s.encoder.num_layers = static_cast<int>(cfg.get_int("num_layers", s.encoder.num_layers));
  s.encoder.num_heads = static_cast<int>(cfg.get_int("num_heads", s.encoder.num_heads));
  s.encoder.ffn_dim = static_cast<int>(cfg.get_int("ffn_dim", s.encoder.ffn_dim));
  s.encoder.max_positions = static_cast<int>(cfg.get_int("max_positions", s.encoder.max_positions));

  s.transfer.learning_rate = cfg.get_double("learning_rate", s.transfer.learning_rate);
  s.transfer.batch_size = static_cast<int>(cfg.get_int("batch_size", s.transfer.batch_size));
  s.transfer.epochs = static_cast<int>(cfg.get_int("epochs", s.transfer.epochs));
  s.transfer.warmup_ratio = cfg.get_double("warmup_ratio", s.transfer.warmup_ratio);
  s.transfer.weight_decay = cfg.get_double("weight_decay", s.transfer.weight_decay);
  s.transfer.momentum = cfg.get_double("momentum", s.transfer.momentum);
  s.transfer.trainable_layers =
      static_cast<int>(cfg.get_int("trainable_layers", s.transfer.trainable_layers));
  s.transfer.target_layers = cfg.get_int_list("target_layers", {});
  s.transfer.loss_variant =
      loss_variant_from_string(cfg.get_string("loss_variant", "align_plus_mean"));
  s.transfer.input_variant =
      input_variant_from_string(cfg.get_string("input_variant", "weighted_layers"));
  s.transfer.projection_variant =
      projection_variant_from_string(cfg.get_string("projection_variant", "bottleneck"));
  const std::string red = cfg.get_string("dim_reduction", "mean");
  if (red == "mean") s.transfer.dim_reduction = DimReduction::mean_dims;
  else if (red == "sum") s.transfer.dim_reduction = DimReduction::sum_dims;
  else throw std::invalid_argument("unknown dim_reduction: " + red);

  s.bilingual_epochs = static_cast<int>(cfg.get_int("bilingual_epochs", s.bilingual_epochs));
  s.classifier_steps = static_cast<int>(cfg.get_int("classifier_steps", s.classifier_steps));
  s.classifier_lr = cfg.get_double("classifier_lr", s.classifier_lr);
  s.workers = static_cast<int>(cfg.get_int("workers", s.workers));
  s.seed = cfg.get_u64("seed", s.seed);
  s.transfer.seed = s.seed;
  cfg.reject_unknown_keys();
  return s;
}

Probe train_probe(const std::vector<std::vector<double>>& features,
                  const std::vector<int>& labels, int steps, double lr) {
  if (features.empty() || features.size() != labels.size())
    throw std::invalid_argument("probe training needs matching features and labels");
  const size_t d = features[0].size();
  Probe probe;
  probe.weights.assign(d, 0.0);
  const double inv_n = 1.0 / static_cast<double>(features.size());
  for (int s = 0; s < steps; ++s) {
    std::vector<double> grad(d, 0.0);
    double grad_b = 0.0;
    for (size_t i = 0; i < features.size(); ++i) {
      double z = probe.bias;
      for (size_t j = 0; j < d; ++j) z += probe.weights[j] * features[i][j];
      const double err = 1.0 / (1.0 + std::exp(-z)) - labels[i];
      for (size_t j = 0; j < d; ++j) grad[j] += err * features[i][j];
      grad_b += err;
    }
    for (size_t j = 0; j < d; ++j) probe.weights[j] -= lr * inv_n * grad[j];
    probe.bias -= lr * inv_n * grad_b;
  }
  return probe;
}

double probe_accuracy(const Probe& probe, const std::vector<std::vector<double>>& features,
                      const std::vector<int>& labels) {
  if (features.empty()) return 0.0;
  size_t correct = 0;
  for (size_t i = 0; i < features.size(); ++i) {
    double z = probe.bias;
    for (size_t j = 0; j < probe.weights.size(); ++j) z += probe.weights[j] * features[i][j];
    if ((z > 0.0) == (labels[i] > 0)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(features.size());
}

double eval_retrieval(const EncoderParams& student, const ProjectionHeads& heads,
                      const EncoderParams& teacher,
                      const std::vector<TransferItem>& heldout_items, int n) {
  const size_t m = std::min<size_t>(heldout_items.size(), static_cast<size_t>(std::max(n, 0)));
  if (m == 0) return 0.0;
  const int k_last = heads.target_layers.back();
  std::vector<std::vector<double>> teacher_pool(m), student_pool(m);
  for (size_t i = 0; i < m; ++i) {
    const HiddenStack ts = forward(teacher, heldout_items[i].teacher_tok.token_ids);
    teacher_pool[i] = mean_pool(ts, k_last);
    const auto projected = swap_and_encode(student, heads, heldout_items[i].student_tok);
    student_pool[i] = column_mean(projected.back());
  }
  size_t correct = 0;
  for (size_t i = 0; i < m; ++i) {
    double best = -2.0;
    size_t best_j = 0;
    for (size_t j = 0; j < m; ++j) {
      const double c = cosine(student_pool[i], teacher_pool[j]);
      if (c > best) {
        best = c;
        best_j = j;
      }
    }
    if (best_j == i) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(m);
}

std::vector<double> eval_teacher_mse(const EncoderParams& student, const ProjectionHeads& heads,
                                     const EncoderParams& teacher,
                                     const std::vector<TransferItem>& items,
                                     const TransferConfig& cfg) {
  std::vector<double> per_layer(heads.target_layers.size(), 0.0);
  if (items.empty()) return per_layer;
  for (const auto& item : items) {
    const HiddenStack ts = forward(teacher, item.teacher_tok.token_ids);
    const HiddenStack ss = forward(student, item.student_tok.token_ids);
    const LossBreakdown lb = total_loss(ts, ss, heads, item.links, cfg);
    for (size_t k = 0; k < per_layer.size(); ++k)
      per_layer[k] += lb.align_per_layer[k] + lb.mean_per_layer[k];
  }
  for (auto& v : per_layer) v /= static_cast<double>(items.size());
  return per_layer;
}

namespace {

std::string hex64(uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

template <typename F>
auto stage(const char* name, const std::string& digest_src, F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("stage ") + name + " failed (input digest " +
                             hex64(fnv1a_str(digest_src)) + "): " + e.what());
  }
}

AlignmentLinkSet transpose_links(const AlignmentLinkSet& in) {
  AlignmentLinkSet out;
  out.src_len = in.tgt_len;
  out.tgt_len = in.src_len;
  for (const auto& [i, j] : in.links) out.links.insert({j, i});
  return out;
}

// Directional EM + symmetrization over one set of sentence pairs.
std::vector<AlignmentLinkSet> align_pairs(const std::vector<SentencePair>& pairs, int iterations,
                                          const PriorCounts* fwd_prior,
                                          const PriorCounts* rev_prior, Symmetrization mode,
                                          int workers) {
  std::vector<SentencePair> swapped;
  swapped.reserve(pairs.size());
  for (const auto& [s, t] : pairs) swapped.emplace_back(t, s);
  const TranslationTable fwd = em_train(pairs, iterations, fwd_prior, workers);
  const TranslationTable rev = em_train(swapped, iterations, rev_prior, workers);
  std::vector<AlignmentLinkSet> out;
  out.reserve(pairs.size());
  for (size_t n = 0; n < pairs.size(); ++n) {
    const AlignmentLinkSet f = viterbi_align(fwd, pairs[n]);
    const AlignmentLinkSet r = transpose_links(viterbi_align(rev, swapped[n]));
    out.push_back(symmetrize(f, r, mode));
  }
  return out;
}

TransferItem make_identity_item(const ExperimentWorkbench& wb, const std::string& sentence) {
  TransferItem item;
  item.teacher_tok = encode(wb.teacher_vocab, sentence);
  item.student_tok = encode(wb.student_vocab, sentence);
  const int n_words = static_cast<int>(split_words(sentence).size());
  item.links = project_to_subwords(identity_word_alignment(n_words), item.teacher_tok,
                                   item.student_tok);
  return item;
}

TransferItem make_pair_item(const ExperimentWorkbench& wb, const SentencePair& pair,
                            const AlignmentLinkSet& word_links) {
  TransferItem item;
  item.teacher_tok = encode(wb.teacher_vocab, pair.first);
  item.student_tok = encode(wb.student_vocab, pair.second);
  item.links = project_to_subwords(word_links, item.teacher_tok, item.student_tok);
  return item;
}

// Builds the per-language candidate pool: authentic caption-domain and
// generic-domain pairs plus a slice of deliberately mismatched pairs the
// similarity filter is expected to reject.
void build_pool(ExperimentWorkbench& wb, LanguageBench& lang) {
  if (lang.pool_ready) return;
  const auto& sp = wb.spec;
  std::vector<ScoredPair> pool;
  auto add_range = [&](size_t begin, size_t count) {
    for (size_t i = begin; i < begin + count; ++i) {
      const auto& [eng, cip] = lang.corpus.pairs[i];
      pool.push_back({eng, cip, lang.lang_id, 0.0, 0.0});
    }
  };
  add_range(wb.slices.caption, wb.slices.caption_n);
  add_range(wb.slices.generic, wb.slices.generic_n);

  Rng rng(fnv1a_str("pool:" + lang.lang_id) ^ sp.seed);
  const size_t n_true = pool.size();
  const size_t n_mismatch =
      static_cast<size_t>(sp.pool_mismatch_fraction * static_cast<double>(n_true));
  for (size_t m = 0; m < n_mismatch; ++m) {
    const size_t a = rng.next_below(n_true);
    size_t b = rng.next_below(n_true);
    if (b == a) b = (b + 1) % n_true;
    pool.push_back({pool[a].source, pool[b].target, lang.lang_id, 0.0, 0.0});
  }
  lang.pool = std::move(pool);

  // pool-level alignment model, reused as priors for subset alignment
  std::vector<SentencePair> pool_pairs;
  pool_pairs.reserve(lang.pool.size());
  for (const auto& p : lang.pool) pool_pairs.emplace_back(p.source, p.target);
  std::vector<SentencePair> swapped;
  swapped.reserve(pool_pairs.size());
  for (const auto& [s, t] : pool_pairs) swapped.emplace_back(t, s);
  const TranslationTable fwd = em_train(pool_pairs, sp.em_iterations, nullptr, sp.workers);
  const TranslationTable rev = em_train(swapped, sp.em_iterations, nullptr, sp.workers);
  lang.pool_fwd_prior = derive_priors(fwd, sp.prior_strength);
  lang.pool_rev_prior = derive_priors(rev, sp.prior_strength);
  lang.pool_ready = true;
}

std::vector<double> embed_word(const std::string& word) {
  constexpr int kDim = 16;
  std::vector<double> v(kDim);
  Rng rng(fnv1a_str(word) ^ 0x5eed3b3d11ull);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

std::vector<TransferItem> build_condition_items_impl(ExperimentWorkbench& wb, DataCondition condition,
                                                const std::vector<size_t>& lang_indices,
                                                int pairs_per_language) {
  const auto& sp = wb.spec;
  std::vector<TransferItem> items;
  if (condition == DataCondition::english_only) return items;

  for (const size_t li : lang_indices) {
    LanguageBench& lang = wb.languages[li];
    std::vector<SentencePair> selected;
    const PriorCounts* fwd_prior = nullptr;
    const PriorCounts* rev_prior = nullptr;

    auto take_slice = [&](size_t begin, size_t avail, const char* what) {
      if (static_cast<size_t>(pairs_per_language) > avail)
        throw std::runtime_error(std::string("insufficient ") + what + " pool for language " +
                                 lang.lang_id + ": need " + std::to_string(pairs_per_language) +
                                 ", have " + std::to_string(avail));
      for (size_t i = 0; i < static_cast<size_t>(pairs_per_language); ++i)
        selected.push_back(lang.corpus.pairs[begin + i]);
    };

    switch (condition) {
      case DataCondition::task_mt:
        take_slice(wb.slices.task_train, wb.slices.task_train_n, "task");
        break;
      case DataCondition::caption_mt:
        take_slice(wb.slices.caption, wb.slices.caption_n, "caption");
        break;
      case DataCondition::generic: {
        build_pool(wb, lang);
        if (lang.pool.size() < static_cast<size_t>(pairs_per_language))
          throw std::runtime_error("insufficient generic pool for language " + lang.lang_id +
                                   ": need " + std::to_string(pairs_per_language) + ", have " +
                                   std::to_string(lang.pool.size()));
        Rng rng(fnv1a_str("generic:" + lang.lang_id) ^ sp.seed);
        std::vector<size_t> idx(lang.pool.size());
        std::iota(idx.begin(), idx.end(), size_t{0});
        rng.shuffle(idx);
        for (int i = 0; i < pairs_per_language; ++i)
          selected.emplace_back(lang.pool[idx[static_cast<size_t>(i)]].source,
                                lang.pool[idx[static_cast<size_t>(i)]].target);
        fwd_prior = &lang.pool_fwd_prior;
        rev_prior = &lang.pool_rev_prior;
        break;
      }
      case DataCondition::caption_like: {
        build_pool(wb, lang);
        const auto shortlist =
            select_caption_like(lang.pool, wb.caption_clf, 2 * pairs_per_language);
        const auto chosen = filter_by_similarity(
            shortlist, [](const std::string&, const std::string& w) { return embed_word(w); },
            pairs_per_language);
        if (chosen.size() < static_cast<size_t>(pairs_per_language))
          throw std::runtime_error("insufficient caption-like pool for language " + lang.lang_id +
                                   ": need " + std::to_string(pairs_per_language) + ", have " +
                                   std::to_string(chosen.size()));
        for (const auto& p : chosen) selected.emplace_back(p.source, p.target);
        fwd_prior = &lang.pool_fwd_prior;
        rev_prior = &lang.pool_rev_prior;
        break;
      }
      default:
        break;
    }

    const auto links = align_pairs(selected, sp.em_iterations, fwd_prior, rev_prior,
                                   sp.symmetrization, sp.workers);
    for (size_t n = 0; n < selected.size(); ++n)
      items.push_back(make_pair_item(wb, selected[n], links[n]));
  }
  return items;
}

std::vector<std::vector<double>> pooled_teacher_features(const ExperimentWorkbench& wb,
                                                         const std::vector<std::string>& sents) {
  const int k_last = wb.spec.encoder.num_layers;
  std::vector<std::vector<double>> feats;
  feats.reserve(sents.size());
  for (const auto& s : sents) {
    const auto tok = encode(wb.teacher_vocab, s);
    feats.push_back(mean_pool(forward(wb.teacher, tok.token_ids), k_last));
  }
  return feats;
}

ExperimentWorkbench prepare_experiment_impl(const ExperimentSpec& spec) {
  ExperimentWorkbench wb;
  wb.spec = spec;

  stage("corpora", "seed=" + std::to_string(spec.seed), [&] {
    wb.corpora = make_synthetic_english(fnv1a_str("corpora") ^ spec.seed, spec.corpus_sizes);
    return 0;
  });

  // unified English list: [task_train][task_heldout][caption][generic]
  wb.all_english = wb.corpora.task_train;
  wb.slices.task_train = 0;
  wb.slices.task_train_n = wb.corpora.task_train.size();
  wb.slices.task_heldout = wb.all_english.size();
  wb.all_english.insert(wb.all_english.end(), wb.corpora.task_heldout.begin(),
                        wb.corpora.task_heldout.end());
  wb.slices.task_heldout_n = wb.corpora.task_heldout.size();
  wb.slices.caption = wb.all_english.size();
  wb.all_english.insert(wb.all_english.end(), wb.corpora.caption.begin(),
                        wb.corpora.caption.end());
  wb.slices.caption_n = wb.corpora.caption.size();
  wb.slices.generic = wb.all_english.size();
  wb.all_english.insert(wb.all_english.end(), wb.corpora.generic.begin(),
                        wb.corpora.generic.end());
  wb.slices.generic_n = wb.corpora.generic.size();

  const int max_langs = std::max(
      spec.num_languages,
      spec.kind == ExperimentKind::num_languages
          ? *std::max_element(spec.language_counts.begin(), spec.language_counts.end())
          : 0);

  stage("cipher", "languages=" + std::to_string(max_langs), [&] {
    CipherRegistry registry;
    const Permutation perms[] = {Permutation::identity, Permutation::reversal,
                                 Permutation::local_swaps};
    for (int l = 0; l < max_langs; ++l) {
      CipherSpec cs;
      cs.lang_id = "l" + std::to_string(l);
      cs.perm = perms[l % 3];
      cs.seed = fnv1a_str(cs.lang_id) ^ spec.seed;
      LanguageBench lb;
      lb.lang_id = cs.lang_id;
      lb.corpus = make_cipher_language(wb.all_english, cs, &registry);
      wb.languages.push_back(std::move(lb));
    }
    return 0;
  });

  stage("tokenizer", "vocab=" + std::to_string(spec.teacher_vocab_size), [&] {
    wb.teacher_vocab = train_bpe(wb.all_english, spec.teacher_vocab_size);
    std::vector<std::string> student_corpus = wb.all_english;
    for (const auto& lang : wb.languages)
      for (const auto& [eng, cip] : lang.corpus.pairs) student_corpus.push_back(cip);
    wb.student_vocab = train_bpe(student_corpus, spec.student_vocab_size);
    return 0;
  });

  EncoderConfig tc = spec.encoder;
  tc.vocab_size = wb.teacher_vocab.size();
  tc.seed = fnv1a_str("teacher") ^ spec.seed;
  wb.teacher = init_params(tc);
  EncoderConfig sc = spec.encoder;
  sc.vocab_size = wb.student_vocab.size();
  sc.seed = fnv1a_str("student") ^ spec.seed;
  wb.student_init = init_params(sc);

  stage("probe", "task_train=" + std::to_string(wb.slices.task_train_n), [&] {
    const size_t n = std::min<size_t>(wb.corpora.task_train.size(), 1500);
    std::vector<std::string> sents(wb.corpora.task_train.begin(),
                                   wb.corpora.task_train.begin() + static_cast<long>(n));
    std::vector<int> labels(wb.corpora.task_train_labels.begin(),
                            wb.corpora.task_train_labels.begin() + static_cast<long>(n));
    const auto feats = pooled_teacher_features(wb, sents);
    wb.probe = train_probe(feats, labels, 400, 1.0);
    const auto held_feats = pooled_teacher_features(wb, wb.corpora.task_heldout);
    wb.teacher_probe_accuracy =
        probe_accuracy(wb.probe, held_feats, wb.corpora.task_heldout_labels);
    return 0;
  });

  stage("filter", "classifier", [&] {
    const auto trained = train_caption_classifier(wb.corpora.caption, wb.corpora.generic,
                                                  spec.classifier_steps, spec.classifier_lr,
                                                  fnv1a_str("captionclf") ^ spec.seed);
    wb.caption_clf = trained.clf;
    wb.caption_clf_f1 = trained.heldout_f1;
    return 0;
  });

  stage("identity_items", "english=" + std::to_string(spec.english_sentences), [&] {
    const size_t n = std::min<size_t>(wb.corpora.task_train.size(),
                                      static_cast<size_t>(std::max(spec.english_sentences, 0)));
    for (size_t i = 0; i < n; ++i)
      wb.english_items.push_back(make_identity_item(wb, wb.corpora.task_train[i]));
    for (const auto& s : wb.corpora.task_heldout)
      wb.english_heldout_items.push_back(make_identity_item(wb, s));
    return 0;
  });

  stage("heldout_items", "langs=" + std::to_string(wb.languages.size()), [&] {
    wb.heldout_per_lang.resize(wb.languages.size());
    for (size_t li = 0; li < wb.languages.size(); ++li) {
      const auto& lang = wb.languages[li];
      for (size_t i = 0; i < wb.slices.task_heldout_n; ++i) {
        const size_t idx = wb.slices.task_heldout + i;
        wb.heldout_per_lang[li].push_back(
            make_pair_item(wb, lang.corpus.pairs[idx], lang.corpus.gold_word_links[idx]));
      }
    }
    return 0;
  });

  return wb;
}

struct RowOutcome {
  ConditionReport report;
  EncoderParams student;
  ProjectionHeads heads;
};

RowOutcome run_row(ExperimentWorkbench& wb, const std::string& row_name, DataCondition condition,
                   const std::vector<size_t>& lang_indices, const TransferConfig& cfg,
                   const std::string& out_dir) {
  const auto& sp = wb.spec;
  RowOutcome out;
  out.report.name = row_name;
  out.report.teacher_probe_accuracy = wb.teacher_probe_accuracy;

  std::vector<TransferItem> bilingual = stage("condition_data", row_name, [&] {
    return build_condition_items_impl(wb, condition, lang_indices, sp.pairs_per_language);
  });

  out.student = wb.student_init;
  out.heads = init_heads(out.student.config, cfg, fnv1a_str("heads:" + row_name) ^ sp.seed);
  out.report.head_parameters = out.heads.parameter_count();

  const std::string row_dir = out_dir + "/" + row_name;
  std::filesystem::create_directories(row_dir);
  std::ofstream log(row_dir + "/train_log.jsonl", std::ios::binary);

  TransferConfig row_cfg = cfg;
  row_cfg.seed = fnv1a_str("train:" + row_name) ^ sp.seed;
  const TrainResult tr = stage("transfer", row_name, [&] {
    return train_transfer(wb.teacher, out.student, out.heads, wb.english_items, bilingual,
                          row_cfg, &log, sp.workers);
  });
  out.report.first_epoch_loss = tr.epoch_losses.front().total;
  out.report.final_epoch_loss = tr.epoch_losses.back().total;

  stage("eval", row_name, [&] {
    // English retention via the student
    std::vector<std::vector<double>> student_en_feats;
    for (const auto& item : wb.english_heldout_items) {
      const auto projected = swap_and_encode(out.student, out.heads, item.student_tok);
      student_en_feats.push_back(column_mean(projected.back()));
    }
    out.report.english_retention =
        probe_accuracy(wb.probe, student_en_feats, wb.corpora.task_heldout_labels);
    out.report.english_teacher_mse =
        eval_teacher_mse(out.student, out.heads, wb.teacher, wb.english_heldout_items, row_cfg);

    double r_sum = 0.0, p_sum = 0.0;
    for (const size_t li : lang_indices) {
      LanguageMetrics lm;
      lm.lang = wb.languages[li].lang_id;
      lm.retrieval_accuracy = eval_retrieval(out.student, out.heads, wb.teacher,
                                             wb.heldout_per_lang[li], sp.retrieval_candidates);
      std::vector<std::vector<double>> feats;
      for (const auto& item : wb.heldout_per_lang[li]) {
        const auto projected = swap_and_encode(out.student, out.heads, item.student_tok);
        feats.push_back(column_mean(projected.back()));
      }
      lm.proxy_accuracy = probe_accuracy(wb.probe, feats, wb.corpora.task_heldout_labels);
      lm.teacher_mse_per_layer = eval_teacher_mse(out.student, out.heads, wb.teacher,
                                                  wb.heldout_per_lang[li], row_cfg);
      r_sum += lm.retrieval_accuracy;
      p_sum += lm.proxy_accuracy;
      out.report.languages.push_back(std::move(lm));
    }
    if (!lang_indices.empty()) {
      out.report.retrieval_avg = r_sum / static_cast<double>(lang_indices.size());
      out.report.proxy_avg = p_sum / static_cast<double>(lang_indices.size());
    }
    return 0;
  });

  stage("persist", row_name, [&] {
    save_checkpoint(row_dir + "/student.ckpt", out.student, &out.heads.block);
    return 0;
  });
  return out;
}

}  // namespace

ExperimentWorkbench prepare_experiment(const ExperimentSpec& spec) {
  return prepare_experiment_impl(spec);
}

std::vector<TransferItem> build_condition_items(ExperimentWorkbench& wb, DataCondition condition,
                                                const std::vector<size_t>& lang_indices,
                                                int pairs_per_language) {
  return build_condition_items_impl(wb, condition, lang_indices, pairs_per_language);
}

MetricsReport run_experiment(const ExperimentSpec& spec, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  ExperimentWorkbench wb = prepare_experiment_impl(spec);

  MetricsReport report;
  report.experiment = to_string(spec.kind);
  report.seed = spec.seed;

  std::vector<size_t> base_langs;
  for (int l = 0; l < spec.num_languages; ++l) base_langs.push_back(static_cast<size_t>(l));

  switch (spec.kind) {
    case ExperimentKind::data_type: {
      std::vector<DataCondition> conditions = spec.conditions;
      if (conditions.empty())
        conditions = {DataCondition::english_only, DataCondition::task_mt,
                      DataCondition::caption_mt, DataCondition::generic,
                      DataCondition::caption_like};
      for (const DataCondition c : conditions) {
        auto row = run_row(wb, to_string(c), c, base_langs, spec.transfer, out_dir);
        report.rows.push_back(std::move(row.report));
      }
      break;
    }
    case ExperimentKind::num_languages: {
      for (const int count : spec.language_counts) {
        std::vector<size_t> langs;
        for (int l = 0; l < count; ++l) langs.push_back(static_cast<size_t>(l));
        auto row = run_row(wb, "langs_" + std::to_string(count), DataCondition::caption_like,
                           langs, spec.transfer, out_dir);
        report.rows.push_back(std::move(row.report));
      }
      break;
    }
    case ExperimentKind::bilingual_vs_multilingual: {
      for (const size_t li : base_langs) {
        TransferConfig cfg = spec.transfer;
        cfg.epochs = spec.bilingual_epochs;
        auto row = run_row(wb, "bilingual_" + wb.languages[li].lang_id,
                           DataCondition::caption_like, {li}, cfg, out_dir);
        // zero-shot evaluation on the remaining languages
        auto& rep = row.report;
        for (const size_t lj : base_langs) {
          if (lj == li) continue;
          LanguageMetrics lm;
          lm.lang = wb.languages[lj].lang_id;
          lm.retrieval_accuracy = eval_retrieval(row.student, row.heads, wb.teacher,
                                                 wb.heldout_per_lang[lj],
                                                 spec.retrieval_candidates);
          std::vector<std::vector<double>> feats;
          for (const auto& item : wb.heldout_per_lang[lj]) {
            const auto projected = swap_and_encode(row.student, row.heads, item.student_tok);
            feats.push_back(column_mean(projected.back()));
          }
          lm.proxy_accuracy = probe_accuracy(wb.probe, feats, wb.corpora.task_heldout_labels);
          lm.teacher_mse_per_layer = eval_teacher_mse(row.student, row.heads, wb.teacher,
                                                      wb.heldout_per_lang[lj], spec.transfer);
          rep.languages.push_back(std::move(lm));
        }
        std::sort(rep.languages.begin(), rep.languages.end(),
                  [](const LanguageMetrics& a, const LanguageMetrics& b) { return a.lang < b.lang; });
        double r = 0.0, p = 0.0;
        for (const auto& lm : rep.languages) {
          r += lm.retrieval_accuracy;
          p += lm.proxy_accuracy;
        }
        rep.retrieval_avg = r / static_cast<double>(rep.languages.size());
        rep.proxy_avg = p / static_cast<double>(rep.languages.size());
        report.rows.push_back(std::move(rep));
      }
      auto multi = run_row(wb, "multilingual", DataCondition::caption_like, base_langs,
                           spec.transfer, out_dir);
      report.rows.push_back(std::move(multi.report));
      break;
    }
    case ExperimentKind::architecture_ablation: {
      struct AblationRow {
        const char* name;
        LossVariant loss;
        InputVariant input;
        ProjectionVariant proj;
      };
      const AblationRow rows[] = {
          {"exp0_full", LossVariant::align_plus_mean, InputVariant::weighted_layers,
           ProjectionVariant::bottleneck},
          {"exp1_align_only", LossVariant::align_only, InputVariant::weighted_layers,
           ProjectionVariant::bottleneck},
          {"exp2_linear", LossVariant::align_plus_mean, InputVariant::weighted_layers,
           ProjectionVariant::linear},
          {"exp3_last_layer", LossVariant::align_plus_mean, InputVariant::last_layer,
           ProjectionVariant::bottleneck},
          {"exp4_identity", LossVariant::align_plus_mean, InputVariant::last_layer,
           ProjectionVariant::identity},
      };
      for (const auto& r : rows) {
        TransferConfig cfg = spec.transfer;
        cfg.loss_variant = r.loss;
        cfg.input_variant = r.input;
        cfg.projection_variant = r.proj;
        auto row = run_row(wb, r.name, DataCondition::task_mt, base_langs, cfg, out_dir);
        report.rows.push_back(std::move(row.report));
      }
      break;
    }
  }

  save_checkpoint(out_dir + "/teacher.ckpt", wb.teacher);
  save_vocabulary(wb.teacher_vocab, out_dir + "/vocab_teacher.txt");
  save_vocabulary(wb.student_vocab, out_dir + "/vocab_student.txt");
  save_metrics_json(report, out_dir + "/metrics.json");
  save_report_tsv(report, out_dir + "/report.tsv");
  return report;
}

void save_metrics_json(const MetricsReport& report, const std::string& path) {
  ordered_json j;
  j["experiment"] = report.experiment;
  j["seed"] = report.seed;
  j["rows"] = ordered_json::array();
  for (const auto& row : report.rows) {
    ordered_json r;
    r["name"] = row.name;
    r["english_retention"] = row.english_retention;
    r["teacher_probe_accuracy"] = row.teacher_probe_accuracy;
    r["english_teacher_mse"] = row.english_teacher_mse;
    r["first_epoch_loss"] = row.first_epoch_loss;
    r["final_epoch_loss"] = row.final_epoch_loss;
    r["head_parameters"] = row.head_parameters;
    r["retrieval_avg"] = row.retrieval_avg;
    r["proxy_avg"] = row.proxy_avg;
    r["languages"] = ordered_json::array();
    for (const auto& lm : row.languages) {
      ordered_json l;
      l["lang"] = lm.lang;
      l["retrieval"] = lm.retrieval_accuracy;
      l["proxy"] = lm.proxy_accuracy;
      l["teacher_mse"] = lm.teacher_mse_per_layer;
      r["languages"].push_back(std::move(l));
    }
    j["rows"].push_back(std::move(r));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write metrics file: " + path);
  f << j.dump(2) << "\n";
}

void save_report_tsv(const MetricsReport& report, const std::string& path) {
  // column set: union of language tags over rows, sorted
  std::vector<std::string> langs;
  for (const auto& row : report.rows)
    for (const auto& lm : row.languages)
      if (std::find(langs.begin(), langs.end(), lm.lang) == langs.end()) langs.push_back(lm.lang);
  std::sort(langs.begin(), langs.end());

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write report file: " + path);
  f << "row\ten";
  for (const auto& l : langs) f << "\t" << l;
  f << "\tavg\n";
  char buf[32];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return std::string(buf);
  };
  for (const auto& row : report.rows) {
    f << row.name << "\t" << fmt(row.english_retention);
    for (const auto& l : langs) {
      const auto it = std::find_if(row.languages.begin(), row.languages.end(),
                                   [&](const LanguageMetrics& lm) { return lm.lang == l; });
      f << "\t" << (it == row.languages.end() ? std::string("-") : fmt(it->proxy_accuracy));
    }
    f << "\t" << fmt(row.proxy_avg) << "\n";
  }
}

}  // namespace xlt
