// Command-line front end for the cross-lingual encoder transfer lab.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xlt/align.hpp"
#include "xlt/bpe.hpp"
#include "xlt/cipher.hpp"
#include "xlt/config.hpp"
#include "xlt/encoder.hpp"
#include "xlt/experiment.hpp"
#include "xlt/filter.hpp"
#include "xlt/rng.hpp"
#include "xlt/transfer.hpp"

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open file: " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

xlt::AlignmentLinkSet transpose_links(const xlt::AlignmentLinkSet& in) {
  xlt::AlignmentLinkSet out;
  out.src_len = in.tgt_len;
  out.tgt_len = in.src_len;
  for (const auto& [i, j] : in.links) out.links.insert({j, i});
  return out;
}

xlt::Symmetrization symmetrization_from_string(const std::string& s) {
  if (s == "grow_diag") return xlt::Symmetrization::grow_diag;
  if (s == "intersection") return xlt::Symmetrization::intersection;
  if (s == "union") return xlt::Symmetrization::union_all;
  throw std::runtime_error("unknown symmetrization: " + s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-lingual encoder transfer lab"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  uint64_t seed = 1234;
  bool seed_given = false;
  int workers = 0;
  app.add_option("--config", config_path, "key=value config file")->expected(1);
  app.add_option("--seed", seed, "run seed")->each([&](const std::string&) { seed_given = true; });
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--workers", workers, "worker thread count (0 = config/default)");

  // tokenize-train
  auto* tok_cmd = app.add_subcommand("tokenize-train", "train a BPE vocabulary");
  std::string tok_corpus;
  int tok_vocab_size = 512;
  tok_cmd->add_option("--corpus", tok_corpus, "corpus file, one sentence per line")->required();
  tok_cmd->add_option("--vocab-size", tok_vocab_size, "target vocabulary size");

  // cipher-gen
  auto* cipher_cmd = app.add_subcommand("cipher-gen", "generate a cipher-language parallel corpus");
  std::string cipher_corpus, cipher_lang = "l0", cipher_perm = "identity";
  cipher_cmd->add_option("--corpus", cipher_corpus, "English corpus file")->required();
  cipher_cmd->add_option("--lang", cipher_lang, "language id");
  cipher_cmd->add_option("--perm", cipher_perm, "identity | reversal | local_swaps");

  // align
  auto* align_cmd = app.add_subcommand("align", "EM-align a pair file and emit Pharaoh links");
  std::string align_pairs_path, align_pool_path, align_sym = "grow_diag";
  int align_iters = 5;
  double align_prior_strength = 1.0;
  align_cmd->add_option("--pairs", align_pairs_path, "TSV pair file (source\\ttarget\\tlang)")
      ->required();
  align_cmd->add_option("--pool", align_pool_path, "optional pool TSV for prior training");
  align_cmd->add_option("--em-iterations", align_iters, "EM iterations");
  align_cmd->add_option("--prior-strength", align_prior_strength, "pool prior strength");
  align_cmd->add_option("--symmetrization", align_sym, "grow_diag | intersection | union");

  // filter
  auto* filter_cmd = app.add_subcommand("filter", "caption-likeness + similarity pair selection");
  std::string filter_pool, filter_pos, filter_neg;
  int filter_k = 100, filter_steps = 150;
  double filter_lr = 2.0;
  filter_cmd->add_option("--pool", filter_pool, "candidate pair TSV")->required();
  filter_cmd->add_option("--positives", filter_pos, "caption-style sentences")->required();
  filter_cmd->add_option("--negatives", filter_neg, "generic sentences")->required();
  filter_cmd->add_option("--k", filter_k, "pairs to keep per language");
  filter_cmd->add_option("--classifier-steps", filter_steps, "training steps");
  filter_cmd->add_option("--classifier-lr", filter_lr, "training learning rate");

  // transfer
  auto* transfer_cmd =
      app.add_subcommand("transfer", "train a student encoder on explicit corpora");
  std::string transfer_english, transfer_pairs;
  transfer_cmd->add_option("--english", transfer_english, "English corpus (identity stream)")
      ->required();
  transfer_cmd->add_option("--pairs", transfer_pairs, "bilingual pair TSV");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained student against the teacher");
  std::string eval_student, eval_teacher, eval_tvocab, eval_svocab, eval_pairs;
  int eval_n = 100;
  eval_cmd->add_option("--student", eval_student, "student checkpoint (with heads)")->required();
  eval_cmd->add_option("--teacher", eval_teacher, "teacher checkpoint")->required();
  eval_cmd->add_option("--teacher-vocab", eval_tvocab, "teacher vocabulary file")->required();
  eval_cmd->add_option("--student-vocab", eval_svocab, "student vocabulary file")->required();
  eval_cmd->add_option("--pairs", eval_pairs, "held-out pair TSV")->required();
  eval_cmd->add_option("--candidates", eval_n, "retrieval candidate count");

  // experiment
  auto* exp_cmd = app.add_subcommand("experiment", "run a full experiment from a config");

  CLI11_PARSE(app, argc, argv);

  try {
    std::filesystem::create_directories(out_dir);
    xlt::KeyValueConfig cfg;
    if (!config_path.empty()) cfg = xlt::KeyValueConfig::parse_file(config_path);
    if (seed_given) cfg.set("seed", std::to_string(seed));
    if (workers > 0) cfg.set("workers", std::to_string(workers));

    if (*tok_cmd) {
      const auto vocab = xlt::train_bpe(read_lines(tok_corpus), tok_vocab_size);
      xlt::save_vocabulary(vocab, out_dir + "/vocab.txt");
      std::cout << "vocabulary size " << vocab.size() << " (" << vocab.merges.size()
                << " merges) -> " << out_dir << "/vocab.txt\n";
    } else if (*cipher_cmd) {
      xlt::CipherSpec spec;
      spec.lang_id = cipher_lang;
      spec.perm = xlt::permutation_from_string(cipher_perm);
      spec.seed = seed;
      const auto corpus = xlt::make_cipher_language(read_lines(cipher_corpus), spec);
      std::ofstream pairs(out_dir + "/pairs.tsv", std::ios::binary);
      std::ofstream gold(out_dir + "/gold_alignments.txt", std::ios::binary);
      for (size_t i = 0; i < corpus.pairs.size(); ++i) {
        pairs << corpus.pairs[i].first << "\t" << corpus.pairs[i].second << "\t" << cipher_lang
              << "\n";
        gold << xlt::to_pharaoh(corpus.gold_word_links[i]) << "\n";
      }
      std::cout << corpus.pairs.size() << " pairs -> " << out_dir << "/pairs.tsv\n";
    } else if (*align_cmd) {
      const auto pool_pairs = xlt::load_pair_pool(align_pairs_path);
      std::vector<xlt::SentencePair> pairs, swapped;
      for (const auto& p : pool_pairs) {
        pairs.emplace_back(p.source, p.target);
        swapped.emplace_back(p.target, p.source);
      }
      xlt::PriorCounts fwd_prior, rev_prior;
      const xlt::PriorCounts *fp = nullptr, *rp = nullptr;
      if (!align_pool_path.empty()) {
        const auto prior_pool = xlt::load_pair_pool(align_pool_path);
        std::vector<xlt::SentencePair> pp, ps;
        for (const auto& p : prior_pool) {
          pp.emplace_back(p.source, p.target);
          ps.emplace_back(p.target, p.source);
        }
        fwd_prior = xlt::derive_priors(xlt::em_train(pp, align_iters), align_prior_strength);
        rev_prior = xlt::derive_priors(xlt::em_train(ps, align_iters), align_prior_strength);
        fp = &fwd_prior;
        rp = &rev_prior;
      }
      const auto fwd = xlt::em_train(pairs, align_iters, fp);
      const auto rev = xlt::em_train(swapped, align_iters, rp);
      const auto mode = symmetrization_from_string(align_sym);
      std::ofstream alignments(out_dir + "/alignments.txt", std::ios::binary);
      for (size_t n = 0; n < pairs.size(); ++n) {
        const auto f = xlt::viterbi_align(fwd, pairs[n]);
        const auto r = transpose_links(xlt::viterbi_align(rev, swapped[n]));
        alignments << xlt::to_pharaoh(xlt::symmetrize(f, r, mode)) << "\n";
      }
      xlt::save_translation_table(fwd, out_dir + "/ttable_fwd.txt");
      xlt::save_translation_table(rev, out_dir + "/ttable_rev.txt");
      std::cout << pairs.size() << " alignments -> " << out_dir << "/alignments.txt\n";
    } else if (*filter_cmd) {
      const auto pool = xlt::load_pair_pool(filter_pool);
      const auto trained = xlt::train_caption_classifier(read_lines(filter_pos),
                                                         read_lines(filter_neg), filter_steps,
                                                         filter_lr, seed);
      std::cout << "classifier held-out F1 " << trained.heldout_f1 << "\n";
      const auto shortlist = xlt::select_caption_like(pool, trained.clf, 2 * filter_k);
      const auto chosen = xlt::filter_by_similarity(
          shortlist,
          [](const std::string&, const std::string& w) {
            std::vector<double> v(16);
            xlt::Rng rng(xlt::fnv1a_str(w) ^ 0x5eed3b3d11ull);
            for (auto& x : v) x = rng.uniform(-1.0, 1.0);
            return v;
          },
          filter_k);
      xlt::save_scored_pairs(chosen, out_dir + "/selected.tsv");
      std::cout << chosen.size() << " pairs -> " << out_dir << "/selected.tsv\n";
    } else if (*transfer_cmd) {
      auto spec = xlt::spec_from_config(cfg);
      const auto english = read_lines(transfer_english);
      std::vector<xlt::SentencePair> bilingual_pairs;
      if (!transfer_pairs.empty())
        for (const auto& p : xlt::load_pair_pool(transfer_pairs))
          bilingual_pairs.emplace_back(p.source, p.target);

      std::vector<std::string> teacher_corpus = english;
      for (const auto& [e, c] : bilingual_pairs) teacher_corpus.push_back(e);
      auto student_corpus = teacher_corpus;
      for (const auto& [e, c] : bilingual_pairs) student_corpus.push_back(c);
      const auto teacher_vocab = xlt::train_bpe(teacher_corpus, spec.teacher_vocab_size);
      const auto student_vocab = xlt::train_bpe(student_corpus, spec.student_vocab_size);

      xlt::EncoderConfig tc = spec.encoder;
      tc.vocab_size = teacher_vocab.size();
      tc.seed = xlt::fnv1a_str("teacher") ^ spec.seed;
      xlt::EncoderConfig sc = spec.encoder;
      sc.vocab_size = student_vocab.size();
      sc.seed = xlt::fnv1a_str("student") ^ spec.seed;
      const auto teacher = xlt::init_params(tc);
      auto student = xlt::init_params(sc);
      auto heads = xlt::init_heads(sc, spec.transfer, xlt::fnv1a_str("heads") ^ spec.seed);

      std::vector<xlt::TransferItem> english_items, bilingual_items;
      for (const auto& s : english) {
        xlt::TransferItem item;
        item.teacher_tok = xlt::encode(teacher_vocab, s);
        item.student_tok = xlt::encode(student_vocab, s);
        const int n = static_cast<int>(xlt::split_words(s).size());
        item.links = xlt::project_to_subwords(xlt::identity_word_alignment(n), item.teacher_tok,
                                              item.student_tok);
        english_items.push_back(std::move(item));
      }
      if (!bilingual_pairs.empty()) {
        std::vector<xlt::SentencePair> swapped;
        for (const auto& [s, t] : bilingual_pairs) swapped.emplace_back(t, s);
        const auto fwd = xlt::em_train(bilingual_pairs, spec.em_iterations, nullptr, spec.workers);
        const auto rev = xlt::em_train(swapped, spec.em_iterations, nullptr, spec.workers);
        for (size_t n = 0; n < bilingual_pairs.size(); ++n) {
          const auto f = xlt::viterbi_align(fwd, bilingual_pairs[n]);
          const auto r = transpose_links(xlt::viterbi_align(rev, swapped[n]));
          xlt::TransferItem item;
          item.teacher_tok = xlt::encode(teacher_vocab, bilingual_pairs[n].first);
          item.student_tok = xlt::encode(student_vocab, bilingual_pairs[n].second);
          item.links = xlt::project_to_subwords(xlt::symmetrize(f, r, spec.symmetrization),
                                                item.teacher_tok, item.student_tok);
          bilingual_items.push_back(std::move(item));
        }
      }

      std::ofstream log(out_dir + "/train_log.jsonl", std::ios::binary);
      const auto result = xlt::train_transfer(teacher, student, heads, english_items,
                                              bilingual_items, spec.transfer, &log, spec.workers);
      xlt::save_checkpoint(out_dir + "/teacher.ckpt", teacher);
      xlt::save_checkpoint(out_dir + "/student.ckpt", student, &heads.block);
      xlt::save_vocabulary(teacher_vocab, out_dir + "/vocab_teacher.txt");
      xlt::save_vocabulary(student_vocab, out_dir + "/vocab_student.txt");
      std::cout << "trained " << result.total_steps << " steps; first epoch loss "
                << result.epoch_losses.front().total << ", final epoch loss "
                << result.epoch_losses.back().total << "\n";
    } else if (*eval_cmd) {
      xlt::ParamBlock head_block;
      const auto student = xlt::load_checkpoint(eval_student, &head_block);
      const auto teacher = xlt::load_checkpoint(eval_teacher);
      const auto teacher_vocab = xlt::load_vocabulary(eval_tvocab);
      const auto student_vocab = xlt::load_vocabulary(eval_svocab);
      auto spec = xlt::spec_from_config(cfg);
      auto heads = xlt::init_heads(student.config, spec.transfer, 0);
      if (heads.block.data.size() != head_block.data.size())
        throw std::runtime_error("head checkpoint does not match the configured head variant");
      heads.block.data = head_block.data;

      std::vector<xlt::TransferItem> items;
      for (const auto& p : xlt::load_pair_pool(eval_pairs)) {
        xlt::TransferItem item;
        item.teacher_tok = xlt::encode(teacher_vocab, p.source);
        item.student_tok = xlt::encode(student_vocab, p.target);
        items.push_back(std::move(item));
      }
      const double acc = xlt::eval_retrieval(student, heads, teacher, items, eval_n);
      const auto mse = xlt::eval_teacher_mse(student, heads, teacher, items, spec.transfer);
      std::cout << "retrieval accuracy (n=" << eval_n << "): " << acc << "\n";
      std::cout << "pooled-state mse per target layer:";
      for (double v : mse) std::cout << " " << v;
      std::cout << "\n";
    } else if (*exp_cmd) {
      const auto spec = xlt::spec_from_config(cfg);
      const auto report = xlt::run_experiment(spec, out_dir);
      std::cout << "experiment " << report.experiment << " -> " << out_dir << "/report.tsv\n";
      for (const auto& row : report.rows)
        std::cout << "  " << row.name << ": retrieval_avg=" << row.retrieval_avg
                  << " proxy_avg=" << row.proxy_avg << " retention=" << row.english_retention
                  << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
