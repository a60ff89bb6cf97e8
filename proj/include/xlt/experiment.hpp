#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xlt/align.hpp"
#include "xlt/cipher.hpp"
#include "xlt/config.hpp"
#include "xlt/encoder.hpp"
#include "xlt/filter.hpp"
#include "xlt/transfer.hpp"

namespace xlt {

enum class ExperimentKind { data_type, num_languages, bilingual_vs_multilingual, architecture_ablation };
enum class DataCondition { english_only, task_mt, caption_mt, generic, caption_like };

const char* to_string(ExperimentKind k);
const char* to_string(DataCondition c);
ExperimentKind experiment_kind_from_string(const std::string& s);
DataCondition condition_from_string(const std::string& s);

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::data_type;
  std::vector<DataCondition> conditions;  // data_type rows; empty = all five
  int num_languages = 5;
  std::vector<int> language_counts = {5, 10, 20};  // num_languages sweep
  int pairs_per_language = 5000;
  int english_sentences = 20000;  // English identity stream length
  int retrieval_candidates = 100;
  int em_iterations = 5;
  double prior_strength = 1.0;
  double pool_mismatch_fraction = 0.1;
  Symmetrization symmetrization = Symmetrization::grow_diag;
  CorpusSizes corpus_sizes;
  int teacher_vocab_size = 512;
  int student_vocab_size = 512;
  EncoderConfig encoder;  // dims shared by teacher and student; seeds derived
  TransferConfig transfer;
  int bilingual_epochs = 10;
  int classifier_steps = 150;
  double classifier_lr = 2.0;
  int workers = 1;
  uint64_t seed = 1234;
};

// Reads a spec from flat key=value text; unknown keys raise.
ExperimentSpec spec_from_config(const KeyValueConfig& cfg);

struct LanguageMetrics {
  std::string lang;
  double retrieval_accuracy = 0.0;
  double proxy_accuracy = 0.0;
  std::vector<double> teacher_mse_per_layer;
};

struct ConditionReport {
  std::string name;
  std::vector<LanguageMetrics> languages;
  double english_retention = 0.0;        // probe accuracy on English via the student
  double teacher_probe_accuracy = 0.0;   // probe accuracy on the teacher itself
  std::vector<double> english_teacher_mse;  // held-out identity items, per target layer
  double first_epoch_loss = 0.0;
  double final_epoch_loss = 0.0;
  size_t head_parameters = 0;
  double retrieval_avg = 0.0;
  double proxy_avg = 0.0;
};

struct MetricsReport {
  std::string experiment;
  uint64_t seed = 0;
  std::vector<ConditionReport> rows;
};

// Linear probe over pooled hidden states (the downstream-task stand-in).
struct Probe {
  std::vector<double> weights;
  double bias = 0.0;
};

Probe train_probe(const std::vector<std::vector<double>>& features,
                  const std::vector<int>& labels, int steps, double lr);
double probe_accuracy(const Probe& probe, const std::vector<std::vector<double>>& features,
                      const std::vector<int>& labels);

// Nearest-cosine retrieval of the true English sentence among n candidates,
// comparing the student's pooled final projected states against the
// teacher's pooled states.
double eval_retrieval(const EncoderParams& student, const ProjectionHeads& heads,
                      const EncoderParams& teacher,
                      const std::vector<TransferItem>& heldout_items, int n);

// Mean per-target-layer loss components (alignment + pooled) over held-out
// items; no gradients.
std::vector<double> eval_teacher_mse(const EncoderParams& student, const ProjectionHeads& heads,
                                     const EncoderParams& teacher,
                                     const std::vector<TransferItem>& items,
                                     const TransferConfig& cfg);

// Offsets of the four synthetic English corpora inside the unified sentence
// list (task train, task held-out, caption, generic).
struct CorpusSlices {
  size_t task_train = 0, task_heldout = 0, caption = 0, generic = 0;
  size_t task_train_n = 0, task_heldout_n = 0, caption_n = 0, generic_n = 0;
};

struct LanguageBench {
  std::string lang_id;
  ParallelCorpus corpus;  // over the unified English sentence list
  std::vector<ScoredPair> pool;
  PriorCounts pool_fwd_prior, pool_rev_prior;
  bool pool_ready = false;
};

// Everything shared across experiment rows: corpora, cipher languages,
// tokenizers, frozen teacher, initial student, probe, caption classifier and
// prebuilt identity/held-out items.
struct ExperimentWorkbench {
  ExperimentSpec spec;
  SyntheticCorpora corpora;
  std::vector<std::string> all_english;
  CorpusSlices slices;
  std::vector<LanguageBench> languages;
  Vocabulary teacher_vocab, student_vocab;
  EncoderParams teacher;
  EncoderParams student_init;
  Probe probe;
  double teacher_probe_accuracy = 0.0;
  CaptionClassifier caption_clf;
  double caption_clf_f1 = 0.0;
  std::vector<TransferItem> english_items;
  std::vector<TransferItem> english_heldout_items;
  std::vector<std::vector<TransferItem>> heldout_per_lang;
};

ExperimentWorkbench prepare_experiment(const ExperimentSpec& spec);

// Bilingual training items for one data condition (k pairs per language);
// english_only yields none. Every condition additionally trains on the
// workbench's English identity stream. Pool-sourced conditions (generic,
// caption_like) are aligned with EM under pool-derived priors.
std::vector<TransferItem> build_condition_items(ExperimentWorkbench& wb, DataCondition condition,
                                                const std::vector<size_t>& lang_indices,
                                                int pairs_per_language);

// Runs the experiment end to end: synthetic corpora, cipher languages,
// tokenizers, alignment (EM with pool priors where the data comes from a
// pool), filtering, transfer training, evaluation; persists checkpoints,
// training logs, metrics.json and report.tsv under out_dir.
MetricsReport run_experiment(const ExperimentSpec& spec, const std::string& out_dir);

void save_metrics_json(const MetricsReport& report, const std::string& path);
void save_report_tsv(const MetricsReport& report, const std::string& path);

}  // namespace xlt
