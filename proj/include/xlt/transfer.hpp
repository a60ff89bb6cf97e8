#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "xlt/align.hpp"
#include "xlt/bpe.hpp"
#include "xlt/encoder.hpp"

namespace xlt {

enum class LossVariant { align_plus_mean, align_only };
enum class InputVariant { weighted_layers, last_layer };
enum class ProjectionVariant { bottleneck, linear, identity };
enum class DimReduction { mean_dims, sum_dims };

struct TransferConfig {
  double learning_rate = 1e-4;
  int batch_size = 128;
  int epochs = 50;
  double warmup_ratio = 0.10;
  double weight_decay = 1e-2;
  double momentum = 0.9;
  int trainable_layers = 6;
  std::vector<int> target_layers;  // teacher stack entries; empty = last K
  LossVariant loss_variant = LossVariant::align_plus_mean;
  InputVariant input_variant = InputVariant::weighted_layers;
  ProjectionVariant projection_variant = ProjectionVariant::bottleneck;
  DimReduction dim_reduction = DimReduction::mean_dims;
  uint64_t seed = 1;
};

// Learnable projection stack applied to the student's hidden states before
// comparison with the teacher: a per-target-layer softmax mixture over all
// student states feeding either a per-layer bottleneck (down-project to d/4,
// GELU, layer norm, up-project), one shared d→d linear map, or nothing.
struct ProjectionHeads {
  InputVariant input_variant = InputVariant::weighted_layers;
  ProjectionVariant projection_variant = ProjectionVariant::bottleneck;
  std::vector<int> target_layers;
  int student_depth = 0;  // number of student stack entries (layers + 1)
  int hidden_dim = 0;
  int bottleneck_dim = 0;

  ParamBlock block;
  std::vector<int> p_idx;  // mixture logits, one per target layer
  struct Bottle {
    int w_dn, b_dn, ln_g, ln_b, w_up, b_up;
  };
  std::vector<Bottle> bottles;  // per target layer (bottleneck variant)
  int lin_w = -1;
  int lin_b = -1;  // single shared map (linear variant)

  size_t parameter_count() const { return block.data.size(); }
};

// Resolves config.target_layers (empty = last clamped-K layer outputs).
std::vector<int> resolve_target_layers(const TransferConfig& cfg, int num_layers);

ProjectionHeads init_heads(const EncoderConfig& student_cfg, const TransferConfig& cfg,
                           uint64_t seed);

// Mixture weights softmax(p_k) for one target layer.
std::vector<double> mixture_weights(const ProjectionHeads& heads, int target_index);

struct HeadTape {
  std::vector<double> weights;
  Matrix mixed;
  Matrix z_dn, g_dn, ln_out;
  std::vector<double> mu, rstd;
};

// Projected student representation for target_layers[target_index].
Matrix layer_mix(const HiddenStack& student, const ProjectionHeads& heads, int target_index,
                 HeadTape* tape = nullptr);

// Propagates d(projected) back through the head; accumulates into the
// student stack gradients and the flat head gradient buffer.
void layer_mix_backward(const HiddenStack& student, const ProjectionHeads& heads,
                        int target_index, const HeadTape& tape, const Matrix& dproj,
                        std::vector<Matrix>& dstack, std::vector<double>& head_grad);

// Mean over aligned pairs of the per-dimension-reduced squared difference
// between teacher rows and projected student rows. Throws "no links" on an
// empty link set; callers skip the term instead.
double align_loss(const Matrix& teacher_states, const Matrix& projected_student,
                  const AlignmentLinkSet& links, DimReduction reduction = DimReduction::mean_dims);

// Squared difference between the two position-pooled states.
double mean_loss(const Matrix& teacher_states, const Matrix& projected_student,
                 DimReduction reduction = DimReduction::mean_dims);

struct LossBreakdown {
  std::vector<double> align_per_layer;
  std::vector<double> mean_per_layer;
  double total = 0.0;
};

LossBreakdown total_loss(const HiddenStack& teacher, const HiddenStack& student,
                         const ProjectionHeads& heads, const AlignmentLinkSet& links,
                         const TransferConfig& cfg);

// Loss plus gradients (scaled by `weight`) into the student stack gradient
// matrices and the head gradient buffer.
LossBreakdown total_loss_with_grad(const HiddenStack& teacher, const HiddenStack& student,
                                   const ProjectionHeads& heads, const AlignmentLinkSet& links,
                                   const TransferConfig& cfg, double weight,
                                   std::vector<Matrix>& dstack, std::vector<double>& head_grad);

// One training item: the same sentence pair seen by both tokenizers plus the
// subword alignment between them.
struct TransferItem {
  TokenizedSentence teacher_tok;
  TokenizedSentence student_tok;
  AlignmentLinkSet links;
};

struct TrainResult {
  std::vector<LossBreakdown> epoch_losses;  // item-weighted epoch means
  int total_steps = 0;
  int effective_trainable_layers = 0;
};

double schedule_lr(double base_lr, int step, int warmup_steps, int total_steps);

// Mini-batch SGD with momentum and decoupled weight decay over the student's
// trainable layers and all head parameters. The teacher is never updated.
// English and bilingual items are interleaved uniformly at random per epoch
// under the config seed. Emits one JSON object per step to `log` when given.
TrainResult train_transfer(const EncoderParams& teacher, EncoderParams& student,
                           ProjectionHeads& heads, const std::vector<TransferItem>& english_items,
                           const std::vector<TransferItem>& bilingual_items,
                           const TransferConfig& cfg, std::ostream* log = nullptr,
                           int workers = 1);

// Per-target-layer projected representations for a student-side sentence —
// what a downstream consumer sees after the encoder swap.
std::vector<Matrix> swap_and_encode(const EncoderParams& student, const ProjectionHeads& heads,
                                    const TokenizedSentence& tok);

const char* to_string(LossVariant v);
const char* to_string(InputVariant v);
const char* to_string(ProjectionVariant v);
LossVariant loss_variant_from_string(const std::string& s);
InputVariant input_variant_from_string(const std::string& s);
ProjectionVariant projection_variant_from_string(const std::string& s);

}  // namespace xlt
