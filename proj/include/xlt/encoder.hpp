#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "xlt/matrix.hpp"

namespace xlt {

struct EncoderConfig {
  int vocab_size = 512;
  int hidden_dim = 32;
  int num_layers = 4;
  int num_heads = 4;
  int ffn_dim = 64;
  int max_positions = 64;
  uint64_t seed = 1;
};

struct TensorSpec {
  std::string name;
  std::vector<int> shape;
  size_t offset = 0;

  size_t numel() const {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
  }
};

// Flat parameter storage with a named-tensor manifest. The manifest order is
// the initialization order and the checkpoint serialization order.
struct ParamBlock {
  std::vector<TensorSpec> manifest;
  std::vector<double> data;

  int add(const std::string& name, std::vector<int> shape) {
    TensorSpec spec{name, std::move(shape), data.size()};
    data.resize(data.size() + spec.numel(), 0.0);
    manifest.push_back(std::move(spec));
    return static_cast<int>(manifest.size()) - 1;
  }
  std::span<double> view(int idx) {
    const auto& t = manifest[static_cast<size_t>(idx)];
    return {data.data() + t.offset, t.numel()};
  }
  std::span<const double> view(int idx) const {
    const auto& t = manifest[static_cast<size_t>(idx)];
    return {data.data() + t.offset, t.numel()};
  }
  int find(const std::string& name) const {
    for (size_t i = 0; i < manifest.size(); ++i)
      if (manifest[i].name == name) return static_cast<int>(i);
    return -1;
  }
};

struct EncoderLayout {
  int tok_emb = -1;
  int pos_emb = -1;
  struct Layer {
    int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  std::vector<Layer> layers;
};

struct EncoderParams {
  EncoderConfig config;
  ParamBlock block;
  EncoderLayout layout;
};

// Embedding output plus every layer output: num_layers + 1 matrices, each
// T×hidden_dim.
struct HiddenStack {
  std::vector<Matrix> states;

  const Matrix& layer(int k) const { return states[static_cast<size_t>(k)]; }
  int depth() const { return static_cast<int>(states.size()); }
};

// Saved intermediates of one forward pass, consumed by backward.
struct ForwardTape {
  struct Layer {
    std::vector<double> mu1, rstd1, mu2, rstd2;
    Matrix u;                 // post first layer norm
    Matrix q, k, v;           // attention projections
    std::vector<Matrix> att;  // per-head softmax probabilities, T×T
    Matrix ctx;               // concatenated head outputs
    Matrix h_mid;             // after attention residual
    Matrix vnorm;             // post second layer norm
    Matrix z1;                // feed-forward pre-activation
    Matrix g1;                // gelu(z1)
  };
  std::vector<Layer> layers;
};

double gelu(double x);
double gelu_grad(double x);

// Deterministic initialization: scaled-uniform weights from the config seed,
// zero biases, unit layer-norm gains.
EncoderParams init_params(const EncoderConfig& config);

// Pre-norm transformer encoder pass. Pass a tape to enable backward.
HiddenStack forward(const EncoderParams& params, std::span<const int> token_ids,
                    ForwardTape* tape = nullptr);

// Exact reverse-mode gradients for all parameters given upstream gradients on
// any subset of the hidden stack entries (`upstream[k]` empty = zero). Adds
// into `grad`, which must be sized like params.block.data.
void backward(const EncoderParams& params, std::span<const int> token_ids,
              const HiddenStack& stack, const ForwardTape& tape,
              const std::vector<Matrix>& upstream, std::vector<double>& grad);

// Arithmetic mean over all token positions (specials included) of layer k.
std::vector<double> mean_pool(const HiddenStack& stack, int k);

// Per-tensor trainable flags for the "train the last K layers" policy.
// Embeddings stay frozen; K is clamped to the layer count (clamped_k reports
// the effective value when non-null).
std::vector<bool> make_freeze_mask(const EncoderParams& params, int trainable_layers,
                                   int* clamped_k = nullptr);

// Checkpoint text header + little-endian float32 blobs.
void write_param_section(std::ostream& os, const ParamBlock& block, const std::string& label);
ParamBlock read_param_section(std::istream& is, const std::string& expected_label);
void save_checkpoint(const std::string& path, const EncoderParams& params,
                     const ParamBlock* heads = nullptr);
EncoderParams load_checkpoint(const std::string& path, ParamBlock* heads = nullptr);

}  // namespace xlt
