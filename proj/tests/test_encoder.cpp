#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "oracles.hpp"
#include "xlt/encoder.hpp"
#include "xlt/rng.hpp"

using namespace xlt;

namespace {

EncoderConfig tiny_config(uint64_t seed = 3) {
  EncoderConfig c;
  c.vocab_size = 12;
  c.hidden_dim = 8;
  c.num_layers = 2;
  c.num_heads = 2;
  c.ffn_dim = 16;
  c.max_positions = 8;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("parameter initialization is deterministic") {
  const auto a = init_params(tiny_config(5));
  const auto b = init_params(tiny_config(5));
  CHECK(a.block.data == b.block.data);
  const auto c = init_params(tiny_config(6));
  CHECK(a.block.data != c.block.data);
}

TEST_CASE("layer norm gains start at one, biases at zero") {
  const auto p = init_params(tiny_config());
  for (const auto& lay : p.layout.layers) {
    for (double v : p.block.view(lay.ln1_g)) CHECK(v == 1.0);
    for (double v : p.block.view(lay.ln2_g)) CHECK(v == 1.0);
    for (int idx : {lay.ln1_b, lay.ln2_b, lay.bq, lay.bk, lay.bv, lay.bo, lay.b1, lay.b2})
      for (double v : p.block.view(idx)) CHECK(v == 0.0);
  }
}

TEST_CASE("gelu uses the exact erf form") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-12));
  // derivative agrees with finite differences
  for (double x : {-2.0, -0.5, 0.0, 0.3, 1.7}) {
    const double fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
    CHECK(gelu_grad(x) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("forward produces the full hidden stack") {
  const auto p = init_params(tiny_config());
  const std::vector<int> ids{0, 3, 7, 1};
  const auto stack = forward(p, ids);
  REQUIRE(stack.depth() == p.config.num_layers + 1);
  for (const auto& m : stack.states) {
    CHECK(m.rows == 4);
    CHECK(m.cols == p.config.hidden_dim);
    for (double v : m.a) CHECK(std::isfinite(v));
  }
  // repeated call gives identical outputs
  const auto again = forward(p, ids);
  for (int k = 0; k <= p.config.num_layers; ++k) CHECK(stack.layer(k).a == again.layer(k).a);
}

TEST_CASE("forward rejects bad inputs") {
  const auto p = init_params(tiny_config());
  CHECK_THROWS_AS(forward(p, std::vector<int>{0, 99}), std::out_of_range);
  CHECK_THROWS_AS(forward(p, std::vector<int>(20, 1)), std::invalid_argument);
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  const auto p = init_params(tiny_config());
  const std::vector<int> ids{0, 3, 1};
  ForwardTape tape;
  const auto stack = forward(p, ids, &tape);
  std::vector<Matrix> upstream(stack.states.size());
  upstream.back() = Matrix(3, p.config.hidden_dim);  // zeros
  std::vector<double> grad(p.block.data.size(), 0.0);
  backward(p, ids, stack, tape, upstream, grad);
  for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("backward rejects shape mismatches") {
  const auto p = init_params(tiny_config());
  const std::vector<int> ids{0, 3, 1};
  ForwardTape tape;
  const auto stack = forward(p, ids, &tape);
  std::vector<Matrix> upstream(stack.states.size());
  upstream.back() = Matrix(2, p.config.hidden_dim);  // wrong row count
  std::vector<double> grad(p.block.data.size(), 0.0);
  CHECK_THROWS_AS(backward(p, ids, stack, tape, upstream, grad), std::invalid_argument);
}

// Analytic gradients of a squared-norm functional over several stack entries
// (embedding output included) match central finite differences for every
// parameter: embeddings, attention, feed-forward and layer norms.
TEST_CASE("backward matches finite differences") {
  auto p = init_params(tiny_config(9));
  const std::vector<int> ids{2, 5, 11};
  const std::vector<int> probed_layers{0, 1, 2};
  const std::vector<double> layer_weights{0.7, 1.3, 1.0};

  auto loss_fn = [&]() {
    const auto stack = forward(p, ids);
    double loss = 0.0;
    for (size_t n = 0; n < probed_layers.size(); ++n) {
      const auto& m = stack.layer(probed_layers[n]);
      for (double v : m.a) loss += layer_weights[n] * v * v;
    }
    return loss;
  };

  ForwardTape tape;
  const auto stack = forward(p, ids, &tape);
  std::vector<Matrix> upstream(stack.states.size());
  for (size_t n = 0; n < probed_layers.size(); ++n) {
    const auto& m = stack.layer(probed_layers[n]);
    Matrix up(m.rows, m.cols);
    for (size_t i = 0; i < m.a.size(); ++i) up.a[i] = 2.0 * layer_weights[n] * m.a[i];
    upstream[static_cast<size_t>(probed_layers[n])] = std::move(up);
  }
  std::vector<double> grad(p.block.data.size(), 0.0);
  backward(p, ids, stack, tape, upstream, grad);

  // probe every parameter of a tensor for small tensors, a strided subset of
  // the big ones; the acceptance suite covers every single parameter
  for (size_t tix = 0; tix < p.block.manifest.size(); ++tix) {
    const auto& spec = p.block.manifest[tix];
    const size_t stride = spec.numel() > 64 ? 7 : 1;
    for (size_t i = 0; i < spec.numel(); i += stride) {
      const double fd =
          oracle::central_difference(loss_fn, p.block.data[spec.offset + i], 1e-4);
      const double an = grad[spec.offset + i];
      if (std::fabs(fd) < 1e-10 && std::fabs(an) < 1e-10) continue;
      CHECK_MESSAGE(oracle::rel_error(an, fd) < 1e-4,
                    spec.name << "[" << i << "] analytic " << an << " vs fd " << fd);
    }
  }
}

TEST_CASE("mean pool") {
  HiddenStack stack;
  Matrix m(2, 2);
  m.at(0, 0) = 1.0;
  m.at(1, 1) = 1.0;
  stack.states.push_back(m);
  const auto pooled = mean_pool(stack, 0);
  CHECK(pooled[0] == doctest::Approx(0.5));
  CHECK(pooled[1] == doctest::Approx(0.5));

  Matrix one(1, 2);
  one.at(0, 0) = 3.0;
  one.at(0, 1) = -1.0;
  HiddenStack single;
  single.states.push_back(one);
  const auto p1 = mean_pool(single, 0);
  CHECK(p1[0] == 3.0);
  CHECK(p1[1] == -1.0);

  // permutation invariance over positions
  Matrix swapped(2, 2);
  swapped.at(0, 1) = 1.0;
  swapped.at(1, 0) = 1.0;
  HiddenStack s2;
  s2.states.push_back(swapped);
  const auto p2 = mean_pool(s2, 0);
  CHECK(p2[0] == pooled[0]);
  CHECK(p2[1] == pooled[1]);
}

TEST_CASE("freeze mask trains only the last K layers") {
  const auto p = init_params(tiny_config());
  int clamped = -1;
  const auto mask = make_freeze_mask(p, 6, &clamped);  // clamp: only 2 layers exist
  CHECK(clamped == 2);
  CHECK_FALSE(mask[static_cast<size_t>(p.layout.tok_emb)]);
  CHECK_FALSE(mask[static_cast<size_t>(p.layout.pos_emb)]);
  for (const auto& lay : p.layout.layers)
    CHECK(mask[static_cast<size_t>(lay.wq)]);

  const auto mask1 = make_freeze_mask(p, 1, &clamped);
  CHECK(clamped == 1);
  CHECK_FALSE(mask1[static_cast<size_t>(p.layout.layers[0].wq)]);
  CHECK(mask1[static_cast<size_t>(p.layout.layers[1].wq)]);
}

TEST_CASE("checkpoint round trip") {
  const auto p = init_params(tiny_config(21));
  ParamBlock heads;
  heads.add("head.p", {3});
  heads.data = {0.25, -1.5, 3.0};
  const std::string path = "test_encoder_ckpt.bin";
  save_checkpoint(path, p, &heads);

  ParamBlock heads_loaded;
  const auto loaded = load_checkpoint(path, &heads_loaded);
  CHECK(loaded.config.vocab_size == p.config.vocab_size);
  CHECK(loaded.config.hidden_dim == p.config.hidden_dim);
  CHECK(loaded.config.num_layers == p.config.num_layers);
  CHECK(loaded.config.seed == p.config.seed);
  REQUIRE(loaded.block.data.size() == p.block.data.size());
  for (size_t i = 0; i < p.block.data.size(); ++i)
    CHECK(loaded.block.data[i] ==
          doctest::Approx(p.block.data[i]).epsilon(1e-6));  // float32 storage
  REQUIRE(heads_loaded.manifest.size() == 1);
  CHECK(heads_loaded.manifest[0].name == "head.p");
  CHECK(heads_loaded.data[2] == doctest::Approx(3.0));
  std::remove(path.c_str());
}
