#include "xlt/encoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "xlt/rng.hpp"

namespace xlt {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

void check_config(const EncoderConfig& c) {
  if (c.vocab_size <= 0 || c.hidden_dim <= 0 || c.num_layers <= 0 || c.num_heads <= 0 ||
      c.ffn_dim <= 0 || c.max_positions <= 0)
    throw std::invalid_argument("encoder config dimensions must be positive");
  if (c.hidden_dim % c.num_heads != 0)
    throw std::invalid_argument("hidden_dim must be divisible by num_heads");
}

// y = LN(x) rows; saves mean and reciprocal stddev per row.
void layer_norm(const Matrix& x, std::span<const double> gain, std::span<const double> bias,
                Matrix& y, std::vector<double>& mu, std::vector<double>& rstd) {
  const int t = x.rows, d = x.cols;
  mu.resize(static_cast<size_t>(t));
  rstd.resize(static_cast<size_t>(t));
  for (int i = 0; i < t; ++i) {
    const double* xi = x.row(i);
    double m = 0.0;
    for (int j = 0; j < d; ++j) m += xi[j];
    m /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = xi[j] - m;
      var += c * c;
    }
    var /= d;
    const double r = 1.0 / std::sqrt(var + kLnEps);
    mu[static_cast<size_t>(i)] = m;
    rstd[static_cast<size_t>(i)] = r;
    double* yi = y.row(i);
    for (int j = 0; j < d; ++j) yi[j] = (xi[j] - m) * r * gain[static_cast<size_t>(j)] + bias[static_cast<size_t>(j)];
  }
}

// Accumulates dx, dgain, dbias for layer_norm; dy is the upstream gradient.
void layer_norm_backward(const Matrix& x, std::span<const double> gain,
                         const std::vector<double>& mu, const std::vector<double>& rstd,
                         const Matrix& dy, Matrix& dx, std::span<double> dgain,
                         std::span<double> dbias) {
  const int t = x.rows, d = x.cols;
  std::vector<double> xhat(static_cast<size_t>(d));
  std::vector<double> dxh(static_cast<size_t>(d));
  for (int i = 0; i < t; ++i) {
    const double* xi = x.row(i);
    const double* dyi = dy.row(i);
    const double m = mu[static_cast<size_t>(i)];
    const double r = rstd[static_cast<size_t>(i)];
    double mean_dxh = 0.0, mean_dxh_xhat = 0.0;
    for (int j = 0; j < d; ++j) {
      xhat[static_cast<size_t>(j)] = (xi[j] - m) * r;
      dxh[static_cast<size_t>(j)] = dyi[j] * gain[static_cast<size_t>(j)];
      dgain[static_cast<size_t>(j)] += dyi[j] * xhat[static_cast<size_t>(j)];
      dbias[static_cast<size_t>(j)] += dyi[j];
      mean_dxh += dxh[static_cast<size_t>(j)];
      mean_dxh_xhat += dxh[static_cast<size_t>(j)] * xhat[static_cast<size_t>(j)];
    }
    mean_dxh /= d;
    mean_dxh_xhat /= d;
    double* dxi = dx.row(i);
    for (int j = 0; j < d; ++j)
      dxi[j] += r * (dxh[static_cast<size_t>(j)] - mean_dxh -
                     xhat[static_cast<size_t>(j)] * mean_dxh_xhat);
  }
}

// y = x * W + b with W stored input-major (d_in × d_out)
void linear(const Matrix& x, std::span<const double> w, std::span<const double> b, Matrix& y) {
  y.zero();
  gemm_nn(x.a.data(), w.data(), y.a.data(), x.rows, x.cols, y.cols);
  for (int i = 0; i < y.rows; ++i) {
    double* yi = y.row(i);
    for (int j = 0; j < y.cols; ++j) yi[j] += b[static_cast<size_t>(j)];
  }
}

// Backward of linear: accumulates dW, db and dx (dx may be null).
void linear_backward(const Matrix& x, std::span<const double> w, const Matrix& dy,
                     std::span<double> dw, std::span<double> db, Matrix* dx) {
  gemm_tn(x.a.data(), dy.a.data(), dw.data(), x.cols, x.rows, dy.cols);
  for (int i = 0; i < dy.rows; ++i) {
    const double* dyi = dy.row(i);
    for (int j = 0; j < dy.cols; ++j) db[static_cast<size_t>(j)] += dyi[j];
  }
  if (dx) gemm_nt(dy.a.data(), w.data(), dx->a.data(), dy.rows, dy.cols, x.cols);
}

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

EncoderParams init_params(const EncoderConfig& config) {
  check_config(config);
  EncoderParams p;
  p.config = config;
  const int d = config.hidden_dim, f = config.ffn_dim;

  p.layout.tok_emb = p.block.add("tok_emb", {config.vocab_size, d});
  p.layout.pos_emb = p.block.add("pos_emb", {config.max_positions, d});
  for (int l = 0; l < config.num_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    EncoderLayout::Layer lay{};
    lay.ln1_g = p.block.add(pre + "ln1_g", {d});
    lay.ln1_b = p.block.add(pre + "ln1_b", {d});
    lay.wq = p.block.add(pre + "wq", {d, d});
    lay.bq = p.block.add(pre + "bq", {d});
    lay.wk = p.block.add(pre + "wk", {d, d});
    lay.bk = p.block.add(pre + "bk", {d});
    lay.wv = p.block.add(pre + "wv", {d, d});
    lay.bv = p.block.add(pre + "bv", {d});
    lay.wo = p.block.add(pre + "wo", {d, d});
    lay.bo = p.block.add(pre + "bo", {d});
    lay.ln2_g = p.block.add(pre + "ln2_g", {d});
    lay.ln2_b = p.block.add(pre + "ln2_b", {d});
    lay.w1 = p.block.add(pre + "w1", {d, f});
    lay.b1 = p.block.add(pre + "b1", {f});
    lay.w2 = p.block.add(pre + "w2", {f, d});
    lay.b2 = p.block.add(pre + "b2", {d});
    p.layout.layers.push_back(lay);
  }

  Rng rng(config.seed);
  auto fill_uniform = [&](int idx, int fan_in) {
    const double a = std::sqrt(3.0 / fan_in);
    for (double& v : p.block.view(idx)) v = rng.uniform(-a, a);
  };
  auto fill_const = [&](int idx, double c) {
    for (double& v : p.block.view(idx)) v = c;
  };

  fill_uniform(p.layout.tok_emb, d);
  fill_uniform(p.layout.pos_emb, d);
  for (const auto& lay : p.layout.layers) {
    fill_const(lay.ln1_g, 1.0);
    fill_uniform(lay.wq, d);
    fill_uniform(lay.wk, d);
    fill_uniform(lay.wv, d);
    fill_uniform(lay.wo, d);
    fill_const(lay.ln2_g, 1.0);
    fill_uniform(lay.w1, d);
    fill_uniform(lay.w2, f);
    // biases stay zero
  }
  return p;
}

HiddenStack forward(const EncoderParams& params, std::span<const int> token_ids,
                    ForwardTape* tape) {
  const auto& cfg = params.config;
  const int t = static_cast<int>(token_ids.size());
  const int d = cfg.hidden_dim, f = cfg.ffn_dim, heads = cfg.num_heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (t == 0) throw std::invalid_argument("empty token sequence");
  if (t > cfg.max_positions) throw std::invalid_argument("sequence length overflow");

  HiddenStack stack;
  stack.states.reserve(static_cast<size_t>(cfg.num_layers) + 1);
  Matrix h(t, d);
  const auto tok = params.block.view(params.layout.tok_emb);
  const auto pos = params.block.view(params.layout.pos_emb);
  for (int i = 0; i < t; ++i) {
    const int id = token_ids[static_cast<size_t>(i)];
    if (id < 0 || id >= cfg.vocab_size) throw std::out_of_range("token id out of range");
    double* hi = h.row(i);
    const double* e = tok.data() + static_cast<size_t>(id) * d;
    const double* q = pos.data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j) hi[j] = e[j] + q[j];
  }
  stack.states.push_back(h);
  if (tape) tape->layers.assign(static_cast<size_t>(cfg.num_layers), {});

  for (int l = 0; l < cfg.num_layers; ++l) {
    const auto& lay = params.layout.layers[static_cast<size_t>(l)];
    ForwardTape::Layer scratch;
    ForwardTape::Layer& tl = tape ? tape->layers[static_cast<size_t>(l)] : scratch;
    const Matrix& x = stack.states.back();

    tl.u = Matrix(t, d);
    layer_norm(x, params.block.view(lay.ln1_g), params.block.view(lay.ln1_b), tl.u, tl.mu1,
               tl.rstd1);

    tl.q = Matrix(t, d);
    tl.k = Matrix(t, d);
    tl.v = Matrix(t, d);
    linear(tl.u, params.block.view(lay.wq), params.block.view(lay.bq), tl.q);
    linear(tl.u, params.block.view(lay.wk), params.block.view(lay.bk), tl.k);
    linear(tl.u, params.block.view(lay.wv), params.block.view(lay.bv), tl.v);

    tl.ctx = Matrix(t, d);
    tl.att.assign(static_cast<size_t>(heads), Matrix());
    for (int hh = 0; hh < heads; ++hh) {
      Matrix& att = tl.att[static_cast<size_t>(hh)];
      att = Matrix(t, t);
      const int off = hh * dh;
      for (int i = 0; i < t; ++i) {
        const double* qi = tl.q.row(i) + off;
        double* ai = att.row(i);
        double mx = -1e300;
        for (int j = 0; j < t; ++j) {
          ai[j] = scale * dot(qi, tl.k.row(j) + off, dh);
          mx = std::max(mx, ai[j]);
        }
        double sum = 0.0;
        for (int j = 0; j < t; ++j) {
          ai[j] = std::exp(ai[j] - mx);
          sum += ai[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < t; ++j) ai[j] *= inv;
        double* ci = tl.ctx.row(i) + off;
        for (int j = 0; j < t; ++j) {
          const double w = ai[j];
          const double* vj = tl.v.row(j) + off;
          for (int c = 0; c < dh; ++c) ci[c] += w * vj[c];
        }
      }
    }

    tl.h_mid = Matrix(t, d);
    linear(tl.ctx, params.block.view(lay.wo), params.block.view(lay.bo), tl.h_mid);
    for (int i = 0; i < t; ++i) {
      const double* xi = x.row(i);
      double* mi = tl.h_mid.row(i);
      for (int j = 0; j < d; ++j) mi[j] += xi[j];
    }

    tl.vnorm = Matrix(t, d);
    layer_norm(tl.h_mid, params.block.view(lay.ln2_g), params.block.view(lay.ln2_b), tl.vnorm,
               tl.mu2, tl.rstd2);

    tl.z1 = Matrix(t, f);
    linear(tl.vnorm, params.block.view(lay.w1), params.block.view(lay.b1), tl.z1);
    tl.g1 = Matrix(t, f);
    for (size_t i = 0; i < tl.z1.a.size(); ++i) tl.g1.a[i] = gelu(tl.z1.a[i]);

    Matrix out(t, d);
    linear(tl.g1, params.block.view(lay.w2), params.block.view(lay.b2), out);
    for (int i = 0; i < t; ++i) {
      const double* mi = tl.h_mid.row(i);
      double* oi = out.row(i);
      for (int j = 0; j < d; ++j) oi[j] += mi[j];
    }
    stack.states.push_back(std::move(out));
  }
  return stack;
}

void backward(const EncoderParams& params, std::span<const int> token_ids,
              const HiddenStack& stack, const ForwardTape& tape,
              const std::vector<Matrix>& upstream, std::vector<double>& grad) {
  const auto& cfg = params.config;
  const int t = static_cast<int>(token_ids.size());
  const int d = cfg.hidden_dim, heads = cfg.num_heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (grad.size() != params.block.data.size())
    throw std::invalid_argument("gradient buffer size mismatch");
  if (upstream.size() != stack.states.size())
    throw std::invalid_argument("upstream gradient count mismatch");
  for (size_t k = 0; k < upstream.size(); ++k) {
    if (upstream[k].empty()) continue;
    if (upstream[k].rows != t || upstream[k].cols != d)
      throw std::invalid_argument("upstream gradient shape mismatch");
  }

  auto gview = [&](int idx) {
    const auto& spec = params.block.manifest[static_cast<size_t>(idx)];
    return std::span<double>(grad.data() + spec.offset, spec.numel());
  };

  Matrix dx(t, d);
  if (!upstream.back().empty()) dx = upstream.back();

  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const auto& lay = params.layout.layers[static_cast<size_t>(l)];
    const auto& tl = tape.layers[static_cast<size_t>(l)];
    const Matrix& x = stack.states[static_cast<size_t>(l)];

    // feed-forward block: out = h_mid + W2(gelu(W1 vnorm + b1)) + b2
    Matrix dg1(t, cfg.ffn_dim);
    linear_backward(tl.g1, params.block.view(lay.w2), dx, gview(lay.w2), gview(lay.b2), &dg1);
    Matrix dz1(t, cfg.ffn_dim);
    for (size_t i = 0; i < dz1.a.size(); ++i) dz1.a[i] = dg1.a[i] * gelu_grad(tl.z1.a[i]);
    Matrix dvnorm(t, d);
    linear_backward(tl.vnorm, params.block.view(lay.w1), dz1, gview(lay.w1), gview(lay.b1),
                    &dvnorm);
    Matrix dh_mid = dx;  // residual
    layer_norm_backward(tl.h_mid, params.block.view(lay.ln2_g), tl.mu2, tl.rstd2, dvnorm, dh_mid,
                        gview(lay.ln2_g), gview(lay.ln2_b));

    // attention block: h_mid = x + Wo ctx + bo
    Matrix dctx(t, d);
    linear_backward(tl.ctx, params.block.view(lay.wo), dh_mid, gview(lay.wo), gview(lay.bo),
                    &dctx);

    Matrix dq(t, d), dk(t, d), dv(t, d);
    for (int hh = 0; hh < heads; ++hh) {
      const Matrix& att = tl.att[static_cast<size_t>(hh)];
      const int off = hh * dh;
      for (int i = 0; i < t; ++i) {
        const double* dci = dctx.row(i) + off;
        // dV and datt
        std::vector<double> datt(static_cast<size_t>(t));
        for (int j = 0; j < t; ++j) {
          const double aij = att.at(i, j);
          double* dvj = dv.row(j) + off;
          const double* vj = tl.v.row(j) + off;
          double acc = 0.0;
          for (int c = 0; c < dh; ++c) {
            dvj[c] += aij * dci[c];
            acc += dci[c] * vj[c];
          }
          datt[static_cast<size_t>(j)] = acc;
        }
        // softmax backward
        double rowdot = 0.0;
        for (int j = 0; j < t; ++j) rowdot += datt[static_cast<size_t>(j)] * att.at(i, j);
        double* dqi = dq.row(i) + off;
        const double* qi = tl.q.row(i) + off;
        for (int j = 0; j < t; ++j) {
          const double ds = att.at(i, j) * (datt[static_cast<size_t>(j)] - rowdot) * scale;
          const double* kj = tl.k.row(j) + off;
          double* dkj = dk.row(j) + off;
          for (int c = 0; c < dh; ++c) {
            dqi[c] += ds * kj[c];
            dkj[c] += ds * qi[c];
          }
        }
      }
    }

    Matrix du(t, d);
    linear_backward(tl.u, params.block.view(lay.wq), dq, gview(lay.wq), gview(lay.bq), &du);
    linear_backward(tl.u, params.block.view(lay.wk), dk, gview(lay.wk), gview(lay.bk), &du);
    linear_backward(tl.u, params.block.view(lay.wv), dv, gview(lay.wv), gview(lay.bv), &du);

    Matrix dx_next = dh_mid;  // residual through the attention block
    layer_norm_backward(x, params.block.view(lay.ln1_g), tl.mu1, tl.rstd1, du, dx_next,
                        gview(lay.ln1_g), gview(lay.ln1_b));

    dx = std::move(dx_next);
    if (!upstream[static_cast<size_t>(l)].empty()) {
      const Matrix& up = upstream[static_cast<size_t>(l)];
      for (size_t i = 0; i < dx.a.size(); ++i) dx.a[i] += up.a[i];
    }
  }

  // embeddings
  auto dtok = gview(params.layout.tok_emb);
  auto dpos = gview(params.layout.pos_emb);
  for (int i = 0; i < t; ++i) {
    const double* dxi = dx.row(i);
    double* te = dtok.data() + static_cast<size_t>(token_ids[static_cast<size_t>(i)]) * d;
    double* pe = dpos.data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      te[j] += dxi[j];
      pe[j] += dxi[j];
    }
  }
}

std::vector<double> mean_pool(const HiddenStack& stack, int k) {
  if (k < 0 || k >= stack.depth()) throw std::out_of_range("layer index out of range");
  return column_mean(stack.layer(k));
}

std::vector<bool> make_freeze_mask(const EncoderParams& params, int trainable_layers,
                                   int* clamped_k) {
  const int n_layers = params.config.num_layers;
  int k = trainable_layers;
  if (k > n_layers) k = n_layers;
  if (k < 0) k = 0;
  if (clamped_k) *clamped_k = k;
  std::vector<bool> trainable(params.block.manifest.size(), false);
  const int first_trainable = n_layers - k;
  for (int l = first_trainable; l < n_layers; ++l) {
    const auto& lay = params.layout.layers[static_cast<size_t>(l)];
    for (int idx : {lay.ln1_g, lay.ln1_b, lay.wq, lay.bq, lay.wk, lay.bk, lay.wv, lay.bv, lay.wo,
                    lay.bo, lay.ln2_g, lay.ln2_b, lay.w1, lay.b1, lay.w2, lay.b2})
      trainable[static_cast<size_t>(idx)] = true;
  }
  return trainable;
}

void write_param_section(std::ostream& os, const ParamBlock& block, const std::string& label) {
  os << label << " " << block.manifest.size() << "\n";
  for (const auto& t : block.manifest) {
    os << t.name << " " << t.shape.size();
    for (int d : t.shape) os << " " << d;
    os << " " << t.offset * sizeof(float) << "\n";
  }
  os << "blob " << block.data.size() * sizeof(float) << "\n";
  std::vector<float> f32(block.data.size());
  for (size_t i = 0; i < block.data.size(); ++i) f32[i] = static_cast<float>(block.data[i]);
  os.write(reinterpret_cast<const char*>(f32.data()),
           static_cast<std::streamsize>(f32.size() * sizeof(float)));
  os << "\n";
}

ParamBlock read_param_section(std::istream& is, const std::string& expected_label) {
  std::string label;
  size_t count = 0;
  is >> label >> count;
  if (label != expected_label)
    throw std::runtime_error("checkpoint section mismatch: expected " + expected_label +
                             ", found " + label);
  ParamBlock block;
  for (size_t i = 0; i < count; ++i) {
    TensorSpec spec;
    size_t ndims = 0, byte_offset = 0;
    is >> spec.name >> ndims;
    spec.shape.resize(ndims);
    for (auto& d : spec.shape) is >> d;
    is >> byte_offset;
    spec.offset = byte_offset / sizeof(float);
    block.manifest.push_back(std::move(spec));
  }
  std::string blob_label;
  size_t nbytes = 0;
  is >> blob_label >> nbytes;
  if (blob_label != "blob") throw std::runtime_error("checkpoint blob marker missing");
  is.get();  // newline before binary data
  std::vector<float> f32(nbytes / sizeof(float));
  is.read(reinterpret_cast<char*>(f32.data()), static_cast<std::streamsize>(nbytes));
  if (!is) throw std::runtime_error("truncated checkpoint blob");
  is.get();  // trailing newline
  block.data.resize(f32.size());
  for (size_t i = 0; i < f32.size(); ++i) block.data[i] = static_cast<double>(f32[i]);
  return block;
}

void save_checkpoint(const std::string& path, const EncoderParams& params,
                     const ParamBlock* heads) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f << "XLTCKPT1\n";
  const auto& c = params.config;
  f << "vocab_size=" << c.vocab_size << "\n";
  f << "hidden_dim=" << c.hidden_dim << "\n";
  f << "num_layers=" << c.num_layers << "\n";
  f << "num_heads=" << c.num_heads << "\n";
  f << "ffn_dim=" << c.ffn_dim << "\n";
  f << "max_positions=" << c.max_positions << "\n";
  f << "seed=" << c.seed << "\n";
  write_param_section(f, params.block, "params");
  if (heads) write_param_section(f, *heads, "heads");
}

EncoderParams load_checkpoint(const std::string& path, ParamBlock* heads) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string magic;
  f >> magic;
  if (magic != "XLTCKPT1") throw std::runtime_error("bad checkpoint magic in " + path);
  EncoderConfig cfg;
  for (int i = 0; i < 7; ++i) {
    std::string kv;
    f >> kv;
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::runtime_error("bad checkpoint header line: " + kv);
    const std::string key = kv.substr(0, eq);
    const std::string val = kv.substr(eq + 1);
    if (key == "vocab_size") cfg.vocab_size = std::stoi(val);
    else if (key == "hidden_dim") cfg.hidden_dim = std::stoi(val);
    else if (key == "num_layers") cfg.num_layers = std::stoi(val);
    else if (key == "num_heads") cfg.num_heads = std::stoi(val);
    else if (key == "ffn_dim") cfg.ffn_dim = std::stoi(val);
    else if (key == "max_positions") cfg.max_positions = std::stoi(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else throw std::runtime_error("unknown checkpoint header key: " + key);
  }
  EncoderParams params = init_params(cfg);
  ParamBlock loaded = read_param_section(f, "params");
  if (loaded.data.size() != params.block.data.size())
    throw std::runtime_error("checkpoint parameter count mismatch");
  params.block.data = std::move(loaded.data);
  if (heads) *heads = read_param_section(f, "heads");
  return params;
}

}  // namespace xlt
