#include "xlt/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "xlt/parallel.hpp"
#include "xlt/rng.hpp"

namespace xlt {

namespace {

double reduction_div(DimReduction r, int d) { return r == DimReduction::mean_dims ? d : 1.0; }

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  double mx = -1e300;
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

}  // namespace

std::vector<int> resolve_target_layers(const TransferConfig& cfg, int num_layers) {
  if (!cfg.target_layers.empty()) {
    for (int k : cfg.target_layers)
      if (k < 0 || k > num_layers)
        throw std::invalid_argument("target layer out of range: " + std::to_string(k));
    return cfg.target_layers;
  }
  const int k = std::min(cfg.trainable_layers, num_layers);
  std::vector<int> out;
  for (int l = num_layers - k + 1; l <= num_layers; ++l) out.push_back(l);
  if (out.empty()) out.push_back(num_layers);
  return out;
}

ProjectionHeads init_heads(const EncoderConfig& student_cfg, const TransferConfig& cfg,
                           uint64_t seed) {
  ProjectionHeads h;
  h.input_variant = cfg.input_variant;
  h.projection_variant = cfg.projection_variant;
  h.target_layers = resolve_target_layers(cfg, student_cfg.num_layers);
  h.student_depth = student_cfg.num_layers + 1;
  h.hidden_dim = student_cfg.hidden_dim;
  h.bottleneck_dim = std::max(1, student_cfg.hidden_dim / 4);

  Rng rng(seed);
  auto fill_uniform = [&](int idx, int fan_in) {
    const double a = std::sqrt(3.0 / fan_in);
    for (double& v : h.block.view(idx)) v = rng.uniform(-a, a);
  };

  const int d = h.hidden_dim, q = h.bottleneck_dim;
  for (size_t ti = 0; ti < h.target_layers.size(); ++ti) {
    const std::string pre = "head" + std::to_string(h.target_layers[ti]) + ".";
    if (h.input_variant == InputVariant::weighted_layers) {
      h.p_idx.push_back(h.block.add(pre + "p", {h.student_depth}));  // zeros = uniform mixture
    }
    if (h.projection_variant == ProjectionVariant::bottleneck) {
      ProjectionHeads::Bottle b{};
      b.w_dn = h.block.add(pre + "w_dn", {d, q});
      b.b_dn = h.block.add(pre + "b_dn", {q});
      b.ln_g = h.block.add(pre + "ln_g", {q});
      b.ln_b = h.block.add(pre + "ln_b", {q});
      b.w_up = h.block.add(pre + "w_up", {q, d});
      b.b_up = h.block.add(pre + "b_up", {d});
      fill_uniform(b.w_dn, d);
      fill_uniform(b.w_up, q);
      for (double& v : h.block.view(b.ln_g)) v = 1.0;
      h.bottles.push_back(b);
    }
  }
  if (h.projection_variant == ProjectionVariant::linear) {
    // one map shared by every target layer
    h.lin_w = h.block.add("proj.w", {d, d});
    h.lin_b = h.block.add("proj.b", {d});
    fill_uniform(h.lin_w, d);
  }
  return h;
}

std::vector<double> mixture_weights(const ProjectionHeads& heads, int target_index) {
  if (heads.input_variant != InputVariant::weighted_layers)
    throw std::logic_error("mixture weights undefined for last-layer input");
  return softmax(heads.block.view(heads.p_idx[static_cast<size_t>(target_index)]));
}

namespace {

constexpr double kLnEps = 1e-5;

void head_layer_norm(const Matrix& x, std::span<const double> gain, std::span<const double> bias,
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
    for (int j = 0; j < d; ++j) var += (xi[j] - m) * (xi[j] - m);
    var /= d;
    const double r = 1.0 / std::sqrt(var + kLnEps);
    mu[static_cast<size_t>(i)] = m;
    rstd[static_cast<size_t>(i)] = r;
    double* yi = y.row(i);
    for (int j = 0; j < d; ++j)
      yi[j] = (xi[j] - m) * r * gain[static_cast<size_t>(j)] + bias[static_cast<size_t>(j)];
  }
}

void head_layer_norm_backward(const Matrix& x, std::span<const double> gain,
                              const std::vector<double>& mu, const std::vector<double>& rstd,
                              const Matrix& dy, Matrix& dx, std::span<double> dgain,
                              std::span<double> dbias) {
  const int t = x.rows, d = x.cols;
  std::vector<double> xhat(static_cast<size_t>(d)), dxh(static_cast<size_t>(d));
  for (int i = 0; i < t; ++i) {
    const double* xi = x.row(i);
    const double* dyi = dy.row(i);
    const double m = mu[static_cast<size_t>(i)], r = rstd[static_cast<size_t>(i)];
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

}  // namespace

Matrix layer_mix(const HiddenStack& student, const ProjectionHeads& heads, int target_index,
                 HeadTape* tape) {
  if (student.depth() != heads.student_depth)
    throw std::invalid_argument("student stack depth mismatch");
  const int t = student.layer(0).rows;
  const int d = heads.hidden_dim;
  if (student.layer(0).cols != d) throw std::invalid_argument("hidden dimension mismatch");

  Matrix mixed(t, d);
  std::vector<double> weights;
  if (heads.input_variant == InputVariant::weighted_layers) {
    weights = mixture_weights(heads, target_index);
    for (int l = 0; l < heads.student_depth; ++l) {
      const double w = weights[static_cast<size_t>(l)];
      const Matrix& g = student.layer(l);
      for (size_t i = 0; i < mixed.a.size(); ++i) mixed.a[i] += w * g.a[i];
    }
  } else {
    mixed = student.layer(heads.student_depth - 1);
  }

  Matrix out;
  HeadTape scratch;
  HeadTape& tp = tape ? *tape : scratch;
  tp.weights = weights;
  tp.mixed = mixed;

  switch (heads.projection_variant) {
    case ProjectionVariant::identity:
      out = std::move(mixed);
      break;
    case ProjectionVariant::linear: {
      out = Matrix(t, d);
      const auto w = heads.block.view(heads.lin_w);
      const auto b = heads.block.view(heads.lin_b);
      gemm_nn(tp.mixed.a.data(), w.data(), out.a.data(), t, d, d);
      for (int i = 0; i < t; ++i) {
        double* oi = out.row(i);
        for (int j = 0; j < d; ++j) oi[j] += b[static_cast<size_t>(j)];
      }
      break;
    }
    case ProjectionVariant::bottleneck: {
      const auto& bt = heads.bottles[static_cast<size_t>(target_index)];
      const int q = heads.bottleneck_dim;
      tp.z_dn = Matrix(t, q);
      const auto w_dn = heads.block.view(bt.w_dn);
      const auto b_dn = heads.block.view(bt.b_dn);
      gemm_nn(tp.mixed.a.data(), w_dn.data(), tp.z_dn.a.data(), t, d, q);
      for (int i = 0; i < t; ++i) {
        double* zi = tp.z_dn.row(i);
        for (int j = 0; j < q; ++j) zi[j] += b_dn[static_cast<size_t>(j)];
      }
      tp.g_dn = Matrix(t, q);
      for (size_t i = 0; i < tp.z_dn.a.size(); ++i) tp.g_dn.a[i] = gelu(tp.z_dn.a[i]);
      tp.ln_out = Matrix(t, q);
      head_layer_norm(tp.g_dn, heads.block.view(bt.ln_g), heads.block.view(bt.ln_b), tp.ln_out,
                      tp.mu, tp.rstd);
      out = Matrix(t, d);
      const auto w_up = heads.block.view(bt.w_up);
      const auto b_up = heads.block.view(bt.b_up);
      gemm_nn(tp.ln_out.a.data(), w_up.data(), out.a.data(), t, q, d);
      for (int i = 0; i < t; ++i) {
        double* oi = out.row(i);
        for (int j = 0; j < d; ++j) oi[j] += b_up[static_cast<size_t>(j)];
      }
      break;
    }
  }
  return out;
}

void layer_mix_backward(const HiddenStack& student, const ProjectionHeads& heads,
                        int target_index, const HeadTape& tape, const Matrix& dproj,
                        std::vector<Matrix>& dstack, std::vector<double>& head_grad) {
  const int t = dproj.rows;
  const int d = heads.hidden_dim;
  auto gview = [&](int idx) {
    const auto& spec = heads.block.manifest[static_cast<size_t>(idx)];
    return std::span<double>(head_grad.data() + spec.offset, spec.numel());
  };

  Matrix dmixed(t, d);
  switch (heads.projection_variant) {
    case ProjectionVariant::identity:
      dmixed = dproj;
      break;
    case ProjectionVariant::linear: {
      const auto w = heads.block.view(heads.lin_w);
      auto dw = gview(heads.lin_w);
      auto db = gview(heads.lin_b);
      gemm_tn(tape.mixed.a.data(), dproj.a.data(), dw.data(), d, t, d);
      for (int i = 0; i < t; ++i) {
        const double* dyi = dproj.row(i);
        for (int j = 0; j < d; ++j) db[static_cast<size_t>(j)] += dyi[j];
      }
      gemm_nt(dproj.a.data(), w.data(), dmixed.a.data(), t, d, d);
      break;
    }
    case ProjectionVariant::bottleneck: {
      const auto& bt = heads.bottles[static_cast<size_t>(target_index)];
      const int q = heads.bottleneck_dim;
      // up-projection
      Matrix dln(t, q);
      {
        const auto w_up = heads.block.view(bt.w_up);
        auto dw_up = gview(bt.w_up);
        auto db_up = gview(bt.b_up);
        gemm_tn(tape.ln_out.a.data(), dproj.a.data(), dw_up.data(), q, t, d);
        for (int i = 0; i < t; ++i) {
          const double* dyi = dproj.row(i);
          for (int j = 0; j < d; ++j) db_up[static_cast<size_t>(j)] += dyi[j];
        }
        gemm_nt(dproj.a.data(), w_up.data(), dln.a.data(), t, d, q);
      }
      // layer norm
      Matrix dg(t, q);
      head_layer_norm_backward(tape.g_dn, heads.block.view(bt.ln_g), tape.mu, tape.rstd, dln, dg,
                               gview(bt.ln_g), gview(bt.ln_b));
      // gelu
      Matrix dz(t, q);
      for (size_t i = 0; i < dz.a.size(); ++i) dz.a[i] = dg.a[i] * gelu_grad(tape.z_dn.a[i]);
      // down-projection
      {
        const auto w_dn = heads.block.view(bt.w_dn);
        auto dw_dn = gview(bt.w_dn);
        auto db_dn = gview(bt.b_dn);
        gemm_tn(tape.mixed.a.data(), dz.a.data(), dw_dn.data(), d, t, q);
        for (int i = 0; i < t; ++i) {
          const double* dzi = dz.row(i);
          for (int j = 0; j < q; ++j) db_dn[static_cast<size_t>(j)] += dzi[j];
        }
        gemm_nt(dz.a.data(), w_dn.data(), dmixed.a.data(), t, q, d);
      }
      break;
    }
  }

  if (heads.input_variant == InputVariant::weighted_layers) {
    const auto& w = tape.weights;
    std::vector<double> dw(w.size(), 0.0);
    for (int l = 0; l < heads.student_depth; ++l) {
      const Matrix& g = student.layer(l);
      Matrix& dg = dstack[static_cast<size_t>(l)];
      if (dg.empty()) dg = Matrix(t, d);
      const double wl = w[static_cast<size_t>(l)];
      double acc = 0.0;
      for (size_t i = 0; i < dmixed.a.size(); ++i) {
        dg.a[i] += wl * dmixed.a[i];
        acc += dmixed.a[i] * g.a[i];
      }
      dw[static_cast<size_t>(l)] = acc;
    }
    // softmax backward into the logits
    double wd_sum = 0.0;
    for (size_t l = 0; l < w.size(); ++l) wd_sum += w[l] * dw[l];
    auto dp = gview(heads.p_idx[static_cast<size_t>(target_index)]);
    for (size_t l = 0; l < w.size(); ++l) dp[l] += w[l] * (dw[l] - wd_sum);
  } else {
    Matrix& dg = dstack[static_cast<size_t>(heads.student_depth - 1)];
    if (dg.empty()) dg = Matrix(t, d);
    for (size_t i = 0; i < dmixed.a.size(); ++i) dg.a[i] += dmixed.a[i];
  }
}

double align_loss(const Matrix& teacher_states, const Matrix& projected_student,
                  const AlignmentLinkSet& links, DimReduction reduction) {
  if (links.links.empty()) throw std::invalid_argument("no links");
  const int d = teacher_states.cols;
  if (projected_student.cols != d) throw std::invalid_argument("hidden dimension mismatch");
  const double div = reduction_div(reduction, d);
  double total = 0.0;
  for (const auto& [i, j] : links.links) {
    if (i < 0 || i >= teacher_states.rows || j < 0 || j >= projected_student.rows)
      throw std::out_of_range("alignment link out of range");
    const double* h = teacher_states.row(i);
    const double* g = projected_student.row(j);
    double acc = 0.0;
    for (int c = 0; c < d; ++c) {
      const double diff = h[c] - g[c];
      acc += diff * diff;
    }
    total += acc / div;
  }
  return total / static_cast<double>(links.links.size());
}

double mean_loss(const Matrix& teacher_states, const Matrix& projected_student,
                 DimReduction reduction) {
  if (teacher_states.empty() || projected_student.empty())
    throw std::invalid_argument("empty states in mean loss");
  const int d = teacher_states.cols;
  if (projected_student.cols != d) throw std::invalid_argument("hidden dimension mismatch");
  const auto pt = column_mean(teacher_states);
  const auto ps = column_mean(projected_student);
  double acc = 0.0;
  for (int c = 0; c < d; ++c) {
    const double diff = pt[static_cast<size_t>(c)] - ps[static_cast<size_t>(c)];
    acc += diff * diff;
  }
  return acc / reduction_div(reduction, d);
}

namespace {

struct LayerEval {
  double align = 0.0;
  double mean = 0.0;
  bool has_align = false;
  bool has_mean = false;
};

LossBreakdown assemble(const std::vector<LayerEval>& evals) {
  LossBreakdown out;
  double total = 0.0;
  for (const auto& e : evals) {
    out.align_per_layer.push_back(e.has_align ? e.align : 0.0);
    out.mean_per_layer.push_back(e.has_mean ? e.mean : 0.0);
    total += (e.has_align ? e.align : 0.0) + (e.has_mean ? e.mean : 0.0);
  }
  out.total = evals.empty() ? 0.0 : total / static_cast<double>(evals.size());
  return out;
}

}  // namespace

LossBreakdown total_loss(const HiddenStack& teacher, const HiddenStack& student,
                         const ProjectionHeads& heads, const AlignmentLinkSet& links,
                         const TransferConfig& cfg) {
  std::vector<LayerEval> evals;
  for (size_t ti = 0; ti < heads.target_layers.size(); ++ti) {
    const int k = heads.target_layers[ti];
    const Matrix proj = layer_mix(student, heads, static_cast<int>(ti));
    LayerEval e;
    if (!links.links.empty()) {
      e.align = align_loss(teacher.layer(k), proj, links, cfg.dim_reduction);
      e.has_align = true;
    }
    if (cfg.loss_variant == LossVariant::align_plus_mean) {
      e.mean = mean_loss(teacher.layer(k), proj, cfg.dim_reduction);
      e.has_mean = true;
    }
    evals.push_back(e);
  }
  return assemble(evals);
}

LossBreakdown total_loss_with_grad(const HiddenStack& teacher, const HiddenStack& student,
                                   const ProjectionHeads& heads, const AlignmentLinkSet& links,
                                   const TransferConfig& cfg, double weight,
                                   std::vector<Matrix>& dstack, std::vector<double>& head_grad) {
  const int d = heads.hidden_dim;
  const double div = reduction_div(cfg.dim_reduction, d);
  const double layer_w = heads.target_layers.empty()
                             ? 0.0
                             : 1.0 / static_cast<double>(heads.target_layers.size());
  std::vector<LayerEval> evals;
  for (size_t ti = 0; ti < heads.target_layers.size(); ++ti) {
    const int k = heads.target_layers[ti];
    HeadTape tape;
    const Matrix proj = layer_mix(student, heads, static_cast<int>(ti), &tape);
    const Matrix& h = teacher.layer(k);
    const int ts = proj.rows;
    Matrix dproj(ts, d);
    LayerEval e;

    if (!links.links.empty()) {
      e.align = align_loss(h, proj, links, cfg.dim_reduction);
      e.has_align = true;
      const double coeff = 2.0 * weight * layer_w / (div * static_cast<double>(links.links.size()));
      for (const auto& [i, j] : links.links) {
        const double* hi = h.row(i);
        const double* gj = proj.row(j);
        double* dj = dproj.row(j);
        for (int c = 0; c < d; ++c) dj[c] += coeff * (gj[c] - hi[c]);
      }
    }
    if (cfg.loss_variant == LossVariant::align_plus_mean) {
      e.mean = mean_loss(h, proj, cfg.dim_reduction);
      e.has_mean = true;
      const auto pt = column_mean(h);
      const auto ps = column_mean(proj);
      const double coeff = 2.0 * weight * layer_w / (div * static_cast<double>(ts));
      for (int i = 0; i < ts; ++i) {
        double* dj = dproj.row(i);
        for (int c = 0; c < d; ++c)
          dj[c] += coeff * (ps[static_cast<size_t>(c)] - pt[static_cast<size_t>(c)]);
      }
    }
    layer_mix_backward(student, heads, static_cast<int>(ti), tape, dproj, dstack, head_grad);
    evals.push_back(e);
  }
  return assemble(evals);
}

double schedule_lr(double base_lr, int step, int warmup_steps, int total_steps) {
  if (total_steps <= 0) return 0.0;
  if (warmup_steps >= total_steps) warmup_steps = total_steps - 1;
  if (warmup_steps < 0) warmup_steps = 0;
  if (step < warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  return base_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup_steps);
}

TrainResult train_transfer(const EncoderParams& teacher, EncoderParams& student,
                           ProjectionHeads& heads, const std::vector<TransferItem>& english_items,
                           const std::vector<TransferItem>& bilingual_items,
                           const TransferConfig& cfg, std::ostream* log, int workers) {
  const size_t n_items = english_items.size() + bilingual_items.size();
  if (n_items == 0) throw std::invalid_argument("no training data");

  auto item_at = [&](size_t idx) -> const TransferItem& {
    return idx < english_items.size() ? english_items[idx]
                                      : bilingual_items[idx - english_items.size()];
  };

  TrainResult result;
  std::vector<bool> trainable =
      make_freeze_mask(student, cfg.trainable_layers, &result.effective_trainable_layers);
  if (result.effective_trainable_layers != cfg.trainable_layers)
    std::cerr << "warning: trainable_layers clamped from " << cfg.trainable_layers << " to "
              << result.effective_trainable_layers << " (encoder has "
              << student.config.num_layers << " layers)\n";

  const int steps_per_epoch =
      static_cast<int>((n_items + static_cast<size_t>(cfg.batch_size) - 1) /
                       static_cast<size_t>(cfg.batch_size));
  const int total_steps = cfg.epochs * steps_per_epoch;
  int warmup_steps = static_cast<int>(std::llround(cfg.warmup_ratio * total_steps));
  result.total_steps = total_steps;

  std::vector<double> student_grad(student.block.data.size(), 0.0);
  std::vector<double> head_grad(heads.block.data.size(), 0.0);
  std::vector<double> student_vel(student.block.data.size(), 0.0);
  std::vector<double> head_vel(heads.block.data.size(), 0.0);

  Rng shuffle_rng(Rng(cfg.seed).fork());
  std::vector<size_t> order(n_items);
  std::iota(order.begin(), order.end(), size_t{0});

  int global_step = 0;
  char buf[64];
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    LossBreakdown epoch_sum;
    epoch_sum.align_per_layer.assign(heads.target_layers.size(), 0.0);
    epoch_sum.mean_per_layer.assign(heads.target_layers.size(), 0.0);

    for (size_t start = 0; start < n_items; start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(n_items, start + static_cast<size_t>(cfg.batch_size));
      const size_t batch_n = end - start;
      const double item_weight = 1.0 / static_cast<double>(batch_n);

      std::fill(student_grad.begin(), student_grad.end(), 0.0);
      std::fill(head_grad.begin(), head_grad.end(), 0.0);

      struct ChunkAcc {
        std::vector<double> sgrad, hgrad;
        LossBreakdown sum;
      };
      std::vector<ChunkAcc> chunks(chunk_count(batch_n));
      for_each_chunk(batch_n, workers, [&](size_t c, size_t lo, size_t hi) {
        ChunkAcc& acc = chunks[c];
        acc.sgrad.assign(student_grad.size(), 0.0);
        acc.hgrad.assign(head_grad.size(), 0.0);
        acc.sum.align_per_layer.assign(heads.target_layers.size(), 0.0);
        acc.sum.mean_per_layer.assign(heads.target_layers.size(), 0.0);
        for (size_t b = lo; b < hi; ++b) {
          const TransferItem& item = item_at(order[start + b]);
          const HiddenStack tstack = forward(teacher, item.teacher_tok.token_ids);
          ForwardTape tape;
          const HiddenStack sstack = forward(student, item.student_tok.token_ids, &tape);
          std::vector<Matrix> dstack(sstack.states.size());
          const LossBreakdown lb = total_loss_with_grad(tstack, sstack, heads, item.links, cfg,
                                                        item_weight, dstack, acc.hgrad);
          backward(student, item.student_tok.token_ids, sstack, tape, dstack, acc.sgrad);
          for (size_t k = 0; k < lb.align_per_layer.size(); ++k) {
            acc.sum.align_per_layer[k] += lb.align_per_layer[k];
            acc.sum.mean_per_layer[k] += lb.mean_per_layer[k];
          }
          acc.sum.total += lb.total;
        }
      });

      LossBreakdown batch_sum;
      batch_sum.align_per_layer.assign(heads.target_layers.size(), 0.0);
      batch_sum.mean_per_layer.assign(heads.target_layers.size(), 0.0);
      for (const auto& acc : chunks) {
        for (size_t i = 0; i < student_grad.size(); ++i) student_grad[i] += acc.sgrad[i];
        for (size_t i = 0; i < head_grad.size(); ++i) head_grad[i] += acc.hgrad[i];
        for (size_t k = 0; k < batch_sum.align_per_layer.size(); ++k) {
          batch_sum.align_per_layer[k] += acc.sum.align_per_layer[k];
          batch_sum.mean_per_layer[k] += acc.sum.mean_per_layer[k];
        }
        batch_sum.total += acc.sum.total;
      }

      if (!std::isfinite(batch_sum.total))
        throw std::runtime_error("non-finite loss at batch index " +
                                 std::to_string(global_step));

      const double lr = schedule_lr(cfg.learning_rate, global_step, warmup_steps, total_steps);

      // SGD with momentum and decoupled weight decay on trainable tensors
      for (size_t tix = 0; tix < student.block.manifest.size(); ++tix) {
        if (!trainable[tix]) continue;
        const auto& spec = student.block.manifest[tix];
        double* p = student.block.data.data() + spec.offset;
        double* g = student_grad.data() + spec.offset;
        double* v = student_vel.data() + spec.offset;
        const size_t n = spec.numel();
        for (size_t i = 0; i < n; ++i) {
          v[i] = cfg.momentum * v[i] + g[i];
          p[i] -= lr * v[i] + lr * cfg.weight_decay * p[i];
        }
      }
      for (size_t i = 0; i < heads.block.data.size(); ++i) {
        head_vel[i] = cfg.momentum * head_vel[i] + head_grad[i];
        heads.block.data[i] -= lr * head_vel[i] + lr * cfg.weight_decay * heads.block.data[i];
      }

      if (log) {
        std::string line = "{\"epoch\":" + std::to_string(epoch) +
                           ",\"step\":" + std::to_string(global_step) + ",\"lr\":";
        std::snprintf(buf, sizeof(buf), "%.12g", lr);
        line += buf;
        line += ",\"align\":[";
        for (size_t k = 0; k < batch_sum.align_per_layer.size(); ++k) {
          std::snprintf(buf, sizeof(buf), "%.12g", batch_sum.align_per_layer[k] * item_weight);
          line += (k ? "," : "") + std::string(buf);
        }
        line += "],\"mean\":[";
        for (size_t k = 0; k < batch_sum.mean_per_layer.size(); ++k) {
          std::snprintf(buf, sizeof(buf), "%.12g", batch_sum.mean_per_layer[k] * item_weight);
          line += (k ? "," : "") + std::string(buf);
        }
        std::snprintf(buf, sizeof(buf), "%.12g", batch_sum.total * item_weight);
        line += "],\"total\":" + std::string(buf) + "}\n";
        (*log) << line;
      }

      for (size_t k = 0; k < epoch_sum.align_per_layer.size(); ++k) {
        epoch_sum.align_per_layer[k] += batch_sum.align_per_layer[k];
        epoch_sum.mean_per_layer[k] += batch_sum.mean_per_layer[k];
      }
      epoch_sum.total += batch_sum.total;
      ++global_step;
    }

    const double inv_n = 1.0 / static_cast<double>(n_items);
    for (auto& v : epoch_sum.align_per_layer) v *= inv_n;
    for (auto& v : epoch_sum.mean_per_layer) v *= inv_n;
    epoch_sum.total *= inv_n;
    result.epoch_losses.push_back(std::move(epoch_sum));
  }
  return result;
}

std::vector<Matrix> swap_and_encode(const EncoderParams& student, const ProjectionHeads& heads,
                                    const TokenizedSentence& tok) {
  const HiddenStack stack = forward(student, tok.token_ids);
  std::vector<Matrix> out;
  out.reserve(heads.target_layers.size());
  for (size_t ti = 0; ti < heads.target_layers.size(); ++ti)
    out.push_back(layer_mix(stack, heads, static_cast<int>(ti)));
  return out;
}

const char* to_string(LossVariant v) {
  return v == LossVariant::align_plus_mean ? "align_plus_mean" : "align_only";
}
const char* to_string(InputVariant v) {
  return v == InputVariant::weighted_layers ? "weighted_layers" : "last_layer";
}
const char* to_string(ProjectionVariant v) {
  switch (v) {
    case ProjectionVariant::bottleneck: return "bottleneck";
    case ProjectionVariant::linear: return "linear";
    case ProjectionVariant::identity: return "identity";
  }
  return "?";
}

LossVariant loss_variant_from_string(const std::string& s) {
  if (s == "align_plus_mean") return LossVariant::align_plus_mean;
  if (s == "align_only") return LossVariant::align_only;
  throw std::invalid_argument("unknown loss variant: " + s);
}
InputVariant input_variant_from_string(const std::string& s) {
  if (s == "weighted_layers") return InputVariant::weighted_layers;
  if (s == "last_layer") return InputVariant::last_layer;
  throw std::invalid_argument("unknown input variant: " + s);
}
ProjectionVariant projection_variant_from_string(const std::string& s) {
  if (s == "bottleneck") return ProjectionVariant::bottleneck;
  if (s == "linear") return ProjectionVariant::linear;
  if (s == "identity") return ProjectionVariant::identity;
  throw std::invalid_argument("unknown projection variant: " + s);
}

}  // namespace xlt
