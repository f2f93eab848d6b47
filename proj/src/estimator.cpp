#include "rescal/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

#include "rescal/adam.hpp"
#include "rescal/models.hpp"

namespace rescal::est {

using ad::ContractError;
using ad::ShapeError;
using ad::Tensor;

std::vector<int> RescalConfig::resolved_dilations() const {
  if (!dilations.empty()) return dilations;
  std::vector<int> d;
  int cur = 1;
  for (int64_t i = 0; i < layers; ++i) {
    d.push_back(cur);
    cur *= 2;
  }
  return d;
}

int64_t RescalConfig::receptive_field() const {
  int64_t field = 1;
  for (int d : resolved_dilations()) field += (kernel - 1) * d;
  return field;
}

ResidualEstimator::ResidualEstimator(RescalConfig cfg, int64_t n_nodes,
                                     std::vector<Tensor> fixed_supports,
                                     uint64_t seed)
    : cfg_(std::move(cfg)), n_(n_nodes), fixed_supports_(std::move(fixed_supports)) {
  if (cfg_.T != cfg_.T_u) {
    throw ContractError("rescal: T_u must equal the window length T");
  }
  if (cfg_.tau <= 0.0f) throw ContractError("rescal: tau must be positive");
  if (cfg_.receptive_field() < cfg_.T) {
    throw ContractError("rescal: receptive field " +
                        std::to_string(cfg_.receptive_field()) +
                        " does not cover the window " + std::to_string(cfg_.T));
  }
  for (const Tensor& s : fixed_supports_) {
    if (s.rank() != 2 || s.dim(0) != n_ || s.dim(1) != n_) {
      throw ShapeError("rescal: support " + ad::shape_str(s.shape()) +
                       " does not match " + std::to_string(n_) + " nodes");
    }
  }

  Rng rng(seed);
  if (cfg_.use_adaptive) {
    emb_ = graph::NodeEmbeddings::init(n_, cfg_.node_embed_dim, rng);
    has_emb_ = true;
  }
  if (fixed_supports_.empty() && !has_emb_) {
    fixed_supports_.push_back(graph::AdjacencyMatrix::identity(n_).as_tensor());
  }

  auto pw = [&rng](int64_t c_out, int64_t c_in) {
    const float a = std::sqrt(1.0f / static_cast<float>(c_in));
    std::vector<float> v(static_cast<size_t>(c_out * c_in));
    for (auto& x : v) x = rng.uniform(-a, a);
    return Tensor::from({c_out, c_in}, std::move(v), true);
  };
  auto lin = [&rng](int64_t in, int64_t out) {
    return models::init_weight(in, out, rng);
  };

  const int64_t c = cfg_.d_h;
  in_w_ = pw(c, 2 + cfg_.T_u);
  in_b_ = models::zero_bias(c);

  const int64_t n_supports =
      static_cast<int64_t>(fixed_supports_.size()) + (has_emb_ ? 1 : 0);
  const int64_t gc_in = c * (n_supports * cfg_.diffusion_order + 1);
  for (int64_t i = 0; i < cfg_.layers; ++i) {
    Layer l;
    l.tcn_wa = models::init_conv_weight(c, c, cfg_.kernel, rng);
    l.tcn_ba = models::zero_bias(c);
    l.tcn_wb = models::init_conv_weight(c, c, cfg_.kernel, rng);
    l.tcn_bb = models::zero_bias(c);
    l.gc_w = pw(c, gc_in);
    l.gc_b = models::zero_bias(c);
    layers_.push_back(std::move(l));
  }

  const int64_t m = cfg_.d_c * cfg_.n_c;
  q_w1_ = lin(c, c);
  q_b1_ = models::zero_bias(c);
  q_w2_ = lin(c, c);
  q_b2_ = models::zero_bias(c);
  q_w3_ = lin(c, m);
  q_b3_ = models::zero_bias(m);
  r_w1_ = lin(c, c);
  r_b1_ = models::zero_bias(c);
  r_w2_ = lin(c, cfg_.d_e);
  r_b2_ = models::zero_bias(cfg_.d_e);
  o_w1_ = lin(cfg_.d_e, c);
  o_b1_ = models::zero_bias(c);
  o_w2_ = lin(c, cfg_.T);
  o_b2_ = models::zero_bias(cfg_.T);

  {
    const float a = std::sqrt(1.0f / static_cast<float>(cfg_.d_e));
    std::vector<float> v(static_cast<size_t>(cfg_.d_e * m));
    for (auto& x : v) x = rng.uniform(-a, a);
    codebook_ = Tensor::from({cfg_.d_e, m}, std::move(v), true);
  }
}

std::vector<Tensor> ResidualEstimator::supports() const {
  std::vector<Tensor> s = fixed_supports_;
  if (has_emb_) s.push_back(graph::self_adaptive_adjacency(emb_));
  return s;
}

Tensor ResidualEstimator::encode(const Tensor& x, const Tensor& u) {
  if (x.rank() != 4 || x.dim(1) != n_ || x.dim(2) != 2 || x.dim(3) != cfg_.T) {
    throw ShapeError("rescal encode: signal " + ad::shape_str(x.shape()) +
                     " must be [B," + std::to_string(n_) + ",2," +
                     std::to_string(cfg_.T) + "]");
  }
  if (u.rank() != 4 || u.dim(0) != x.dim(0) || u.dim(1) != n_ ||
      u.dim(2) != cfg_.T_u || u.dim(3) != cfg_.T) {
    throw ShapeError("rescal encode: residuals " + ad::shape_str(u.shape()) +
                     " must be [B," + std::to_string(n_) + "," +
                     std::to_string(cfg_.T_u) + "," + std::to_string(cfg_.T) +
                     "] to match signal " + ad::shape_str(x.shape()));
  }
  const int64_t b = x.dim(0), t = cfg_.T, c = cfg_.d_h;
  const std::vector<Tensor> sup = supports();
  const std::vector<int> dil = cfg_.resolved_dilations();

  Tensor h = ad::concat({x, u}, 2);  // [B,N,2+T_u,T]
  h = ad::pointwise_conv(ad::reshape(h, {b * n_, 2 + cfg_.T_u, t}), in_w_,
                         in_b_);
  h = ad::reshape(h, {b, n_, c, t});

  for (size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    Tensor g = ad::reshape(h, {b * n_, c, t});
    Tensor ga = ad::conv1d(g, l.tcn_wa, l.tcn_ba, dil[i]);
    Tensor gb = ad::conv1d(g, l.tcn_wb, l.tcn_bb, dil[i]);
    g = ad::mul(ad::tanh(ga), ad::sigmoid(gb));
    g = ad::reshape(g, {b, n_, c, t});
    Tensor s = graph::graph_conv(g, sup, l.gc_w, l.gc_b,
                                 static_cast<int>(cfg_.diffusion_order));
    h = ad::add(h, s);
  }
  // Temporal aggregation: the final step of the causal stack sees the whole
  // window.
  Tensor z = ad::slice(h, 3, t - 1, t);
  return ad::reshape(z, {b, n_, c});
}

ResidualEstimator::QuantizeResult ResidualEstimator::quantize(const Tensor& z,
                                                              Rng* gumbel_rng) {
  if (z.rank() != 3 || z.dim(1) != n_ || z.dim(2) != cfg_.d_h) {
    throw ShapeError("rescal quantize: latent " + ad::shape_str(z.shape()) +
                     " must be [B," + std::to_string(n_) + "," +
                     std::to_string(cfg_.d_h) + "]");
  }
  const int64_t rows = z.dim(0) * n_;
  const int64_t m = cfg_.d_c * cfg_.n_c;
  Tensor flat = ad::reshape(z, {rows, cfg_.d_h});
  Tensor h = ad::relu(ad::linear(flat, q_w1_, q_b1_));
  h = ad::relu(ad::linear(h, q_w2_, q_b2_));
  Tensor w = ad::linear(h, q_w3_, q_b3_);  // logits [rows, m]

  std::vector<float> noise(static_cast<size_t>(rows * m), 0.0f);
  if (gumbel_rng != nullptr) {
    for (auto& v : noise) v = static_cast<float>(gumbel_rng->gumbel());
  }
  Tensor q = ad::st_gumbel(w, Tensor::from({rows, m}, std::move(noise)),
                           cfg_.n_c, cfg_.tau);

  QuantizeResult out;
  out.q = q;
  out.w = w;
  out.codes.resize(static_cast<size_t>(rows));
  const auto qv = q.values();
  for (int64_t r = 0; r < rows; ++r) {
    PatternCode& pc = out.codes[static_cast<size_t>(r)];
    pc.codes.resize(static_cast<size_t>(cfg_.d_c));
    for (int64_t blk = 0; blk < cfg_.d_c; ++blk) {
      const int64_t base = r * m + blk * cfg_.n_c;
      int32_t idx = 0;
      for (int64_t j = 0; j < cfg_.n_c; ++j) {
        if (qv[static_cast<size_t>(base + j)] == 1.0f) {
          idx = static_cast<int32_t>(j);
          break;
        }
      }
      pc.codes[static_cast<size_t>(blk)] = idx;
    }
  }
  return out;
}

Tensor ResidualEstimator::estimate_residual(const Tensor& z, const Tensor& q) {
  if (z.rank() != 3 || z.dim(1) != n_ || z.dim(2) != cfg_.d_h) {
    throw ShapeError("rescal estimate: latent " + ad::shape_str(z.shape()) +
                     " must be [B," + std::to_string(n_) + "," +
                     std::to_string(cfg_.d_h) + "]");
  }
  const int64_t b = z.dim(0);
  const int64_t rows = b * n_;
  Tensor flat = ad::reshape(z, {rows, cfg_.d_h});
  Tensor reg = ad::linear(ad::relu(ad::linear(flat, r_w1_, r_b1_)), r_w2_,
                          r_b2_);  // [rows, d_e]
  Tensor mixed = reg;
  if (q.defined()) {
    if (q.rank() != 2 || q.dim(0) != rows || q.dim(1) != cfg_.d_c * cfg_.n_c) {
      throw ShapeError("rescal estimate: quantized " +
                       ad::shape_str(q.shape()) + " does not match latent " +
                       ad::shape_str(z.shape()));
    }
    Tensor qe = ad::matmul(q, ad::transpose(codebook_, {1, 0}));  // [rows,d_e]
    mixed = ad::add(reg, qe);
  }
  Tensor out = ad::linear(ad::relu(ad::linear(mixed, o_w1_, o_b1_)), o_w2_,
                          o_b2_);  // [rows, T_y]
  return ad::reshape(out, {b, n_, cfg_.T});
}

ResidualEstimator::ForwardResult ResidualEstimator::forward(const Tensor& x,
                                                            const Tensor& u,
                                                            Rng* gumbel_rng) {
  Tensor z = encode(x, u);
  ForwardResult fr;
  if (cfg_.use_quantizer) {
    QuantizeResult qr = quantize(z, gumbel_rng);
    fr.codes = std::move(qr.codes);
    fr.r_hat = estimate_residual(z, qr.q);
  } else {
    fr.r_hat = estimate_residual(z, Tensor());
  }
  return fr;
}

std::vector<io::NamedTensor> ResidualEstimator::named_parameters() {
  std::vector<io::NamedTensor> out;
  if (has_emb_) {
    out.push_back({"adaptive.e1", emb_.e1});
    out.push_back({"adaptive.e2", emb_.e2});
  }
  out.push_back({"in.w", in_w_});
  out.push_back({"in.b", in_b_});
  for (size_t i = 0; i < layers_.size(); ++i) {
    const std::string p = "layer" + std::to_string(i);
    out.push_back({p + ".tcn.wa", layers_[i].tcn_wa});
    out.push_back({p + ".tcn.ba", layers_[i].tcn_ba});
    out.push_back({p + ".tcn.wb", layers_[i].tcn_wb});
    out.push_back({p + ".tcn.bb", layers_[i].tcn_bb});
    out.push_back({p + ".gc.w", layers_[i].gc_w});
    out.push_back({p + ".gc.b", layers_[i].gc_b});
  }
  out.push_back({"fq.w1", q_w1_});
  out.push_back({"fq.b1", q_b1_});
  out.push_back({"fq.w2", q_w2_});
  out.push_back({"fq.b2", q_b2_});
  out.push_back({"fq.w3", q_w3_});
  out.push_back({"fq.b3", q_b3_});
  out.push_back({"fr.w1", r_w1_});
  out.push_back({"fr.b1", r_b1_});
  out.push_back({"fr.w2", r_w2_});
  out.push_back({"fr.b2", r_b2_});
  out.push_back({"fo.w1", o_w1_});
  out.push_back({"fo.b1", o_b1_});
  out.push_back({"fo.w2", o_w2_});
  out.push_back({"fo.b2", o_b2_});
  out.push_back({"codebook", codebook_});
  return out;
}

std::vector<Tensor> ResidualEstimator::parameters() {
  std::vector<Tensor> out;
  for (auto& nt : named_parameters()) out.push_back(nt.tensor);
  return out;
}

Tensor calibrate(const Tensor& y_hat, const Tensor& r_hat) {
  if (y_hat.shape() != r_hat.shape()) {
    throw ShapeError("calibrate: prediction " + ad::shape_str(y_hat.shape()) +
                     " and residual " + ad::shape_str(r_hat.shape()) +
                     " must match");
  }
  return ad::add(y_hat, r_hat);
}

// ---------------------------------------------------- offline assembly ----

void offline_u_window(const flog::LogIndex& index,
                      const data::SeriesDataset& ds,
                      const data::Scaler& scaler, int64_t anchor_lo,
                      int64_t anchor_hi, int64_t t, int64_t window,
                      int64_t t_u, float* u, uint8_t* mask) {
  const int64_t n = ds.nodes;
  std::fill(u, u + n * t_u * window, 0.0f);
  std::fill(mask, mask + n * t_u * window, 0);
  for (int64_t col = 0; col < window; ++col) {
    const int64_t s = t - window + 1 + col;  // observation time of the column
    if (s < 0 || s >= ds.length) continue;
    for (int64_t node = 0; node < n; ++node) {
      if (ds.is_missing(s, node)) continue;
      const float y_obs = scaler.apply(ds.at(s, node));
      for (int64_t i = 1; i <= t_u; ++i) {
        const int64_t anchor = s - i;  // prediction this residual belongs to
        if (anchor < anchor_lo || anchor > anchor_hi) continue;
        const flog::Record* rec = index.find(anchor, node);
        if (rec == nullptr) continue;
        const float r = y_obs - rec[i - 1].y_pred;
        const int64_t pos = (node * t_u + (i - 1)) * window + col;
        u[pos] = r;
        mask[pos] = 1;
      }
    }
  }
}

SampleSet assemble_samples(const flog::ForecastLog& log,
                           const data::SeriesDataset& ds,
                           const data::Scaler& scaler, data::Split split,
                           const RescalConfig& cfg) {
  const auto [s0, s1] = data::split_range(ds, split);
  const int64_t T = cfg.T;
  const int64_t anchor_lo = s0 + T - 1;      // first prediction in the split
  const int64_t anchor_hi = s1 - 1 - T;      // last fully-observed target
  const int64_t first = s0 + 2 * T;          // post warm-up
  if (first > anchor_hi) {
    throw ContractError("assemble_samples: split '" +
                        std::string(data::split_name(split)) +
                        "' is too short for the window length " +
                        std::to_string(T));
  }

  flog::LogIndex index(log, ds.nodes, T);
  SampleSet set;
  set.n = ds.nodes;
  set.T = T;
  set.T_u = cfg.T_u;
  const int64_t n = ds.nodes;
  const int64_t x_stride = n * 2 * T;
  const int64_t u_stride = n * cfg.T_u * T;
  const int64_t y_stride = n * T;
  std::vector<uint8_t> u_mask(static_cast<size_t>(u_stride));

  for (int64_t t = first; t <= anchor_hi; ++t) {
    const flog::Record* rec0 = index.find(t, 0);
    if (rec0 == nullptr) {
      throw ContractError(
          "assemble_samples: forecast log has no prediction at t=" +
          std::to_string(t));
    }
    set.anchors.push_back(t);
    const size_t si = set.anchors.size() - 1;
    set.x.resize((si + 1) * static_cast<size_t>(x_stride));
    set.u.resize((si + 1) * static_cast<size_t>(u_stride));
    set.target.resize((si + 1) * static_cast<size_t>(y_stride));
    set.valid.resize((si + 1) * static_cast<size_t>(y_stride));

    Tensor xw = data::make_x_window(ds, scaler, t, T);
    std::copy(xw.values().begin(), xw.values().end(),
              set.x.begin() + static_cast<int64_t>(si) * x_stride);
    offline_u_window(index, ds, scaler, anchor_lo, anchor_hi, t, T, cfg.T_u,
                     set.u.data() + static_cast<int64_t>(si) * u_stride,
                     u_mask.data());
    for (int64_t node = 0; node < n; ++node) {
      const flog::Record* rec = index.find(t, node);
      for (int64_t i = 0; i < T; ++i) {
        const flog::Record& rr = rec[i];
        const float truth = scaler.apply(ds.at(t + 1 + i, node));
        if (!ds.is_missing(t + 1 + i, node) && rr.y_true != truth) {
          throw ContractError(
              "assemble_samples: forecast log disagrees with dataset at t=" +
              std::to_string(t) + ", node " + std::to_string(node));
        }
        const int64_t pos = static_cast<int64_t>(si) * y_stride + node * T + i;
        set.target[pos] = rr.y_true - rr.y_pred;
        set.valid[pos] = ds.is_missing(t + 1 + i, node) ? 0 : 1;
      }
    }
  }
  return set;
}

// ------------------------------------------------------------- training ----

namespace {

struct Batch {
  Tensor x, u, target, mask;
  int64_t valid_count = 0;
};

Batch make_batch(const SampleSet& set, const std::vector<size_t>& order,
                 size_t begin, size_t end, const RescalConfig& cfg) {
  const int64_t n = set.n, T = set.T;
  const int64_t bsz = static_cast<int64_t>(end - begin);
  const int64_t x_stride = n * 2 * T;
  const int64_t u_stride = n * cfg.T_u * T;
  const int64_t y_stride = n * T;
  std::vector<float> x(static_cast<size_t>(bsz * x_stride));
  std::vector<float> u(static_cast<size_t>(bsz * u_stride));
  std::vector<float> y(static_cast<size_t>(bsz * y_stride));
  std::vector<float> m(static_cast<size_t>(bsz * y_stride));
  int64_t valid = 0;
  for (int64_t bi = 0; bi < bsz; ++bi) {
    const size_t s = order[begin + static_cast<size_t>(bi)];
    std::copy_n(set.x.begin() + static_cast<int64_t>(s) * x_stride, x_stride,
                x.begin() + bi * x_stride);
    std::copy_n(set.u.begin() + static_cast<int64_t>(s) * u_stride, u_stride,
                u.begin() + bi * u_stride);
    for (int64_t j = 0; j < y_stride; ++j) {
      const int64_t src = static_cast<int64_t>(s) * y_stride + j;
      y[static_cast<size_t>(bi * y_stride + j)] = set.target[static_cast<size_t>(src)];
      const bool ok = set.valid[static_cast<size_t>(src)] != 0;
      m[static_cast<size_t>(bi * y_stride + j)] = ok ? 1.0f : 0.0f;
      valid += ok ? 1 : 0;
    }
  }
  Batch b;
  b.x = Tensor::from({bsz, n, 2, T}, std::move(x));
  b.u = Tensor::from({bsz, n, cfg.T_u, T}, std::move(u));
  b.target = Tensor::from({bsz, n, T}, std::move(y));
  b.mask = Tensor::from({bsz, n, T}, std::move(m));
  b.valid_count = std::max<int64_t>(valid, 1);
  return b;
}

}  // namespace

RescalTrainResult ResidualEstimator::train(const flog::ForecastLog& log,
                                           const data::SeriesDataset& ds,
                                           const data::Scaler& scaler,
                                           uint64_t seed) {
  SampleSet train_set =
      assemble_samples(log, ds, scaler, data::Split::Train, cfg_);
  SampleSet val_set = assemble_samples(log, ds, scaler, data::Split::Val, cfg_);

  auto params = parameters();
  ad::Adam opt(params, {.lr = cfg_.lr});
  Rng shuffle_rng(Rng(seed).fork(0x11u).next_u64());
  Rng gumbel_rng(Rng(seed).fork(0x13u).next_u64());

  auto eval_mae = [&](const SampleSet& set, uint64_t eval_seed) {
    ad::NoGradGuard no_grad;
    Rng eval_rng(eval_seed);
    std::vector<size_t> idx(set.anchors.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    double total = 0.0;
    int64_t count = 0;
    for (size_t i = 0; i < idx.size(); i += static_cast<size_t>(cfg_.batch)) {
      const size_t end = std::min(idx.size(), i + static_cast<size_t>(cfg_.batch));
      Batch b = make_batch(set, idx, i, end, cfg_);
      ForwardResult fr = forward(b.x, b.u, &eval_rng);
      const auto pv = fr.r_hat.values();
      const auto yv = b.target.values();
      const auto mv = b.mask.values();
      for (size_t j = 0; j < pv.size(); ++j) {
        if (mv[j] == 0.0f) continue;
        total += std::fabs(static_cast<double>(pv[j]) - yv[j]);
        count += 1;
      }
    }
    return count > 0 ? total / static_cast<double>(count) : 0.0;
  };

  RescalTrainResult result;
  std::vector<size_t> order(train_set.anchors.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<std::vector<float>> best;
  double best_val = std::numeric_limits<double>::infinity();
  const uint64_t eval_seed = Rng(seed).fork(0x17u).next_u64();

  for (int64_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double train_loss = 0.0;
    int64_t batches = 0;
    for (size_t i = 0; i < order.size(); i += static_cast<size_t>(cfg_.batch)) {
      const size_t end = std::min(order.size(), i + static_cast<size_t>(cfg_.batch));
      Batch b = make_batch(train_set, order, i, end, cfg_);
      ForwardResult fr = forward(b.x, b.u, &gumbel_rng);
      Tensor err = ad::mul(ad::abs(ad::sub(fr.r_hat, b.target)), b.mask);
      Tensor loss =
          ad::scale(ad::sum(err), 1.0f / static_cast<float>(b.valid_count));
      train_loss += loss.item();
      batches += 1;
      ad::backward(loss);
      opt.step();
    }
    result.epoch_train_mae.push_back(train_loss /
                                     std::max<int64_t>(batches, 1));
    const double val = eval_mae(val_set, eval_seed);
    result.final_val_mae = val;
    if (val < best_val) {
      best_val = val;
      best.clear();
      for (Tensor& p : params) {
        best.emplace_back(p.values().begin(), p.values().end());
      }
      result.best_epoch = epoch;
    }
  }
  if (!best.empty()) {
    for (size_t i = 0; i < params.size(); ++i) {
      auto dst = params[i].mutable_values();
      std::copy(best[i].begin(), best[i].end(), dst.begin());
    }
  }
  result.best_val_mae = best_val;
  return result;
}

PatternExport export_pattern_codes(ResidualEstimator& model,
                                   const flog::ForecastLog& log,
                                   const data::SeriesDataset& ds,
                                   const data::Scaler& scaler,
                                   data::Split split) {
  ad::NoGradGuard no_grad;
  const RescalConfig& cfg = model.config();
  SampleSet set = assemble_samples(log, ds, scaler, split, cfg);
  PatternExport pe;
  pe.anchors = set.anchors;
  std::vector<size_t> idx(set.anchors.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (size_t i = 0; i < idx.size(); i += static_cast<size_t>(cfg.batch)) {
    const size_t end = std::min(idx.size(), i + static_cast<size_t>(cfg.batch));
    Batch b = make_batch(set, idx, i, end, cfg);
    Tensor z = model.encode(b.x, b.u);
    auto qr = model.quantize(z, nullptr);  // deterministic argmax codes
    for (auto& pc : qr.codes) pe.codes.push_back(std::move(pc));
  }
  return pe;
}

namespace {

std::map<std::string, std::string> read_kv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("rescal config: cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

}  // namespace

void save_estimator(const std::string& dir, ResidualEstimator& model) {
  io::save_checkpoint(dir + "/rescal.rscl", model.named_parameters());
  const RescalConfig& c = model.config();
  std::ofstream out(dir + "/rescal_config.txt", std::ios::trunc);
  if (!out) throw std::runtime_error("rescal config: cannot open " + dir);
  out << "layers = " << c.layers << '\n'
      << "d_h = " << c.d_h << '\n'
      << "d_c = " << c.d_c << '\n'
      << "n_c = " << c.n_c << '\n'
      << "d_e = " << c.d_e << '\n'
      << "T = " << c.T << '\n'
      << "T_u = " << c.T_u << '\n'
      << "tau = " << c.tau << '\n'
      << "kernel = " << c.kernel << '\n'
      << "dilations = ";
  const auto dil = c.resolved_dilations();
  for (size_t i = 0; i < dil.size(); ++i) {
    if (i) out << ',';
    out << dil[i];
  }
  out << '\n'
      << "diffusion_order = " << c.diffusion_order << '\n'
      << "node_embed_dim = " << c.node_embed_dim << '\n'
      << "use_adaptive = " << (c.use_adaptive ? 1 : 0) << '\n'
      << "use_quantizer = " << (c.use_quantizer ? 1 : 0) << '\n';
}

ResidualEstimator load_estimator(const std::string& dir, int64_t n_nodes,
                                 std::vector<Tensor> fixed_supports) {
  const auto kv = read_kv(dir + "/rescal_config.txt");
  auto want = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) {
      throw std::runtime_error("rescal config: missing key '" +
                               std::string(key) + "' in " + dir);
    }
    return it->second;
  };
  RescalConfig c;
  c.layers = std::stoll(want("layers"));
  c.d_h = std::stoll(want("d_h"));
  c.d_c = std::stoll(want("d_c"));
  c.n_c = std::stoll(want("n_c"));
  c.d_e = std::stoll(want("d_e"));
  c.T = std::stoll(want("T"));
  c.T_u = std::stoll(want("T_u"));
  c.tau = std::stof(want("tau"));
  c.kernel = std::stoll(want("kernel"));
  {
    std::string cur;
    for (char ch : want("dilations") + ",") {
      if (ch == ',') {
        if (!cur.empty()) c.dilations.push_back(std::stoi(cur));
        cur.clear();
      } else {
        cur.push_back(ch);
      }
    }
  }
  c.diffusion_order = std::stoll(want("diffusion_order"));
  c.node_embed_dim = std::stoll(want("node_embed_dim"));
  c.use_adaptive = want("use_adaptive") == "1";
  c.use_quantizer = want("use_quantizer") == "1";
  ResidualEstimator model(c, n_nodes, std::move(fixed_supports), 0);
  io::load_into(dir + "/rescal.rscl", model.named_parameters());
  return model;
}

void write_pattern_csv(const std::string& path, const PatternExport& pe,
                       int64_t nodes, int64_t d_c) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("pattern csv: cannot open " + path);
  out << "t,node";
  for (int64_t k = 0; k < d_c; ++k) out << ",code_" << k;
  out << '\n';
  for (size_t a = 0; a < pe.anchors.size(); ++a) {
    for (int64_t n = 0; n < nodes; ++n) {
      const PatternCode& pc = pe.codes[a * static_cast<size_t>(nodes) +
                                       static_cast<size_t>(n)];
      out << pe.anchors[a] << ',' << n;
      for (int32_t c : pc.codes) out << ',' << c;
      out << '\n';
    }
  }
}

}  // namespace rescal::est
