#include "rescal/models.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <numeric>

#include "rescal/adam.hpp"

namespace rescal::models {

using ad::ContractError;
using ad::ShapeError;
using ad::Tensor;

Tensor init_weight(int64_t fan_in, int64_t fan_out, Rng& rng) {
  const float a = std::sqrt(1.0f / static_cast<float>(fan_in));
  std::vector<float> v(static_cast<size_t>(fan_in * fan_out));
  for (auto& x : v) x = rng.uniform(-a, a);
  return Tensor::from({fan_in, fan_out}, std::move(v), true);
}

Tensor init_conv_weight(int64_t c_out, int64_t c_in, int64_t kw, Rng& rng) {
  const float a = std::sqrt(1.0f / static_cast<float>(c_in * kw));
  std::vector<float> v(static_cast<size_t>(c_out * c_in * kw));
  for (auto& x : v) x = rng.uniform(-a, a);
  return Tensor::from({c_out, c_in, kw}, std::move(v), true);
}

Tensor zero_bias(int64_t n) { return Tensor::zeros({n}, true); }

namespace {

// Pointwise-conv weight stored [Cout,Cin]; fan_in is the input channel count.
Tensor init_pw_weight(int64_t c_out, int64_t c_in, Rng& rng) {
  const float a = std::sqrt(1.0f / static_cast<float>(c_in));
  std::vector<float> v(static_cast<size_t>(c_out * c_in));
  for (auto& x : v) x = rng.uniform(-a, a);
  return Tensor::from({c_out, c_in}, std::move(v), true);
}

}  // namespace

// ----------------------------------------------------------------- GRU ----

GruParams GruParams::init(int64_t in_dim, int64_t hidden, Rng& rng) {
  GruParams p;
  p.wxz = init_weight(in_dim, hidden, rng);
  p.whz = init_weight(hidden, hidden, rng);
  p.bz = zero_bias(hidden);
  p.wxr = init_weight(in_dim, hidden, rng);
  p.whr = init_weight(hidden, hidden, rng);
  p.br = zero_bias(hidden);
  p.wxh = init_weight(in_dim, hidden, rng);
  p.whh = init_weight(hidden, hidden, rng);
  p.bh = zero_bias(hidden);
  return p;
}

void GruParams::collect(const std::string& prefix,
                        std::vector<io::NamedTensor>& out) const {
  out.push_back({prefix + ".wxz", wxz});
  out.push_back({prefix + ".whz", whz});
  out.push_back({prefix + ".bz", bz});
  out.push_back({prefix + ".wxr", wxr});
  out.push_back({prefix + ".whr", whr});
  out.push_back({prefix + ".br", br});
  out.push_back({prefix + ".wxh", wxh});
  out.push_back({prefix + ".whh", whh});
  out.push_back({prefix + ".bh", bh});
}

void GruParams::append_params(std::vector<Tensor>& out) const {
  for (const Tensor& t : {wxz, whz, bz, wxr, whr, br, wxh, whh, bh}) {
    out.push_back(t);
  }
}

Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruParams& p) {
  if (x.rank() != 2 || h_prev.rank() != 2 || x.dim(0) != h_prev.dim(0)) {
    throw ShapeError("gru_cell: input " + ad::shape_str(x.shape()) +
                     " and state " + ad::shape_str(h_prev.shape()) +
                     " disagree");
  }
  Tensor z = ad::sigmoid(
      ad::add(ad::add(ad::matmul(x, p.wxz), ad::matmul(h_prev, p.whz)), p.bz));
  Tensor r = ad::sigmoid(
      ad::add(ad::add(ad::matmul(x, p.wxr), ad::matmul(h_prev, p.whr)), p.br));
  Tensor cand = ad::tanh(ad::add(
      ad::add(ad::matmul(x, p.wxh), ad::matmul(ad::mul(r, h_prev), p.whh)),
      p.bh));
  Tensor keep = ad::mul(ad::sub(Tensor::full({1}, 1.0f), z), h_prev);
  return ad::add(keep, ad::mul(z, cand));
}

// ----------------------------------------------------------- gated TCN ----

GatedTcnParams GatedTcnParams::init(int64_t c_in, int64_t c_out, int64_t kw,
                                    Rng& rng) {
  GatedTcnParams p;
  p.wa = init_conv_weight(c_out, c_in, kw, rng);
  p.ba = zero_bias(c_out);
  p.wb = init_conv_weight(c_out, c_in, kw, rng);
  p.bb = zero_bias(c_out);
  return p;
}

void GatedTcnParams::collect(const std::string& prefix,
                             std::vector<io::NamedTensor>& out) const {
  out.push_back({prefix + ".wa", wa});
  out.push_back({prefix + ".ba", ba});
  out.push_back({prefix + ".wb", wb});
  out.push_back({prefix + ".bb", bb});
}

void GatedTcnParams::append_params(std::vector<Tensor>& out) const {
  for (const Tensor& t : {wa, ba, wb, bb}) out.push_back(t);
}

Tensor gated_tcn(const Tensor& x, const GatedTcnParams& p, int dilation) {
  Tensor a = ad::conv1d(x, p.wa, p.ba, dilation);
  Tensor b = ad::conv1d(x, p.wb, p.bb, dilation);
  return ad::mul(ad::tanh(a), ad::sigmoid(b));
}

// -------------------------------------------------------------- seq2seq ----

Seq2seqModel::Seq2seqModel(Seq2seqConfig cfg, uint64_t seed) : cfg_(cfg) {
  if (cfg_.input_len < 1 || cfg_.output_len < 1 || cfg_.hidden < 1) {
    throw ContractError("seq2seq: dimensions must be positive");
  }
  Rng rng(seed);
  enc_ = GruParams::init(1, cfg_.hidden, rng);
  dec_ = GruParams::init(1, cfg_.hidden, rng);
  w1_ = init_weight(cfg_.hidden, cfg_.mlp_hidden, rng);
  b1_ = zero_bias(cfg_.mlp_hidden);
  w2_ = init_weight(cfg_.mlp_hidden, 1, rng);
  b2_ = zero_bias(1);
}

Tensor Seq2seqModel::forward(const Tensor& hist, const Tensor* teacher,
                             Rng* tf_rng) {
  if (hist.rank() != 2 || hist.dim(1) != cfg_.input_len) {
    throw ShapeError("seq2seq: history " + ad::shape_str(hist.shape()) +
                     " does not match input length " +
                     std::to_string(cfg_.input_len));
  }
  const int64_t batch = hist.dim(0);
  Tensor h = Tensor::zeros({batch, cfg_.hidden});
  for (int64_t t = 0; t < cfg_.input_len; ++t) {
    Tensor x_t = ad::slice(hist, 1, t, t + 1);
    h = gru_cell(x_t, h, enc_);
  }

  Tensor input = ad::slice(hist, 1, cfg_.input_len - 1, cfg_.input_len);
  std::vector<Tensor> outputs;
  outputs.reserve(static_cast<size_t>(cfg_.output_len));
  for (int64_t j = 0; j < cfg_.output_len; ++j) {
    h = gru_cell(input, h, dec_);
    Tensor y = ad::linear(ad::relu(ad::linear(h, w1_, b1_)), w2_, b2_);
    outputs.push_back(y);
    if (j + 1 == cfg_.output_len) break;
    const bool force = teacher != nullptr && tf_rng != nullptr &&
                       tf_rng->uniform01() < cfg_.teacher_forcing;
    input = force ? ad::slice(*teacher, 1, j, j + 1) : y;
  }
  return ad::concat(outputs, 1);
}

Tensor Seq2seqModel::predict_window(const Tensor& x) {
  if (x.rank() != 3 || x.dim(0) != 1 || x.dim(1) != 2 ||
      x.dim(2) != cfg_.input_len) {
    throw ShapeError("seq2seq: window " + ad::shape_str(x.shape()) +
                     " must be [1,2," + std::to_string(cfg_.input_len) + "]");
  }
  Tensor speeds = ad::reshape(ad::slice(x, 1, 0, 1), {1, cfg_.input_len});
  return forward(speeds, nullptr, nullptr);  // [1,T_y]
}

std::vector<io::NamedTensor> Seq2seqModel::named_parameters() {
  std::vector<io::NamedTensor> out;
  enc_.collect("encoder", out);
  dec_.collect("decoder", out);
  out.push_back({"head.w1", w1_});
  out.push_back({"head.b1", b1_});
  out.push_back({"head.w2", w2_});
  out.push_back({"head.b2", b2_});
  return out;
}

std::vector<Tensor> Seq2seqModel::parameters() {
  std::vector<Tensor> out;
  enc_.append_params(out);
  dec_.append_params(out);
  for (const Tensor& t : {w1_, b1_, w2_, b2_}) out.push_back(t);
  return out;
}

// ------------------------------------------------------ graph forecaster ----

int64_t GraphForecasterConfig::receptive_field() const {
  int64_t field = 1;
  for (int d : dilations) field += (kernel - 1) * d;
  return field;
}

GraphForecaster::GraphForecaster(GraphForecasterConfig cfg, int64_t n_nodes,
                                 std::vector<Tensor> fixed_supports,
                                 uint64_t seed)
    : cfg_(std::move(cfg)), n_(n_nodes), fixed_supports_(std::move(fixed_supports)) {
  if (static_cast<int64_t>(cfg_.dilations.size()) != cfg_.blocks) {
    throw ContractError("graph forecaster: dilation schedule must list one "
                        "dilation per block");
  }
  if (cfg_.receptive_field() < cfg_.input_len) {
    throw ContractError(
        "graph forecaster: receptive field " +
        std::to_string(cfg_.receptive_field()) + " does not cover input " +
        std::to_string(cfg_.input_len));
  }
  for (const Tensor& s : fixed_supports_) {
    if (s.rank() != 2 || s.dim(0) != n_ || s.dim(1) != n_) {
      throw ShapeError("graph forecaster: support " +
                       ad::shape_str(s.shape()) + " does not match " +
                       std::to_string(n_) + " nodes");
    }
  }

  Rng rng(seed);
  if (cfg_.use_adaptive) {
    emb_ = graph::NodeEmbeddings::init(n_, cfg_.node_embed_dim, rng);
    has_emb_ = true;
  }
  const int64_t c = cfg_.channels;
  in_w_ = init_pw_weight(c, 2, rng);
  in_b_ = zero_bias(c);

  const int64_t n_supports =
      static_cast<int64_t>(fixed_supports_.size()) + (has_emb_ ? 1 : 0);
  const int64_t gc_in = c * (n_supports * cfg_.diffusion_order + 1);
  for (int64_t blk = 0; blk < cfg_.blocks; ++blk) {
    tcn_.push_back(GatedTcnParams::init(c, c, cfg_.kernel, rng));
    gc_w_.push_back(init_pw_weight(c, gc_in, rng));
    gc_b_.push_back(zero_bias(c));
  }
  head_w1_ = init_weight(c, c, rng);
  head_b1_ = zero_bias(c);
  head_w2_ = init_weight(c, cfg_.output_len, rng);
  head_b2_ = zero_bias(cfg_.output_len);
}

std::vector<Tensor> GraphForecaster::supports() const {
  std::vector<Tensor> s = fixed_supports_;
  if (has_emb_) s.push_back(graph::self_adaptive_adjacency(emb_));
  return s;
}

Tensor GraphForecaster::forward(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != n_ || x.dim(2) != 2 ||
      x.dim(3) != cfg_.input_len) {
    throw ShapeError("graph forecaster: window " + ad::shape_str(x.shape()) +
                     " must be [B," + std::to_string(n_) + ",2," +
                     std::to_string(cfg_.input_len) + "]");
  }
  const int64_t b = x.dim(0), t = cfg_.input_len, c = cfg_.channels;
  const std::vector<Tensor> sup = supports();

  Tensor h = ad::pointwise_conv(ad::reshape(x, {b * n_, 2, t}), in_w_, in_b_);
  h = ad::reshape(h, {b, n_, c, t});

  Tensor skip;
  for (int64_t blk = 0; blk < cfg_.blocks; ++blk) {
    Tensor g = ad::reshape(h, {b * n_, c, t});
    g = gated_tcn(g, tcn_[static_cast<size_t>(blk)],
                  cfg_.dilations[static_cast<size_t>(blk)]);
    g = ad::reshape(g, {b, n_, c, t});
    Tensor s = graph::graph_conv(g, sup, gc_w_[static_cast<size_t>(blk)],
                                 gc_b_[static_cast<size_t>(blk)],
                                 static_cast<int>(cfg_.diffusion_order));
    h = ad::add(h, s);
    skip = skip.defined() ? ad::add(skip, s) : s;
  }

  Tensor out = ad::relu(skip);
  out = ad::slice(out, 3, t - 1, t);              // [B,N,C,1]
  out = ad::reshape(out, {b * n_, c});
  out = ad::relu(ad::linear(out, head_w1_, head_b1_));
  out = ad::linear(out, head_w2_, head_b2_);      // [B*N, T_y]
  return ad::reshape(out, {b, n_, cfg_.output_len});
}

Tensor GraphForecaster::predict_window(const Tensor& x) {
  if (x.rank() != 3) {
    throw ShapeError("graph forecaster: window must be [N,2,T], got " +
                     ad::shape_str(x.shape()));
  }
  Tensor batched = ad::reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
  return ad::reshape(forward(batched), {n_, cfg_.output_len});
}

std::vector<io::NamedTensor> GraphForecaster::named_parameters() {
  std::vector<io::NamedTensor> out;
  if (has_emb_) {
    out.push_back({"adaptive.e1", emb_.e1});
    out.push_back({"adaptive.e2", emb_.e2});
  }
  out.push_back({"in.w", in_w_});
  out.push_back({"in.b", in_b_});
  for (int64_t blk = 0; blk < cfg_.blocks; ++blk) {
    const std::string p = "block" + std::to_string(blk);
    tcn_[static_cast<size_t>(blk)].collect(p + ".tcn", out);
    out.push_back({p + ".gc.w", gc_w_[static_cast<size_t>(blk)]});
    out.push_back({p + ".gc.b", gc_b_[static_cast<size_t>(blk)]});
  }
  out.push_back({"head.w1", head_w1_});
  out.push_back({"head.b1", head_b1_});
  out.push_back({"head.w2", head_w2_});
  out.push_back({"head.b2", head_b2_});
  return out;
}

std::vector<Tensor> GraphForecaster::parameters() {
  std::vector<Tensor> out;
  if (has_emb_) {
    out.push_back(emb_.e1);
    out.push_back(emb_.e2);
  }
  out.push_back(in_w_);
  out.push_back(in_b_);
  for (int64_t blk = 0; blk < cfg_.blocks; ++blk) {
    tcn_[static_cast<size_t>(blk)].append_params(out);
    out.push_back(gc_w_[static_cast<size_t>(blk)]);
    out.push_back(gc_b_[static_cast<size_t>(blk)]);
  }
  for (const Tensor& t : {head_w1_, head_b1_, head_w2_, head_b2_}) {
    out.push_back(t);
  }
  return out;
}

// ------------------------------------------------------------- training ----

namespace {

struct BatchXY {
  Tensor x;                    // model input
  Tensor y;                    // targets (constant)
  Tensor mask;                 // 1 where the target is observed
  int64_t valid_count = 0;
};

// Masked MSE: sum(mask * (pred-y)^2) / sum(mask).
Tensor masked_mse(const Tensor& pred, const BatchXY& b) {
  Tensor diff = ad::sub(pred, b.y);
  Tensor sq = ad::mul(diff, diff);
  Tensor masked = ad::mul(sq, b.mask);
  return ad::scale(ad::sum(masked), 1.0f / static_cast<float>(b.valid_count));
}

BatchXY make_seq_batch(const data::SeriesDataset& ds,
                       const data::Scaler& scaler,
                       const std::vector<int64_t>& anchors, size_t begin,
                       size_t end, int64_t t_x, int64_t t_y) {
  const int64_t bsz = static_cast<int64_t>(end - begin);
  std::vector<float> hist(static_cast<size_t>(bsz * t_x));
  std::vector<float> tgt(static_cast<size_t>(bsz * t_y));
  std::vector<float> mask(static_cast<size_t>(bsz * t_y));
  int64_t valid = 0;
  for (int64_t bi = 0; bi < bsz; ++bi) {
    const int64_t t = anchors[begin + static_cast<size_t>(bi)];
    for (int64_t i = 0; i < t_x; ++i) {
      hist[static_cast<size_t>(bi * t_x + i)] =
          scaler.apply(ds.at(t - t_x + 1 + i, 0));
    }
    data::Target target = data::make_target(ds, scaler, t, t_y);
    for (int64_t i = 0; i < t_y; ++i) {
      tgt[static_cast<size_t>(bi * t_y + i)] = target.y[static_cast<size_t>(i)];
      const float m = target.valid[static_cast<size_t>(i)] ? 1.0f : 0.0f;
      mask[static_cast<size_t>(bi * t_y + i)] = m;
      valid += target.valid[static_cast<size_t>(i)];
    }
  }
  BatchXY b;
  b.x = Tensor::from({bsz, t_x}, std::move(hist));
  b.y = Tensor::from({bsz, t_y}, std::move(tgt));
  b.mask = Tensor::from({bsz, t_y}, std::move(mask));
  b.valid_count = std::max<int64_t>(valid, 1);
  return b;
}

BatchXY make_graph_batch(const data::SeriesDataset& ds,
                         const data::Scaler& scaler,
                         const std::vector<int64_t>& anchors, size_t begin,
                         size_t end, int64_t t_x, int64_t t_y) {
  const int64_t bsz = static_cast<int64_t>(end - begin);
  const int64_t n = ds.nodes;
  std::vector<float> x(static_cast<size_t>(bsz * n * 2 * t_x));
  std::vector<float> tgt(static_cast<size_t>(bsz * n * t_y));
  std::vector<float> mask(static_cast<size_t>(bsz * n * t_y));
  int64_t valid = 0;
  for (int64_t bi = 0; bi < bsz; ++bi) {
    const int64_t t = anchors[begin + static_cast<size_t>(bi)];
    Tensor w = data::make_x_window(ds, scaler, t, t_x);
    std::copy(w.values().begin(), w.values().end(),
              x.begin() + bi * n * 2 * t_x);
    data::Target target = data::make_target(ds, scaler, t, t_y);
    for (int64_t i = 0; i < n * t_y; ++i) {
      tgt[static_cast<size_t>(bi * n * t_y + i)] = target.y[static_cast<size_t>(i)];
      mask[static_cast<size_t>(bi * n * t_y + i)] =
          target.valid[static_cast<size_t>(i)] ? 1.0f : 0.0f;
      valid += target.valid[static_cast<size_t>(i)];
    }
  }
  BatchXY b;
  b.x = Tensor::from({bsz, n, 2, t_x}, std::move(x));
  b.y = Tensor::from({bsz, n, t_y}, std::move(tgt));
  b.mask = Tensor::from({bsz, n, t_y}, std::move(mask));
  b.valid_count = std::max<int64_t>(valid, 1);
  return b;
}

struct Snapshot {
  std::vector<std::vector<float>> values;
};

Snapshot snapshot_params(std::vector<Tensor>& params) {
  Snapshot s;
  for (Tensor& p : params) {
    s.values.emplace_back(p.values().begin(), p.values().end());
  }
  return s;
}

void restore_params(std::vector<Tensor>& params, const Snapshot& s) {
  for (size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].mutable_values();
    std::copy(s.values[i].begin(), s.values[i].end(), dst.begin());
  }
}

}  // namespace

flog::ForecastLog emit_forecast_log(Forecaster& model,
                                    const data::SeriesDataset& ds,
                                    const data::Scaler& scaler) {
  ad::NoGradGuard no_grad;
  const int64_t t_x = model.input_len(), t_y = model.output_len();
  flog::ForecastLog log;
  for (data::Split split :
       {data::Split::Train, data::Split::Val, data::Split::Test}) {
    for (int64_t t : data::window_anchors(ds, split, t_x, t_y)) {
      Tensor x = data::make_x_window(ds, scaler, t, t_x);
      Tensor pred = model.predict_window(x);
      const auto pv = pred.values();
      for (int64_t n = 0; n < ds.nodes; ++n) {
        for (int64_t i = 0; i < t_y; ++i) {
          flog::Record r;
          r.t = t;
          r.node = static_cast<int32_t>(n);
          r.horizon = static_cast<int32_t>(i + 1);
          r.y_true = scaler.apply(ds.at(t + 1 + i, n));
          r.y_pred = pv[static_cast<size_t>(n * t_y + i)];
          log.records.push_back(r);
        }
      }
    }
  }
  return log;
}

namespace {

template <typename MakeBatch, typename LossFn, typename PredFn>
TrainResult train_loop(std::vector<Tensor> params, int64_t epochs,
                       int64_t batch_size, float lr,
                       const std::vector<int64_t>& train_anchors,
                       const std::vector<int64_t>& val_anchors,
                       MakeBatch&& make_batch, LossFn&& loss_fn,
                       PredFn&& pred_fn, uint64_t seed) {
  ad::Adam opt(params, {.lr = lr});
  Rng shuffle_rng(Rng(seed).fork(0x5u).next_u64());

  auto eval_mse = [&](const std::vector<int64_t>& anchors) {
    ad::NoGradGuard no_grad;
    double total = 0.0;
    int64_t count = 0;
    for (size_t i = 0; i < anchors.size(); i += static_cast<size_t>(batch_size)) {
      const size_t end = std::min(anchors.size(), i + static_cast<size_t>(batch_size));
      BatchXY b = make_batch(anchors, i, end);
      Tensor pred = pred_fn(b);
      const auto pv = pred.values();
      const auto yv = b.y.values();
      const auto mv = b.mask.values();
      for (size_t j = 0; j < pv.size(); ++j) {
        if (mv[j] == 0.0f) continue;
        const double d = static_cast<double>(pv[j]) - yv[j];
        total += d * d;
        count += 1;
      }
    }
    return count > 0 ? total / static_cast<double>(count) : 0.0;
  };

  TrainResult result;
  std::vector<int64_t> order = train_anchors;
  Snapshot best;
  double best_val = std::numeric_limits<double>::infinity();

  for (int64_t epoch = 0; epoch < epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double train_loss = 0.0;
    int64_t batches = 0;
    for (size_t i = 0; i < order.size(); i += static_cast<size_t>(batch_size)) {
      const size_t end = std::min(order.size(), i + static_cast<size_t>(batch_size));
      BatchXY b = make_batch(order, i, end);
      Tensor loss = loss_fn(b);
      train_loss += loss.item();
      batches += 1;
      ad::backward(loss);
      opt.step();
    }
    result.epoch_train_loss.push_back(train_loss /
                                      std::max<int64_t>(batches, 1));
    const double val = eval_mse(val_anchors);
    result.final_val_mse = val;
    if (val < best_val) {
      best_val = val;
      best = snapshot_params(params);
      result.best_epoch = epoch;
    }
  }
  if (!best.values.empty()) restore_params(params, best);
  result.best_val_mse = best_val;
  return result;
}

}  // namespace

TrainResult train_seq2seq(Seq2seqModel& model, const data::SeriesDataset& ds,
                          const data::Scaler& scaler, uint64_t seed) {
  if (ds.nodes != 1) {
    throw ContractError("train_seq2seq: model consumes a single series");
  }
  const auto& cfg = model.config();
  const auto train_anchors =
      data::window_anchors(ds, data::Split::Train, cfg.input_len, cfg.output_len);
  const auto val_anchors =
      data::window_anchors(ds, data::Split::Val, cfg.input_len, cfg.output_len);

  Rng tf_rng(Rng(seed).fork(0x7u).next_u64());
  auto make_batch = [&](const std::vector<int64_t>& anchors, size_t b,
                        size_t e) {
    return make_seq_batch(ds, scaler, anchors, b, e, cfg.input_len,
                          cfg.output_len);
  };
  auto loss_fn = [&](const BatchXY& b) {
    Tensor pred = model.forward(b.x, &b.y, &tf_rng);
    return masked_mse(pred, b);
  };
  auto pred_fn = [&](const BatchXY& b) {
    return model.forward(b.x, nullptr, nullptr);
  };

  TrainResult result =
      train_loop(model.parameters(), cfg.epochs, cfg.batch, cfg.lr,
                 train_anchors, val_anchors, make_batch, loss_fn, pred_fn, seed);
  result.log = emit_forecast_log(model, ds, scaler);
  return result;
}

// ---------------------------------------------------------- persistence ----

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(std::stoi(cur));
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::stoi(cur));
  return out;
}

std::map<std::string, std::string> read_kv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("model config: cannot open " + path);
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

void save_base(const std::string& dir, Forecaster& model) {
  io::save_checkpoint(dir + "/base_model.rscl", model.named_parameters());
  std::ofstream out(dir + "/base_config.txt", std::ios::trunc);
  if (!out) throw std::runtime_error("model config: cannot open " + dir);
  out << "kind = " << model.kind() << '\n';
  if (auto* s = dynamic_cast<Seq2seqModel*>(&model)) {
    const auto& c = s->config();
    out << "input_len = " << c.input_len << '\n'
        << "output_len = " << c.output_len << '\n'
        << "hidden = " << c.hidden << '\n'
        << "mlp_hidden = " << c.mlp_hidden << '\n'
        << "teacher_forcing = " << c.teacher_forcing << '\n';
  } else if (auto* g = dynamic_cast<GraphForecaster*>(&model)) {
    const auto& c = g->config();
    out << "input_len = " << c.input_len << '\n'
        << "output_len = " << c.output_len << '\n'
        << "blocks = " << c.blocks << '\n'
        << "channels = " << c.channels << '\n'
        << "kernel = " << c.kernel << '\n'
        << "dilations = " << join_ints(c.dilations) << '\n'
        << "diffusion_order = " << c.diffusion_order << '\n'
        << "node_embed_dim = " << c.node_embed_dim << '\n'
        << "use_adaptive = " << (c.use_adaptive ? 1 : 0) << '\n';
  }
}

std::unique_ptr<Forecaster> load_base(const std::string& dir, int64_t n_nodes,
                                      std::vector<Tensor> fixed_supports) {
  const auto kv = read_kv(dir + "/base_config.txt");
  auto want = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) {
      throw std::runtime_error("model config: missing key '" +
                               std::string(key) + "' in " + dir);
    }
    return it->second;
  };
  std::unique_ptr<Forecaster> model;
  if (want("kind") == "seq2seq") {
    Seq2seqConfig c;
    c.input_len = std::stoll(want("input_len"));
    c.output_len = std::stoll(want("output_len"));
    c.hidden = std::stoll(want("hidden"));
    c.mlp_hidden = std::stoll(want("mlp_hidden"));
    c.teacher_forcing = std::stof(want("teacher_forcing"));
    model = std::make_unique<Seq2seqModel>(c, 0);
  } else if (want("kind") == "graph") {
    GraphForecasterConfig c;
    c.input_len = std::stoll(want("input_len"));
    c.output_len = std::stoll(want("output_len"));
    c.blocks = std::stoll(want("blocks"));
    c.channels = std::stoll(want("channels"));
    c.kernel = std::stoll(want("kernel"));
    c.dilations = split_ints(want("dilations"));
    c.diffusion_order = std::stoll(want("diffusion_order"));
    c.node_embed_dim = std::stoll(want("node_embed_dim"));
    c.use_adaptive = want("use_adaptive") == "1";
    model = std::make_unique<GraphForecaster>(c, n_nodes,
                                              std::move(fixed_supports), 0);
  } else {
    throw std::runtime_error("model config: unknown kind '" + want("kind") +
                             "' in " + dir);
  }
  io::load_into(dir + "/base_model.rscl", model->named_parameters());
  return model;
}

TrainResult train_graph(GraphForecaster& model, const data::SeriesDataset& ds,
                        const data::Scaler& scaler, uint64_t seed) {
  if (ds.nodes != model.nodes()) {
    throw ContractError("train_graph: dataset has " +
                        std::to_string(ds.nodes) + " nodes, model wants " +
                        std::to_string(model.nodes()));
  }
  const auto& cfg = model.config();
  const auto train_anchors =
      data::window_anchors(ds, data::Split::Train, cfg.input_len, cfg.output_len);
  const auto val_anchors =
      data::window_anchors(ds, data::Split::Val, cfg.input_len, cfg.output_len);

  auto make_batch = [&](const std::vector<int64_t>& anchors, size_t b,
                        size_t e) {
    return make_graph_batch(ds, scaler, anchors, b, e, cfg.input_len,
                            cfg.output_len);
  };
  auto loss_fn = [&](const BatchXY& b) {
    Tensor pred = model.forward(b.x);
    return masked_mse(pred, b);
  };
  auto pred_fn = [&](const BatchXY& b) { return model.forward(b.x); };

  TrainResult result =
      train_loop(model.parameters(), cfg.epochs, cfg.batch, cfg.lr,
                 train_anchors, val_anchors, make_batch, loss_fn, pred_fn, seed);
  result.log = emit_forecast_log(model, ds, scaler);
  return result;
}

}  // namespace rescal::models
