#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rescal/checkpoint.hpp"
#include "rescal/data.hpp"
#include "rescal/forecast_log.hpp"
#include "rescal/graph.hpp"
#include "rescal/rng.hpp"
#include "rescal/tensor.hpp"

namespace rescal::models {

// Weight init: uniform(-a, a) with a = sqrt(1/fan_in); biases zero.
ad::Tensor init_weight(int64_t fan_in, int64_t fan_out, Rng& rng);
ad::Tensor init_conv_weight(int64_t c_out, int64_t c_in, int64_t kw, Rng& rng);
ad::Tensor zero_bias(int64_t n);

struct GruParams {
  ad::Tensor wxz, whz, bz;
  ad::Tensor wxr, whr, br;
  ad::Tensor wxh, whh, bh;

  static GruParams init(int64_t in_dim, int64_t hidden, Rng& rng);
  void collect(const std::string& prefix,
               std::vector<io::NamedTensor>& out) const;
  void append_params(std::vector<ad::Tensor>& out) const;
};

// h_t = (1-z) * h_prev + z * h_cand with standard update/reset/candidate
// gates. x: [B,I], h_prev: [B,H].
ad::Tensor gru_cell(const ad::Tensor& x, const ad::Tensor& h_prev,
                    const GruParams& p);

// tanh(conv_a(x)) * sigmoid(conv_b(x)), causal convolutions.
struct GatedTcnParams {
  ad::Tensor wa, ba, wb, bb;  // [Cout,Cin,K] kernels
  static GatedTcnParams init(int64_t c_in, int64_t c_out, int64_t kw, Rng& rng);
  void collect(const std::string& prefix,
               std::vector<io::NamedTensor>& out) const;
  void append_params(std::vector<ad::Tensor>& out) const;
};

ad::Tensor gated_tcn(const ad::Tensor& x, const GatedTcnParams& p,
                     int dilation);

// ------------------------------------------------------------ interface ----

class Forecaster {
 public:
  virtual ~Forecaster() = default;
  // x: [N,2,T_x] normalized -> [N,T_y] normalized predictions.
  virtual ad::Tensor predict_window(const ad::Tensor& x) = 0;
  virtual std::vector<io::NamedTensor> named_parameters() = 0;
  virtual std::vector<ad::Tensor> parameters() = 0;
  virtual int64_t input_len() const = 0;
  virtual int64_t output_len() const = 0;
  virtual const char* kind() const = 0;
};

// ------------------------------------------------------------- seq2seq ----

struct Seq2seqConfig {
  int64_t input_len = 24;
  int64_t output_len = 24;
  int64_t hidden = 128;
  int64_t mlp_hidden = 16;  // head is hidden -> mlp_hidden -> 1
  int64_t epochs = 50;
  int64_t batch = 100;
  float lr = 1e-3f;
  float teacher_forcing = 0.5f;
};

// Single-series encoder/decoder GRU; the decoder consumes its own previous
// output at inference and the ground truth with probability teacher_forcing
// during training.
class Seq2seqModel final : public Forecaster {
 public:
  Seq2seqModel(Seq2seqConfig cfg, uint64_t seed);

  // hist: [B,T_x]; teacher: optional [B,T_y] targets used per-step with the
  // configured probability (training only).
  ad::Tensor forward(const ad::Tensor& hist, const ad::Tensor* teacher,
                     Rng* tf_rng);

  ad::Tensor predict_window(const ad::Tensor& x) override;
  std::vector<io::NamedTensor> named_parameters() override;
  std::vector<ad::Tensor> parameters() override;
  int64_t input_len() const override { return cfg_.input_len; }
  int64_t output_len() const override { return cfg_.output_len; }
  const char* kind() const override { return "seq2seq"; }

  const Seq2seqConfig& config() const { return cfg_; }

 private:
  Seq2seqConfig cfg_;
  GruParams enc_, dec_;
  ad::Tensor w1_, b1_, w2_, b2_;
};

// ------------------------------------------------------ graph forecaster ----

struct GraphForecasterConfig {
  int64_t blocks = 4;
  int64_t channels = 32;
  int64_t input_len = 12;
  int64_t output_len = 12;
  int64_t kernel = 2;
  std::vector<int> dilations = {1, 2, 4, 4};
  int64_t diffusion_order = 2;
  int64_t node_embed_dim = 10;
  bool use_adaptive = true;
  int64_t epochs = 20;
  int64_t batch = 64;
  float lr = 1e-3f;

  // 1 + (kernel-1) * sum(dilations); must cover input_len.
  int64_t receptive_field() const;
};

// Compact stand-in forecaster: stacked gated TCN + diffusion graph
// convolution blocks with residual and skip connections, output head over
// the final time step.
class GraphForecaster final : public Forecaster {
 public:
  GraphForecaster(GraphForecasterConfig cfg, int64_t n_nodes,
                  std::vector<ad::Tensor> fixed_supports, uint64_t seed);

  ad::Tensor forward(const ad::Tensor& x);  // [B,N,2,T] -> [B,N,T_y]

  ad::Tensor predict_window(const ad::Tensor& x) override;
  std::vector<io::NamedTensor> named_parameters() override;
  std::vector<ad::Tensor> parameters() override;
  int64_t input_len() const override { return cfg_.input_len; }
  int64_t output_len() const override { return cfg_.output_len; }
  const char* kind() const override { return "graph"; }

  const GraphForecasterConfig& config() const { return cfg_; }
  int64_t nodes() const { return n_; }

  // Fixed transition matrices plus the learned adjacency when enabled.
  std::vector<ad::Tensor> supports() const;

 private:
  GraphForecasterConfig cfg_;
  int64_t n_;
  std::vector<ad::Tensor> fixed_supports_;
  graph::NodeEmbeddings emb_;
  bool has_emb_ = false;

  ad::Tensor in_w_, in_b_;
  std::vector<GatedTcnParams> tcn_;
  std::vector<ad::Tensor> gc_w_, gc_b_;
  ad::Tensor head_w1_, head_b1_, head_w2_, head_b2_;
};

// ------------------------------------------------------------- training ----

struct TrainResult {
  flog::ForecastLog log;        // predictions for every split, in split order
  double best_val_mse = 0.0;
  double final_val_mse = 0.0;
  std::vector<double> epoch_train_loss;
  int64_t best_epoch = -1;
};

// Trains with masked MSE, keeps the best-validation parameters and emits the
// forecast log over train/val/test with single-window inference.
TrainResult train_seq2seq(Seq2seqModel& model, const data::SeriesDataset& ds,
                          const data::Scaler& scaler, uint64_t seed);

TrainResult train_graph(GraphForecaster& model, const data::SeriesDataset& ds,
                        const data::Scaler& scaler, uint64_t seed);

// Emits one record per (anchor, node, horizon) for each split.
flog::ForecastLog emit_forecast_log(Forecaster& model,
                                    const data::SeriesDataset& ds,
                                    const data::Scaler& scaler);

// ---------------------------------------------------------- persistence ----

// Writes <dir>/base_model.rscl plus <dir>/base_config.txt describing the
// architecture, so the model can be reconstructed elsewhere.
void save_base(const std::string& dir, Forecaster& model);

// Reconstructs the forecaster saved by save_base. fixed_supports must match
// the dataset the graph variant was trained on (ignored for seq2seq).
std::unique_ptr<Forecaster> load_base(const std::string& dir, int64_t n_nodes,
                                      std::vector<ad::Tensor> fixed_supports);

}  // namespace rescal::models
