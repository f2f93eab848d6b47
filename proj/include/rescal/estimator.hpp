#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rescal/checkpoint.hpp"
#include "rescal/data.hpp"
#include "rescal/forecast_log.hpp"
#include "rescal/graph.hpp"
#include "rescal/rng.hpp"
#include "rescal/tensor.hpp"

namespace rescal::est {

struct RescalConfig {
  int64_t layers = 4;   // spatial-temporal encoder layers
  int64_t d_h = 32;     // latent width
  int64_t d_c = 32;     // categorical variables
  int64_t n_c = 16;     // categories per variable
  int64_t d_e = 16;     // codebook embedding dim
  int64_t T = 12;       // window length; T_x == T_y == T
  int64_t T_u = 12;     // residual horizons per step; == T
  float tau = 1.0f;     // Gumbel-Softmax temperature, fixed
  int64_t batch = 256;
  int64_t epochs = 50;
  float lr = 1e-3f;
  int64_t kernel = 3;
  std::vector<int> dilations;  // empty -> doubling schedule 1,2,4,...
  int64_t diffusion_order = 2;
  int64_t node_embed_dim = 10;
  bool use_adaptive = false;   // learned adjacency as an extra support
  bool use_quantizer = true;   // ablation hook: false freezes Q*E^T at zero

  std::vector<int> resolved_dilations() const;
  int64_t receptive_field() const;
};

// Category assignment of one latent row: d_c indices, each in [0, n_c).
struct PatternCode {
  std::vector<int32_t> codes;
  bool operator==(const PatternCode& o) const { return codes == o.codes; }
};

struct RescalTrainResult {
  double best_val_mae = 0.0;
  double final_val_mae = 0.0;
  std::vector<double> epoch_train_mae;
  int64_t best_epoch = -1;
};

// Residual estimator: encoder over concatenated graph signals and observed
// residuals, with a regression branch and a Gumbel-Softmax quantization
// branch feeding the output head.
class ResidualEstimator {
 public:
  ResidualEstimator(RescalConfig cfg, int64_t n_nodes,
                    std::vector<ad::Tensor> fixed_supports, uint64_t seed);

  // X: [B,N,2,T], U: [B,N,T_u,T] -> Z: [B,N,d_h]
  ad::Tensor encode(const ad::Tensor& x, const ad::Tensor& u);

  struct QuantizeResult {
    ad::Tensor q;  // [B*N, d_c*n_c] one-hot blocks
    ad::Tensor w;  // [B*N, d_c*n_c] logits
    std::vector<PatternCode> codes;  // row-major over (b, n)
  };
  // gumbel_rng == nullptr selects deterministic argmax codes.
  QuantizeResult quantize(const ad::Tensor& z, Rng* gumbel_rng);

  // R_hat = f_o(f_r(Z) + Q E^T); undefined q drops the quantized term.
  ad::Tensor estimate_residual(const ad::Tensor& z, const ad::Tensor& q);

  struct ForwardResult {
    ad::Tensor r_hat;  // [B,N,T_y]
    std::vector<PatternCode> codes;
  };
  ForwardResult forward(const ad::Tensor& x, const ad::Tensor& u,
                        Rng* gumbel_rng);

  RescalTrainResult train(const flog::ForecastLog& log,
                          const data::SeriesDataset& ds,
                          const data::Scaler& scaler, uint64_t seed);

  std::vector<io::NamedTensor> named_parameters();
  std::vector<ad::Tensor> parameters();
  const RescalConfig& config() const { return cfg_; }
  int64_t nodes() const { return n_; }
  const ad::Tensor& codebook() const { return codebook_; }
  std::vector<ad::Tensor> supports() const;

 private:
  RescalConfig cfg_;
  int64_t n_;
  std::vector<ad::Tensor> fixed_supports_;
  graph::NodeEmbeddings emb_;
  bool has_emb_ = false;

  ad::Tensor in_w_, in_b_;  // (2+T_u) -> d_h
  struct Layer {
    ad::Tensor tcn_wa, tcn_ba, tcn_wb, tcn_bb;
    ad::Tensor gc_w, gc_b;
  };
  std::vector<Layer> layers_;
  // f_q: two pointwise+ReLU stages then a linear projection to d_c*n_c.
  ad::Tensor q_w1_, q_b1_, q_w2_, q_b2_, q_w3_, q_b3_;
  // f_r: pointwise+ReLU then linear to d_e.
  ad::Tensor r_w1_, r_b1_, r_w2_, r_b2_;
  // f_o: pointwise+ReLU then linear to T_y.
  ad::Tensor o_w1_, o_b1_, o_w2_, o_b2_;
  ad::Tensor codebook_;  // E: [d_e, d_c*n_c]
};

// Elementwise calibration in normalized space: Y_hat + R_hat.
ad::Tensor calibrate(const ad::Tensor& y_hat, const ad::Tensor& r_hat);

// ---------------------------------------------------- offline assembly ----

// U^t column rule: the horizon-i residual of the prediction made at time
// (s - i) becomes observable exactly at s. offline_u_window stacks columns
// s = t-T+1 .. t, zero-filling entries whose prediction anchor is missing
// from the split or whose observation is flagged missing.
// u/mask are [N * T_u * T] row-major over (node, horizon, column).
void offline_u_window(const flog::LogIndex& index,
                      const data::SeriesDataset& ds,
                      const data::Scaler& scaler, int64_t anchor_lo,
                      int64_t anchor_hi, int64_t t, int64_t window,
                      int64_t t_u, float* u, uint8_t* mask);

struct SampleSet {
  std::vector<int64_t> anchors;
  int64_t n = 0, T = 0, T_u = 0;
  std::vector<float> x;        // per sample: [N*2*T]
  std::vector<float> u;        // per sample: [N*T_u*T]
  std::vector<float> target;   // per sample: [N*T]
  std::vector<uint8_t> valid;  // per sample: [N*T]
};

// Training samples for a split under the availability schedule; anchors run
// from split_start + 2T (post warm-up) to the last fully-observed target.
SampleSet assemble_samples(const flog::ForecastLog& log,
                           const data::SeriesDataset& ds,
                           const data::Scaler& scaler, data::Split split,
                           const RescalConfig& cfg);

// Deterministic argmax pattern codes over a split, one PatternCode per node
// per anchor. Returned codes follow assemble_samples' anchor order.
struct PatternExport {
  std::vector<int64_t> anchors;
  std::vector<PatternCode> codes;  // anchors.size() * nodes, row-major
};
PatternExport export_pattern_codes(ResidualEstimator& model,
                                   const flog::ForecastLog& log,
                                   const data::SeriesDataset& ds,
                                   const data::Scaler& scaler,
                                   data::Split split);

void write_pattern_csv(const std::string& path, const PatternExport& pe,
                       int64_t nodes, int64_t d_c);

// Writes <dir>/rescal.rscl plus <dir>/rescal_config.txt.
void save_estimator(const std::string& dir, ResidualEstimator& model);
ResidualEstimator load_estimator(const std::string& dir, int64_t n_nodes,
                                 std::vector<ad::Tensor> fixed_supports);

}  // namespace rescal::est
