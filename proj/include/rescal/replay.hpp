#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "rescal/data.hpp"
#include "rescal/estimator.hpp"
#include "rescal/models.hpp"

namespace rescal::replay {

struct UWindow {
  int64_t t = 0;
  std::vector<float> u;        // [N*T_u*T], (node, horizon, column)
  std::vector<uint8_t> mask;   // 1 where the residual was observable
};

// Rolling store of recent predictions and observations. The horizon-i
// residual of the prediction made at time t-i becomes observable exactly at
// time t, so each push materializes one new residual column.
class ResidualBuffer {
 public:
  ResidualBuffer(int64_t nodes, int64_t t_y, int64_t window);

  // pred: N*T_y normalized prediction made at t; obs: N normalized speeds
  // observed at t. t must advance by exactly 1 per call.
  void push(int64_t t, std::span<const float> pred, std::span<const float> obs,
            std::span<const uint8_t> obs_missing);

  // Stacks the last `window` residual columns at the current time;
  // zero-fills (mask 0) whatever is not yet observable.
  UWindow assemble_U() const;

  int64_t current_time() const { return t_cur_; }

 private:
  int64_t n_, t_y_, window_;
  int64_t t_cur_ = -1;
  bool started_ = false;
  struct Col {
    std::vector<float> u;       // [N*T_y]
    std::vector<uint8_t> mask;
  };
  std::deque<std::vector<float>> preds_;  // newest at back, at most T_y
  std::deque<Col> cols_;                  // newest at back, at most window
};

struct CalibrationRecord {
  int64_t t = 0;
  int32_t node = 0;
  int32_t horizon = 0;   // 1-based
  float y_pred = 0.0f;   // original units
  float r_hat = 0.0f;
  float y_calibrated = 0.0f;  // y_pred + r_hat, exactly
  float y_true = 0.0f;
  bool has_true = false;
};

struct StreamConfig {
  uint64_t seed = 0;        // gumbel noise stream for the estimator
  bool hard_codes = false;  // deterministic argmax instead of sampling
};

struct StreamResult {
  std::vector<CalibrationRecord> records;
  int64_t emit_from = 0;   // first emitted anchor (post warm-up)
  int64_t last_anchor = 0;
  int64_t steps = 0;       // anchors processed
  double mean_latency_ms = 0.0;  // per-step calibration cost
  double max_latency_ms = 0.0;
};

// Streams a split in time order: predict, assemble U, estimate the residual,
// emit calibrated records, then advance. estimator == nullptr runs the
// identity calibration (r_hat = 0). Emission starts after the first
// T_x + T_y warm-up steps of the split.
StreamResult run_stream(const data::SeriesDataset& ds, data::Split split,
                        const data::Scaler& scaler, models::Forecaster& base,
                        est::ResidualEstimator* estimator,
                        const StreamConfig& cfg);

// CSV columns: t,node,horizon,y_pred,r_hat,y_calibrated,y_true (original
// units; y_true is "nan" until observed).
void write_calibration_csv(const std::string& path,
                           const std::vector<CalibrationRecord>& records);
std::vector<CalibrationRecord> read_calibration_csv(const std::string& path);

}  // namespace rescal::replay
