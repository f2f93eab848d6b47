#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rescal/estimator.hpp"
#include "rescal/replay.hpp"

namespace rescal::diag {

// One evaluable prediction row, in original units.
struct EvalRow {
  int64_t t = 0;
  int32_t node = 0;
  int32_t horizon = 0;
  float y_true = 0.0f;
  float y_pred = 0.0f;
  bool valid = false;  // y_true observed
};

// Rows for the base prediction and for the calibrated one.
std::vector<EvalRow> base_rows(const std::vector<replay::CalibrationRecord>&);
std::vector<EvalRow> calibrated_rows(
    const std::vector<replay::CalibrationRecord>&);

// Autocorrelation function r_1..r_max_lag with the shared-mean convention
// (full-series mean and normalizer). Throws on constant input.
std::vector<double> acf(std::span<const double> series, int max_lag);

// Pearson correlation of (node i residual at t) vs (node j residual at t-1).
// Entries without variance are reported missing.
struct CrossCorr {
  int64_t m = 0;
  std::vector<std::optional<double>> values;  // m*m row-major
};
CrossCorr lag1_cross_corr(const std::vector<std::vector<double>>& residuals);

struct HorizonMetrics {
  int32_t horizon = 0;  // 0 = all horizons pooled
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;  // fraction, only over |y_true| above the threshold
  int64_t count = 0;
  int64_t mape_count = 0;
};

struct MetricsReport {
  std::vector<HorizonMetrics> per_horizon;
  HorizonMetrics overall;
  std::string mask_policy;
};

// MAE/RMSE/MAPE per horizon and pooled, over rows kept by the mask (empty
// mask keeps all). Rows with unobserved targets are skipped throughout.
MetricsReport metrics(std::span<const EvalRow> rows,
                      const std::vector<uint8_t>* mask,
                      double mape_threshold = 1e-6);

// Marks rows whose |error| reaches the q-quantile (nearest rank) of the
// row set's absolute errors. Pass the BASE model's rows: event regions are
// defined by the base forecaster even when evaluating calibrated output.
std::vector<uint8_t> event_mask(std::span<const EvalRow> base, double q);

// Fraction of total absolute error captured by the masked rows.
double masked_error_share(std::span<const EvalRow> rows,
                          const std::vector<uint8_t>& mask);

// ------------------------------------------------------ pattern report ----

struct PatternCluster {
  est::PatternCode code;
  int64_t count = 0;
  std::vector<double> mean_residual;  // per horizon, absolute units
  bool flagged = false;               // member of the least-frequent tail
};

struct PatternReport {
  std::vector<PatternCluster> clusters;  // most frequent first
  std::vector<uint8_t> flagged_steps;    // aligned with the input code rows
  double flagged_fraction = 0.0;
};

// Groups code rows by full equality; flags the least frequent patterns that
// together cover at least flag_fraction of the rows. residuals[i] holds the
// per-horizon residual profile of code row i (may be empty).
PatternReport pattern_report(const std::vector<est::PatternCode>& codes,
                             const std::vector<std::vector<double>>& residuals,
                             double flag_fraction = 0.05);

// ------------------------------------------------------------- reports ----

void write_metrics_csv(const std::string& path, const MetricsReport& report,
                       const std::vector<int>& horizons);
void write_acf_csv(const std::string& path, const std::vector<double>& r);
void write_heatmap_csv(const std::string& path, const CrossCorr& cc);

}  // namespace rescal::diag
