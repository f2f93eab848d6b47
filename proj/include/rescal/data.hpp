#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rescal/tensor.hpp"

namespace rescal::data {

enum class Split { Train, Val, Test };

// Column-per-node speed series with a per-entry missing mask, a periodic
// time-of-day feature and contiguous 7:1:2 split boundaries.
struct SeriesDataset {
  int64_t length = 0;
  int64_t nodes = 0;
  std::vector<float> values;     // [t*nodes + n]
  std::vector<uint8_t> missing;  // same layout, 1 = missing
  std::vector<float> timeofday;  // per step, in [0,1)
  int64_t day_length = 288;
  int64_t train_end = 0;  // [0,train_end) train
  int64_t val_end = 0;    // [train_end,val_end) val, [val_end,length) test

  float at(int64_t t, int64_t n) const {
    return values[static_cast<size_t>(t * nodes + n)];
  }
  bool is_missing(int64_t t, int64_t n) const {
    return missing[static_cast<size_t>(t * nodes + n)] != 0;
  }
  void derive_splits();  // 7:1:2 over [0, length)
};

std::pair<int64_t, int64_t> split_range(const SeriesDataset& ds, Split split);
const char* split_name(Split split);

// Z-score scaler fitted on the training split only (missing entries skipped).
struct Scaler {
  float mean = 0.0f;
  float std = 1.0f;
  float apply(float v) const { return (v - mean) / std; }
  float invert(float z) const { return z * std + mean; }
};

Scaler fit_scaler(const SeriesDataset& ds);

// Periodic sine of the given period; whole periods are independently zeroed
// with probability p_zero. Deterministic under seed.
SeriesDataset gen_synthetic(int64_t length, int64_t period, double p_zero,
                            uint64_t seed);

// Multi-node variant: node 0 is gen_synthetic; node i repeats node i-1's
// zero-event pattern delayed by propagation_lag steps.
SeriesDataset gen_synthetic_spatial(int64_t n_nodes, int64_t length,
                                    int64_t period, double p_zero,
                                    int64_t propagation_lag, uint64_t seed);

// Full-metric chain distances d(i,j) = |i-j| * hop_meters, written densely so
// the Gaussian-kernel threshold keeps neighbor edges and cuts far pairs.
std::vector<double> chain_distances(int64_t n_nodes, double hop_meters);

// Speed CSV: header "timestamp,<id>,...", rows "iso_timestamp,v_1,...,v_N".
// The time-of-day feature is minutes-since-midnight / 1440. When
// zero_is_missing is set, exact 0 speeds are flagged missing.
SeriesDataset load_speed_csv(const std::string& path,
                             const std::vector<std::string>& node_ids,
                             bool zero_is_missing);

void save_speed_csv(const std::string& path, const SeriesDataset& ds,
                    const std::vector<std::string>& node_ids);

// ------------------------------------------------------------- windows ----

// Anchors t of valid samples in a split: the input window covers
// [t-T_x+1, t], the target covers [t+1, t+T_y]; neither crosses the split.
std::vector<int64_t> window_anchors(const SeriesDataset& ds, Split split,
                                    int64_t t_x, int64_t t_y);

// Input window [N,2,T_x]: channel 0 normalized speed, channel 1 time-of-day.
ad::Tensor make_x_window(const SeriesDataset& ds, const Scaler& scaler,
                         int64_t t_anchor, int64_t t_x);

struct Target {
  std::vector<float> y;        // [N*T_y] normalized
  std::vector<uint8_t> valid;  // 0 where the observation is missing
};

Target make_target(const SeriesDataset& ds, const Scaler& scaler,
                   int64_t t_anchor, int64_t t_y);

// --------------------------------------------------------- dataset dirs ----

struct DatasetManifest {
  int64_t nodes = 1;
  int64_t length = 0;
  int64_t period = 0;
  double p_zero = 0.0;
  int64_t lag = 0;
  uint64_t seed = 0;
  int64_t day_length = 288;
  bool zero_is_missing = false;
  int64_t train_end = 0;
  int64_t val_end = 0;
  std::string adjacency_file;  // relative, empty when absent
  std::string vocab_file;
};

void save_dataset_dir(const std::string& dir, const SeriesDataset& ds,
                      const DatasetManifest& manifest,
                      const std::vector<std::string>& node_ids);

struct LoadedDataset {
  SeriesDataset series;
  DatasetManifest manifest;
  std::vector<std::string> node_ids;
};

LoadedDataset load_dataset_dir(const std::string& dir);

}  // namespace rescal::data
