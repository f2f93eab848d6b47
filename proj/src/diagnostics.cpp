#include "rescal/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

namespace rescal::diag {

using ad::ContractError;

std::vector<EvalRow> base_rows(
    const std::vector<replay::CalibrationRecord>& records) {
  std::vector<EvalRow> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    out.push_back({r.t, r.node, r.horizon, r.y_true, r.y_pred, r.has_true});
  }
  return out;
}

std::vector<EvalRow> calibrated_rows(
    const std::vector<replay::CalibrationRecord>& records) {
  std::vector<EvalRow> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    out.push_back(
        {r.t, r.node, r.horizon, r.y_true, r.y_calibrated, r.has_true});
  }
  return out;
}

std::vector<double> acf(std::span<const double> series, int max_lag) {
  const int64_t n = static_cast<int64_t>(series.size());
  if (max_lag < 1 || n <= max_lag) {
    throw ContractError("acf: series of length " + std::to_string(n) +
                        " cannot support lag " + std::to_string(max_lag));
  }
  double mean = 0.0;
  for (double v : series) mean += v;
  mean /= static_cast<double>(n);
  double denom = 0.0;
  for (double v : series) denom += (v - mean) * (v - mean);
  if (denom == 0.0) {
    throw ContractError("acf: series is constant");
  }
  std::vector<double> r(static_cast<size_t>(max_lag));
  for (int k = 1; k <= max_lag; ++k) {
    double num = 0.0;
    for (int64_t t = k; t < n; ++t) {
      num += (series[static_cast<size_t>(t)] - mean) *
             (series[static_cast<size_t>(t - k)] - mean);
    }
    r[static_cast<size_t>(k - 1)] = num / denom;
  }
  return r;
}

namespace {

std::optional<double> pearson(const std::vector<double>& x,
                              const std::vector<double>& y) {
  const size_t n = x.size();
  if (n < 3 || y.size() != n) return std::nullopt;
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

CrossCorr lag1_cross_corr(const std::vector<std::vector<double>>& residuals) {
  const int64_t m = static_cast<int64_t>(residuals.size());
  if (m < 1) throw ContractError("lag1_cross_corr: no series");
  const size_t len = residuals[0].size();
  for (const auto& s : residuals) {
    if (s.size() != len) {
      throw ContractError("lag1_cross_corr: series lengths differ");
    }
  }
  if (len < 3) {
    throw ContractError("lag1_cross_corr: need at least 3 aligned steps");
  }
  CrossCorr cc;
  cc.m = m;
  cc.values.resize(static_cast<size_t>(m * m));
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < m; ++j) {
      // Node i at time t against node j at time t-1.
      std::vector<double> xi(residuals[static_cast<size_t>(i)].begin() + 1,
                             residuals[static_cast<size_t>(i)].end());
      std::vector<double> xj(residuals[static_cast<size_t>(j)].begin(),
                             residuals[static_cast<size_t>(j)].end() - 1);
      cc.values[static_cast<size_t>(i * m + j)] = pearson(xi, xj);
    }
  }
  return cc;
}

MetricsReport metrics(std::span<const EvalRow> rows,
                      const std::vector<uint8_t>* mask,
                      double mape_threshold) {
  if (mask != nullptr && mask->size() != rows.size()) {
    throw ContractError("metrics: mask size does not match rows");
  }
  struct Acc {
    double abs_sum = 0.0, sq_sum = 0.0, ape_sum = 0.0;
    int64_t count = 0, ape_count = 0;
  };
  std::map<int32_t, Acc> per;
  Acc all;
  for (size_t i = 0; i < rows.size(); ++i) {
    const EvalRow& r = rows[i];
    if (!r.valid) continue;
    if (mask != nullptr && (*mask)[i] == 0) continue;
    const double err = static_cast<double>(r.y_pred) - r.y_true;
    auto apply = [&](Acc& a) {
      a.abs_sum += std::fabs(err);
      a.sq_sum += err * err;
      a.count += 1;
      if (std::fabs(r.y_true) >= mape_threshold) {
        a.ape_sum += std::fabs(err / r.y_true);
        a.ape_count += 1;
      }
    };
    apply(per[r.horizon]);
    apply(all);
  }
  if (all.count == 0) {
    throw ContractError("metrics: no rows left after masking");
  }
  auto to_metrics = [](int32_t horizon, const Acc& a) {
    HorizonMetrics h;
    h.horizon = horizon;
    h.count = a.count;
    h.mape_count = a.ape_count;
    if (a.count > 0) {
      h.mae = a.abs_sum / static_cast<double>(a.count);
      h.rmse = std::sqrt(a.sq_sum / static_cast<double>(a.count));
    }
    if (a.ape_count > 0) {
      h.mape = a.ape_sum / static_cast<double>(a.ape_count);
    }
    return h;
  };
  MetricsReport report;
  for (const auto& [horizon, acc] : per) {
    report.per_horizon.push_back(to_metrics(horizon, acc));
  }
  report.overall = to_metrics(0, all);
  report.mask_policy = mask == nullptr ? "all" : "masked";
  return report;
}

std::vector<uint8_t> event_mask(std::span<const EvalRow> base, double q) {
  if (q < 0.0 || q >= 1.0) {
    throw ContractError("event_mask: quantile must lie in [0,1)");
  }
  std::vector<double> errors;
  errors.reserve(base.size());
  for (const EvalRow& r : base) {
    if (r.valid) {
      errors.push_back(std::fabs(static_cast<double>(r.y_pred) - r.y_true));
    }
  }
  if (errors.empty()) throw ContractError("event_mask: no valid rows");
  std::sort(errors.begin(), errors.end());
  // Nearest-rank threshold: smallest error such that at most (1-q) of the
  // rows sit at or above it.
  size_t k = static_cast<size_t>(
      std::floor(q * static_cast<double>(errors.size())));
  if (k >= errors.size()) k = errors.size() - 1;
  const double threshold = errors[k];

  std::vector<uint8_t> mask(base.size(), 0);
  for (size_t i = 0; i < base.size(); ++i) {
    const EvalRow& r = base[i];
    if (!r.valid) continue;
    const double err = std::fabs(static_cast<double>(r.y_pred) - r.y_true);
    if (err >= threshold) mask[i] = 1;
  }
  return mask;
}

double masked_error_share(std::span<const EvalRow> rows,
                          const std::vector<uint8_t>& mask) {
  if (mask.size() != rows.size()) {
    throw ContractError("masked_error_share: mask size mismatch");
  }
  double total = 0.0, captured = 0.0;
  for (size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].valid) continue;
    const double err =
        std::fabs(static_cast<double>(rows[i].y_pred) - rows[i].y_true);
    total += err;
    if (mask[i]) captured += err;
  }
  return total > 0.0 ? captured / total : 0.0;
}

PatternReport pattern_report(const std::vector<est::PatternCode>& codes,
                             const std::vector<std::vector<double>>& residuals,
                             double flag_fraction) {
  if (codes.empty()) throw ContractError("pattern_report: no codes");
  if (!residuals.empty() && residuals.size() != codes.size()) {
    throw ContractError("pattern_report: residual rows do not match codes");
  }

  std::map<std::vector<int32_t>, std::vector<size_t>> groups;
  for (size_t i = 0; i < codes.size(); ++i) {
    groups[codes[i].codes].push_back(i);
  }

  PatternReport report;
  for (const auto& [key, members] : groups) {
    PatternCluster c;
    c.code.codes = key;
    c.count = static_cast<int64_t>(members.size());
    if (!residuals.empty() && !residuals[members[0]].empty()) {
      const size_t t_y = residuals[members[0]].size();
      c.mean_residual.assign(t_y, 0.0);
      for (size_t m : members) {
        for (size_t h = 0; h < t_y; ++h) {
          c.mean_residual[h] += residuals[m][h];
        }
      }
      for (double& v : c.mean_residual) {
        v /= static_cast<double>(members.size());
      }
    }
    report.clusters.push_back(std::move(c));
  }
  std::stable_sort(report.clusters.begin(), report.clusters.end(),
                   [](const PatternCluster& a, const PatternCluster& b) {
                     if (a.count != b.count) return a.count > b.count;
                     return a.code.codes < b.code.codes;
                   });

  // Flag the least frequent patterns until they cover flag_fraction of rows.
  const int64_t total = static_cast<int64_t>(codes.size());
  const int64_t want = static_cast<int64_t>(
      std::ceil(flag_fraction * static_cast<double>(total)));
  int64_t flagged = 0;
  for (auto it = report.clusters.rbegin();
       it != report.clusters.rend() && flagged < want; ++it) {
    it->flagged = true;
    flagged += it->count;
  }
  report.flagged_fraction =
      static_cast<double>(flagged) / static_cast<double>(total);

  report.flagged_steps.assign(codes.size(), 0);
  for (const PatternCluster& c : report.clusters) {
    if (!c.flagged) continue;
    const auto& members = groups[c.code.codes];
    for (size_t m : members) report.flagged_steps[m] = 1;
  }
  return report;
}

void write_metrics_csv(const std::string& path, const MetricsReport& report,
                       const std::vector<int>& horizons) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("metrics csv: cannot open " + path);
  out << "# mask_policy=" << report.mask_policy << '\n';
  out << "horizon,mae,rmse,mape,count,mape_count\n";
  char buf[160];
  auto emit = [&](const HorizonMetrics& h, const std::string& label) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.4f,%lld,%lld\n",
                  label.c_str(), h.mae, h.rmse, h.mape * 100.0,
                  static_cast<long long>(h.count),
                  static_cast<long long>(h.mape_count));
    out << buf;
  };
  for (const HorizonMetrics& h : report.per_horizon) {
    if (!horizons.empty() &&
        std::find(horizons.begin(), horizons.end(), h.horizon) ==
            horizons.end()) {
      continue;
    }
    emit(h, std::to_string(h.horizon));
  }
  emit(report.overall, "avg");
}

void write_acf_csv(const std::string& path, const std::vector<double>& r) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("acf csv: cannot open " + path);
  out << "lag,r\n";
  char buf[64];
  for (size_t k = 0; k < r.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%zu,%.6f\n", k + 1, r[k]);
    out << buf;
  }
}

void write_heatmap_csv(const std::string& path, const CrossCorr& cc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("heatmap csv: cannot open " + path);
  out << "i,j,value\n";
  char buf[96];
  for (int64_t i = 0; i < cc.m; ++i) {
    for (int64_t j = 0; j < cc.m; ++j) {
      const auto& v = cc.values[static_cast<size_t>(i * cc.m + j)];
      if (v.has_value()) {
        std::snprintf(buf, sizeof(buf), "%lld,%lld,%.6f\n",
                      static_cast<long long>(i), static_cast<long long>(j),
                      *v);
        out << buf;
      } else {
        std::snprintf(buf, sizeof(buf), "%lld,%lld,nan\n",
                      static_cast<long long>(i), static_cast<long long>(j));
        out << buf;
      }
    }
  }
}

}  // namespace rescal::diag
