#include "rescal/replay.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace rescal::replay {

using ad::ContractError;
using ad::Tensor;

ResidualBuffer::ResidualBuffer(int64_t nodes, int64_t t_y, int64_t window)
    : n_(nodes), t_y_(t_y), window_(window) {
  if (nodes < 1 || t_y < 1 || window < 1) {
    throw ContractError("residual buffer: dimensions must be positive");
  }
}

void ResidualBuffer::push(int64_t t, std::span<const float> pred,
                          std::span<const float> obs,
                          std::span<const uint8_t> obs_missing) {
  if (started_ && t != t_cur_ + 1) {
    throw ContractError("residual buffer: push at t=" + std::to_string(t) +
                        " does not follow t=" + std::to_string(t_cur_));
  }
  if (static_cast<int64_t>(pred.size()) != n_ * t_y_ ||
      static_cast<int64_t>(obs.size()) != n_ ||
      static_cast<int64_t>(obs_missing.size()) != n_) {
    throw ContractError("residual buffer: push with mismatched sizes");
  }

  // Residuals whose target time equals t become observable now: the
  // horizon-i entry pairs obs(t) with the prediction made at t-i.
  Col col;
  col.u.assign(static_cast<size_t>(n_ * t_y_), 0.0f);
  col.mask.assign(static_cast<size_t>(n_ * t_y_), 0);
  for (int64_t i = 1; i <= t_y_; ++i) {
    const int64_t back = i;  // prediction made at t-i
    if (back > static_cast<int64_t>(preds_.size())) continue;
    const auto& p = preds_[preds_.size() - static_cast<size_t>(back)];
    for (int64_t node = 0; node < n_; ++node) {
      if (obs_missing[static_cast<size_t>(node)] != 0) continue;
      const size_t pos = static_cast<size_t>(node * t_y_ + (i - 1));
      col.u[pos] = obs[static_cast<size_t>(node)] -
                   p[static_cast<size_t>(node * t_y_ + (i - 1))];
      col.mask[pos] = 1;
    }
  }
  cols_.push_back(std::move(col));
  if (static_cast<int64_t>(cols_.size()) > window_) cols_.pop_front();

  preds_.emplace_back(pred.begin(), pred.end());
  if (static_cast<int64_t>(preds_.size()) > t_y_) preds_.pop_front();

  t_cur_ = t;
  started_ = true;
}

UWindow ResidualBuffer::assemble_U() const {
  if (!started_) {
    throw ContractError("residual buffer: assemble_U before any push");
  }
  UWindow w;
  w.t = t_cur_;
  w.u.assign(static_cast<size_t>(n_ * t_y_ * window_), 0.0f);
  w.mask.assign(static_cast<size_t>(n_ * t_y_ * window_), 0);
  const int64_t have = static_cast<int64_t>(cols_.size());
  for (int64_t c = 0; c < window_; ++c) {
    // Column c holds the residuals observed at time t_cur_ - window_ + 1 + c.
    const int64_t k = have - window_ + c;
    if (k < 0) continue;
    const Col& col = cols_[static_cast<size_t>(k)];
    for (int64_t node = 0; node < n_; ++node) {
      for (int64_t i = 0; i < t_y_; ++i) {
        const size_t src = static_cast<size_t>(node * t_y_ + i);
        const size_t dst =
            static_cast<size_t>((node * t_y_ + i) * window_ + c);
        w.u[dst] = col.u[src];
        w.mask[dst] = col.mask[src];
      }
    }
  }
  return w;
}

StreamResult run_stream(const data::SeriesDataset& ds, data::Split split,
                        const data::Scaler& scaler, models::Forecaster& base,
                        est::ResidualEstimator* estimator,
                        const StreamConfig& cfg) {
  ad::NoGradGuard no_grad;
  const int64_t t_x = base.input_len();
  const int64_t t_y = base.output_len();
  if (estimator != nullptr) {
    if (estimator->config().T != t_y || estimator->nodes() != ds.nodes) {
      throw ContractError("run_stream: estimator window/nodes do not match "
                          "the base model and dataset");
    }
  }
  const auto [s0, s1] = data::split_range(ds, split);
  if (s1 - s0 < t_x + t_y + 1) {
    throw ContractError("run_stream: split too short for streaming");
  }

  const int64_t window = t_y;  // T == T_x == T_y
  ResidualBuffer buffer(ds.nodes, t_y, window);
  Rng gumbel_rng(cfg.seed);

  StreamResult result;
  result.emit_from = s0 + t_x + t_y;
  result.last_anchor = s1 - 1;

  std::vector<float> obs(static_cast<size_t>(ds.nodes));
  std::vector<uint8_t> obs_missing(static_cast<size_t>(ds.nodes));
  double latency_total = 0.0;
  int64_t latency_steps = 0;

  for (int64_t t = s0 + t_x - 1; t <= s1 - 1; ++t) {
    Tensor x = data::make_x_window(ds, scaler, t, t_x);
    Tensor pred = base.predict_window(x);  // [N,T_y] normalized

    for (int64_t node = 0; node < ds.nodes; ++node) {
      obs[static_cast<size_t>(node)] = scaler.apply(ds.at(t, node));
      obs_missing[static_cast<size_t>(node)] = ds.is_missing(t, node) ? 1 : 0;
    }
    buffer.push(t, pred.values(), obs, obs_missing);
    result.steps += 1;

    if (t < result.emit_from) continue;

    const auto clock_start = std::chrono::steady_clock::now();
    std::vector<float> r_hat(static_cast<size_t>(ds.nodes * t_y), 0.0f);
    if (estimator != nullptr) {
      UWindow uw = buffer.assemble_U();
      Tensor xb = ad::reshape(x, {1, ds.nodes, 2, t_x});
      Tensor ub = Tensor::from({1, ds.nodes, estimator->config().T_u, window},
                               std::move(uw.u));
      auto fr = estimator->forward(xb, ub,
                                   cfg.hard_codes ? nullptr : &gumbel_rng);
      const auto rv = fr.r_hat.values();
      std::copy(rv.begin(), rv.end(), r_hat.begin());
    }
    const auto clock_end = std::chrono::steady_clock::now();
    latency_total +=
        std::chrono::duration<double, std::milli>(clock_end - clock_start)
            .count();
    result.max_latency_ms = std::max(
        result.max_latency_ms,
        std::chrono::duration<double, std::milli>(clock_end - clock_start)
            .count());
    latency_steps += 1;

    const auto pv = pred.values();
    for (int64_t node = 0; node < ds.nodes; ++node) {
      for (int64_t i = 0; i < t_y; ++i) {
        CalibrationRecord r;
        r.t = t;
        r.node = static_cast<int32_t>(node);
        r.horizon = static_cast<int32_t>(i + 1);
        r.y_pred = scaler.invert(pv[static_cast<size_t>(node * t_y + i)]);
        r.r_hat = r_hat[static_cast<size_t>(node * t_y + i)] * scaler.std;
        r.y_calibrated = r.y_pred + r.r_hat;
        const int64_t target_t = t + 1 + i;
        if (target_t <= s1 - 1 && !ds.is_missing(target_t, node)) {
          r.y_true = ds.at(target_t, node);
          r.has_true = true;
        } else {
          r.y_true = std::numeric_limits<float>::quiet_NaN();
          r.has_true = false;
        }
        result.records.push_back(r);
      }
    }
  }
  if (latency_steps > 0) {
    result.mean_latency_ms = latency_total / static_cast<double>(latency_steps);
  }
  return result;
}

void write_calibration_csv(const std::string& path,
                           const std::vector<CalibrationRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("calibration csv: cannot open " + path);
  out << "t,node,horizon,y_pred,r_hat,y_calibrated,y_true\n";
  char buf[160];
  for (const CalibrationRecord& r : records) {
    if (r.has_true) {
      std::snprintf(buf, sizeof(buf), "%lld,%d,%d,%.9g,%.9g,%.9g,%.9g\n",
                    static_cast<long long>(r.t), r.node, r.horizon,
                    static_cast<double>(r.y_pred), static_cast<double>(r.r_hat),
                    static_cast<double>(r.y_calibrated),
                    static_cast<double>(r.y_true));
    } else {
      std::snprintf(buf, sizeof(buf), "%lld,%d,%d,%.9g,%.9g,%.9g,nan\n",
                    static_cast<long long>(r.t), r.node, r.horizon,
                    static_cast<double>(r.y_pred), static_cast<double>(r.r_hat),
                    static_cast<double>(r.y_calibrated));
    }
    out << buf;
  }
  if (!out) {
    throw std::runtime_error("calibration csv: write failed for " + path);
  }
}

std::vector<CalibrationRecord> read_calibration_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("calibration csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("t,node,horizon", 0) != 0) {
    throw std::runtime_error("calibration csv: bad header in " + path);
  }
  std::vector<CalibrationRecord> out;
  int64_t line_no = 1;
  while (std::getline(in, line)) {
    line_no += 1;
    if (line.empty()) continue;
    CalibrationRecord r;
    long long t;
    double yp, rh, yc, yt;
    if (std::sscanf(line.c_str(), "%lld,%d,%d,%lf,%lf,%lf,%lf", &t, &r.node,
                    &r.horizon, &yp, &rh, &yc, &yt) != 7) {
      throw std::runtime_error("calibration csv: malformed line " +
                               std::to_string(line_no) + " in " + path);
    }
    r.t = t;
    r.y_pred = static_cast<float>(yp);
    r.r_hat = static_cast<float>(rh);
    r.y_calibrated = static_cast<float>(yc);
    r.y_true = static_cast<float>(yt);
    r.has_true = !std::isnan(yt);
    out.push_back(r);
  }
  return out;
}

}  // namespace rescal::replay
