#include "rescal/forecast_log.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

namespace rescal::flog {

void write_csv(const std::string& path, const ForecastLog& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("forecast log: cannot open " + path);
  out << "t,node,horizon,y_true,y_pred\n";
  char buf[96];
  for (const Record& r : log.records) {
    std::snprintf(buf, sizeof(buf), "%lld,%d,%d,%.9g,%.9g\n",
                  static_cast<long long>(r.t), r.node, r.horizon,
                  static_cast<double>(r.y_true), static_cast<double>(r.y_pred));
    out << buf;
  }
  if (!out) throw std::runtime_error("forecast log: write failed for " + path);
}

ForecastLog read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("forecast log: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("t,node,horizon", 0) != 0) {
    throw std::runtime_error("forecast log: bad header in " + path);
  }
  ForecastLog log;
  int64_t line_no = 1;
  while (std::getline(in, line)) {
    line_no += 1;
    if (line.empty()) continue;
    Record r;
    long long t;
    double yt, yp;
    if (std::sscanf(line.c_str(), "%lld,%d,%d,%lf,%lf", &t, &r.node,
                    &r.horizon, &yt, &yp) != 5) {
      throw std::runtime_error("forecast log: malformed line " +
                               std::to_string(line_no) + " in " + path);
    }
    r.t = t;
    r.y_true = static_cast<float>(yt);
    r.y_pred = static_cast<float>(yp);
    log.records.push_back(r);
  }
  return log;
}

void write_scaler(const std::string& path, const data::Scaler& scaler) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("scaler: cannot open " + path);
  char buf[96];
  std::snprintf(buf, sizeof(buf), "mean = %.9g\nstd = %.9g\n",
                static_cast<double>(scaler.mean),
                static_cast<double>(scaler.std));
  out << buf;
}

data::Scaler read_scaler(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("scaler: cannot open " + path);
  data::Scaler s;
  std::string line;
  bool have_mean = false, have_std = false;
  while (std::getline(in, line)) {
    double v;
    if (std::sscanf(line.c_str(), "mean = %lf", &v) == 1) {
      s.mean = static_cast<float>(v);
      have_mean = true;
    } else if (std::sscanf(line.c_str(), "std = %lf", &v) == 1) {
      s.std = static_cast<float>(v);
      have_std = true;
    }
  }
  if (!have_mean || !have_std) {
    throw std::runtime_error("scaler: malformed file " + path);
  }
  return s;
}

LogIndex::LogIndex(const ForecastLog& log, int64_t nodes, int64_t t_y)
    : log_(log), nodes_(nodes), t_y_(t_y) {
  if (log.records.empty()) return;
  first_t_ = log.records.front().t;
  last_t_ = log.records.back().t;
}

const Record* LogIndex::find(int64_t t, int64_t node) const {
  // Records are dense blocks of nodes_*t_y_ rows per anchor within each
  // split; anchors are strictly increasing, so binary search the block.
  const int64_t block = nodes_ * t_y_;
  const auto& rec = log_.records;
  int64_t lo = 0;
  int64_t hi = static_cast<int64_t>(rec.size()) / block - 1;
  while (lo <= hi) {
    const int64_t mid = (lo + hi) / 2;
    const int64_t mt = rec[static_cast<size_t>(mid * block)].t;
    if (mt == t) {
      return &rec[static_cast<size_t>(mid * block + node * t_y_)];
    }
    if (mt < t) {
      lo = mid + 1;
    } else {
      hi = mid - 1;
    }
  }
  return nullptr;
}

}  // namespace rescal::flog
