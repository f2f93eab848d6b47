#include "rescal/data.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "rescal/rng.hpp"

namespace rescal::data {

using ad::ContractError;

void SeriesDataset::derive_splits() {
  train_end = length * 7 / 10;
  val_end = length * 8 / 10;
}

std::pair<int64_t, int64_t> split_range(const SeriesDataset& ds, Split split) {
  switch (split) {
    case Split::Train:
      return {0, ds.train_end};
    case Split::Val:
      return {ds.train_end, ds.val_end};
    case Split::Test:
      return {ds.val_end, ds.length};
  }
  throw ContractError("split_range: unknown split");
}

const char* split_name(Split split) {
  switch (split) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "?";
}

Scaler fit_scaler(const SeriesDataset& ds) {
  double sum = 0.0, sum_sq = 0.0;
  int64_t count = 0;
  for (int64_t t = 0; t < ds.train_end; ++t) {
    for (int64_t n = 0; n < ds.nodes; ++n) {
      if (ds.is_missing(t, n)) continue;
      const double v = ds.at(t, n);
      sum += v;
      sum_sq += v * v;
      count += 1;
    }
  }
  if (count < 2) throw ContractError("fit_scaler: training split is empty");
  const double mean = sum / static_cast<double>(count);
  const double var = sum_sq / static_cast<double>(count) - mean * mean;
  if (var <= 0.0) {
    throw ContractError("fit_scaler: training split is constant");
  }
  Scaler s;
  s.mean = static_cast<float>(mean);
  s.std = static_cast<float>(std::sqrt(var));
  return s;
}

namespace {

void fill_timeofday_from_index(SeriesDataset& ds) {
  ds.timeofday.resize(static_cast<size_t>(ds.length));
  for (int64_t t = 0; t < ds.length; ++t) {
    ds.timeofday[static_cast<size_t>(t)] =
        static_cast<float>(t % ds.day_length) /
        static_cast<float>(ds.day_length);
  }
}

}  // namespace

SeriesDataset gen_synthetic(int64_t length, int64_t period, double p_zero,
                            uint64_t seed) {
  return gen_synthetic_spatial(1, length, period, p_zero, 0, seed);
}

SeriesDataset gen_synthetic_spatial(int64_t n_nodes, int64_t length,
                                    int64_t period, double p_zero,
                                    int64_t propagation_lag, uint64_t seed) {
  if (n_nodes < 1) throw ContractError("gen_synthetic: need at least 1 node");
  if (period < 2 || length < 2 * period) {
    throw ContractError("gen_synthetic: length must cover at least 2 periods");
  }
  if (p_zero < 0.0 || p_zero > 1.0) {
    throw ContractError("gen_synthetic: p_zero must lie in [0,1]");
  }
  if (propagation_lag < 0) {
    throw ContractError("gen_synthetic: propagation lag must be >= 0");
  }

  // One coin per complete period on the reference node; the trailing partial
  // period is never zeroed.
  const int64_t full_periods = length / period;
  std::vector<uint8_t> zeroed(static_cast<size_t>(full_periods), 0);
  Rng rng(seed);
  for (int64_t p = 0; p < full_periods; ++p) {
    zeroed[static_cast<size_t>(p)] = rng.uniform01() < p_zero ? 1 : 0;
  }
  auto base_event = [&](int64_t t) {
    if (t < 0 || t >= full_periods * period) return false;
    return zeroed[static_cast<size_t>(t / period)] != 0;
  };

  SeriesDataset ds;
  ds.length = length;
  ds.nodes = n_nodes;
  ds.day_length = period;
  ds.values.assign(static_cast<size_t>(length * n_nodes), 0.0f);
  ds.missing.assign(static_cast<size_t>(length * n_nodes), 0);
  for (int64_t t = 0; t < length; ++t) {
    const double s =
        std::sin(2.0 * std::numbers::pi * static_cast<double>(t) /
                 static_cast<double>(period));
    for (int64_t n = 0; n < n_nodes; ++n) {
      const bool event = base_event(t - n * propagation_lag);
      ds.values[static_cast<size_t>(t * n_nodes + n)] =
          event ? 0.0f : static_cast<float>(s);
    }
  }
  fill_timeofday_from_index(ds);
  ds.derive_splits();
  return ds;
}

std::vector<double> chain_distances(int64_t n_nodes, double hop_meters) {
  std::vector<double> d(static_cast<size_t>(n_nodes * n_nodes), 0.0);
  for (int64_t i = 0; i < n_nodes; ++i) {
    for (int64_t j = 0; j < n_nodes; ++j) {
      d[static_cast<size_t>(i * n_nodes + j)] =
          static_cast<double>(std::llabs(i - j)) * hop_meters;
    }
  }
  return d;
}

// ----------------------------------------------------------- speed csv ----

namespace {

// Civil-date conversion (Gregorian), days relative to 1970-01-01.
void civil_from_days(int64_t z, int64_t& y, int64_t& m, int64_t& d) {
  z += 719468;
  const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const int64_t doe = z - era * 146097;
  const int64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = yoe + era * 400;
  const int64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const int64_t mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y += m <= 2;
}

constexpr int64_t kEpochDay = 18262;  // 2020-01-01 relative to 1970-01-01
constexpr int64_t kStepMinutes = 5;

std::string format_timestamp(int64_t step) {
  const int64_t total_min = step * kStepMinutes;
  const int64_t day = kEpochDay + total_min / 1440;
  const int64_t mod = total_min % 1440;
  int64_t y, m, d;
  civil_from_days(day, y, m, d);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04lld-%02lld-%02lldT%02lld:%02lld:00",
                static_cast<long long>(y), static_cast<long long>(m),
                static_cast<long long>(d), static_cast<long long>(mod / 60),
                static_cast<long long>(mod % 60));
  return buf;
}

// Accepts "YYYY-MM-DD HH:MM[:SS]" with 'T' or ' ' as the separator.
double parse_timestamp_dayfrac(const std::string& ts, int64_t line_no) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  const int got = std::sscanf(ts.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d,
                              &sep, &h, &mi, &s);
  if (got < 6 || (sep != 'T' && sep != ' ')) {
    throw std::runtime_error("speed csv: bad timestamp '" + ts + "' at line " +
                             std::to_string(line_no));
  }
  return (static_cast<double>(h) * 3600.0 + static_cast<double>(mi) * 60.0 +
          static_cast<double>(s)) /
         86400.0;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

SeriesDataset load_speed_csv(const std::string& path,
                             const std::vector<std::string>& node_ids,
                             bool zero_is_missing) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("speed csv: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("speed csv: empty file " + path);
  }
  const auto header = split_csv_line(line);
  if (header.size() != node_ids.size() + 1) {
    throw std::runtime_error("speed csv: header of " + path + " has " +
                             std::to_string(header.size() - 1) +
                             " node columns, vocabulary has " +
                             std::to_string(node_ids.size()));
  }
  for (size_t i = 0; i < node_ids.size(); ++i) {
    if (header[i + 1] != node_ids[i]) {
      throw std::runtime_error("speed csv: unknown or misordered node id '" +
                               header[i + 1] + "' in " + path);
    }
  }

  const int64_t n = static_cast<int64_t>(node_ids.size());
  SeriesDataset ds;
  ds.nodes = n;
  std::vector<float> tod;
  int64_t line_no = 1;
  while (std::getline(in, line)) {
    line_no += 1;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (static_cast<int64_t>(cells.size()) != n + 1) {
      throw std::runtime_error("speed csv: ragged row at line " +
                               std::to_string(line_no) + " in " + path);
    }
    tod.push_back(
        static_cast<float>(parse_timestamp_dayfrac(cells[0], line_no)));
    for (int64_t i = 0; i < n; ++i) {
      float v;
      try {
        v = std::stof(cells[static_cast<size_t>(i + 1)]);
      } catch (const std::exception&) {
        throw std::runtime_error("speed csv: bad value at line " +
                                 std::to_string(line_no) + " in " + path);
      }
      ds.values.push_back(v);
      ds.missing.push_back(zero_is_missing && v == 0.0f ? 1 : 0);
    }
  }
  ds.length = static_cast<int64_t>(tod.size());
  if (ds.length == 0) {
    throw std::runtime_error("speed csv: no data rows in " + path);
  }
  ds.timeofday = std::move(tod);
  ds.day_length = 288;
  ds.derive_splits();
  return ds;
}

void save_speed_csv(const std::string& path, const SeriesDataset& ds,
                    const std::vector<std::string>& node_ids) {
  if (static_cast<int64_t>(node_ids.size()) != ds.nodes) {
    throw ContractError("save_speed_csv: node id count mismatch");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("speed csv: cannot open " + path);
  out << "timestamp";
  for (const auto& id : node_ids) out << ',' << id;
  out << '\n';
  char buf[32];
  for (int64_t t = 0; t < ds.length; ++t) {
    out << format_timestamp(t);
    for (int64_t n = 0; n < ds.nodes; ++n) {
      std::snprintf(buf, sizeof(buf), "%.9g", ds.at(t, n));
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("speed csv: write failed for " + path);
}

// -------------------------------------------------------------- windows ----

std::vector<int64_t> window_anchors(const SeriesDataset& ds, Split split,
                                    int64_t t_x, int64_t t_y) {
  if (t_x < 1 || t_y < 1) throw ContractError("window_anchors: bad lengths");
  const auto [s0, s1] = split_range(ds, split);
  if (s1 - s0 < t_x + t_y) {
    throw ContractError("window_anchors: split '" +
                        std::string(split_name(split)) + "' has " +
                        std::to_string(s1 - s0) + " steps, needs at least " +
                        std::to_string(t_x + t_y));
  }
  std::vector<int64_t> anchors;
  anchors.reserve(static_cast<size_t>(s1 - s0 - t_x - t_y + 1));
  for (int64_t t = s0 + t_x - 1; t + t_y <= s1 - 1; ++t) anchors.push_back(t);
  return anchors;
}

ad::Tensor make_x_window(const SeriesDataset& ds, const Scaler& scaler,
                         int64_t t_anchor, int64_t t_x) {
  if (t_anchor - t_x + 1 < 0 || t_anchor >= ds.length) {
    throw ContractError("make_x_window: window out of range");
  }
  const int64_t n = ds.nodes;
  std::vector<float> x(static_cast<size_t>(n * 2 * t_x));
  for (int64_t node = 0; node < n; ++node) {
    for (int64_t i = 0; i < t_x; ++i) {
      const int64_t t = t_anchor - t_x + 1 + i;
      x[static_cast<size_t>((node * 2 + 0) * t_x + i)] =
          scaler.apply(ds.at(t, node));
      x[static_cast<size_t>((node * 2 + 1) * t_x + i)] =
          ds.timeofday[static_cast<size_t>(t)];
    }
  }
  return ad::Tensor::from({n, 2, t_x}, std::move(x));
}

Target make_target(const SeriesDataset& ds, const Scaler& scaler,
                   int64_t t_anchor, int64_t t_y) {
  if (t_anchor < 0 || t_anchor + t_y > ds.length - 1) {
    throw ContractError("make_target: target horizon out of range");
  }
  const int64_t n = ds.nodes;
  Target tg;
  tg.y.resize(static_cast<size_t>(n * t_y));
  tg.valid.resize(static_cast<size_t>(n * t_y));
  for (int64_t node = 0; node < n; ++node) {
    for (int64_t i = 0; i < t_y; ++i) {
      const int64_t t = t_anchor + 1 + i;
      tg.y[static_cast<size_t>(node * t_y + i)] = scaler.apply(ds.at(t, node));
      tg.valid[static_cast<size_t>(node * t_y + i)] =
          ds.is_missing(t, node) ? 0 : 1;
    }
  }
  return tg;
}

// --------------------------------------------------------- dataset dirs ----

namespace {

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest: cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
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

void save_dataset_dir(const std::string& dir, const SeriesDataset& ds,
                      const DatasetManifest& manifest,
                      const std::vector<std::string>& node_ids) {
  std::filesystem::create_directories(dir);
  save_speed_csv(dir + "/speeds.csv", ds, node_ids);
  std::ofstream out(dir + "/manifest.txt", std::ios::trunc);
  if (!out) throw std::runtime_error("manifest: cannot open " + dir);
  out << "nodes = " << manifest.nodes << '\n'
      << "length = " << manifest.length << '\n'
      << "period = " << manifest.period << '\n'
      << "p_zero = " << manifest.p_zero << '\n'
      << "lag = " << manifest.lag << '\n'
      << "seed = " << manifest.seed << '\n'
      << "day_length = " << manifest.day_length << '\n'
      << "zero_is_missing = " << (manifest.zero_is_missing ? 1 : 0) << '\n'
      << "train_end = " << manifest.train_end << '\n'
      << "val_end = " << manifest.val_end << '\n'
      << "adjacency = " << manifest.adjacency_file << '\n'
      << "vocab = " << manifest.vocab_file << '\n';
}

LoadedDataset load_dataset_dir(const std::string& dir) {
  const auto kv = read_kv_file(dir + "/manifest.txt");
  auto want = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) {
      throw std::runtime_error("manifest: missing key '" + std::string(key) +
                               "' in " + dir);
    }
    return it->second;
  };

  LoadedDataset out;
  auto& m = out.manifest;
  m.nodes = std::stoll(want("nodes"));
  m.length = std::stoll(want("length"));
  m.period = std::stoll(want("period"));
  m.p_zero = std::stod(want("p_zero"));
  m.lag = std::stoll(want("lag"));
  m.seed = std::stoull(want("seed"));
  m.day_length = std::stoll(want("day_length"));
  m.zero_is_missing = want("zero_is_missing") == "1";
  m.train_end = std::stoll(want("train_end"));
  m.val_end = std::stoll(want("val_end"));
  if (auto it = kv.find("adjacency"); it != kv.end()) m.adjacency_file = it->second;
  if (auto it = kv.find("vocab"); it != kv.end()) m.vocab_file = it->second;

  if (!m.vocab_file.empty()) {
    std::ifstream vin(dir + "/" + m.vocab_file);
    if (!vin) {
      throw std::runtime_error("manifest: cannot open vocab " + m.vocab_file);
    }
    out.node_ids.assign(static_cast<size_t>(m.nodes), "");
    std::string line;
    while (std::getline(vin, line)) {
      if (line.empty()) continue;
      const auto comma = line.find(',');
      const auto idx = std::stoll(line.substr(comma + 1));
      out.node_ids[static_cast<size_t>(idx)] = line.substr(0, comma);
    }
  } else {
    out.node_ids.reserve(static_cast<size_t>(m.nodes));
    for (int64_t i = 0; i < m.nodes; ++i) {
      out.node_ids.push_back("n" + std::to_string(i));
    }
  }
  out.series = load_speed_csv(dir + "/speeds.csv", out.node_ids,
                              m.zero_is_missing);
  // Synthetic sets index the day by step; raw feeds keep wall-clock time.
  out.series.day_length = m.day_length;
  if (m.period > 0) {
    fill_timeofday_from_index(out.series);
  }
  out.series.train_end = m.train_end;
  out.series.val_end = m.val_end;
  if (out.series.length != m.length) {
    throw std::runtime_error("manifest: length does not match speeds.csv in " +
                             dir);
  }
  return out;
}

}  // namespace rescal::data
