#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rescal/data.hpp"

namespace rescal::flog {

// One base-model prediction in normalized space.
struct Record {
  int64_t t = 0;       // anchor step (prediction made at time t)
  int32_t node = 0;    // node index
  int32_t horizon = 0; // 1-based steps ahead
  float y_true = 0.0f;
  float y_pred = 0.0f;
};

struct ForecastLog {
  std::vector<Record> records;  // ordered by (t, node, horizon)
};

// CSV columns: t,node,horizon,y_true,y_pred (normalized values).
void write_csv(const std::string& path, const ForecastLog& log);
ForecastLog read_csv(const std::string& path);

void write_scaler(const std::string& path, const data::Scaler& scaler);
data::Scaler read_scaler(const std::string& path);

// Fast lookup of the prediction row for a (t, node) pair.
class LogIndex {
 public:
  explicit LogIndex(const ForecastLog& log, int64_t nodes, int64_t t_y);

  // Pointer to T_y contiguous horizon records, or nullptr when t is unlogged.
  const Record* find(int64_t t, int64_t node) const;
  int64_t first_t() const { return first_t_; }
  int64_t last_t() const { return last_t_; }
  int64_t t_y() const { return t_y_; }

 private:
  const ForecastLog& log_;
  int64_t nodes_ = 0;
  int64_t t_y_ = 0;
  int64_t first_t_ = 0;
  int64_t last_t_ = -1;
};

}  // namespace rescal::flog
