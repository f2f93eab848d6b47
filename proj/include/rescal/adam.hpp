#pragma once

#include <cstdint>
#include <vector>

#include "rescal/tensor.hpp"

namespace rescal::ad {

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Bias-corrected Adam over a fixed parameter list. step() consumes the
// gradients (params updated in place, grads zeroed).
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamConfig cfg = {});

  void step();
  int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  AdamConfig cfg_;
  int64_t t_ = 0;
};

}  // namespace rescal::ad
