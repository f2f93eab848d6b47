#include "rescal/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace rescal::ad {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (cfg_.lr <= 0.0f || cfg_.eps <= 0.0f) {
    throw ContractError("adam: lr and eps must be positive");
  }
  if (cfg_.beta1 <= 0.0f || cfg_.beta1 >= 1.0f || cfg_.beta2 <= 0.0f ||
      cfg_.beta2 >= 1.0f) {
    throw ContractError("adam: betas must lie in (0,1)");
  }
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(static_cast<size_t>(p.size()), 0.0f);
    v_.emplace_back(static_cast<size_t>(p.size()), 0.0f);
  }
}

void Adam::step() {
  for (const Tensor& p : params_) {
    if (!p.has_grad()) {
      throw ContractError("adam: parameter is missing its gradient");
    }
  }
  t_ += 1;
  const double c1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), t_);
  const double c2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), t_);
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    auto vals = p.mutable_values();
    auto g = p.grad();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (size_t i = 0; i < vals.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * g[i] * g[i];
      const float mhat = static_cast<float>(m[i] / c1);
      const float vhat = static_cast<float>(v[i] / c2);
      vals[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    p.zero_grad();
  }
}

}  // namespace rescal::ad
