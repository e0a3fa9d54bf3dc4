#include "numkit/optim.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

namespace numkit {

AdamW::AdamW(std::vector<Tensor> params, AdamWHyper hyper)
    : params_(std::move(params)), hyper_(hyper) {
  if (params_.empty()) throw std::runtime_error("adamw: empty parameter list");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.push_back(Tensor::zeros(p.shape));
    v_.push_back(Tensor::zeros(p.shape));
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double b1 = hyper_.beta1, b2 = hyper_.beta2;
  const double bias1 = 1.0 - std::pow(b1, t_);
  const double bias2 = 1.0 - std::pow(b2, t_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    if (!p.grad)
      throw std::runtime_error("adamw: parameter " + std::to_string(k) + " of shape " +
                               p.shape_str() + " has no gradient");
    double* pv = p.ptr();
    const double* g = p.grad->data();
    double* m = m_[k].ptr();
    double* v = v_[k].ptr();
    const std::size_t n = p.numel();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / bias1;
      const double vhat = v[i] / bias2;
      pv[i] -= lr * mhat / (std::sqrt(vhat) + hyper_.eps) + lr * hyper_.weight_decay * pv[i];
    }
  }
}

void AdamW::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

double lr_at(int step, const LrSchedule& sched) {
  if (step < 0) throw std::runtime_error("lr_at: negative step " + std::to_string(step));
  if (sched.total_steps <= 0 || sched.warmup_steps < 0 || sched.warmup_steps > sched.total_steps)
    throw std::runtime_error("lr_at: bad schedule (warmup " + std::to_string(sched.warmup_steps) +
                             ", total " + std::to_string(sched.total_steps) + ")");
  if (step > sched.total_steps) {
    static bool warned = false;
    if (!warned) {
      std::cerr << "lr_at: step " << step << " past schedule end " << sched.total_steps
                << ", learning rate clamped to 0\n";
      warned = true;
    }
    return 0.0;
  }
  if (step == sched.total_steps) return 0.0;  // cos(M_PI) is not exactly -1
  if (step < sched.warmup_steps)
    return sched.lr_peak * static_cast<double>(step) / sched.warmup_steps;
  const double span = static_cast<double>(sched.total_steps - sched.warmup_steps);
  if (span == 0.0) return sched.lr_peak;
  const double frac = static_cast<double>(step - sched.warmup_steps) / span;
  return 0.5 * sched.lr_peak * (1.0 + std::cos(M_PI * frac));
}

}  // namespace numkit
