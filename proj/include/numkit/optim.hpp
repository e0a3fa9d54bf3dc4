#pragma once

#include <string>
#include <vector>

#include "numkit/tensor.hpp"

namespace numkit {

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// AdamW with decoupled weight decay:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   p <- p - lr * mhat / (sqrt(vhat) + eps) - lr * wd * p
/// One shared step counter across all parameters.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWHyper hyper);

  /// Applies one update from the parameters' accumulated grads.
  /// Every parameter must carry a gradient buffer.
  void step(double lr);

  void zero_grad();

  int step_count() const { return t_; }
  const AdamWHyper& hyper() const { return hyper_; }

  /// Moment buffers exposed for checkpointing, aligned with the param list.
  std::vector<Tensor>& moments_m() { return m_; }
  std::vector<Tensor>& moments_v() { return v_; }
  void set_step_count(int t) { t_ = t; }

 private:
  std::vector<Tensor> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamWHyper hyper_;
  int t_ = 0;
};

struct LrSchedule {
  double lr_peak = 1e-3;
  int warmup_steps = 0;
  int total_steps = 1;
};

/// Linear warmup from 0 to lr_peak over warmup_steps, then cosine decay to
/// exactly 0 at total_steps. Steps past the end clamp to 0 (with a one-line
/// warning on stderr).
double lr_at(int step, const LrSchedule& sched);

}  // namespace numkit
