#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace numkit {

struct Node;

/// Dense row-major tensor of 64-bit reals.
/// Copies are shallow: they share storage, gradient and autograd node.
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<double>> data;
  bool requires_grad = false;
  std::shared_ptr<std::vector<double>> grad;  // same length as data when present
  std::shared_ptr<Node> node;                 // null for leaves

  Tensor() = default;
  explicit Tensor(std::vector<int> shp, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor zeros(std::vector<int> shp, bool requires_grad = false);
  static Tensor from(std::vector<int> shp, std::vector<double> values,
                     bool requires_grad = false);

  std::size_t numel() const;
  int rows() const;  // first axis (1 for rank-0/1)
  int cols() const;  // last axis

  double* ptr() { return data->data(); }
  const double* ptr() const { return data->data(); }
  double& operator()(int r, int c);
  double operator()(int r, int c) const;

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  std::string shape_str() const;

  void ensure_grad();  // allocate zeroed gradient storage if absent
  void zero_grad();
  Tensor detach() const;  // shares data, drops node and grad tracking
  Tensor clone() const;   // deep copy of data, no node
};

/// Autograd node: the op's inputs plus a lambda that routes the output
/// gradient into the parents' grad buffers.
struct Node {
  std::vector<Tensor> parents;
  std::function<void(Tensor&)> backward;
};

/// Reverse-mode sweep from a scalar loss. Seeds d(loss)/d(loss)=1 and
/// accumulates into every reachable tensor with requires_grad set.
void backward(Tensor& loss);

/// Ops only record nodes while grads are enabled (and some input wants them).
bool grad_enabled();

/// RAII guard that disables graph recording in its scope (evaluation paths).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

std::string shape_to_string(const std::vector<int>& shape);

}  // namespace numkit
