#include "numkit/tensor.hpp"

#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace numkit {

namespace {

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::runtime_error("tensor: non-positive dim in shape " + shape_to_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

thread_local bool g_grad_enabled = true;

}  // namespace

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int> shp, bool rg) : shape(std::move(shp)), requires_grad(rg) {
  data = std::make_shared<std::vector<double>>(shape_numel(shape), 0.0);
  // Eager allocation: shallow copies share one grad buffer for the tensor's
  // whole lifetime, so a capture taken before backward() still sees the sums.
  if (rg) ensure_grad();
}

Tensor Tensor::scalar(double v, bool rg) {
  Tensor t({1}, rg);
  (*t.data)[0] = v;
  return t;
}

Tensor Tensor::zeros(std::vector<int> shp, bool rg) { return Tensor(std::move(shp), rg); }

Tensor Tensor::from(std::vector<int> shp, std::vector<double> values, bool rg) {
  Tensor t(std::move(shp), rg);
  if (values.size() != t.numel())
    throw std::runtime_error("tensor: " + std::to_string(values.size()) + " values for shape " +
                             t.shape_str());
  *t.data = std::move(values);
  return t;
}

std::size_t Tensor::numel() const { return data ? data->size() : 0; }

int Tensor::rows() const { return shape.empty() ? 1 : shape.front(); }

int Tensor::cols() const { return shape.empty() ? 1 : shape.back(); }

double& Tensor::operator()(int r, int c) { return (*data)[static_cast<std::size_t>(r) * cols() + c]; }

double Tensor::operator()(int r, int c) const {
  return (*data)[static_cast<std::size_t>(r) * cols() + c];
}

std::string Tensor::shape_str() const { return shape_to_string(shape); }

void Tensor::ensure_grad() {
  if (!grad) grad = std::make_shared<std::vector<double>>(numel(), 0.0);
}

void Tensor::zero_grad() {
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

Tensor Tensor::detach() const {
  Tensor t;
  t.shape = shape;
  t.data = data;
  t.requires_grad = false;
  return t;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape = shape;
  t.data = std::make_shared<std::vector<double>>(*data);
  return t;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(Tensor& loss) {
  if (loss.numel() != 1)
    throw std::runtime_error("backward: loss must be scalar, got shape " + loss.shape_str());
  if (!loss.requires_grad)
    throw std::runtime_error("backward: loss does not require grad (no graph was recorded)");

  // Iterative post-order over the node DAG, deduplicated by node identity.
  std::vector<Tensor> order;
  std::unordered_set<const Node*> seen;
  struct Frame {
    Tensor t;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  if (loss.node && seen.insert(loss.node.get()).second) stack.push_back({loss, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    auto& parents = f.t.node->parents;
    if (f.next_parent < parents.size()) {
      Tensor p = parents[f.next_parent++];
      if (p.node && seen.insert(p.node.get()).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.t);
      stack.pop_back();
    }
  }

  loss.ensure_grad();
  (*loss.grad)[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor& t = *it;
    for (Tensor& p : t.node->parents)
      if (p.requires_grad) p.ensure_grad();
    if (!t.grad) t.ensure_grad();  // unreached output: zero grad flows through
    t.node->backward(t);
  }
}

}  // namespace numkit
