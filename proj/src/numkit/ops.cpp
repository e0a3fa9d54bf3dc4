#include "numkit/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace numkit {

namespace {

bool want_grad(const Tensor& a) { return grad_enabled() && a.requires_grad; }

bool want_grad(const Tensor& a, const Tensor& b) {
  return grad_enabled() && (a.requires_grad || b.requires_grad);
}

void require_2d(const Tensor& t, const char* op) {
  if (t.shape.size() != 2)
    throw std::runtime_error(std::string(op) + ": expected a 2-D tensor, got " + t.shape_str());
}

// Row/column view of a tensor whose last axis is the "feature" axis.
struct RowView {
  int r, c;
};

RowView rows_cols(const Tensor& t, const char* op) {
  if (t.shape.empty() || t.shape.size() > 2)
    throw std::runtime_error(std::string(op) + ": expected rank 1 or 2, got " + t.shape_str());
  int c = t.shape.back();
  int r = static_cast<int>(t.numel()) / c;
  return {r, c};
}

void attach(Tensor& out, std::vector<Tensor> parents, std::function<void(Tensor&)> bw) {
  out.requires_grad = true;
  out.ensure_grad();
  out.node = std::make_shared<Node>();
  out.node->parents = std::move(parents);
  out.node->backward = std::move(bw);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.shape[1] != b.shape[0])
    throw std::runtime_error("matmul: inner dims disagree, " + a.shape_str() + " x " + b.shape_str());
  const int n = a.shape[0], k = a.shape[1], m = b.shape[1];
  Tensor out({n, m});
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* po = out.ptr();
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < k; ++p) {
      const double aip = pa[static_cast<std::size_t>(i) * k + p];
      if (aip == 0.0) continue;
      const double* brow = pb + static_cast<std::size_t>(p) * m;
      double* orow = po + static_cast<std::size_t>(i) * m;
      for (int j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  if (want_grad(a, b)) {
    Tensor ac = a, bc = b;
    attach(out, {a, b}, [ac, bc, n, k, m](Tensor& o) {
      const double* g = o.grad->data();
      if (ac.requires_grad) {
        double* da = ac.grad->data();
        const double* pb2 = bc.ptr();
        for (int i = 0; i < n; ++i)
          for (int p = 0; p < k; ++p) {
            const double* gr = g + static_cast<std::size_t>(i) * m;
            const double* br = pb2 + static_cast<std::size_t>(p) * m;
            double s = 0.0;
            for (int j = 0; j < m; ++j) s += gr[j] * br[j];
            da[static_cast<std::size_t>(i) * k + p] += s;
          }
      }
      if (bc.requires_grad) {
        double* db = bc.grad->data();
        const double* pa2 = ac.ptr();
        for (int i = 0; i < n; ++i)
          for (int p = 0; p < k; ++p) {
            const double aip = pa2[static_cast<std::size_t>(i) * k + p];
            if (aip == 0.0) continue;
            const double* gr = g + static_cast<std::size_t>(i) * m;
            double* dbr = db + static_cast<std::size_t>(p) * m;
            for (int j = 0; j < m; ++j) dbr[j] += aip * gr[j];
          }
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw std::runtime_error("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor out(a.shape);
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  if (want_grad(a, b)) {
    Tensor ac = a, bc = b;
    attach(out, {a, b}, [ac, bc, n](Tensor& o) {
      const double* g = o.grad->data();
      if (ac.requires_grad)
        for (std::size_t i = 0; i < n; ++i) (*ac.grad)[i] += g[i];
      if (bc.requires_grad)
        for (std::size_t i = 0; i < n; ++i) (*bc.grad)[i] += g[i];
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw std::runtime_error("mul: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor out(a.shape);
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
  if (want_grad(a, b)) {
    Tensor ac = a, bc = b;
    attach(out, {a, b}, [ac, bc, n](Tensor& o) {
      const double* g = o.grad->data();
      if (ac.requires_grad)
        for (std::size_t i = 0; i < n; ++i) (*ac.grad)[i] += g[i] * (*bc.data)[i];
      if (bc.requires_grad)
        for (std::size_t i = 0; i < n; ++i) (*bc.grad)[i] += g[i] * (*ac.data)[i];
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double c) {
  Tensor out(x.shape);
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] * c;
  if (want_grad(x)) {
    Tensor xc = x;
    attach(out, {x}, [xc, c, n](Tensor& o) {
      const double* g = o.grad->data();
      for (std::size_t i = 0; i < n; ++i) (*xc.grad)[i] += g[i] * c;
    });
  }
  return out;
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  auto [r, c] = rows_cols(x, "add_row");
  if (static_cast<int>(row.numel()) != c)
    throw std::runtime_error("add_row: row " + row.shape_str() + " does not span columns of " +
                             x.shape_str());
  Tensor out(x.shape);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      (*out.data)[static_cast<std::size_t>(i) * c + j] =
          (*x.data)[static_cast<std::size_t>(i) * c + j] + (*row.data)[j];
  if (want_grad(x, row)) {
    Tensor xc = x, rc = row;
    attach(out, {x, row}, [xc, rc, r, c](Tensor& o) {
      const double* g = o.grad->data();
      if (xc.requires_grad)
        for (std::size_t i = 0; i < static_cast<std::size_t>(r) * c; ++i) (*xc.grad)[i] += g[i];
      if (rc.requires_grad)
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) (*rc.grad)[j] += g[static_cast<std::size_t>(i) * c + j];
    });
  }
  return out;
}

Tensor mul_row(const Tensor& x, const Tensor& row) {
  auto [r, c] = rows_cols(x, "mul_row");
  if (static_cast<int>(row.numel()) != c)
    throw std::runtime_error("mul_row: row " + row.shape_str() + " does not span columns of " +
                             x.shape_str());
  Tensor out(x.shape);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      (*out.data)[static_cast<std::size_t>(i) * c + j] =
          (*x.data)[static_cast<std::size_t>(i) * c + j] * (*row.data)[j];
  if (want_grad(x, row)) {
    Tensor xc = x, rc = row;
    attach(out, {x, row}, [xc, rc, r, c](Tensor& o) {
      const double* g = o.grad->data();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) {
          const std::size_t k = static_cast<std::size_t>(i) * c + j;
          if (xc.requires_grad) (*xc.grad)[k] += g[k] * (*rc.data)[j];
          if (rc.requires_grad) (*rc.grad)[j] += g[k] * (*xc.data)[k];
        }
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  auto [r, c] = rows_cols(x, "softmax_rows");
  Tensor out(x.shape);
  for (int i = 0; i < r; ++i) {
    const double* xi = x.ptr() + static_cast<std::size_t>(i) * c;
    double* oi = out.ptr() + static_cast<std::size_t>(i) * c;
    double mx = xi[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
    double sum = 0.0;
    for (int j = 0; j < c; ++j) {
      oi[j] = std::exp(xi[j] - mx);
      sum += oi[j];
    }
    for (int j = 0; j < c; ++j) oi[j] /= sum;
  }
  if (want_grad(x)) {
    Tensor xc = x;
    attach(out, {x}, [xc, r, c](Tensor& o) {
      const double* g = o.grad->data();
      const double* y = o.ptr();
      for (int i = 0; i < r; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * c;
        double dot = 0.0;
        for (int j = 0; j < c; ++j) dot += g[base + j] * y[base + j];
        for (int j = 0; j < c; ++j) (*xc.grad)[base + j] += y[base + j] * (g[base + j] - dot);
      }
    });
  }
  return out;
}

Tensor layernorm_rows(const Tensor& x, double eps) {
  auto [r, c] = rows_cols(x, "layernorm_rows");
  if (c < 2) throw std::runtime_error("layernorm_rows: need at least 2 columns, got " + x.shape_str());
  Tensor out(x.shape);
  std::vector<double> inv_std(r);
  for (int i = 0; i < r; ++i) {
    const double* xi = x.ptr() + static_cast<std::size_t>(i) * c;
    double* oi = out.ptr() + static_cast<std::size_t>(i) * c;
    double mean = 0.0;
    for (int j = 0; j < c; ++j) mean += xi[j];
    mean /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= c;
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) oi[j] = (xi[j] - mean) * inv_std[i];
  }
  if (want_grad(x)) {
    Tensor xc = x;
    attach(out, {x}, [xc, r, c, inv_std](Tensor& o) {
      const double* g = o.grad->data();
      const double* y = o.ptr();  // y is already the normalized value
      for (int i = 0; i < r; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * c;
        double gmean = 0.0, gymean = 0.0;
        for (int j = 0; j < c; ++j) {
          gmean += g[base + j];
          gymean += g[base + j] * y[base + j];
        }
        gmean /= c;
        gymean /= c;
        for (int j = 0; j < c; ++j)
          (*xc.grad)[base + j] += (g[base + j] - gmean - y[base + j] * gymean) * inv_std[i];
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape);
  const std::size_t n = x.numel();
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = (*x.data)[i];
    (*out.data)[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  }
  if (want_grad(x)) {
    Tensor xc = x;
    attach(out, {x}, [xc, n, inv_sqrt2](Tensor& o) {
      const double* g = o.grad->data();
      const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
      for (std::size_t i = 0; i < n; ++i) {
        const double v = (*xc.data)[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = std::exp(-0.5 * v * v) * inv_sqrt2pi;
        (*xc.grad)[i] += g[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  require_2d(table, "embedding");
  const int v = table.shape[0], d = table.shape[1];
  for (int id : ids)
    if (id < 0 || id >= v)
      throw std::runtime_error("embedding: id " + std::to_string(id) + " outside table " +
                               table.shape_str());
  Tensor out({static_cast<int>(ids.size()), d});
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (int j = 0; j < d; ++j) (*out.data)[i * d + j] = table(ids[i], j);
  if (want_grad(table)) {
    Tensor tc = table;
    attach(out, {table}, [tc, ids, d](Tensor& o) {
      const double* g = o.grad->data();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* row = tc.grad->data() + static_cast<std::size_t>(ids[i]) * d;
        for (int j = 0; j < d; ++j) row[j] += g[i * d + j];
      }
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::runtime_error("concat_rows: no parts");
  int cols = -1, total = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_rows");
    if (cols < 0) cols = p.shape[1];
    if (p.shape[1] != cols)
      throw std::runtime_error("concat_rows: column mismatch, " + p.shape_str() + " vs [*," +
                               std::to_string(cols) + "]");
    total += p.shape[0];
    any_grad = any_grad || p.requires_grad;
  }
  Tensor out({total, cols});
  int at = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data->begin(), p.data->end(), out.data->begin() + static_cast<std::size_t>(at) * cols);
    at += p.shape[0];
  }
  if (grad_enabled() && any_grad) {
    std::vector<Tensor> ps = parts;
    attach(out, ps, [ps, cols](Tensor& o) {
      const double* g = o.grad->data();
      std::size_t at2 = 0;
      for (const Tensor& p : ps) {
        const std::size_t n = p.numel();
        if (p.requires_grad)
          for (std::size_t i = 0; i < n; ++i) (*p.grad)[i] += g[at2 + i];
        at2 += n;
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, int start, int len) {
  require_2d(x, "slice_rows");
  if (start < 0 || len <= 0 || start + len > x.shape[0])
    throw std::runtime_error("slice_rows: rows [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") outside " + x.shape_str());
  const int c = x.shape[1];
  Tensor out({len, c});
  std::copy(x.data->begin() + static_cast<std::size_t>(start) * c,
            x.data->begin() + static_cast<std::size_t>(start + len) * c, out.data->begin());
  if (want_grad(x)) {
    Tensor xc = x;
    attach(out, {x}, [xc, start, len, c](Tensor& o) {
      const double* g = o.grad->data();
      double* dx = xc.grad->data() + static_cast<std::size_t>(start) * c;
      for (std::size_t i = 0; i < static_cast<std::size_t>(len) * c; ++i) dx[i] += g[i];
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  require_2d(x, "transpose");
  const int r = x.shape[0], c = x.shape[1];
  Tensor out({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) (*out.data)[static_cast<std::size_t>(j) * r + i] = x(i, j);
  if (want_grad(x)) {
    Tensor xc = x;
    attach(out, {x}, [xc, r, c](Tensor& o) {
      const double* g = o.grad->data();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          (*xc.grad)[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(j) * r + i];
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  const std::size_t n = x.numel();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += (*x.data)[i];
  Tensor out = Tensor::scalar(s / static_cast<double>(n));
  if (want_grad(x)) {
    Tensor xc = x;
    attach(out, {x}, [xc, n](Tensor& o) {
      const double g = (*o.grad)[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) (*xc.grad)[i] += g;
    });
  }
  return out;
}

Tensor add_rows(const Tensor& x, int start, const Tensor& delta) {
  require_2d(x, "add_rows");
  require_2d(delta, "add_rows");
  if (x.shape[1] != delta.shape[1] || start < 0 || start + delta.shape[0] > x.shape[0])
    throw std::runtime_error("add_rows: delta " + delta.shape_str() + " at row " +
                             std::to_string(start) + " does not fit " + x.shape_str());
  const int c = x.shape[1], dr = delta.shape[0];
  Tensor out = x.clone();
  for (int i = 0; i < dr; ++i)
    for (int j = 0; j < c; ++j) out(start + i, j) += delta(i, j);
  if (want_grad(x, delta)) {
    Tensor xc = x, dc = delta;
    attach(out, {x, delta}, [xc, dc, start, dr, c](Tensor& o) {
      const double* g = o.grad->data();
      if (xc.requires_grad) {
        const std::size_t n = xc.numel();
        for (std::size_t i = 0; i < n; ++i) (*xc.grad)[i] += g[i];
      }
      if (dc.requires_grad) {
        const double* gs = g + static_cast<std::size_t>(start) * c;
        for (std::size_t i = 0; i < static_cast<std::size_t>(dr) * c; ++i) (*dc.grad)[i] += gs[i];
      }
    });
  }
  return out;
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets,
                          const std::vector<std::uint8_t>& mask) {
  require_2d(logits, "cross_entropy_rows");
  const int n = logits.shape[0], v = logits.shape[1];
  if (static_cast<int>(targets.size()) != n || static_cast<int>(mask.size()) != n)
    throw std::runtime_error("cross_entropy_rows: " + std::to_string(targets.size()) +
                             " targets / " + std::to_string(mask.size()) + " mask entries for " +
                             logits.shape_str());
  int count = 0;
  for (int i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    if (targets[i] < 0 || targets[i] >= v)
      throw std::runtime_error("cross_entropy_rows: target " + std::to_string(targets[i]) +
                               " outside vocab of " + logits.shape_str());
    ++count;
  }
  if (count == 0) throw std::runtime_error("cross_entropy_rows: mask selects no rows");

  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const double* li = logits.ptr() + static_cast<std::size_t>(i) * v;
    double mx = li[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, li[j]);
    double sum = 0.0;
    for (int j = 0; j < v; ++j) sum += std::exp(li[j] - mx);
    loss += std::log(sum) + mx - li[targets[i]];
  }
  Tensor out = Tensor::scalar(loss / count);
  if (want_grad(logits)) {
    Tensor lc = logits;
    attach(out, {logits}, [lc, targets, mask, n, v, count](Tensor& o) {
      const double g = (*o.grad)[0] / count;
      for (int i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        const double* li = lc.ptr() + static_cast<std::size_t>(i) * v;
        double* di = lc.grad->data() + static_cast<std::size_t>(i) * v;
        double mx = li[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, li[j]);
        double sum = 0.0;
        for (int j = 0; j < v; ++j) sum += std::exp(li[j] - mx);
        for (int j = 0; j < v; ++j) di[j] += g * std::exp(li[j] - mx) / sum;
        di[targets[i]] -= g;
      }
    });
  }
  return out;
}

}  // namespace numkit
