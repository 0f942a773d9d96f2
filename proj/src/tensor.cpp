#include "g2c/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

#include "g2c/errors.hpp"

namespace g2c {

namespace {

constexpr double kMaskValue = -1e30;

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

using ImplPtr = std::shared_ptr<Tensor::Impl>;

bool want_grad(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::recording()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// Marks the output differentiable and appends the backward step. The step
// runs only if some later op actually deposited gradient into `out`.
void record(Tensor& out, std::function<void()> step) {
  out.set_requires_grad(true);
  ImplPtr on = out.impl();
  Tape::record([on, step = std::move(step)]() {
    if (on->grad.empty()) return;
    step();
  });
}

}  // namespace

// ---- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<Impl>();
  impl->value.assign(shape_size(shape), 0.0);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl()->value.begin(), t.impl()->value.end(), fill);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_size(shape) != data.size())
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->value = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& x : t.impl()->value) x = rng.normal(0.0, stddev);
  return t;
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of size " + std::to_string(size()));
  return impl_->value[0];
}

const std::vector<double>& Tensor::grad() const {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  impl_->grad.assign(impl_->value.size(), 0.0);
}

// ---- Tape -------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

bool Tape::recording() { return g_active_tape != nullptr; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_step) {
  g_active_tape->entries_.push_back(std::move(backward_step));
}

void Tape::run_backward() {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) throw DimensionError("backward() requires a one-element loss");
  if (!Tape::recording()) throw DimensionError("backward() requires an active Tape");
  loss.impl()->accum_grad(0, 1.0);
  Tape::active()->run_backward();
}

// ---- Ops --------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul expects rank-2 inputs");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  require(k == k2, "matmul inner dimensions differ: " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
  Tensor out = Tensor::zeros({m, n});
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double aip = av[static_cast<std::size_t>(i) * k + p];
      if (aip == 0.0) continue;
      const std::size_t brow = static_cast<std::size_t>(p) * n;
      const std::size_t orow = static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) ov[orow + j] += aip * bv[brow + j];
    }
  }
  if (want_grad({&a, &b})) {
    ImplPtr an = a.impl(), bn = b.impl(), on = out.impl();
    record(out, [an, bn, on, m, k, n]() {
      const auto& g = on->grad;
      if (an->requires_grad) {  // dA = G * B^T
        an->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j)
              acc += g[static_cast<std::size_t>(i) * n + j] *
                     bn->value[static_cast<std::size_t>(p) * n + j];
            an->grad[static_cast<std::size_t>(i) * k + p] += acc;
          }
      }
      if (bn->requires_grad) {  // dB = A^T * G
        bn->ensure_grad();
        for (int p = 0; p < k; ++p)
          for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i)
              acc += an->value[static_cast<std::size_t>(i) * k + p] *
                     g[static_cast<std::size_t>(i) * n + j];
            bn->grad[static_cast<std::size_t>(p) * n + j] += acc;
          }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose expects rank-2 input");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::zeros({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.data()[static_cast<std::size_t>(j) * m + i] = a.at(i, j);
  if (want_grad({&a})) {
    ImplPtr an = a.impl(), on = out.impl();
    record(out, [an, on, m, n]() {
      an->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          an->grad[static_cast<std::size_t>(i) * n + j] +=
              on->grad[static_cast<std::size_t>(j) * m + i];
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add expects matching shapes, got " + shape_str(a.shape()) +
                                      " and " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (want_grad({&a, &b})) {
    ImplPtr an = a.impl(), bn = b.impl(), on = out.impl();
    record(out, [an, bn, on]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
      }
    });
  }
  return out;
}

Tensor add_rowwise(const Tensor& x, const Tensor& b) {
  require(x.rank() == 2 && b.rank() == 1, "add_rowwise expects 2D x and 1D bias");
  const int m = x.dim(0), n = x.dim(1);
  require(b.dim(0) == n, "bias length does not match row width");
  Tensor out = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.data()[static_cast<std::size_t>(i) * n + j] = x.at(i, j) + b.at(j);
  if (want_grad({&x, &b})) {
    ImplPtr xn = x.impl(), bn = b.impl(), on = out.impl();
    record(out, [xn, bn, on, m, n]() {
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            bn->grad[static_cast<std::size_t>(j)] += on->grad[static_cast<std::size_t>(i) * n + j];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mul expects matching shapes");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (want_grad({&a, &b})) {
    ImplPtr an = a.impl(), bn = b.impl(), on = out.impl();
    record(out, [an, bn, on]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i] * an->value[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * c;
  if (want_grad({&x})) {
    ImplPtr xn = x.impl(), on = out.impl();
    record(out, [xn, on, c]() {
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i] * c;
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (want_grad({&x})) {
    ImplPtr xn = x.impl(), on = out.impl();
    record(out, [xn, on]() {
      xn->ensure_grad();
      for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[0];
    });
  }
  return out;
}

Tensor row(const Tensor& x, int i) {
  require(x.rank() == 2, "row expects rank-2 input");
  require(i >= 0 && i < x.dim(0), "row index out of range");
  const int n = x.dim(1);
  Tensor out = Tensor::zeros({n});
  for (int j = 0; j < n; ++j) out.data()[static_cast<std::size_t>(j)] = x.at(i, j);
  if (want_grad({&x})) {
    ImplPtr xn = x.impl(), on = out.impl();
    record(out, [xn, on, i, n]() {
      xn->ensure_grad();
      for (int j = 0; j < n; ++j)
        xn->grad[static_cast<std::size_t>(i) * n + j] += on->grad[static_cast<std::size_t>(j)];
    });
  }
  return out;
}

Tensor rows(const Tensor& x, const std::vector<int>& indices) {
  require(x.rank() == 2, "rows expects rank-2 input");
  const int n = x.dim(1), m = x.dim(0);
  Tensor out = Tensor::zeros({static_cast<int>(indices.size()), n});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    require(indices[r] >= 0 && indices[r] < m, "row index out of range");
    for (int j = 0; j < n; ++j)
      out.data()[r * n + j] = x.at(indices[r], j);
  }
  if (want_grad({&x})) {
    ImplPtr xn = x.impl(), on = out.impl();
    record(out, [xn, on, indices, n]() {
      xn->ensure_grad();
      for (std::size_t r = 0; r < indices.size(); ++r)
        for (int j = 0; j < n; ++j)
          xn->grad[static_cast<std::size_t>(indices[r]) * n + j] += on->grad[r * n + j];
    });
  }
  return out;
}

Tensor cols(const Tensor& x, int start, int count) {
  require(x.rank() == 2, "cols expects rank-2 input");
  const int m = x.dim(0), n = x.dim(1);
  require(start >= 0 && count >= 0 && start + count <= n, "column slice out of range");
  Tensor out = Tensor::zeros({m, count});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < count; ++j)
      out.data()[static_cast<std::size_t>(i) * count + j] = x.at(i, start + j);
  if (want_grad({&x})) {
    ImplPtr xn = x.impl(), on = out.impl();
    record(out, [xn, on, m, n, start, count]() {
      xn->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < count; ++j)
          xn->grad[static_cast<std::size_t>(i) * n + start + j] +=
              on->grad[static_cast<std::size_t>(i) * count + j];
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols needs at least one part");
  const int m = parts[0].dim(0);
  int total = 0;
  bool grad = false;
  for (const Tensor& p : parts) {
    require(p.rank() == 2 && p.dim(0) == m, "concat_cols parts must share row count");
    total += p.dim(1);
    grad = grad || p.requires_grad();
  }
  Tensor out = Tensor::zeros({m, total});
  int off = 0;
  for (const Tensor& p : parts) {
    const int w = p.dim(1);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        out.data()[static_cast<std::size_t>(i) * total + off + j] = p.at(i, j);
    off += w;
  }
  if (Tape::recording() && grad) {
    std::vector<ImplPtr> ins;
    std::vector<int> widths;
    for (const Tensor& p : parts) {
      ins.push_back(p.impl());
      widths.push_back(p.dim(1));
    }
    ImplPtr on = out.impl();
    record(out, [ins, widths, on, m, total]() {
      int off2 = 0;
      for (std::size_t k = 0; k < ins.size(); ++k) {
        const int w = widths[k];
        if (ins[k]->requires_grad) {
          ins[k]->ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
              ins[k]->grad[static_cast<std::size_t>(i) * w + j] +=
                  on->grad[static_cast<std::size_t>(i) * total + off2 + j];
        }
        off2 += w;
      }
    });
  }
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  require(x.rank() >= 1, "softmax_lastdim expects rank >= 1");
  const int n = x.dim(x.rank() - 1);
  if (n < 1) throw DimensionError("softmax over empty last dimension");
  const std::size_t slices = x.size() / static_cast<std::size_t>(n);
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t s = 0; s < slices; ++s) {
    const std::size_t base = s * static_cast<std::size_t>(n);
    double mx = x.data()[base];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x.data()[base + j]);
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      const double e = std::exp(x.data()[base + j] - mx);
      out.data()[base + j] = e;
      denom += e;
    }
    for (int j = 0; j < n; ++j) out.data()[base + j] /= denom;
  }
  if (want_grad({&x})) {
    ImplPtr xn = x.impl(), on = out.impl();
    record(out, [xn, on, n, slices]() {
      xn->ensure_grad();
      for (std::size_t s = 0; s < slices; ++s) {
        const std::size_t base = s * static_cast<std::size_t>(n);
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += on->grad[base + j] * on->value[base + j];
        for (int j = 0; j < n; ++j)
          xn->grad[base + j] += (on->grad[base + j] - dot) * on->value[base + j];
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require(x.rank() == 2 || x.rank() == 1, "layer_norm expects rank-1 or rank-2 input");
  const int n = x.dim(x.rank() - 1);
  const int m = x.rank() == 2 ? x.dim(0) : 1;
  require(gamma.rank() == 1 && gamma.dim(0) == n, "gamma does not match normalized dimension");
  require(beta.rank() == 1 && beta.dim(0) == n, "beta does not match normalized dimension");
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> inv_sigma(static_cast<std::size_t>(m));
  std::vector<double> xhat(x.size());
  for (int i = 0; i < m; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * n;
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += x.data()[base + j];
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double d = x.data()[base + j] - mean;
      var += d * d;
    }
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < n; ++j) {
      const double h = (x.data()[base + j] - mean) * is;
      xhat[base + j] = h;
      out.data()[base + j] = gamma.at(j) * h + beta.at(j);
    }
  }
  if (want_grad({&x, &gamma, &beta})) {
    ImplPtr xn = x.impl(), gn = gamma.impl(), bn = beta.impl(), on = out.impl();
    record(out, [xn, gn, bn, on, m, n, inv_sigma, xhat]() {
      for (int i = 0; i < m; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * n;
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (int j = 0; j < n; ++j)
            gn->grad[static_cast<std::size_t>(j)] += on->grad[base + j] * xhat[base + j];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int j = 0; j < n; ++j) bn->grad[static_cast<std::size_t>(j)] += on->grad[base + j];
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (int j = 0; j < n; ++j) {
            const double dxhat = on->grad[base + j] * gn->value[static_cast<std::size_t>(j)];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat[base + j];
          }
          mean_dxhat /= n;
          mean_dxhat_xhat /= n;
          for (int j = 0; j < n; ++j) {
            const double dxhat = on->grad[base + j] * gn->value[static_cast<std::size_t>(j)];
            xn->grad[base + j] += inv_sigma[static_cast<std::size_t>(i)] *
                                  (dxhat - mean_dxhat - xhat[base + j] * mean_dxhat_xhat);
          }
        }
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  }
  if (want_grad({&x})) {
    ImplPtr xn = x.impl(), on = out.impl();
    record(out, [xn, on]() {
      constexpr double inv_sqrt2pi = 0.39894228040143267794;
      xn->ensure_grad();
      for (std::size_t i = 0; i < xn->grad.size(); ++i) {
        const double v = xn->value[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * 0.70710678118654752440));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        xn->grad[i] += on->grad[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor cross_entropy_logits(const Tensor& logits, int target) {
  require(logits.rank() == 1, "cross_entropy_logits expects a rank-1 logits vector");
  const int k = logits.dim(0);
  if (target < 0 || target >= k)
    throw DimensionError("cross-entropy target " + std::to_string(target) + " out of range [0," +
                         std::to_string(k) + ")");
  double mx = logits.at(0);
  for (int j = 1; j < k; ++j) mx = std::max(mx, logits.at(j));
  double denom = 0.0;
  for (int j = 0; j < k; ++j) denom += std::exp(logits.at(j) - mx);
  const double log_denom = std::log(denom) + mx;
  const double loss = log_denom - logits.at(target);
  Tensor out = Tensor::scalar(loss);
  if (want_grad({&logits})) {
    ImplPtr ln = logits.impl(), on = out.impl();
    record(out, [ln, on, k, target, mx, denom]() {
      ln->ensure_grad();
      const double g = on->grad[0];
      for (int j = 0; j < k; ++j) {
        const double p = std::exp(ln->value[static_cast<std::size_t>(j)] - mx) / denom;
        ln->grad[static_cast<std::size_t>(j)] += g * (p - (j == target ? 1.0 : 0.0));
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (p <= 0.0) return scale(x, 1.0);
  require(p < 1.0, "dropout probability must be < 1");
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * mask[i];
  if (want_grad({&x})) {
    ImplPtr xn = x.impl(), on = out.impl();
    record(out, [xn, on, mask = std::move(mask)]() {
      xn->ensure_grad();
      for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[i] * mask[i];
    });
  }
  return out;
}

Tensor mask_columns_from(const Tensor& x, int first_masked) {
  require(x.rank() == 2, "mask_columns_from expects rank-2 input");
  const int m = x.dim(0), n = x.dim(1);
  require(first_masked >= 1 && first_masked <= n, "mask must keep at least one column");
  Tensor out = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.data()[static_cast<std::size_t>(i) * n + j] = j < first_masked ? x.at(i, j) : kMaskValue;
  if (want_grad({&x})) {
    ImplPtr xn = x.impl(), on = out.impl();
    record(out, [xn, on, m, n, first_masked]() {
      xn->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < first_masked; ++j)
          xn->grad[static_cast<std::size_t>(i) * n + j] +=
              on->grad[static_cast<std::size_t>(i) * n + j];
    });
  }
  return out;
}

namespace {
void check_index_matrix(const IndexMatrix& idx, int rdim) {
  for (int v : idx.v)
    if (v < 0 || v >= rdim)
      throw DimensionError("relation index " + std::to_string(v) + " out of range [0," +
                           std::to_string(rdim) + ")");
}
}  // namespace

Tensor pair_gather_rows(const Tensor& s, const IndexMatrix& idx) {
  require(s.rank() == 2, "pair_gather_rows expects rank-2 input");
  require(s.dim(0) == idx.rows, "pair_gather_rows row count mismatch");
  check_index_matrix(idx, s.dim(1));
  const int m = idx.rows, n = idx.cols, r = s.dim(1);
  Tensor out = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.data()[static_cast<std::size_t>(i) * n + j] = s.at(i, idx.at(i, j));
  if (want_grad({&s})) {
    ImplPtr sn = s.impl(), on = out.impl();
    record(out, [sn, on, idx, m, n, r]() {
      sn->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          sn->grad[static_cast<std::size_t>(i) * r + idx.at(i, j)] +=
              on->grad[static_cast<std::size_t>(i) * n + j];
    });
  }
  return out;
}

Tensor pair_gather_cols(const Tensor& s, const IndexMatrix& idx) {
  require(s.rank() == 2, "pair_gather_cols expects rank-2 input");
  require(s.dim(0) == idx.cols, "pair_gather_cols column count mismatch");
  check_index_matrix(idx, s.dim(1));
  const int m = idx.rows, n = idx.cols, r = s.dim(1);
  Tensor out = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.data()[static_cast<std::size_t>(i) * n + j] = s.at(j, idx.at(i, j));
  if (want_grad({&s})) {
    ImplPtr sn = s.impl(), on = out.impl();
    record(out, [sn, on, idx, m, n, r]() {
      sn->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          sn->grad[static_cast<std::size_t>(j) * r + idx.at(i, j)] +=
              on->grad[static_cast<std::size_t>(i) * n + j];
    });
  }
  return out;
}

Tensor pool_relations(const Tensor& p, const IndexMatrix& idx, int rdim) {
  require(p.rank() == 2, "pool_relations expects rank-2 input");
  require(p.dim(0) == idx.rows && p.dim(1) == idx.cols, "pool_relations shape mismatch");
  check_index_matrix(idx, rdim);
  const int m = idx.rows, n = idx.cols;
  Tensor out = Tensor::zeros({m, rdim});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.data()[static_cast<std::size_t>(i) * rdim + idx.at(i, j)] += p.at(i, j);
  if (want_grad({&p})) {
    ImplPtr pn = p.impl(), on = out.impl();
    record(out, [pn, on, idx, m, n, rdim]() {
      pn->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          pn->grad[static_cast<std::size_t>(i) * n + j] +=
              on->grad[static_cast<std::size_t>(i) * rdim + idx.at(i, j)];
    });
  }
  return out;
}

// ---- Gradient checking --------------------------------------------------------

double finite_diff_check(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& params, double h) {
  if (h <= 0.0) throw DimensionError("finite_diff_check requires h > 0");

  // Analytic pass.
  for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
  {
    Tape tape;
    Tensor loss = f();
    backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) analytic.push_back(p.grad());

  // Numeric pass, no tape.
  auto eval = [&]() {
    Tensor loss = f();
    const double v = loss.item();
    if (!std::isfinite(v)) throw DimensionError("non-finite loss at perturbed point");
    return v;
  };
  double max_err = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& values = params[pi].impl()->value;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + h;
      const double up = eval();
      values[i] = orig - h;
      const double down = eval();
      values[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi][i];
      const double err = std::abs(a - numeric) / std::max(1e-12, std::abs(a) + std::abs(numeric));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace g2c
