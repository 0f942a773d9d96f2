// Dense float64 tensors with tape-based reverse-mode autodiff. Rank 0..2 is
// what the model needs; elementwise ops accept any rank. Forward ops record a
// backward step on the active Tape; backward() replays the tape once in
// reverse. Single-threaded per tape.

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "g2c/rng.hpp"

namespace g2c {

using Shape = std::vector<int>;

// Integer matrix used as a lookup argument by the relation-aware ops
// (row indices into an embedding-like matrix, one per position pair).
struct IndexMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<int> v;

  IndexMatrix() = default;
  IndexMatrix(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0) {}
  int at(int i, int j) const { return v[static_cast<std::size_t>(i) * cols + j]; }
  int& at(int i, int j) { return v[static_cast<std::size_t>(i) * cols + j]; }
};

class Tensor {
 public:
  struct Impl {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;

    void accum_grad(std::size_t i, double g) {
      if (grad.empty()) grad.assign(value.size(), 0.0);
      grad[i] += g;
    }
    void ensure_grad() {
      if (grad.empty()) grad.assign(value.size(), 0.0);
    }
  };

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double fill, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  // Entries are iid normal(0, stddev); draw order is row-major.
  static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return impl_->value.size(); }

  const std::vector<double>& data() const { return impl_->value; }
  std::vector<double>& data() { return impl_->value; }
  double at(int i) const { return impl_->value[static_cast<std::size_t>(i)]; }
  double at(int i, int j) const {
    return impl_->value[static_cast<std::size_t>(i) * dim(1) + j];
  }
  double item() const;  // value of a one-element tensor

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool b) { impl_->requires_grad = b; }
  // Gradient buffer; zeros if backward never reached this tensor.
  const std::vector<double>& grad() const;
  void zero_grad();

  bool same_node(const Tensor& other) const { return impl_ == other.impl_; }
  const std::shared_ptr<Impl>& impl() const { return impl_; }  // internal

 private:
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<Impl> impl_;
};

// Recording tape (the compute graph). Entries are closures appended in
// execution order; backward() runs them once, last to first. Construction
// activates the tape for the current thread, destruction restores the
// previous one.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static bool recording();
  static void record(std::function<void()> backward_step);
  static Tape* active();

  std::size_t num_entries() const { return entries_.size(); }
  void run_backward();

 private:
  std::vector<std::function<void()>> entries_;
  Tape* prev_ = nullptr;
};

// ---- Differentiable operations ---------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);          // same shape
Tensor add_rowwise(const Tensor& x, const Tensor& b);  // x: m*n, b: n
Tensor mul(const Tensor& a, const Tensor& b);          // elementwise
Tensor scale(const Tensor& x, double c);
Tensor sum(const Tensor& x);  // -> scalar
Tensor row(const Tensor& x, int i);                    // 2D -> 1D
Tensor rows(const Tensor& x, const std::vector<int>& indices);
Tensor cols(const Tensor& x, int start, int count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor softmax_lastdim(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor gelu(const Tensor& x);
Tensor cross_entropy_logits(const Tensor& logits, int target);  // logits: 1D
Tensor dropout(const Tensor& x, double p, Rng& rng);

// Replaces columns >= first_masked with a large negative constant so softmax
// gives them exactly zero weight; gradients do not flow through masked cells.
Tensor mask_columns_from(const Tensor& x, int first_masked);

// out[i][j] = s[i][idx(i,j)]   (s: m*r, idx: m*n) -> m*n
Tensor pair_gather_rows(const Tensor& s, const IndexMatrix& idx);
// out[i][j] = s[j][idx(i,j)]   (s: n*r, idx: m*n, m == n) -> m*n
Tensor pair_gather_cols(const Tensor& s, const IndexMatrix& idx);
// out[i][r] = sum_j p[i][j] * [idx(i,j) == r]   (p: m*n) -> m*rdim
Tensor pool_relations(const Tensor& p, const IndexMatrix& idx, int rdim);

// Seeds d(loss)/d(loss) = 1 and replays the active tape in reverse.
// loss must have exactly one element.
void backward(const Tensor& loss);

// Central-difference gradient check. Runs f once under a tape for analytic
// gradients, then perturbs every element of every param by +-h. Returns the
// max over elements of |analytic - numeric| / max(1e-12, |analytic|+|numeric|).
double finite_diff_check(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& params, double h);

}  // namespace g2c
