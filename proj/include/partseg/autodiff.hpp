#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "partseg/tensor.hpp"

namespace partseg::ad {

// Reverse-mode tape. Nodes hold eagerly computed values; backward walks the
// graph in reverse creation order (parents always precede children, so the
// creation id is a valid topological order). Single-threaded by design.
struct Node {
  std::uint64_t id = 0;
  Tensor value;
  Tensor grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
};

using NodePtr = std::shared_ptr<Node>;

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : n_(std::move(n)) {}

  static Var constant(Tensor v);
  static Var param(Tensor v);  // leaf that accumulates gradient

  bool defined() const { return static_cast<bool>(n_); }
  const Tensor& value() const { return n_->value; }
  Tensor& mutable_value() { return n_->value; }  // optimizer updates leaves in place
  bool requires_grad() const { return n_ && n_->requires_grad; }
  const Tensor& grad() const;
  void zero_grad() { if (n_ && n_->grad.defined()) n_->grad.fill(0.0); }
  const NodePtr& node() const { return n_; }

 private:
  NodePtr n_;
};

// While alive, newly created nodes carry no tape (evaluation only).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

void backward(const Var& loss);  // loss must be scalar (shape [1])

// elementwise / scalar
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, double c);
Var mul_scalar(const Var& a, double c);
Var relu(const Var& a);
Var tanh_(const Var& a);
Var sigmoid(const Var& a);

// linear algebra (rank-2 row-major, Eigen-backed)
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
// y = x * w^T + b with x:[t,in] w:[out,in] b:[out]
Var linear_rows(const Var& x, const Var& w, const Var& b);
// y = w * x + b with w:[out,in] x:[in] b:[out]
Var matvec(const Var& w, const Var& x, const Var& b);
Var concat(const Var& a, const Var& b);  // rank 1: end-to-end; rank 2: columns
Var softmax_rows(const Var& a);
Var mul_rowvec(const Var& a, const Var& v);
Var add_rowvec(const Var& a, const Var& v);

// reductions / shape
Var sum(const Var& a);
Var mean(const Var& a);
Var mean_rows(const Var& a, const std::vector<int>& rows);
Var reshape(const Var& a, std::vector<int> shape);
Var div(const Var& a, const Var& b);  // scalar / scalar
Var min_scalars(const std::vector<Var>& xs);
Var masked_max(const Var& a, const Tensor& mask);

// spatial (fixed, non-learned linear maps)
Var minmax_normalize(const Var& a);  // constant input maps to all zeros
Var conv2d_symmetric(const Var& a, const Tensor& kernel);
Var upsample_bilinear(const Var& a, int factor);

// mean over all elements of max(z,0) - z*t + log(1+exp(-|z|))
Var bce_with_logits_mean(const Var& logits, const Tensor& target);

}  // namespace partseg::ad
