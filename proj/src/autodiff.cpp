#include "partseg/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace partseg::ad {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EMat>;
using CMatMap = Eigen::Map<const EMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

std::uint64_t g_next_id = 1;  // single-threaded tape
bool g_grad_enabled = true;

MatMap mat(Tensor& t) { return MatMap(t.data(), t.dim(0), t.dim(1)); }
CMatMap mat(const Tensor& t) { return CMatMap(t.data(), t.dim(0), t.dim(1)); }
VecMap vec(Tensor& t) { return VecMap(t.data(), t.size()); }
CVecMap vec(const Tensor& t) { return CVecMap(t.data(), t.size()); }

void ensure_grad(Node& n) {
  if (!n.grad.defined()) n.grad = Tensor(n.value.shape());
}

NodePtr make_node(Tensor value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->id = g_next_id++;
  n->value = std::move(value);
  bool rg = false;
  if (g_grad_enabled)
    for (const auto& p : parents)
      if (p && p->requires_grad) rg = true;
  if (rg) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

void require_rank(const Var& a, int r, const char* op) {
  if (a.value().rank() != r)
    throw ShapeMismatch(std::string(op) + ": expected rank " + std::to_string(r) +
                        ", got shape " + a.value().shape_str());
}

void require_scalar(const Var& a, const char* op) {
  if (a.value().size() != 1)
    throw ShapeMismatch(std::string(op) + ": expected scalar, got shape " +
                        a.value().shape_str());
}

}  // namespace

Var Var::constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->id = g_next_id++;
  n->value = std::move(v);
  return Var(n);
}

Var Var::param(Tensor v) {
  auto n = std::make_shared<Node>();
  n->id = g_next_id++;
  n->value = std::move(v);
  n->requires_grad = true;
  return Var(n);
}

const Tensor& Var::grad() const {
  if (!n_ || !n_->grad.defined())
    throw Error("gradient not available; call backward first");
  return n_->grad;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Var& loss) {
  if (!loss.defined()) throw Error("backward on undefined var");
  if (loss.value().size() != 1)
    throw ShapeMismatch("backward expects a scalar loss, got shape " +
                        loss.value().shape_str());
  Node* root = loss.node().get();
  if (!root->requires_grad) return;  // nothing reachable to differentiate

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents)
      if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](Node* a, Node* b) { return a->id > b->id; });

  ensure_grad(*root);
  root->grad.fill(0.0);
  root->grad[0] = 1.0;
  for (Node* n : order)
    if (n->backprop && n->grad.defined()) n->backprop(*n);
}

// ---- elementwise ----

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  vec(out) += vec(b.value());
  auto pa = a.node(), pb = b.node();
  return Var(make_node(std::move(out), {pa, pb}, [pa, pb](Node& n) {
    if (pa->requires_grad) { ensure_grad(*pa); vec(pa->grad) += vec(n.grad); }
    if (pb->requires_grad) { ensure_grad(*pb); vec(pb->grad) += vec(n.grad); }
  }));
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  vec(out) -= vec(b.value());
  auto pa = a.node(), pb = b.node();
  return Var(make_node(std::move(out), {pa, pb}, [pa, pb](Node& n) {
    if (pa->requires_grad) { ensure_grad(*pa); vec(pa->grad) += vec(n.grad); }
    if (pb->requires_grad) { ensure_grad(*pb); vec(pb->grad) -= vec(n.grad); }
  }));
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  vec(out) = vec(a.value()).cwiseProduct(vec(b.value()));
  auto pa = a.node(), pb = b.node();
  return Var(make_node(std::move(out), {pa, pb}, [pa, pb](Node& n) {
    if (pa->requires_grad) {
      ensure_grad(*pa);
      vec(pa->grad) += vec(n.grad).cwiseProduct(vec(pb->value));
    }
    if (pb->requires_grad) {
      ensure_grad(*pb);
      vec(pb->grad) += vec(n.grad).cwiseProduct(vec(pa->value));
    }
  }));
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var add_scalar(const Var& a, double c) {
  Tensor out = a.value();
  vec(out).array() += c;
  auto pa = a.node();
  return Var(make_node(std::move(out), {pa}, [pa](Node& n) {
    ensure_grad(*pa);
    vec(pa->grad) += vec(n.grad);
  }));
}

Var mul_scalar(const Var& a, double c) {
  Tensor out = a.value();
  vec(out) *= c;
  auto pa = a.node();
  return Var(make_node(std::move(out), {pa}, [pa, c](Node& n) {
    ensure_grad(*pa);
    vec(pa->grad) += c * vec(n.grad);
  }));
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  auto pa = a.node();
  return Var(make_node(std::move(out), {pa}, [pa](Node& n) {
    ensure_grad(*pa);
    for (std::int64_t i = 0; i < n.grad.size(); ++i)
      if (pa->value[i] > 0.0) pa->grad[i] += n.grad[i];
  }));
}

Var tanh_(const Var& a) {
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  auto pa = a.node();
  auto node = make_node(std::move(out), {pa}, nullptr);
  Node* self = node.get();
  if (node->requires_grad)
    node->backprop = [pa, self](Node& n) {
      ensure_grad(*pa);
      for (std::int64_t i = 0; i < n.grad.size(); ++i) {
        double y = self->value[i];
        pa->grad[i] += n.grad[i] * (1.0 - y * y);
      }
    };
  return Var(node);
}

Var sigmoid(const Var& a) {
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.size(); ++i) {
    double z = out[i];
    out[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                      : std::exp(z) / (1.0 + std::exp(z));
  }
  auto pa = a.node();
  auto node = make_node(std::move(out), {pa}, nullptr);
  Node* self = node.get();
  if (node->requires_grad)
    node->backprop = [pa, self](Node& n) {
      ensure_grad(*pa);
      for (std::int64_t i = 0; i < n.grad.size(); ++i) {
        double y = self->value[i];
        pa->grad[i] += n.grad[i] * y * (1.0 - y);
      }
    };
  return Var(node);
}

// ---- linear algebra ----

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.value().dim(1) != b.value().dim(0))
    throw ShapeMismatch("matmul: inner dims differ, " + a.value().shape_str() + " vs " +
                        b.value().shape_str());
  Tensor out({a.value().dim(0), b.value().dim(1)});
  mat(out) = mat(a.value()) * mat(b.value());
  auto pa = a.node(), pb = b.node();
  return Var(make_node(std::move(out), {pa, pb}, [pa, pb](Node& n) {
    if (pa->requires_grad) {
      ensure_grad(*pa);
      mat(pa->grad) += mat(n.grad) * mat(pb->value).transpose();
    }
    if (pb->requires_grad) {
      ensure_grad(*pb);
      mat(pb->grad) += mat(pa->value).transpose() * mat(n.grad);
    }
  }));
}

Var transpose(const Var& a) {
  require_rank(a, 2, "transpose");
  Tensor out({a.value().dim(1), a.value().dim(0)});
  mat(out) = mat(a.value()).transpose();
  auto pa = a.node();
  return Var(make_node(std::move(out), {pa}, [pa](Node& n) {
    ensure_grad(*pa);
    mat(pa->grad) += mat(n.grad).transpose();
  }));
}

Var linear_rows(const Var& x, const Var& w, const Var& b) {
  require_rank(x, 2, "linear_rows");
  require_rank(w, 2, "linear_rows");
  require_rank(b, 1, "linear_rows");
  int in = x.value().dim(1), out_dim = w.value().dim(0);
  if (w.value().dim(1) != in || b.value().dim(0) != out_dim)
    throw ShapeMismatch("linear_rows: x " + x.value().shape_str() + " w " +
                        w.value().shape_str() + " b " + b.value().shape_str());
  Tensor out({x.value().dim(0), out_dim});
  mat(out) = mat(x.value()) * mat(w.value()).transpose();
  mat(out).rowwise() += vec(b.value()).transpose();
  auto px = x.node(), pw = w.node(), pb = b.node();
  return Var(make_node(std::move(out), {px, pw, pb}, [px, pw, pb](Node& n) {
    if (px->requires_grad) {
      ensure_grad(*px);
      mat(px->grad) += mat(n.grad) * mat(pw->value);
    }
    if (pw->requires_grad) {
      ensure_grad(*pw);
      mat(pw->grad) += mat(n.grad).transpose() * mat(px->value);
    }
    if (pb->requires_grad) {
      ensure_grad(*pb);
      vec(pb->grad) += mat(n.grad).colwise().sum().transpose();
    }
  }));
}

Var matvec(const Var& w, const Var& x, const Var& b) {
  require_rank(w, 2, "matvec");
  require_rank(x, 1, "matvec");
  require_rank(b, 1, "matvec");
  int out_dim = w.value().dim(0), in = w.value().dim(1);
  if (x.value().dim(0) != in || b.value().dim(0) != out_dim)
    throw ShapeMismatch("matvec: w " + w.value().shape_str() + " x " +
                        x.value().shape_str() + " b " + b.value().shape_str());
  Tensor out({out_dim});
  vec(out) = mat(w.value()) * vec(x.value()) + vec(b.value());
  auto pw = w.node(), px = x.node(), pb = b.node();
  return Var(make_node(std::move(out), {pw, px, pb}, [pw, px, pb](Node& n) {
    if (pw->requires_grad) {
      ensure_grad(*pw);
      mat(pw->grad) += vec(n.grad) * vec(px->value).transpose();
    }
    if (px->requires_grad) {
      ensure_grad(*px);
      vec(px->grad) += mat(pw->value).transpose() * vec(n.grad);
    }
    if (pb->requires_grad) {
      ensure_grad(*pb);
      vec(pb->grad) += vec(n.grad);
    }
  }));
}

Var concat(const Var& a, const Var& b) {
  if (a.value().rank() != b.value().rank())
    throw KindMismatch("concat: rank " + std::to_string(a.value().rank()) + " vs " +
                       std::to_string(b.value().rank()));
  auto pa = a.node(), pb = b.node();
  if (a.value().rank() == 1) {
    int p = a.value().dim(0), q = b.value().dim(0);
    Tensor out({p + q});
    std::copy_n(a.value().data(), p, out.data());
    std::copy_n(b.value().data(), q, out.data() + p);
    return Var(make_node(std::move(out), {pa, pb}, [pa, pb, p, q](Node& n) {
      if (pa->requires_grad) {
        ensure_grad(*pa);
        for (int i = 0; i < p; ++i) pa->grad[i] += n.grad[i];
      }
      if (pb->requires_grad) {
        ensure_grad(*pb);
        for (int i = 0; i < q; ++i) pb->grad[i] += n.grad[p + i];
      }
    }));
  }
  if (a.value().rank() == 2) {
    if (a.value().dim(0) != b.value().dim(0))
      throw ShapeMismatch("concat: row counts differ, " + a.value().shape_str() +
                          " vs " + b.value().shape_str());
    int m = a.value().dim(0), p = a.value().dim(1), q = b.value().dim(1);
    Tensor out({m, p + q});
    for (int i = 0; i < m; ++i) {
      std::copy_n(a.value().data() + static_cast<std::size_t>(i) * p, p,
                  out.data() + static_cast<std::size_t>(i) * (p + q));
      std::copy_n(b.value().data() + static_cast<std::size_t>(i) * q, q,
                  out.data() + static_cast<std::size_t>(i) * (p + q) + p);
    }
    return Var(make_node(std::move(out), {pa, pb}, [pa, pb, m, p, q](Node& n) {
      if (pa->requires_grad) {
        ensure_grad(*pa);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < p; ++j) pa->grad.at(i, j) += n.grad.at(i, j);
      }
      if (pb->requires_grad) {
        ensure_grad(*pb);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < q; ++j) pb->grad.at(i, j) += n.grad.at(i, p + j);
      }
    }));
  }
  throw ShapeMismatch("concat: unsupported rank " + std::to_string(a.value().rank()));
}

Var softmax_rows(const Var& a) {
  require_rank(a, 2, "softmax_rows");
  int m = a.value().dim(0), k = a.value().dim(1);
  Tensor out({m, k});
  for (int i = 0; i < m; ++i) {
    double mx = a.value().at(i, 0);
    for (int j = 1; j < k; ++j) mx = std::max(mx, a.value().at(i, j));
    double z = 0.0;
    for (int j = 0; j < k; ++j) {
      double e = std::exp(a.value().at(i, j) - mx);
      out.at(i, j) = e;
      z += e;
    }
    for (int j = 0; j < k; ++j) out.at(i, j) /= z;
  }
  auto pa = a.node();
  auto node = make_node(std::move(out), {pa}, nullptr);
  Node* self = node.get();
  if (node->requires_grad)
    node->backprop = [pa, self, m, k](Node& n) {
      ensure_grad(*pa);
      for (int i = 0; i < m; ++i) {
        double dot = 0.0;
        for (int j = 0; j < k; ++j) dot += n.grad.at(i, j) * self->value.at(i, j);
        for (int j = 0; j < k; ++j)
          pa->grad.at(i, j) += self->value.at(i, j) * (n.grad.at(i, j) - dot);
      }
    };
  return Var(node);
}

Var mul_rowvec(const Var& a, const Var& v) {
  require_rank(a, 2, "mul_rowvec");
  require_rank(v, 1, "mul_rowvec");
  if (a.value().dim(1) != v.value().dim(0))
    throw ShapeMismatch("mul_rowvec: " + a.value().shape_str() + " vs " +
                        v.value().shape_str());
  Tensor out = a.value();
  mat(out).array().rowwise() *= vec(v.value()).transpose().array();
  auto pa = a.node(), pv = v.node();
  return Var(make_node(std::move(out), {pa, pv}, [pa, pv](Node& n) {
    if (pa->requires_grad) {
      ensure_grad(*pa);
      mat(pa->grad).array() +=
          mat(n.grad).array().rowwise() * vec(pv->value).transpose().array();
    }
    if (pv->requires_grad) {
      ensure_grad(*pv);
      vec(pv->grad) +=
          (mat(n.grad).array() * mat(pa->value).array()).matrix().colwise().sum().transpose();
    }
  }));
}

Var add_rowvec(const Var& a, const Var& v) {
  require_rank(a, 2, "add_rowvec");
  require_rank(v, 1, "add_rowvec");
  if (a.value().dim(1) != v.value().dim(0))
    throw ShapeMismatch("add_rowvec: " + a.value().shape_str() + " vs " +
                        v.value().shape_str());
  Tensor out = a.value();
  mat(out).rowwise() += vec(v.value()).transpose();
  auto pa = a.node(), pv = v.node();
  return Var(make_node(std::move(out), {pa, pv}, [pa, pv](Node& n) {
    if (pa->requires_grad) {
      ensure_grad(*pa);
      vec(pa->grad) += vec(n.grad);
    }
    if (pv->requires_grad) {
      ensure_grad(*pv);
      vec(pv->grad) += mat(n.grad).colwise().sum().transpose();
    }
  }));
}

// ---- reductions / shape ----

Var sum(const Var& a) {
  Tensor out = Tensor::scalar(a.value().sum());
  auto pa = a.node();
  return Var(make_node(std::move(out), {pa}, [pa](Node& n) {
    ensure_grad(*pa);
    vec(pa->grad).array() += n.grad[0];
  }));
}

Var mean(const Var& a) {
  double inv = 1.0 / static_cast<double>(a.value().size());
  Tensor out = Tensor::scalar(a.value().sum() * inv);
  auto pa = a.node();
  return Var(make_node(std::move(out), {pa}, [pa, inv](Node& n) {
    ensure_grad(*pa);
    vec(pa->grad).array() += n.grad[0] * inv;
  }));
}

Var mean_rows(const Var& a, const std::vector<int>& rows) {
  require_rank(a, 2, "mean_rows");
  if (rows.empty()) throw EmptyMask("mean_rows: empty row set");
  int k = a.value().dim(1);
  Tensor out({k});
  for (int r : rows) {
    if (r < 0 || r >= a.value().dim(0))
      throw ShapeMismatch("mean_rows: row index out of range");
    for (int j = 0; j < k; ++j) out[j] += a.value().at(r, j);
  }
  double inv = 1.0 / static_cast<double>(rows.size());
  for (int j = 0; j < k; ++j) out[j] *= inv;
  auto pa = a.node();
  return Var(make_node(std::move(out), {pa}, [pa, rows, inv, k](Node& n) {
    ensure_grad(*pa);
    for (int r : rows)
      for (int j = 0; j < k; ++j) pa->grad.at(r, j) += n.grad[j] * inv;
  }));
}

Var reshape(const Var& a, std::vector<int> shape) {
  Tensor out = Tensor(shape);
  if (out.size() != a.value().size())
    throw ShapeMismatch("reshape: size mismatch " + a.value().shape_str() + " -> " +
                        out.shape_str());
  std::copy_n(a.value().data(), a.value().size(), out.data());
  auto pa = a.node();
  return Var(make_node(std::move(out), {pa}, [pa](Node& n) {
    ensure_grad(*pa);
    for (std::int64_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
  }));
}

Var div(const Var& a, const Var& b) {
  require_scalar(a, "div");
  require_scalar(b, "div");
  double av = a.value()[0], bv = b.value()[0];
  Tensor out = Tensor::scalar(av / bv);
  auto pa = a.node(), pb = b.node();
  return Var(make_node(std::move(out), {pa, pb}, [pa, pb](Node& n) {
    double av = pa->value[0], bv = pb->value[0], g = n.grad[0];
    if (pa->requires_grad) { ensure_grad(*pa); pa->grad[0] += g / bv; }
    if (pb->requires_grad) { ensure_grad(*pb); pb->grad[0] -= g * av / (bv * bv); }
  }));
}

Var min_scalars(const std::vector<Var>& xs) {
  if (xs.empty()) throw Error("min_scalars: empty input");
  int arg = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    require_scalar(xs[i], "min_scalars");
    if (xs[i].value()[0] < xs[static_cast<std::size_t>(arg)].value()[0])
      arg = static_cast<int>(i);
  }
  Tensor out = Tensor::scalar(xs[static_cast<std::size_t>(arg)].value()[0]);
  std::vector<NodePtr> parents;
  parents.reserve(xs.size());
  for (const auto& x : xs) parents.push_back(x.node());
  auto winner = xs[static_cast<std::size_t>(arg)].node();
  return Var(make_node(std::move(out), std::move(parents), [winner](Node& n) {
    if (winner->requires_grad) {
      ensure_grad(*winner);
      winner->grad[0] += n.grad[0];
    }
  }));
}

Var masked_max(const Var& a, const Tensor& mask) {
  require_same_shape(a.value(), mask, "masked_max");
  std::int64_t arg = -1;
  double best = 0.0;
  for (std::int64_t i = 0; i < mask.size(); ++i) {
    if (mask[i] <= 0.0) continue;
    if (arg < 0 || a.value()[i] > best) {
      arg = i;
      best = a.value()[i];
    }
  }
  if (arg < 0) throw EmptyMask("masked_max: mask selects no elements");
  Tensor out = Tensor::scalar(best);
  auto pa = a.node();
  return Var(make_node(std::move(out), {pa}, [pa, arg](Node& n) {
    ensure_grad(*pa);
    pa->grad[arg] += n.grad[0];
  }));
}

// ---- spatial ----

Var minmax_normalize(const Var& a) {
  const Tensor& x = a.value();
  std::int64_t imin = 0, imax = 0;
  for (std::int64_t i = 1; i < x.size(); ++i) {
    if (x[i] < x[imin]) imin = i;
    if (x[i] > x[imax]) imax = i;
  }
  double mn = x[imin], mx = x[imax];
  Tensor out(x.shape());
  bool flat = (mx == mn);
  if (!flat) {
    double inv = 1.0 / (mx - mn);
    for (std::int64_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mn) * inv;
  }
  auto pa = a.node();
  auto node = make_node(std::move(out), {pa}, nullptr);
  Node* self = node.get();
  if (node->requires_grad)
    node->backprop = [pa, self, imin, imax, flat](Node& n) {
      if (flat) return;  // constant plateau, zero gradient
      ensure_grad(*pa);
      double d = pa->value[imax] - pa->value[imin];
      double s1 = 0.0, s2 = 0.0;
      for (std::int64_t i = 0; i < n.grad.size(); ++i) {
        s1 += n.grad[i];
        s2 += n.grad[i] * self->value[i];
      }
      for (std::int64_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] / d;
      pa->grad[imin] += (s2 - s1) / d;
      pa->grad[imax] -= s2 / d;
    };
  return Var(node);
}

namespace {
// edge-inclusive symmetric padding: ... d c b a | a b c d | d c b a ...
inline int reflect_index(int t, int n) {
  while (t < 0 || t >= n) {
    if (t < 0) t = -t - 1;
    if (t >= n) t = 2 * n - 1 - t;
  }
  return t;
}
}  // namespace

Var conv2d_symmetric(const Var& a, const Tensor& kernel) {
  require_rank(a, 2, "conv2d_symmetric");
  if (kernel.rank() != 2 || kernel.dim(0) != kernel.dim(1) || kernel.dim(0) % 2 == 0)
    throw ShapeMismatch("conv2d_symmetric: kernel must be square with odd side, got " +
                        kernel.shape_str());
  int h = a.value().dim(0), w = a.value().dim(1);
  int k = kernel.dim(0), r = k / 2;
  Tensor out({h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int u = 0; u < k; ++u) {
        int si = reflect_index(i + u - r, h);
        for (int v = 0; v < k; ++v)
          acc += kernel.at(u, v) * a.value().at(si, reflect_index(j + v - r, w));
      }
      out.at(i, j) = acc;
    }
  auto pa = a.node();
  return Var(make_node(std::move(out), {pa}, [pa, kernel, h, w, k, r](Node& n) {
    ensure_grad(*pa);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double g = n.grad.at(i, j);
        if (g == 0.0) continue;
        for (int u = 0; u < k; ++u) {
          int si = reflect_index(i + u - r, h);
          for (int v = 0; v < k; ++v)
            pa->grad.at(si, reflect_index(j + v - r, w)) += kernel.at(u, v) * g;
        }
      }
  }));
}

namespace {
struct LerpTable {
  std::vector<int> lo, hi;
  std::vector<double> t;
};

LerpTable lerp_table(int n_out, int n_in, int factor) {
  LerpTable tab;
  tab.lo.resize(static_cast<std::size_t>(n_out));
  tab.hi.resize(static_cast<std::size_t>(n_out));
  tab.t.resize(static_cast<std::size_t>(n_out));
  for (int i = 0; i < n_out; ++i) {
    double s = (i + 0.5) / factor - 0.5;
    double fl = std::floor(s);
    int i0 = static_cast<int>(fl);
    double frac = s - fl;
    int lo = std::clamp(i0, 0, n_in - 1);
    int hi = std::clamp(i0 + 1, 0, n_in - 1);
    tab.lo[static_cast<std::size_t>(i)] = lo;
    tab.hi[static_cast<std::size_t>(i)] = hi;
    tab.t[static_cast<std::size_t>(i)] = frac;
  }
  return tab;
}
}  // namespace

Var upsample_bilinear(const Var& a, int factor) {
  require_rank(a, 2, "upsample_bilinear");
  if (factor < 1) throw ShapeMismatch("upsample_bilinear: factor must be >= 1");
  int h = a.value().dim(0), w = a.value().dim(1);
  int H = h * factor, W = w * factor;
  auto ty = lerp_table(H, h, factor);
  auto tx = lerp_table(W, w, factor);
  Tensor out({H, W});
  for (int i = 0; i < H; ++i) {
    int y0 = ty.lo[static_cast<std::size_t>(i)], y1 = ty.hi[static_cast<std::size_t>(i)];
    double fy = ty.t[static_cast<std::size_t>(i)];
    for (int j = 0; j < W; ++j) {
      int x0 = tx.lo[static_cast<std::size_t>(j)], x1 = tx.hi[static_cast<std::size_t>(j)];
      double fx = tx.t[static_cast<std::size_t>(j)];
      out.at(i, j) = (1 - fy) * ((1 - fx) * a.value().at(y0, x0) + fx * a.value().at(y0, x1)) +
                     fy * ((1 - fx) * a.value().at(y1, x0) + fx * a.value().at(y1, x1));
    }
  }
  auto pa = a.node();
  return Var(make_node(std::move(out), {pa}, [pa, ty, tx, H, W](Node& n) {
    ensure_grad(*pa);
    for (int i = 0; i < H; ++i) {
      int y0 = ty.lo[static_cast<std::size_t>(i)], y1 = ty.hi[static_cast<std::size_t>(i)];
      double fy = ty.t[static_cast<std::size_t>(i)];
      for (int j = 0; j < W; ++j) {
        int x0 = tx.lo[static_cast<std::size_t>(j)], x1 = tx.hi[static_cast<std::size_t>(j)];
        double fx = tx.t[static_cast<std::size_t>(j)];
        double g = n.grad.at(i, j);
        pa->grad.at(y0, x0) += (1 - fy) * (1 - fx) * g;
        pa->grad.at(y0, x1) += (1 - fy) * fx * g;
        pa->grad.at(y1, x0) += fy * (1 - fx) * g;
        pa->grad.at(y1, x1) += fy * fx * g;
      }
    }
  }));
}

Var bce_with_logits_mean(const Var& logits, const Tensor& target) {
  require_same_shape(logits.value(), target, "bce_with_logits_mean");
  const Tensor& z = logits.value();
  double acc = 0.0;
  for (std::int64_t i = 0; i < z.size(); ++i) {
    double zi = z[i];
    acc += std::max(zi, 0.0) - zi * target[i] + std::log1p(std::exp(-std::abs(zi)));
  }
  double inv = 1.0 / static_cast<double>(z.size());
  Tensor out = Tensor::scalar(acc * inv);
  auto pa = logits.node();
  return Var(make_node(std::move(out), {pa}, [pa, target, inv](Node& n) {
    ensure_grad(*pa);
    double g = n.grad[0] * inv;
    for (std::int64_t i = 0; i < target.size(); ++i) {
      double zi = pa->value[i];
      double s = zi >= 0.0 ? 1.0 / (1.0 + std::exp(-zi))
                           : std::exp(zi) / (1.0 + std::exp(zi));
      pa->grad[i] += g * (s - target[i]);
    }
  }));
}

}  // namespace partseg::ad
