#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace hop::grad {

// Dense tensors (rank 1 or 2) on a define-by-run tape. Every op records its
// parents and a backprop closure; backward() walks the recorded graph once in
// reverse creation order. Templated on the scalar so the same network runs in
// f32 for training and f64 for gradient checks.

inline std::atomic<uint64_t>& node_counter() {
  static std::atomic<uint64_t> counter{0};
  return counter;
}

inline bool& finite_checks() {
  static bool enabled = false;
  return enabled;
}

template <typename S>
struct Node {
  std::vector<int> shape;
  std::vector<S> value;
  std::vector<S> grad;
  bool requires_grad = false;
  uint64_t id = 0;
  std::string name;
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void()> backprop;

  size_t size() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

template <typename S>
class Tensor {
 public:
  using Ptr = std::shared_ptr<Node<S>>;

  Tensor() = default;
  explicit Tensor(Ptr node) : node_(std::move(node)) {}

  static Tensor zeros(std::vector<int> shape) {
    return filled(std::move(shape), S(0));
  }

  static Tensor filled(std::vector<int> shape, S v) {
    auto n = std::make_shared<Node<S>>();
    n->shape = std::move(shape);
    n->value.assign(count(n->shape), v);
    n->id = node_counter()++;
    return Tensor(std::move(n));
  }

  static Tensor from(std::vector<int> shape, std::vector<S> values) {
    auto n = std::make_shared<Node<S>>();
    n->shape = std::move(shape);
    if (values.size() != count(n->shape))
      throw std::invalid_argument("tensor data does not match shape");
    n->value = std::move(values);
    n->id = node_counter()++;
    return Tensor(std::move(n));
  }

  static Tensor param(std::vector<int> shape, std::vector<S> values,
                      std::string name) {
    Tensor t = from(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    t.node_->name = std::move(name);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rows() const { return node_->shape[0]; }
  int cols() const { return node_->shape.size() > 1 ? node_->shape[1] : 1; }
  size_t size() const { return node_->value.size(); }
  std::vector<S>& value() { return node_->value; }
  const std::vector<S>& value() const { return node_->value; }
  std::vector<S>& grad() { return node_->grad; }
  const std::vector<S>& grad() const { return node_->grad; }
  const std::string& name() const { return node_->name; }
  bool requires_grad() const { return node_->requires_grad; }
  S item() const {
    if (size() != 1) throw std::invalid_argument("item() on non-scalar tensor");
    return node_->value[0];
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), S(0)); }

  Ptr node() const { return node_; }

  static size_t count(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("negative tensor dimension");
      n *= size_t(d);
    }
    return n;
  }

 private:
  Ptr node_;
};

namespace detail {

template <typename S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using CMatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename S>
void check_finite(const Node<S>& n) {
  if (!finite_checks()) return;
  for (const S v : n.value)
    if (!std::isfinite(double(v)))
      throw std::runtime_error("non-finite value produced by tape op");
}

template <typename S>
std::shared_ptr<Node<S>> make_result(std::vector<int> shape,
                                     std::vector<std::shared_ptr<Node<S>>> parents) {
  auto n = std::make_shared<Node<S>>();
  n->shape = std::move(shape);
  n->value.resize(Tensor<S>::count(n->shape));
  bool rg = false;
  for (const auto& p : parents) rg |= p->requires_grad;
  n->requires_grad = rg;
  n->parents = std::move(parents);
  n->id = node_counter()++;
  return n;
}

}  // namespace detail

// ---- elementwise ----

template <typename S, typename Fwd, typename Bwd>
Tensor<S> unary_op(const Tensor<S>& x, Fwd fwd, Bwd dfdx) {
  auto n = detail::make_result<S>(x.shape(), {x.node()});
  const auto& xv = x.node()->value;
  for (size_t i = 0; i < xv.size(); ++i) n->value[i] = fwd(xv[i]);
  auto xn = x.node();
  auto self = n.get();
  n->backprop = [self, xn, dfdx] {
    xn->ensure_grad();
    for (size_t i = 0; i < xn->value.size(); ++i)
      xn->grad[i] += dfdx(xn->value[i], self->value[i]) * self->grad[i];
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("add: shape mismatch");
  auto n = detail::make_result<S>(a.shape(), {a.node(), b.node()});
  for (size_t i = 0; i < n->value.size(); ++i)
    n->value[i] = a.node()->value[i] + b.node()->value[i];
  auto an = a.node(), bn = b.node();
  auto self = n.get();
  n->backprop = [self, an, bn] {
    an->ensure_grad();
    bn->ensure_grad();
    for (size_t i = 0; i < self->value.size(); ++i) {
      an->grad[i] += self->grad[i];
      bn->grad[i] += self->grad[i];
    }
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("sub: shape mismatch");
  auto n = detail::make_result<S>(a.shape(), {a.node(), b.node()});
  for (size_t i = 0; i < n->value.size(); ++i)
    n->value[i] = a.node()->value[i] - b.node()->value[i];
  auto an = a.node(), bn = b.node();
  auto self = n.get();
  n->backprop = [self, an, bn] {
    an->ensure_grad();
    bn->ensure_grad();
    for (size_t i = 0; i < self->value.size(); ++i) {
      an->grad[i] += self->grad[i];
      bn->grad[i] -= self->grad[i];
    }
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("mul: shape mismatch");
  auto n = detail::make_result<S>(a.shape(), {a.node(), b.node()});
  for (size_t i = 0; i < n->value.size(); ++i)
    n->value[i] = a.node()->value[i] * b.node()->value[i];
  auto an = a.node(), bn = b.node();
  auto self = n.get();
  n->backprop = [self, an, bn] {
    an->ensure_grad();
    bn->ensure_grad();
    for (size_t i = 0; i < self->value.size(); ++i) {
      an->grad[i] += bn->value[i] * self->grad[i];
      bn->grad[i] += an->value[i] * self->grad[i];
    }
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, double c) {
  return unary_op(
      x, [c](S v) { return S(v * c); }, [c](S, S) { return S(c); });
}

template <typename S>
Tensor<S> neg(const Tensor<S>& x) {
  return scale(x, -1.0);
}

template <typename S>
Tensor<S> add_const(const Tensor<S>& x, double c) {
  return unary_op(
      x, [c](S v) { return S(v + c); }, [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& x) {
  return unary_op(
      x, [](S v) { return S(std::exp(double(v))); }, [](S, S y) { return y; });
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  // tanh approximation, as in GPT-2.
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c3 = 0.044715;
  return unary_op(
      x,
      [](S v) {
        const double u = k * (double(v) + c3 * double(v) * double(v) * double(v));
        return S(0.5 * double(v) * (1.0 + std::tanh(u)));
      },
      [](S v, S) {
        const double x = double(v);
        const double u = k * (x + c3 * x * x * x);
        const double t = std::tanh(u);
        return S(0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * c3 * x * x));
      });
}

/// Elementwise min; ties route the gradient to the first argument.
template <typename S>
Tensor<S> minimum(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("minimum: shape mismatch");
  auto n = detail::make_result<S>(a.shape(), {a.node(), b.node()});
  for (size_t i = 0; i < n->value.size(); ++i)
    n->value[i] = std::min(a.node()->value[i], b.node()->value[i]);
  auto an = a.node(), bn = b.node();
  auto self = n.get();
  n->backprop = [self, an, bn] {
    an->ensure_grad();
    bn->ensure_grad();
    for (size_t i = 0; i < self->value.size(); ++i) {
      if (an->value[i] <= bn->value[i])
        an->grad[i] += self->grad[i];
      else
        bn->grad[i] += self->grad[i];
    }
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

/// Elementwise clamp; zero gradient outside [lo, hi].
template <typename S>
Tensor<S> clamp(const Tensor<S>& x, double lo, double hi) {
  return unary_op(
      x, [lo, hi](S v) { return S(std::clamp(double(v), lo, hi)); },
      [lo, hi](S v, S) { return S(double(v) >= lo && double(v) <= hi ? 1 : 0); });
}

/// Leaf sharing x's current values; gradients stop here.
template <typename S>
Tensor<S> detach(const Tensor<S>& x) {
  return Tensor<S>::from(x.shape(), x.value());
}

// ---- linear algebra ----

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows())
    throw std::invalid_argument("matmul: incompatible shapes");
  const int m = a.rows(), k = a.cols(), n2 = b.cols();
  auto n = detail::make_result<S>({m, n2}, {a.node(), b.node()});
  detail::CMatMap<S> am(a.value().data(), m, k), bm(b.value().data(), k, n2);
  detail::MatMap<S>(n->value.data(), m, n2).noalias() = am * bm;
  auto an = a.node(), bn = b.node();
  auto self = n.get();
  n->backprop = [self, an, bn, m, k, n2] {
    an->ensure_grad();
    bn->ensure_grad();
    detail::CMatMap<S> dy(self->grad.data(), m, n2);
    detail::CMatMap<S> am(an->value.data(), m, k), bm(bn->value.data(), k, n2);
    detail::MatMap<S>(an->grad.data(), m, k).noalias() += dy * bm.transpose();
    detail::MatMap<S>(bn->grad.data(), k, n2).noalias() += am.transpose() * dy;
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

/// X [m x n] + b [n], broadcast over rows.
template <typename S>
Tensor<S> add_rowwise(const Tensor<S>& x, const Tensor<S>& b) {
  if (x.shape().size() != 2 || b.size() != size_t(x.cols()))
    throw std::invalid_argument("add_rowwise: shape mismatch");
  const int m = x.rows(), c = x.cols();
  auto n = detail::make_result<S>(x.shape(), {x.node(), b.node()});
  for (int r = 0; r < m; ++r)
    for (int j = 0; j < c; ++j)
      n->value[r * c + j] = x.value()[r * c + j] + b.value()[j];
  auto xn = x.node(), bn = b.node();
  auto self = n.get();
  n->backprop = [self, xn, bn, m, c] {
    xn->ensure_grad();
    bn->ensure_grad();
    for (int r = 0; r < m; ++r)
      for (int j = 0; j < c; ++j) {
        xn->grad[r * c + j] += self->grad[r * c + j];
        bn->grad[j] += self->grad[r * c + j];
      }
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

/// X [m x n] * v [n], broadcast over rows.
template <typename S>
Tensor<S> mul_rowwise(const Tensor<S>& x, const Tensor<S>& v) {
  if (x.shape().size() != 2 || v.size() != size_t(x.cols()))
    throw std::invalid_argument("mul_rowwise: shape mismatch");
  const int m = x.rows(), c = x.cols();
  auto n = detail::make_result<S>(x.shape(), {x.node(), v.node()});
  for (int r = 0; r < m; ++r)
    for (int j = 0; j < c; ++j)
      n->value[r * c + j] = x.value()[r * c + j] * v.value()[j];
  auto xn = x.node(), vn = v.node();
  auto self = n.get();
  n->backprop = [self, xn, vn, m, c] {
    xn->ensure_grad();
    vn->ensure_grad();
    for (int r = 0; r < m; ++r)
      for (int j = 0; j < c; ++j) {
        xn->grad[r * c + j] += vn->value[j] * self->grad[r * c + j];
        vn->grad[j] += xn->value[r * c + j] * self->grad[r * c + j];
      }
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

/// X [t*p x n] + P [p x n] repeated t times along rows.
template <typename S>
Tensor<S> add_tiled(const Tensor<S>& x, const Tensor<S>& p) {
  if (x.shape().size() != 2 || p.shape().size() != 2 || x.cols() != p.cols() ||
      p.rows() == 0 || x.rows() % p.rows() != 0)
    throw std::invalid_argument("add_tiled: shape mismatch");
  const int m = x.rows(), c = x.cols(), pr = p.rows();
  auto n = detail::make_result<S>(x.shape(), {x.node(), p.node()});
  for (int r = 0; r < m; ++r)
    for (int j = 0; j < c; ++j)
      n->value[r * c + j] = x.value()[r * c + j] + p.value()[(r % pr) * c + j];
  auto xn = x.node(), pn = p.node();
  auto self = n.get();
  n->backprop = [self, xn, pn, m, c, pr] {
    xn->ensure_grad();
    pn->ensure_grad();
    for (int r = 0; r < m; ++r)
      for (int j = 0; j < c; ++j) {
        xn->grad[r * c + j] += self->grad[r * c + j];
        pn->grad[(r % pr) * c + j] += self->grad[r * c + j];
      }
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

/// Row [1 x n] repeated m times.
template <typename S>
Tensor<S> tile_row(const Tensor<S>& row, int m) {
  if (row.shape().size() != 2 || row.rows() != 1)
    throw std::invalid_argument("tile_row: expected a 1 x n tensor");
  const int c = row.cols();
  auto n = detail::make_result<S>({m, c}, {row.node()});
  for (int r = 0; r < m; ++r)
    for (int j = 0; j < c; ++j) n->value[r * c + j] = row.value()[j];
  auto rn = row.node();
  auto self = n.get();
  n->backprop = [self, rn, m, c] {
    rn->ensure_grad();
    for (int r = 0; r < m; ++r)
      for (int j = 0; j < c; ++j) rn->grad[j] += self->grad[r * c + j];
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

/// Rows with mask != 0 are replaced by `row` [1 x n].
template <typename S>
Tensor<S> blend_rows(const Tensor<S>& x, const std::vector<uint8_t>& mask,
                     const Tensor<S>& row) {
  if (x.shape().size() != 2 || mask.size() != size_t(x.rows()) ||
      row.rows() != 1 || row.cols() != x.cols())
    throw std::invalid_argument("blend_rows: shape mismatch");
  const int m = x.rows(), c = x.cols();
  auto n = detail::make_result<S>(x.shape(), {x.node(), row.node()});
  for (int r = 0; r < m; ++r)
    for (int j = 0; j < c; ++j)
      n->value[r * c + j] = mask[r] ? row.value()[j] : x.value()[r * c + j];
  auto xn = x.node(), rn = row.node();
  auto self = n.get();
  n->backprop = [self, xn, rn, mask, m, c] {
    xn->ensure_grad();
    rn->ensure_grad();
    for (int r = 0; r < m; ++r)
      for (int j = 0; j < c; ++j) {
        if (mask[r])
          rn->grad[j] += self->grad[r * c + j];
        else
          xn->grad[r * c + j] += self->grad[r * c + j];
      }
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

template <typename S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<int>& indices) {
  if (x.shape().size() != 2) throw std::invalid_argument("gather_rows: rank 2 only");
  const int c = x.cols();
  for (int i : indices)
    if (i < 0 || i >= x.rows()) throw std::invalid_argument("gather_rows: index");
  auto n = detail::make_result<S>({int(indices.size()), c}, {x.node()});
  for (size_t r = 0; r < indices.size(); ++r)
    for (int j = 0; j < c; ++j)
      n->value[r * c + j] = x.value()[size_t(indices[r]) * c + j];
  auto xn = x.node();
  auto self = n.get();
  n->backprop = [self, xn, indices, c] {
    xn->ensure_grad();
    for (size_t r = 0; r < indices.size(); ++r)
      for (int j = 0; j < c; ++j)
        xn->grad[size_t(indices[r]) * c + j] += self->grad[r * c + j];
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

template <typename S>
Tensor<S> concat_rows(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.cols())
    throw std::invalid_argument("concat_rows: shape mismatch");
  const int c = a.cols(), ma = a.rows(), mb = b.rows();
  auto n = detail::make_result<S>({ma + mb, c}, {a.node(), b.node()});
  std::copy(a.value().begin(), a.value().end(), n->value.begin());
  std::copy(b.value().begin(), b.value().end(), n->value.begin() + size_t(ma) * c);
  auto an = a.node(), bn = b.node();
  auto self = n.get();
  n->backprop = [self, an, bn, ma, mb, c] {
    an->ensure_grad();
    bn->ensure_grad();
    for (size_t i = 0; i < size_t(ma) * c; ++i) an->grad[i] += self->grad[i];
    for (size_t i = 0; i < size_t(mb) * c; ++i)
      bn->grad[i] += self->grad[size_t(ma) * c + i];
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

// ---- normalization and attention ----

/// Row layernorm with affine gain/bias: y = gain * (x - mu) / sqrt(var + eps) + bias.
template <typename S>
Tensor<S> layernorm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                    double eps = 1e-5) {
  if (x.shape().size() != 2 || gain.size() != size_t(x.cols()) ||
      bias.size() != size_t(x.cols()))
    throw std::invalid_argument("layernorm: shape mismatch");
  const int m = x.rows(), c = x.cols();
  auto n = detail::make_result<S>(x.shape(), {x.node(), gain.node(), bias.node()});
  auto xhat = std::make_shared<std::vector<S>>(size_t(m) * c);
  auto rstd = std::make_shared<std::vector<S>>(m);
  for (int r = 0; r < m; ++r) {
    double mu = 0;
    for (int j = 0; j < c; ++j) mu += double(x.value()[r * c + j]);
    mu /= c;
    double var = 0;
    for (int j = 0; j < c; ++j) {
      const double d = double(x.value()[r * c + j]) - mu;
      var += d * d;
    }
    var /= c;
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = S(rs);
    for (int j = 0; j < c; ++j) {
      const S xh = S((double(x.value()[r * c + j]) - mu) * rs);
      (*xhat)[r * c + j] = xh;
      n->value[r * c + j] = gain.value()[j] * xh + bias.value()[j];
    }
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  auto self = n.get();
  n->backprop = [self, xn, gn, bn, xhat, rstd, m, c] {
    xn->ensure_grad();
    gn->ensure_grad();
    bn->ensure_grad();
    for (int r = 0; r < m; ++r) {
      double mean_dxhat = 0, mean_dxhat_xhat = 0;
      for (int j = 0; j < c; ++j) {
        const double dxhat = double(self->grad[r * c + j]) * double(gn->value[j]);
        mean_dxhat += dxhat;
        mean_dxhat_xhat += dxhat * double((*xhat)[r * c + j]);
        gn->grad[j] += self->grad[r * c + j] * (*xhat)[r * c + j];
        bn->grad[j] += self->grad[r * c + j];
      }
      mean_dxhat /= c;
      mean_dxhat_xhat /= c;
      for (int j = 0; j < c; ++j) {
        const double dxhat = double(self->grad[r * c + j]) * double(gn->value[j]);
        xn->grad[r * c + j] +=
            S(double((*rstd)[r]) *
              (dxhat - mean_dxhat - double((*xhat)[r * c + j]) * mean_dxhat_xhat));
      }
    }
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
  if (x.shape().size() != 2) throw std::invalid_argument("softmax_rows: rank 2 only");
  const int m = x.rows(), c = x.cols();
  auto n = detail::make_result<S>(x.shape(), {x.node()});
  for (int r = 0; r < m; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j) mx = std::max(mx, double(x.value()[r * c + j]));
    double sum = 0;
    for (int j = 0; j < c; ++j) {
      const double e = std::exp(double(x.value()[r * c + j]) - mx);
      n->value[r * c + j] = S(e);
      sum += e;
    }
    for (int j = 0; j < c; ++j) n->value[r * c + j] = S(double(n->value[r * c + j]) / sum);
  }
  auto xn = x.node();
  auto self = n.get();
  n->backprop = [self, xn, m, c] {
    xn->ensure_grad();
    for (int r = 0; r < m; ++r) {
      double dot = 0;
      for (int j = 0; j < c; ++j)
        dot += double(self->grad[r * c + j]) * double(self->value[r * c + j]);
      for (int j = 0; j < c; ++j)
        xn->grad[r * c + j] +=
            S(double(self->value[r * c + j]) * (double(self->grad[r * c + j]) - dot));
    }
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

/// Causal multi-head self-attention over a packed qkv matrix.
/// qkv is [B*T x 3C]; the result is [B*T x C]. Position t attends to
/// positions <= t of the same sequence; masked entries are never touched,
/// so future inputs cannot perturb earlier outputs even at the bit level.
template <typename S>
Tensor<S> causal_attention(const Tensor<S>& qkv, int batch, int seq_len, int heads) {
  if (qkv.shape().size() != 2 || qkv.rows() != batch * seq_len ||
      qkv.cols() % (3 * heads) != 0)
    throw std::invalid_argument("causal_attention: shape mismatch");
  const int c = qkv.cols() / 3;
  const int hs = c / heads;
  const double inv_sqrt_hs = 1.0 / std::sqrt(double(hs));

  auto n = detail::make_result<S>({batch * seq_len, c}, {qkv.node()});
  // Attention probabilities, saved for backward: [B, H, T, T] lower triangle.
  auto att = std::make_shared<std::vector<S>>(size_t(batch) * heads * seq_len * seq_len,
                                              S(0));
  const S* qkv_v = qkv.value().data();
  S* out = n->value.data();

  auto q_at = [&](int b, int t, int h, int i) {
    return qkv_v[(size_t(b) * seq_len + t) * 3 * c + h * hs + i];
  };
  auto k_at = [&](int b, int t, int h, int i) {
    return qkv_v[(size_t(b) * seq_len + t) * 3 * c + c + h * hs + i];
  };
  auto v_at = [&](int b, int t, int h, int i) {
    return qkv_v[(size_t(b) * seq_len + t) * 3 * c + 2 * c + h * hs + i];
  };

  std::vector<double> scores(seq_len);
  for (int b = 0; b < batch; ++b)
    for (int h = 0; h < heads; ++h)
      for (int t = 0; t < seq_len; ++t) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j <= t; ++j) {
          double s = 0;
          for (int i = 0; i < hs; ++i) s += double(q_at(b, t, h, i)) * double(k_at(b, j, h, i));
          scores[j] = s * inv_sqrt_hs;
          mx = std::max(mx, scores[j]);
        }
        double sum = 0;
        for (int j = 0; j <= t; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          sum += scores[j];
        }
        S* att_row =
            att->data() + ((size_t(b) * heads + h) * seq_len + t) * seq_len;
        for (int j = 0; j <= t; ++j) att_row[j] = S(scores[j] / sum);
        S* out_row = out + (size_t(b) * seq_len + t) * c + h * hs;
        for (int i = 0; i < hs; ++i) {
          double acc = 0;
          for (int j = 0; j <= t; ++j) acc += double(att_row[j]) * double(v_at(b, j, h, i));
          out_row[i] = S(acc);
        }
      }

  auto qkv_n = qkv.node();
  auto self = n.get();
  n->backprop = [self, qkv_n, att, batch, seq_len, heads, c, hs, inv_sqrt_hs] {
    qkv_n->ensure_grad();
    const S* qkv_v = qkv_n->value.data();
    S* dqkv = qkv_n->grad.data();
    const S* dout = self->grad.data();

    auto idx_q = [&](int b, int t, int h, int i) {
      return (size_t(b) * seq_len + t) * 3 * c + h * hs + i;
    };
    std::vector<double> datt(seq_len), dscore(seq_len);
    for (int b = 0; b < batch; ++b)
      for (int h = 0; h < heads; ++h)
        for (int t = 0; t < seq_len; ++t) {
          const S* att_row =
              att->data() + ((size_t(b) * heads + h) * seq_len + t) * seq_len;
          const S* dout_row = dout + (size_t(b) * seq_len + t) * c + h * hs;
          // dV and datt
          double dot = 0;
          for (int j = 0; j <= t; ++j) {
            double da = 0;
            for (int i = 0; i < hs; ++i) {
              da += double(dout_row[i]) * double(qkv_v[idx_q(b, j, h, i) + 2 * c]);
              dqkv[idx_q(b, j, h, i) + 2 * c] += S(double(att_row[j]) * double(dout_row[i]));
            }
            datt[j] = da;
            dot += da * double(att_row[j]);
          }
          // softmax backward, then dQ/dK
          for (int j = 0; j <= t; ++j) {
            dscore[j] = double(att_row[j]) * (datt[j] - dot) * inv_sqrt_hs;
            for (int i = 0; i < hs; ++i) {
              dqkv[idx_q(b, t, h, i)] +=
                  S(dscore[j] * double(qkv_v[idx_q(b, j, h, i) + c]));
              dqkv[idx_q(b, j, h, i) + c] +=
                  S(dscore[j] * double(qkv_v[idx_q(b, t, h, i)]));
            }
          }
        }
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

/// Max over groups of `group` consecutive rows: [m*group x n] -> [m x n].
template <typename S>
Tensor<S> maxpool_rows(const Tensor<S>& x, int group) {
  if (x.shape().size() != 2 || group < 1 || x.rows() % group != 0)
    throw std::invalid_argument("maxpool_rows: shape mismatch");
  const int m = x.rows() / group, c = x.cols();
  auto n = detail::make_result<S>({m, c}, {x.node()});
  auto argmax = std::make_shared<std::vector<int>>(size_t(m) * c);
  for (int g = 0; g < m; ++g)
    for (int j = 0; j < c; ++j) {
      int best = g * group;
      S bv = x.value()[size_t(best) * c + j];
      for (int r = 1; r < group; ++r) {
        const S v = x.value()[(size_t(g) * group + r) * c + j];
        if (v > bv) {
          bv = v;
          best = g * group + r;
        }
      }
      (*argmax)[size_t(g) * c + j] = best;
      n->value[size_t(g) * c + j] = bv;
    }
  auto xn = x.node();
  auto self = n.get();
  n->backprop = [self, xn, argmax, m, c] {
    xn->ensure_grad();
    for (int g = 0; g < m; ++g)
      for (int j = 0; j < c; ++j)
        xn->grad[size_t((*argmax)[size_t(g) * c + j]) * c + j] +=
            self->grad[size_t(g) * c + j];
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

// ---- reductions and losses ----

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  auto n = detail::make_result<S>({1}, {x.node()});
  double acc = 0;
  for (const S v : x.value()) acc += double(v);
  n->value[0] = S(acc);
  auto xn = x.node();
  auto self = n.get();
  n->backprop = [self, xn] {
    xn->ensure_grad();
    for (size_t i = 0; i < xn->value.size(); ++i) xn->grad[i] += self->grad[0];
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  return scale(sum(x), 1.0 / double(x.size()));
}

/// Row sums of a matrix: [m x n] -> [m].
template <typename S>
Tensor<S> rowsum(const Tensor<S>& x) {
  if (x.shape().size() != 2) throw std::invalid_argument("rowsum: rank 2 only");
  const int m = x.rows(), c = x.cols();
  auto n = detail::make_result<S>({m}, {x.node()});
  for (int r = 0; r < m; ++r) {
    double acc = 0;
    for (int j = 0; j < c; ++j) acc += double(x.value()[r * c + j]);
    n->value[r] = S(acc);
  }
  auto xn = x.node();
  auto self = n.get();
  n->backprop = [self, xn, m, c] {
    xn->ensure_grad();
    for (int r = 0; r < m; ++r)
      for (int j = 0; j < c; ++j) xn->grad[r * c + j] += self->grad[r];
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

/// Broadcast-add a scalar tensor to every element.
template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, const Tensor<S>& s) {
  if (s.size() != 1) throw std::invalid_argument("add_scalar: scalar expected");
  auto n = detail::make_result<S>(x.shape(), {x.node(), s.node()});
  for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = x.value()[i] + s.value()[0];
  auto xn = x.node(), sn = s.node();
  auto self = n.get();
  n->backprop = [self, xn, sn] {
    xn->ensure_grad();
    sn->ensure_grad();
    for (size_t i = 0; i < self->value.size(); ++i) {
      xn->grad[i] += self->grad[i];
      sn->grad[0] += self->grad[i];
    }
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

/// L1 loss with per-row weights, divided by (sum of weights * cols).
/// Targets and weights are constants.
template <typename S>
Tensor<S> weighted_l1(const Tensor<S>& pred, const std::vector<S>& target,
                      const std::vector<S>& row_weight) {
  if (pred.shape().size() != 2 || target.size() != pred.size() ||
      row_weight.size() != size_t(pred.rows()))
    throw std::invalid_argument("weighted_l1: shape mismatch");
  const int m = pred.rows(), c = pred.cols();
  double wsum = 0;
  for (const S w : row_weight) wsum += double(w);
  if (wsum <= 0) throw std::invalid_argument("weighted_l1: zero total weight");
  const double denom = wsum * c;

  auto n = detail::make_result<S>({1}, {pred.node()});
  double acc = 0;
  for (int r = 0; r < m; ++r)
    for (int j = 0; j < c; ++j)
      acc += double(row_weight[r]) *
             std::abs(double(pred.value()[r * c + j]) - double(target[r * c + j]));
  n->value[0] = S(acc / denom);
  auto pn = pred.node();
  auto self = n.get();
  n->backprop = [self, pn, target, row_weight, m, c, denom] {
    pn->ensure_grad();
    for (int r = 0; r < m; ++r)
      for (int j = 0; j < c; ++j) {
        const double d = double(pn->value[r * c + j]) - double(target[r * c + j]);
        const double sign = d > 0 ? 1 : (d < 0 ? -1 : 0);
        pn->grad[r * c + j] +=
            S(double(row_weight[r]) * sign / denom * double(self->grad[0]));
      }
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

/// Mean L1 over all elements against a constant target.
template <typename S>
Tensor<S> l1_loss(const Tensor<S>& pred, const std::vector<S>& target) {
  if (pred.shape().size() != 2) throw std::invalid_argument("l1_loss: rank 2 expected");
  std::vector<S> ones(pred.rows(), S(1));
  return weighted_l1(pred, target, ones);
}

/// Mean squared error against a constant target.
template <typename S>
Tensor<S> mse_loss(const Tensor<S>& pred, const std::vector<S>& target) {
  if (target.size() != pred.size()) throw std::invalid_argument("mse_loss: size");
  auto n = detail::make_result<S>({1}, {pred.node()});
  double acc = 0;
  for (size_t i = 0; i < target.size(); ++i) {
    const double d = double(pred.value()[i]) - double(target[i]);
    acc += d * d;
  }
  n->value[0] = S(acc / double(target.size()));
  auto pn = pred.node();
  auto self = n.get();
  n->backprop = [self, pn, target] {
    pn->ensure_grad();
    for (size_t i = 0; i < target.size(); ++i)
      pn->grad[i] += S(2.0 * (double(pn->value[i]) - double(target[i])) /
                       double(target.size()) * double(self->grad[0]));
  };
  detail::check_finite(*n);
  return Tensor<S>(n);
}

// ---- backward ----

/// Reverse pass from a scalar loss. Visits each reachable node exactly once,
/// in decreasing creation order (creation order is a valid topological order
/// because ops can only consume already-created tensors).
template <typename S>
void backward(const Tensor<S>& loss) {
  if (loss.size() != 1) throw std::invalid_argument("backward: scalar loss required");
  std::vector<Node<S>*> order;
  std::vector<std::pair<Node<S>*, size_t>> stack{{loss.node().get(), 0}};
  // Iterative DFS; the graph can be thousands of nodes deep.
  std::unordered_map<Node<S>*, bool> visited;
  visited.reserve(1024);
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (child == 0) {
      if (visited.count(node)) {
        stack.pop_back();
        continue;
      }
      visited[node] = true;
    }
    if (child < node->parents.size()) {
      Node<S>* next = node->parents[child].get();
      ++child;
      if (!visited.count(next)) stack.push_back({next, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Node<S>* a, const Node<S>* b) { return a->id > b->id; });

  for (Node<S>* n : order) n->ensure_grad();
  loss.node()->grad[0] = S(1);
  for (Node<S>* n : order) {
    if (n->backprop && n->requires_grad) n->backprop();
  }
}

}  // namespace hop::grad
