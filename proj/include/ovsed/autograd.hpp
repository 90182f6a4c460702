/* Copyright 2026 The OVSED Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Minimal reverse-mode autodiff over dense Eigen matrices, templated on the
// scalar so training runs in f32 and gradient checks in f64. Nodes are held
// in a tape in topological order; backward walks the tape in reverse.

#ifndef OVSED_AUTOGRAD_HPP_
#define OVSED_AUTOGRAD_HPP_

#include <cmath>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "ovsed/common.hpp"

namespace ovsed {
namespace ag {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

// A named parameter with its gradient accumulator. Lives outside any tape;
// tapes bind to it through leaf nodes.
template <typename S>
struct Tensor {
  std::string name;
  Mat<S> value;
  Mat<S> grad;
  bool encoder_group = false;  // optimizer group assignment
  bool fusion_added = false;   // introduced by the prompt-fusion pathway

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index count() const { return value.size(); }
};

template <typename S>
class Tape {
 public:
  using Matrix = Mat<S>;

  struct Node {
    Matrix value;
    Matrix grad;  // empty until touched by backward
    bool needs_grad = false;
    Tensor<S>* param = nullptr;
    std::function<void(Tape&, int)> back;
  };

  int constant(Matrix v) {
    return push(std::move(v), false, nullptr, {});
  }

  int leaf(Tensor<S>* p) {
    auto it = param_nodes_.find(p);
    if (it != param_nodes_.end()) return it->second;
    const int id = push(p->value, true, p, {});
    param_nodes_[p] = id;
    return id;
  }

  const Matrix& val(int id) const { return nodes_[id].value; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t bytes() const { return bytes_; }

  Matrix& grad_of(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) {
      n.grad.setZero(n.value.rows(), n.value.cols());
      bytes_ += sizeof(S) * static_cast<std::size_t>(n.grad.size());
    }
    return n.grad;
  }

  int apply(Matrix value, std::vector<int> parents,
            std::function<void(Tape&, int)> back) {
    bool needs = false;
    for (int p : parents) needs = needs || nodes_[p].needs_grad;
    return push(std::move(value), needs, nullptr, needs ? std::move(back)
                                                        : decltype(back){});
  }

  // Backpropagates from a 1x1 scalar node. Parameter gradients are added
  // into their Tensor::grad accumulators (callers zero them beforehand).
  void backward(int root, S seed = S(1)) {
    if (nodes_[root].value.size() != 1)
      throw NumericError("backward: root node is not a scalar");
    if (!nodes_[root].needs_grad) return;
    grad_of(root)(0, 0) += seed;
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.back) n.back(*this, i);
      if (n.param) n.param->grad += n.grad;
    }
  }

 private:
  int push(Matrix value, bool needs, Tensor<S>* param,
           std::function<void(Tape&, int)> back) {
    bytes_ += sizeof(S) * static_cast<std::size_t>(value.size());
    nodes_.push_back(Node{std::move(value), {}, needs, param, std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::unordered_map<Tensor<S>*, int> param_nodes_;
  std::size_t bytes_ = 0;
};

// ---------------------------------------------------------------------------
// Ops. Each returns the id of the result node.

template <typename S>
int matmul(Tape<S>& t, int a, int b, bool ta = false, bool tb = false) {
  Mat<S> v;
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  if (!ta && !tb) v = A * B;
  else if (!ta && tb) v = A * B.transpose();
  else if (ta && !tb) v = A.transpose() * B;
  else throw NumericError("matmul: double-transposed form not supported");
  return t.apply(std::move(v), {a, b}, [a, b, ta, tb](Tape<S>& t, int id) {
    const Mat<S>& dC = t.grad_of(id);
    const auto& A = t.val(a);
    const auto& B = t.val(b);
    if (!ta && !tb) {
      if (t.needs_grad(a)) t.grad_of(a) += dC * B.transpose();
      if (t.needs_grad(b)) t.grad_of(b) += A.transpose() * dC;
    } else if (!ta && tb) {
      if (t.needs_grad(a)) t.grad_of(a) += dC * B;
      if (t.needs_grad(b)) t.grad_of(b) += dC.transpose() * A;
    } else {  // ta && !tb
      if (t.needs_grad(a)) t.grad_of(a) += B * dC.transpose();
      if (t.needs_grad(b)) t.grad_of(b) += A * dC;
    }
  });
}

template <typename S>
int add(Tape<S>& t, int a, int b) {
  return t.apply(t.val(a) + t.val(b), {a, b}, [a, b](Tape<S>& t, int id) {
    const Mat<S>& d = t.grad_of(id);
    if (t.needs_grad(a)) t.grad_of(a) += d;
    if (t.needs_grad(b)) t.grad_of(b) += d;
  });
}

template <typename S>
int hadamard(Tape<S>& t, int a, int b) {
  return t.apply(t.val(a).cwiseProduct(t.val(b)), {a, b},
                 [a, b](Tape<S>& t, int id) {
                   const Mat<S>& d = t.grad_of(id);
                   if (t.needs_grad(a))
                     t.grad_of(a) += d.cwiseProduct(t.val(b));
                   if (t.needs_grad(b))
                     t.grad_of(b) += d.cwiseProduct(t.val(a));
                 });
}

template <typename S>
int scale(Tape<S>& t, int a, S s) {
  return t.apply(t.val(a) * s, {a}, [a, s](Tape<S>& t, int id) {
    if (t.needs_grad(a)) t.grad_of(a) += t.grad_of(id) * s;
  });
}

// y = x .rowwise() + v, with v a 1 x d node.
template <typename S>
int add_rowvec(Tape<S>& t, int x, int v) {
  Mat<S> y = t.val(x);
  y.rowwise() += t.val(v).row(0);
  return t.apply(std::move(y), {x, v}, [x, v](Tape<S>& t, int id) {
    const Mat<S>& d = t.grad_of(id);
    if (t.needs_grad(x)) t.grad_of(x) += d;
    if (t.needs_grad(v)) t.grad_of(v) += d.colwise().sum();
  });
}

// y = x .rowwise() * v, with v a 1 x d node.
template <typename S>
int mul_rowvec(Tape<S>& t, int x, int v) {
  Mat<S> y = t.val(x).array().rowwise() * t.val(v).row(0).array();
  return t.apply(std::move(y), {x, v}, [x, v](Tape<S>& t, int id) {
    const Mat<S>& d = t.grad_of(id);
    if (t.needs_grad(x))
      t.grad_of(x) +=
          (d.array().rowwise() * t.val(v).row(0).array()).matrix();
    if (t.needs_grad(v))
      t.grad_of(v) += d.cwiseProduct(t.val(x)).colwise().sum();
  });
}

template <typename S>
int slice_cols(Tape<S>& t, int x, int c0, int n) {
  return t.apply(t.val(x).middleCols(c0, n), {x},
                 [x, c0, n](Tape<S>& t, int id) {
                   if (t.needs_grad(x))
                     t.grad_of(x).middleCols(c0, n) += t.grad_of(id);
                 });
}

template <typename S>
int concat_cols(Tape<S>& t, const std::vector<int>& parts) {
  Eigen::Index rows = t.val(parts[0]).rows(), cols = 0;
  for (int p : parts) cols += t.val(p).cols();
  Mat<S> y(rows, cols);
  Eigen::Index at = 0;
  for (int p : parts) {
    y.middleCols(at, t.val(p).cols()) = t.val(p);
    at += t.val(p).cols();
  }
  return t.apply(std::move(y), parts, [parts](Tape<S>& t, int id) {
    const Mat<S>& d = t.grad_of(id);
    Eigen::Index at = 0;
    for (int p : parts) {
      const Eigen::Index n = t.val(p).cols();
      if (t.needs_grad(p)) t.grad_of(p) += d.middleCols(at, n);
      at += n;
    }
  });
}

// Stacks a (1 x d) row on top of a (T x d) matrix.
template <typename S>
int prepend_row(Tape<S>& t, int row, int x) {
  Mat<S> y(t.val(x).rows() + 1, t.val(x).cols());
  y.row(0) = t.val(row).row(0);
  y.bottomRows(t.val(x).rows()) = t.val(x);
  return t.apply(std::move(y), {row, x}, [row, x](Tape<S>& t, int id) {
    const Mat<S>& d = t.grad_of(id);
    if (t.needs_grad(row)) t.grad_of(row) += d.row(0);
    if (t.needs_grad(x)) t.grad_of(x) += d.bottomRows(d.rows() - 1);
  });
}

template <typename S>
int drop_first_row(Tape<S>& t, int x) {
  return t.apply(t.val(x).bottomRows(t.val(x).rows() - 1), {x},
                 [x](Tape<S>& t, int id) {
                   if (t.needs_grad(x))
                     t.grad_of(x).bottomRows(t.val(x).rows() - 1) +=
                         t.grad_of(id);
                 });
}

// Row-wise layer normalization with learned gain/bias (1 x d nodes).
template <typename S>
int layer_norm(Tape<S>& t, int x, int gain, int bias, S eps = S(1e-5)) {
  const Mat<S>& X = t.val(x);
  const Eigen::Index rows = X.rows(), d = X.cols();
  Mat<S> xhat(rows, d);
  Mat<S> inv_std(rows, 1);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const S mu = X.row(r).mean();
    const S var = (X.row(r).array() - mu).square().sum() / S(d);
    const S is = S(1) / std::sqrt(var + eps);
    inv_std(r, 0) = is;
    xhat.row(r) = (X.row(r).array() - mu) * is;
  }
  Mat<S> y = xhat.array().rowwise() * t.val(gain).row(0).array();
  y.rowwise() += t.val(bias).row(0);
  return t.apply(
      std::move(y), {x, gain, bias},
      [x, gain, bias, xhat, inv_std, d](Tape<S>& t, int id) {
        const Mat<S>& dY = t.grad_of(id);
        if (t.needs_grad(gain))
          t.grad_of(gain) += dY.cwiseProduct(xhat).colwise().sum();
        if (t.needs_grad(bias)) t.grad_of(bias) += dY.colwise().sum();
        if (t.needs_grad(x)) {
          Mat<S>& dX = t.grad_of(x);
          const auto g = t.val(gain).row(0).array();
          for (Eigen::Index r = 0; r < dY.rows(); ++r) {
            Eigen::Array<S, 1, Eigen::Dynamic> dxh =
                dY.row(r).array() * g;
            const S m1 = dxh.mean();
            const S m2 = (dxh * xhat.row(r).array()).mean();
            dX.row(r) +=
                ((dxh - m1 - xhat.row(r).array() * m2) * inv_std(r, 0))
                    .matrix();
          }
        }
      });
}

template <typename S>
int softmax_rows(Tape<S>& t, int x) {
  const Mat<S>& X = t.val(x);
  Mat<S> y(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const S mx = X.row(r).maxCoeff();
    Eigen::Array<S, 1, Eigen::Dynamic> e = (X.row(r).array() - mx).exp();
    y.row(r) = (e / e.sum()).matrix();
  }
  return t.apply(std::move(y), {x}, [x](Tape<S>& t, int id) {
    if (!t.needs_grad(x)) return;
    const Mat<S>& dY = t.grad_of(id);
    const Mat<S>& Y = t.val(id);
    Mat<S>& dX = t.grad_of(x);
    for (Eigen::Index r = 0; r < dY.rows(); ++r) {
      const S dot = dY.row(r).cwiseProduct(Y.row(r)).sum();
      dX.row(r) +=
          Y.row(r).cwiseProduct(dY.row(r) - Mat<S>::Constant(1, dY.cols(), dot));
    }
  });
}

template <typename S>
int gelu(Tape<S>& t, int x) {
  const S c = S(0.7978845608028653711);  // sqrt(2/pi)
  const S k = S(0.044715);
  const Mat<S>& X = t.val(x);
  Mat<S> y = X.unaryExpr([c, k](S v) {
    return S(0.5) * v * (S(1) + std::tanh(c * (v + k * v * v * v)));
  });
  return t.apply(std::move(y), {x}, [x, c, k](Tape<S>& t, int id) {
    if (!t.needs_grad(x)) return;
    const Mat<S>& X = t.val(x);
    Mat<S> d = X.unaryExpr([c, k](S v) {
      const S u = c * (v + k * v * v * v);
      const S th = std::tanh(u);
      return S(0.5) * (S(1) + th) +
             S(0.5) * v * (S(1) - th * th) * c * (S(1) + S(3) * k * v * v);
    });
    t.grad_of(x) += t.grad_of(id).cwiseProduct(d);
  });
}

template <typename S>
int silu(Tape<S>& t, int x) {
  auto sig = [](S v) { return S(1) / (S(1) + std::exp(-v)); };
  Mat<S> y = t.val(x).unaryExpr([sig](S v) { return v * sig(v); });
  return t.apply(std::move(y), {x}, [x, sig](Tape<S>& t, int id) {
    if (!t.needs_grad(x)) return;
    Mat<S> d = t.val(x).unaryExpr([sig](S v) {
      const S s = sig(v);
      return s * (S(1) + v * (S(1) - s));
    });
    t.grad_of(x) += t.grad_of(id).cwiseProduct(d);
  });
}

template <typename S>
int sigmoid(Tape<S>& t, int x) {
  Mat<S> y = t.val(x).unaryExpr(
      [](S v) { return S(1) / (S(1) + std::exp(-v)); });
  return t.apply(std::move(y), {x}, [x](Tape<S>& t, int id) {
    if (!t.needs_grad(x)) return;
    const Mat<S>& Y = t.val(id);
    t.grad_of(x) += t.grad_of(id).cwiseProduct(
        Y.cwiseProduct(Mat<S>::Constant(Y.rows(), Y.cols(), S(1)) - Y));
  });
}

// Summed binary cross-entropy on logits: sum(softplus(z) - y .* z).
// Numerically stable for large |z|; gradient is sigmoid(z) - y.
template <typename S>
int bce_logits_sum(Tape<S>& t, int z, const Mat<S>& targets) {
  const Mat<S>& Z = t.val(z);
  if (Z.rows() != targets.rows() || Z.cols() != targets.cols())
    throw NumericError("bce: logit/target shape mismatch");
  S total = 0;
  for (Eigen::Index i = 0; i < Z.size(); ++i) {
    const S v = Z(i);
    const S sp = std::max(v, S(0)) + std::log1p(std::exp(-std::abs(v)));
    total += sp - targets(i) * v;
  }
  Mat<S> val(1, 1);
  val(0, 0) = total;
  return t.apply(std::move(val), {z}, [z, targets](Tape<S>& t, int id) {
    if (!t.needs_grad(z)) return;
    const S seed = t.grad_of(id)(0, 0);
    const Mat<S>& Z = t.val(z);
    Mat<S>& dZ = t.grad_of(z);
    for (Eigen::Index i = 0; i < Z.size(); ++i)
      dZ(i) += seed * (S(1) / (S(1) + std::exp(-Z(i))) - targets(i));
  });
}

}  // namespace ag
}  // namespace ovsed

#endif  // OVSED_AUTOGRAD_HPP_
