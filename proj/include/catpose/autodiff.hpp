#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices. Each op
// records its result and a closure that pushes the output gradient back to
// its inputs; `backward` replays the closures in reverse creation order.

#include <cmath>
#include <functional>
#include <numbers>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace catpose::ad {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Var {
  int id = -1;
};

template <typename T>
class Tape {
 public:
  struct Node {
    Mat<T> value;
    Mat<T> grad;
    bool needs_grad = false;
    std::function<void(Tape&)> backward;
  };

  Var constant(Mat<T> value) { return push(std::move(value), false); }
  Var parameter(Mat<T> value) { return push(std::move(value), true); }

  const Mat<T>& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  const Mat<T>& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }
  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 (root must be 1x1) and back-propagates.
  void backward(Var root) {
    for (auto& n : nodes_) n.grad.resize(0, 0);
    Node& r = node(root);
    r.grad = Mat<T>::Ones(r.value.rows(), r.value.cols());
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (nodes_[i].backward && nodes_[i].grad.size() > 0) nodes_[i].backward(*this);
    }
  }

  // -- ops -----------------------------------------------------------------

  Var matmul(Var a, Var b) {
    Var out = push(value(a) * value(b), needs_grad(a) || needs_grad(b));
    set_backward(out, [a, b, out](Tape& t) {
      const Mat<T>& g = t.grad(out);
      if (t.needs_grad(a)) t.accumulate(a, g * t.value(b).transpose());
      if (t.needs_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
    });
    return out;
  }

  /// a * b^T
  Var matmul_nt(Var a, Var b) {
    Var out = push(value(a) * value(b).transpose(), needs_grad(a) || needs_grad(b));
    set_backward(out, [a, b, out](Tape& t) {
      const Mat<T>& g = t.grad(out);
      if (t.needs_grad(a)) t.accumulate(a, g * t.value(b));
      if (t.needs_grad(b)) t.accumulate(b, g.transpose() * t.value(a));
    });
    return out;
  }

  Var add(Var a, Var b) {
    Var out = push(value(a) + value(b), needs_grad(a) || needs_grad(b));
    set_backward(out, [a, b, out](Tape& t) {
      if (t.needs_grad(a)) t.accumulate(a, t.grad(out));
      if (t.needs_grad(b)) t.accumulate(b, t.grad(out));
    });
    return out;
  }

  /// Adds a 1 x C row to every row of a.
  Var add_row(Var a, Var row) {
    Mat<T> v = value(a);
    v.rowwise() += value(row).row(0);
    Var out = push(std::move(v), needs_grad(a) || needs_grad(row));
    set_backward(out, [a, row, out](Tape& t) {
      if (t.needs_grad(a)) t.accumulate(a, t.grad(out));
      if (t.needs_grad(row)) t.accumulate(row, t.grad(out).colwise().sum());
    });
    return out;
  }

  /// mul * a + shift
  Var affine(Var a, T mul, T shift) {
    Var out = push((value(a).array() * mul + shift).matrix(), needs_grad(a));
    set_backward(out, [a, out, mul](Tape& t) { t.accumulate(a, t.grad(out) * mul); });
    return out;
  }

  /// tanh-approximated GELU.
  Var gelu(Var a) {
    const T k = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
    const T c = static_cast<T>(0.044715);
    const auto& x = value(a).array();
    Mat<T> th = (k * (x + c * x.cube())).tanh().matrix();
    Var out = push((T(0.5) * x * (T(1) + th.array())).matrix(), needs_grad(a));
    set_backward(out, [a, out, th = std::move(th), k, c](Tape& t) {
      const auto& x = t.value(a).array();
      const auto tha = th.array();
      const auto d = T(0.5) * (T(1) + tha) + T(0.5) * x * (T(1) - tha.square()) * k * (T(1) + T(3) * c * x.square());
      t.accumulate(a, (t.grad(out).array() * d).matrix());
    });
    return out;
  }

  Var sigmoid(Var a) {
    Var out = push((T(1) / (T(1) + (-value(a).array()).exp())).matrix(), needs_grad(a));
    set_backward(out, [a, out](Tape& t) {
      const auto y = t.value(out).array();
      t.accumulate(a, (t.grad(out).array() * y * (T(1) - y)).matrix());
    });
    return out;
  }

  /// Row-wise layer normalization with learned 1 x C scale and bias.
  Var layer_norm(Var a, Var gamma, Var beta, T eps = T(1e-5)) {
    const Mat<T>& x = value(a);
    const auto cols = static_cast<T>(x.cols());
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(x.rows());
    Mat<T> xhat(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const T mean = x.row(r).sum() / cols;
      const auto centered = (x.row(r).array() - mean);
      const T var = centered.square().sum() / cols;
      inv_std(r) = T(1) / std::sqrt(var + eps);
      xhat.row(r) = (centered * inv_std(r)).matrix();
    }
    Mat<T> y = xhat;
    y.array().rowwise() *= value(gamma).row(0).array();
    y.rowwise() += value(beta).row(0);
    Var out = push(std::move(y), needs_grad(a) || needs_grad(gamma) || needs_grad(beta));
    set_backward(out, [a, gamma, beta, out, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t) {
      const Mat<T>& g = t.grad(out);
      if (t.needs_grad(gamma)) t.accumulate(gamma, (g.array() * xhat.array()).colwise().sum().matrix());
      if (t.needs_grad(beta)) t.accumulate(beta, g.colwise().sum());
      if (t.needs_grad(a)) {
        Mat<T> dxhat = g;
        dxhat.array().rowwise() *= t.value(gamma).row(0).array();
        const auto cols = static_cast<T>(g.cols());
        Mat<T> dx(g.rows(), g.cols());
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          const T m1 = dxhat.row(r).sum() / cols;
          const T m2 = dxhat.row(r).dot(xhat.row(r)) / cols;
          dx.row(r) = ((dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r)).matrix();
        }
        t.accumulate(a, dx);
      }
    });
    return out;
  }

  Var softmax_rows(Var a) {
    Mat<T> y = value(a);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const T mx = y.row(r).maxCoeff();
      y.row(r) = (y.row(r).array() - mx).exp().matrix();
      y.row(r) /= y.row(r).sum();
    }
    Var out = push(std::move(y), needs_grad(a));
    set_backward(out, [a, out](Tape& t) {
      const Mat<T>& y = t.value(out);
      const Mat<T>& g = t.grad(out);
      const Eigen::Matrix<T, Eigen::Dynamic, 1> dots = (g.array() * y.array()).rowwise().sum();
      Mat<T> dx = g;
      dx.colwise() -= dots;
      t.accumulate(a, (dx.array() * y.array()).matrix());
    });
    return out;
  }

  /// Columns [start, start + count) of a.
  Var cols(Var a, Eigen::Index start, Eigen::Index count) {
    Var out = push(value(a).middleCols(start, count), needs_grad(a));
    set_backward(out, [a, out, start, count](Tape& t) {
      Node& na = t.node(a);
      if (na.grad.size() == 0) na.grad = Mat<T>::Zero(na.value.rows(), na.value.cols());
      na.grad.middleCols(start, count) += t.grad(out);
    });
    return out;
  }

  Var hcat(const std::vector<Var>& parts) {
    Eigen::Index total = 0;
    bool ng = false;
    for (Var p : parts) {
      total += value(p).cols();
      ng = ng || needs_grad(p);
    }
    Mat<T> v(value(parts.front()).rows(), total);
    Eigen::Index c = 0;
    for (Var p : parts) {
      v.middleCols(c, value(p).cols()) = value(p);
      c += value(p).cols();
    }
    Var out = push(std::move(v), ng);
    set_backward(out, [parts, out](Tape& t) {
      Eigen::Index c = 0;
      for (Var p : parts) {
        const Eigen::Index w = t.value(p).cols();
        if (t.needs_grad(p)) t.accumulate(p, t.grad(out).middleCols(c, w));
        c += w;
      }
    });
    return out;
  }

  /// Row-wise unit normalization, x / sqrt(|x|^2 + eps^2).
  Var normalize_rows(Var a, T eps = T(1e-8)) {
    const Mat<T>& x = value(a);
    Eigen::Matrix<T, Eigen::Dynamic, 1> norms = (x.rowwise().squaredNorm().array() + eps * eps).sqrt().matrix();
    Mat<T> y = x;
    y.array().colwise() /= norms.array();
    Var out = push(std::move(y), needs_grad(a));
    set_backward(out, [a, out, norms = std::move(norms)](Tape& t) {
      const Mat<T>& y = t.value(out);
      const Mat<T>& g = t.grad(out);
      const Eigen::Matrix<T, Eigen::Dynamic, 1> dots = (g.array() * y.array()).rowwise().sum();
      Mat<T> dx = g - (y.array().colwise() * dots.array()).matrix();
      dx.array().colwise() /= norms.array();
      t.accumulate(a, dx);
    });
    return out;
  }

  /// out_ij = p_i * q_j * a_ij with p (M x 1) and q (N x 1).
  Var gate(Var a, Var p, Var q) {
    const Mat<T>& av = value(a);
    Mat<T> y = av;
    y.array().colwise() *= value(p).col(0).array();
    y.array().rowwise() *= value(q).col(0).transpose().array();
    Var out = push(std::move(y), needs_grad(a) || needs_grad(p) || needs_grad(q));
    set_backward(out, [a, p, q, out](Tape& t) {
      const Mat<T>& g = t.grad(out);
      const auto pv = t.value(p).col(0).array();
      const auto qv = t.value(q).col(0).transpose().array();
      if (t.needs_grad(a)) {
        Mat<T> da = g;
        da.array().colwise() *= pv;
        da.array().rowwise() *= qv;
        t.accumulate(a, da);
      }
      const Mat<T> ga = (g.array() * t.value(a).array()).matrix();
      if (t.needs_grad(p)) {
        Mat<T> tmp = ga;
        tmp.array().rowwise() *= qv;
        t.accumulate(p, tmp.rowwise().sum());
      }
      if (t.needs_grad(q)) {
        Mat<T> tmp = ga;
        tmp.array().colwise() *= pv;
        t.accumulate(q, tmp.colwise().sum().transpose());
      }
    });
    return out;
  }

  /// Generic node: caller supplies the value and a closure that returns the
  /// gradient contributions for each input given the output gradient.
  Var custom(Mat<T> value, const std::vector<Var>& inputs,
             std::function<std::vector<Mat<T>>(const Mat<T>& out_grad)> vjp) {
    bool ng = false;
    for (Var v : inputs) ng = ng || needs_grad(v);
    Var out = push(std::move(value), ng);
    set_backward(out, [inputs, out, vjp = std::move(vjp)](Tape& t) {
      auto grads = vjp(t.grad(out));
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (t.needs_grad(inputs[k]) && grads[k].size() > 0) t.accumulate(inputs[k], grads[k]);
      }
    });
    return out;
  }

  void accumulate(Var v, const Mat<T>& g) {
    Node& n = node(v);
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

 private:
  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }

  Var push(Mat<T> value, bool needs_grad) {
    nodes_.push_back(Node{std::move(value), Mat<T>(), needs_grad, nullptr});
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  template <typename Fn>
  void set_backward(Var out, Fn&& fn) {
    if (node(out).needs_grad) node(out).backward = std::forward<Fn>(fn);
  }

  std::vector<Node> nodes_;
};

}  // namespace catpose::ad
