#pragma once

// Tape-based reverse-mode differentiation over dense matrices. Activations are
// stored feature-major: each column is one token (one frame of one sample).

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace wrenchfield::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Act { gelu, tanh, relu, sigmoid };

struct Var {
  int id = -1;
};

template <class S>
class Tape {
 public:
  Var constant(Mat<S> v) { return push(std::move(v), false, nullptr); }
  Var variable(Mat<S> v) { return push(std::move(v), true, nullptr); }

  const Mat<S>& value(Var x) const { return nodes_[x.id].value; }
  S scalar(Var x) const { return nodes_[x.id].value(0, 0); }
  /// Gradient of the last backward() target; zero-sized if untouched.
  const Mat<S>& grad(Var x) const { return nodes_[x.id].grad; }
  bool has_grad(Var x) const { return nodes_[x.id].grad.size() > 0; }
  std::size_t size() const { return nodes_.size(); }

  void backward(Var target) {
    if (value(target).size() != 1) throw ShapeError("backward target must be a scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[target.id].grad = Mat<S>::Ones(1, 1);
    for (int i = target.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.back && n.grad.size() > 0) n.back(*this, i);
    }
  }

  // --- linear algebra --------------------------------------------------------

  Var matmul(Var a, Var b) {
    check(value(a).cols() == value(b).rows(), "matmul", a, b);
    return push(value(a) * value(b), any(a, b), [a, b](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      if (t.needs(a)) t.acc(a, g * t.value(b).transpose());
      if (t.needs(b)) t.acc(b, t.value(a).transpose() * g);
    });
  }

  /// W x + b 1^T with W (out x in), b (out x 1).
  Var linear(Var x, Var w, Var b) {
    check(value(w).cols() == value(x).rows(), "linear weight", w, x);
    check(value(b).rows() == value(w).rows() && value(b).cols() == 1, "linear bias", b, w);
    Mat<S> y = value(w) * value(x);
    y.colwise() += value(b).col(0);
    return push(std::move(y), any(x, w) || needs(b), [x, w, b](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      if (t.needs(w)) t.acc(w, g * t.value(x).transpose());
      if (t.needs(x)) t.acc(x, t.value(w).transpose() * g);
      if (t.needs(b)) t.acc(b, g.rowwise().sum());
    });
  }

  Var add(Var a, Var b) {
    check(same_shape(a, b), "add", a, b);
    return push(value(a) + value(b), any(a, b), [a, b](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      if (t.needs(a)) t.acc(a, g);
      if (t.needs(b)) t.acc(b, g);
    });
  }

  Var sub(Var a, Var b) {
    check(same_shape(a, b), "sub", a, b);
    return push(value(a) - value(b), any(a, b), [a, b](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      if (t.needs(a)) t.acc(a, g);
      if (t.needs(b)) t.acc(b, -g);
    });
  }

  Var hadamard(Var a, Var b) {
    check(same_shape(a, b), "hadamard", a, b);
    return push(value(a).cwiseProduct(value(b)), any(a, b), [a, b](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      if (t.needs(a)) t.acc(a, g.cwiseProduct(t.value(b)));
      if (t.needs(b)) t.acc(b, g.cwiseProduct(t.value(a)));
    });
  }

  Var scale(Var a, S s) {
    return push(value(a) * s, needs(a), [a, s](Tape& t, int self) { t.acc(a, t.nodes_[self].grad * s); });
  }

  /// x + b 1^T with b a column vector.
  Var add_col(Var x, Var b) {
    check(value(b).rows() == value(x).rows() && value(b).cols() == 1, "add_col", x, b);
    Mat<S> y = value(x);
    y.colwise() += value(b).col(0);
    return push(std::move(y), any(x, b), [x, b](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      if (t.needs(x)) t.acc(x, g);
      if (t.needs(b)) t.acc(b, g.rowwise().sum());
    });
  }

  /// Column j multiplied by the constant s(j).
  Var col_scale(Var x, const Eigen::Matrix<S, 1, Eigen::Dynamic>& s) {
    if (s.size() != value(x).cols()) throw ShapeError("col_scale: scale length != columns");
    Mat<S> y = value(x) * s.asDiagonal();
    return push(std::move(y), needs(x), [x, s](Tape& t, int self) { t.acc(x, t.nodes_[self].grad * s.asDiagonal()); });
  }

  Var activation(Var x, Act kind) {
    const auto xa = value(x).array();
    Mat<S> y, cache;
    switch (kind) {
      case Act::gelu: {
        const S c = S(0.7978845608028654), k = S(0.044715);
        cache = (c * (xa + k * xa.cube())).tanh().matrix();
        y = (S(0.5) * xa * (S(1) + cache.array())).matrix();
        break;
      }
      case Act::tanh:
        y = xa.tanh().matrix();
        break;
      case Act::relu:
        y = xa.max(S(0)).matrix();
        break;
      case Act::sigmoid:
        y = value(x).unaryExpr([](S v) { return sigmoid(v); });
        break;
    }
    return push(std::move(y), needs(x), [x, kind, cache = std::move(cache)](Tape& t, int self) {
      const auto g = t.nodes_[self].grad.array();
      const auto xa = t.value(x).array();
      const auto ya = t.nodes_[self].value.array();
      switch (kind) {
        case Act::gelu: {
          const S c = S(0.7978845608028654), k3 = S(3 * 0.044715);
          const auto th = cache.array();
          t.acc(x, (g * (S(0.5) * (S(1) + th) +
                         S(0.5) * xa * (S(1) - th.square()) * c * (S(1) + k3 * xa.square())))
                       .matrix());
          break;
        }
        case Act::tanh:
          t.acc(x, (g * (S(1) - ya.square())).matrix());
          break;
        case Act::relu:
          t.acc(x, (g * (xa > S(0)).template cast<S>()).matrix());
          break;
        case Act::sigmoid:
          t.acc(x, (g * ya * (S(1) - ya)).matrix());
          break;
      }
    });
  }

  /// Per-column normalization over features with affine gamma, beta (rows x 1).
  Var layernorm(Var x, Var gamma, Var beta, S eps = S(1e-5)) {
    const Mat<S>& xv = value(x);
    const Eigen::Index d = xv.rows();
    check(value(gamma).rows() == d && value(beta).rows() == d, "layernorm", x, gamma);
    Eigen::Matrix<S, 1, Eigen::Dynamic> mean = xv.colwise().mean();
    Mat<S> xhat = xv.rowwise() - mean;
    Eigen::Matrix<S, 1, Eigen::Dynamic> inv = (xhat.array().square().colwise().mean() + eps).rsqrt().matrix();
    xhat = xhat * inv.asDiagonal();
    Mat<S> y = (xhat.array().colwise() * value(gamma).col(0).array()).matrix();
    y.colwise() += value(beta).col(0);
    return push(std::move(y), needs(x) || needs(gamma) || needs(beta),
                [x, gamma, beta, xhat = std::move(xhat), inv = std::move(inv)](Tape& t, int self) {
                  const Mat<S>& g = t.nodes_[self].grad;
                  if (t.needs(gamma)) t.acc(gamma, g.cwiseProduct(xhat).rowwise().sum());
                  if (t.needs(beta)) t.acc(beta, g.rowwise().sum());
                  if (t.needs(x)) {
                    const Mat<S> gx = (g.array().colwise() * t.value(gamma).col(0).array()).matrix();
                    const Eigen::Matrix<S, 1, Eigen::Dynamic> m1 = gx.colwise().mean();
                    const Eigen::Matrix<S, 1, Eigen::Dynamic> m2 = gx.cwiseProduct(xhat).colwise().mean();
                    Mat<S> dx = gx.rowwise() - m1;
                    dx -= xhat * m2.asDiagonal();
                    t.acc(x, dx * inv.asDiagonal());
                  }
                });
  }

  /// Mixing along time inside each sample: columns come in blocks of `h`
  /// frames; block Y_b = X_b W^T + 1 b^T with W (h_out x h), b (h_out x 1).
  Var time_mix(Var x, Var w, Var b, int h) {
    const Mat<S>& xv = value(x);
    const Mat<S>& wv = value(w);
    if (h <= 0 || xv.cols() % h != 0) throw ShapeError("time_mix: columns not a multiple of the window");
    check(wv.cols() == h && value(b).rows() == wv.rows(), "time_mix", w, b);
    const Eigen::Index ho = wv.rows(), nb = xv.cols() / h;
    Mat<S> y(xv.rows(), nb * ho);
    for (Eigen::Index s = 0; s < nb; ++s) {
      y.middleCols(s * ho, ho).noalias() = xv.middleCols(s * h, h) * wv.transpose();
      y.middleCols(s * ho, ho).rowwise() += value(b).col(0).transpose();
    }
    return push(std::move(y), any(x, w) || needs(b), [x, w, b, h, ho, nb](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      const Mat<S>& xv = t.value(x);
      if (t.needs(x)) {
        Mat<S> dx(xv.rows(), xv.cols());
        for (Eigen::Index s = 0; s < nb; ++s) dx.middleCols(s * h, h).noalias() = g.middleCols(s * ho, ho) * t.value(w);
        t.acc(x, dx);
      }
      if (t.needs(w)) {
        Mat<S> dw = Mat<S>::Zero(ho, h);
        for (Eigen::Index s = 0; s < nb; ++s)
          dw.noalias() += g.middleCols(s * ho, ho).transpose() * xv.middleCols(s * h, h);
        t.acc(w, dw);
      }
      if (t.needs(b)) {
        Mat<S> db = Mat<S>::Zero(ho, 1);
        for (Eigen::Index s = 0; s < nb; ++s) db += g.middleCols(s * ho, ho).colwise().sum().transpose();
        t.acc(b, db);
      }
    });
  }

  /// Each column of x (one per sample) repeated h times.
  Var repeat_cols(Var x, int h) {
    const Mat<S>& xv = value(x);
    Mat<S> y(xv.rows(), xv.cols() * h);
    for (Eigen::Index s = 0; s < xv.cols(); ++s) y.middleCols(s * h, h) = xv.col(s).replicate(1, h);
    return push(std::move(y), needs(x), [x, h](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      Mat<S> dx(g.rows(), g.cols() / h);
      for (Eigen::Index s = 0; s < dx.cols(); ++s) dx.col(s) = g.middleCols(s * h, h).rowwise().sum();
      t.acc(x, dx);
    });
  }

  /// Vertical stack [a; b].
  Var concat_rows(Var a, Var b) {
    check(value(a).cols() == value(b).cols(), "concat_rows", a, b);
    Mat<S> y(value(a).rows() + value(b).rows(), value(a).cols());
    y << value(a), value(b);
    const Eigen::Index ra = value(a).rows();
    return push(std::move(y), any(a, b), [a, b, ra](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      if (t.needs(a)) t.acc(a, g.topRows(ra));
      if (t.needs(b)) t.acc(b, g.bottomRows(g.rows() - ra));
    });
  }

  /// Column-major reinterpretation with a new shape.
  Var reshape(Var x, Eigen::Index rows, Eigen::Index cols) {
    const Mat<S>& xv = value(x);
    if (rows * cols != xv.size()) throw ShapeError("reshape: element count changes");
    Mat<S> y = Eigen::Map<const Mat<S>>(xv.data(), rows, cols);
    const Eigen::Index r0 = xv.rows(), c0 = xv.cols();
    return push(std::move(y), needs(x), [x, r0, c0](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      t.acc(x, Eigen::Map<const Mat<S>>(g.data(), r0, c0));
    });
  }

  /// Cross-attention with one query per (frame, region): q = Q(:,t) + E(:,i),
  /// keys K and values V from all frames of the same sample. Output rows are
  /// region blocks of V's height.
  Var region_attention(Var q, Var e, Var k, Var v, int h) {
    const Mat<S>& Q = value(q);
    const Mat<S>& E = value(e);
    const Mat<S>& K = value(k);
    const Mat<S>& V = value(v);
    if (h <= 0 || Q.cols() % h != 0 || K.cols() != Q.cols() || V.cols() != Q.cols())
      throw ShapeError("region_attention: token counts disagree");
    check(E.rows() == Q.rows() && K.rows() == Q.rows(), "region_attention", q, k);
    const Eigen::Index nb = Q.cols() / h, nr = E.cols(), dv = V.rows();
    const S sc = S(1) / std::sqrt(static_cast<S>(Q.rows()));
    std::vector<Mat<S>> attn(nb * nr);
    Mat<S> y(nr * dv, Q.cols());
    for (Eigen::Index s = 0; s < nb; ++s) {
      const auto Kb = K.middleCols(s * h, h);
      const auto Vb = V.middleCols(s * h, h);
      for (Eigen::Index i = 0; i < nr; ++i) {
        Mat<S> qi = Q.middleCols(s * h, h);
        qi.colwise() += E.col(i);
        Mat<S> a = (Kb.transpose() * qi) * sc;  // keys x queries
        for (Eigen::Index c = 0; c < a.cols(); ++c) {
          a.col(c).array() -= a.col(c).maxCoeff();
          a.col(c) = a.col(c).array().exp().matrix();
          a.col(c) /= a.col(c).sum();
        }
        y.block(i * dv, s * h, dv, h).noalias() = Vb * a;
        attn[s * nr + i] = std::move(a);
      }
    }
    const bool ng = needs(q) || needs(e) || needs(k) || needs(v);
    return push(std::move(y), ng, [q, e, k, v, h, nb, nr, dv, sc, attn = std::move(attn)](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      const Mat<S>& Q = t.value(q);
      const Mat<S>& E = t.value(e);
      const Mat<S>& K = t.value(k);
      const Mat<S>& V = t.value(v);
      Mat<S> dQ = Mat<S>::Zero(Q.rows(), Q.cols()), dK = Mat<S>::Zero(K.rows(), K.cols());
      Mat<S> dV = Mat<S>::Zero(V.rows(), V.cols()), dE = Mat<S>::Zero(E.rows(), E.cols());
      for (Eigen::Index s = 0; s < nb; ++s) {
        const auto Kb = K.middleCols(s * h, h);
        const auto Vb = V.middleCols(s * h, h);
        for (Eigen::Index i = 0; i < nr; ++i) {
          const Mat<S>& a = attn[s * nr + i];
          const auto go = g.block(i * dv, s * h, dv, h);
          dV.middleCols(s * h, h).noalias() += go * a.transpose();
          Mat<S> da = Vb.transpose() * go;
          const Eigen::Matrix<S, 1, Eigen::Dynamic> dot = a.cwiseProduct(da).colwise().sum();
          Mat<S> ds = a.cwiseProduct(da.rowwise() - dot) * sc;
          Mat<S> qi = Q.middleCols(s * h, h);
          qi.colwise() += E.col(i);
          const Mat<S> dqi = Kb * ds;
          dQ.middleCols(s * h, h) += dqi;
          dE.col(i) += dqi.rowwise().sum();
          dK.middleCols(s * h, h).noalias() += qi * ds.transpose();
        }
      }
      if (t.needs(q)) t.acc(q, dQ);
      if (t.needs(e)) t.acc(e, dE);
      if (t.needs(k)) t.acc(k, dK);
      if (t.needs(v)) t.acc(v, dV);
    });
  }

  // --- reductions and losses -------------------------------------------------

  Var sum(Var x) {
    Mat<S> y(1, 1);
    y(0, 0) = value(x).sum();
    const Eigen::Index r = value(x).rows(), c = value(x).cols();
    return push(std::move(y), needs(x), [x, r, c](Tape& t, int self) {
      t.acc(x, Mat<S>::Constant(r, c, t.nodes_[self].grad(0, 0)));
    });
  }

  Var mean(Var x) { return scale(sum(x), S(1) / static_cast<S>(value(x).size())); }

  /// sum(w .* (a - target)^2) / norm with constant target and weights.
  Var weighted_sq(Var a, const Mat<S>& target, const Mat<S>& w, S norm) {
    const Mat<S>& av = value(a);
    if (target.rows() != av.rows() || target.cols() != av.cols() || w.rows() != av.rows() || w.cols() != av.cols())
      throw ShapeError("weighted_sq: target/weight shape mismatch");
    Mat<S> diff = av - target;
    Mat<S> y(1, 1);
    y(0, 0) = (w.array() * diff.array().square()).sum() / norm;
    return push(std::move(y), needs(a), [a, w, norm, diff = std::move(diff)](Tape& t, int self) {
      const S g = t.nodes_[self].grad(0, 0);
      t.acc(a, (w.array() * diff.array() * (S(2) * g / norm)).matrix());
    });
  }

  /// Mean binary cross-entropy of logits against constant targets.
  Var bce_logits(Var logits, const Mat<S>& target) {
    const Mat<S>& l = value(logits);
    if (target.rows() != l.rows() || target.cols() != l.cols()) throw ShapeError("bce_logits: target shape mismatch");
    const S n = static_cast<S>(l.size());
    Mat<S> y(1, 1);
    y(0, 0) = l.binaryExpr(target, [](S x, S tt) { return softplus(x) - tt * x; }).sum() / n;
    return push(std::move(y), needs(logits), [logits, target, n](Tape& t, int self) {
      const S g = t.nodes_[self].grad(0, 0);
      const Mat<S>& l = t.value(logits);
      t.acc(logits, l.binaryExpr(target, [g, n](S x, S tt) { return (sigmoid(x) - tt) * g / n; }));
    });
  }

  static S sigmoid(S x) { return x >= 0 ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x)); }
  static S softplus(S x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

  static S act(Act kind, S v) {
    switch (kind) {
      case Act::gelu: {
        const S c = S(0.7978845608028654);
        return S(0.5) * v * (S(1) + std::tanh(c * (v + S(0.044715) * v * v * v)));
      }
      case Act::tanh: return std::tanh(v);
      case Act::relu: return v > 0 ? v : S(0);
      case Act::sigmoid: return sigmoid(v);
    }
    return v;
  }

  static S act_grad(Act kind, S v) {
    switch (kind) {
      case Act::gelu: {
        const S c = S(0.7978845608028654);
        const S u = c * (v + S(0.044715) * v * v * v);
        const S th = std::tanh(u);
        return S(0.5) * (S(1) + th) + S(0.5) * v * (S(1) - th * th) * c * (S(1) + S(3 * 0.044715) * v * v);
      }
      case Act::tanh: {
        const S th = std::tanh(v);
        return S(1) - th * th;
      }
      case Act::relu: return v > 0 ? S(1) : S(0);
      case Act::sigmoid: {
        const S s = sigmoid(v);
        return s * (S(1) - s);
      }
    }
    return S(1);
  }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    bool needs_grad = false;
    std::function<void(Tape&, int)> back;
  };

  std::vector<Node> nodes_;

  template <class F>
  Var push(Mat<S> v, bool needs_grad, F&& back) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    if constexpr (!std::is_same_v<std::decay_t<F>, std::nullptr_t>) {
      if (needs_grad) n.back = std::forward<F>(back);
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  bool needs(Var x) const { return nodes_[x.id].needs_grad; }
  bool any(Var a, Var b) const { return needs(a) || needs(b); }
  bool same_shape(Var a, Var b) const {
    return value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols();
  }

  void check(bool ok, const char* op, Var a, Var b) const {
    if (!ok)
      throw ShapeError(std::string(op) + ": incompatible shapes " + std::to_string(value(a).rows()) + "x" +
                       std::to_string(value(a).cols()) + " and " + std::to_string(value(b).rows()) + "x" +
                       std::to_string(value(b).cols()));
  }

  template <class M>
  void acc(Var x, const M& g) {
    Node& n = nodes_[x.id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }
};

}  // namespace wrenchfield::nn
