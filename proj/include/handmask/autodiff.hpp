#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace handmask {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Raised when a forward value turns non-finite or a loss is not scalar.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Graph<Scalar>* graph, int id) : graph_(graph), id_(id) {}

  const Matrix<Scalar>& value() const { return graph_->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Graph<Scalar>& graph() const { return *graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph<Scalar>* graph_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape over dense matrices. Nodes are appended in evaluation
// order, so the creation order is already a topological order.
template <typename Scalar>
class Graph {
 public:
  using Mat = Matrix<Scalar>;
  using Backward = std::function<void(Graph&, const Mat&)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<Scalar> constant(Mat value) { return push(std::move(value), "constant", false, {}); }
  Var<Scalar> variable(Mat value) { return push(std::move(value), "variable", true, {}); }

  // Appends the result of an operation. `backward` receives the upstream
  // gradient of the new node and must accumulate into the inputs.
  Var<Scalar> record(Mat value, const char* op, std::initializer_list<Var<Scalar>> inputs,
                     Backward backward) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || nodes_[in.id()].requires_grad;
    return push(std::move(value), op, needs, needs ? std::move(backward) : Backward{});
  }
  Var<Scalar> record(Mat value, const char* op, std::span<const Var<Scalar>> inputs,
                     Backward backward) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || nodes_[in.id()].requires_grad;
    return push(std::move(value), op, needs, needs ? std::move(backward) : Backward{});
  }

  const Mat& value(Var<Scalar> v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var<Scalar> v) const { return nodes_[v.id()].requires_grad; }

  // Gradient of the last backward() target w.r.t. `v`; zeros if unreached.
  Mat grad(Var<Scalar> v) const {
    const Node& n = nodes_[v.id()];
    if (n.has_grad) return n.grad;
    return Mat::Zero(n.value.rows(), n.value.cols());
  }

  template <typename Derived>
  void accumulate(Var<Scalar> v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (n.has_grad) {
      n.grad += g;
    } else {
      n.grad = g;
      n.has_grad = true;
    }
  }

  template <typename Derived>
  void accumulate_block(Var<Scalar> v, Eigen::Index row, Eigen::Index col,
                        const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = Mat::Zero(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    n.grad.block(row, col, g.rows(), g.cols()) += g;
  }

  void backward(Var<Scalar> loss) {
    Node& root = nodes_[loss.id()];
    if (root.value.rows() != 1 || root.value.cols() != 1) {
      throw NumericError("backward: loss must be a 1x1 scalar, got " +
                         std::to_string(root.value.rows()) + "x" +
                         std::to_string(root.value.cols()));
    }
    for (auto& n : nodes_) n.has_grad = false;
    root.grad = Mat::Ones(1, 1);
    root.has_grad = true;
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.has_grad || !n.backward) continue;
      // The callback may append to accumulators of earlier nodes only, so
      // `n` stays valid.
      n.backward(*this, n.grad);
    }
  }

  // Names the region of the graph being built; appears in NumericError text.
  class Scope {
   public:
    Scope(Graph& g, std::string name) : g_(g) { g_.scopes_.push_back(std::move(name)); }
    ~Scope() { g_.scopes_.pop_back(); }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Graph& g_;
  };

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    bool has_grad = false;
    const char* op = "";
    Backward backward;
  };

  Var<Scalar> push(Mat value, const char* op, bool requires_grad, Backward backward) {
    if (!value.allFinite()) {
      std::string where;
      for (const auto& s : scopes_) where += s + "/";
      throw NumericError("non-finite value produced by '" + std::string(op) + "'" +
                         (where.empty() ? "" : " in " + where.substr(0, where.size() - 1)));
    }
    nodes_.push_back(Node{std::move(value), Mat(), requires_grad, false, op, std::move(backward)});
    return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::vector<Node> nodes_;
  std::vector<std::string> scopes_;
};

// ---------------------------------------------------------------------------
// Operations. Every function records one node with its exact vector-Jacobian
// product.

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions differ (" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + ")");
  }
  Matrix<S> out = a.value() * b.value();
  return a.graph().record(std::move(out), "matmul", {a, b}, [a, b](Graph<S>& g, const Matrix<S>& up) {
    if (g.requires_grad(a)) g.accumulate(a, up * g.value(b).transpose());
    if (g.requires_grad(b)) g.accumulate(b, g.value(a).transpose() * up);
  });
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("add: shape mismatch");
  return a.graph().record(a.value() + b.value(), "add", {a, b}, [a, b](Graph<S>& g, const Matrix<S>& up) {
    g.accumulate(a, up);
    g.accumulate(b, up);
  });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("sub: shape mismatch");
  return a.graph().record(a.value() - b.value(), "sub", {a, b}, [a, b](Graph<S>& g, const Matrix<S>& up) {
    g.accumulate(a, up);
    g.accumulate(b, -up);
  });
}

// a (n x m) + row (1 x m) broadcast over rows.
template <typename S>
Var<S> add_row(Var<S> a, Var<S> row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: bias shape mismatch");
  Matrix<S> out = a.value().rowwise() + row.value().row(0);
  return a.graph().record(std::move(out), "add_row", {a, row}, [a, row](Graph<S>& g, const Matrix<S>& up) {
    g.accumulate(a, up);
    g.accumulate(row, up.colwise().sum());
  });
}

template <typename S>
Var<S> scale(Var<S> a, S factor) {
  return a.graph().record(a.value() * factor, "scale", {a}, [a, factor](Graph<S>& g, const Matrix<S>& up) {
    g.accumulate(a, up * factor);
  });
}

template <typename S>
Var<S> hadamard(Var<S> a, Var<S> b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("hadamard: shape mismatch");
  return a.graph().record(a.value().cwiseProduct(b.value()), "hadamard", {a, b},
                          [a, b](Graph<S>& g, const Matrix<S>& up) {
                            if (g.requires_grad(a)) g.accumulate(a, up.cwiseProduct(g.value(b)));
                            if (g.requires_grad(b)) g.accumulate(b, up.cwiseProduct(g.value(a)));
                          });
}

template <typename S>
Var<S> operator+(Var<S> a, Var<S> b) { return add(a, b); }
template <typename S>
Var<S> operator-(Var<S> a, Var<S> b) { return sub(a, b); }
template <typename S>
Var<S> operator*(Var<S> a, Var<S> b) { return matmul(a, b); }
template <typename S>
Var<S> operator*(S factor, Var<S> a) { return scale(a, factor); }

template <typename S>
Var<S> relu(Var<S> a) {
  return a.graph().record(a.value().cwiseMax(S(0)), "relu", {a}, [a](Graph<S>& g, const Matrix<S>& up) {
    g.accumulate(a, (g.value(a).array() > S(0)).select(up, S(0)));
  });
}

template <typename S>
Var<S> softplus(Var<S> a) {
  Matrix<S> out = a.value().unaryExpr([](S x) {
    return x > S(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  });
  return a.graph().record(std::move(out), "softplus", {a}, [a](Graph<S>& g, const Matrix<S>& up) {
    Matrix<S> sig = g.value(a).unaryExpr([](S x) { return S(1) / (S(1) + std::exp(-x)); });
    g.accumulate(a, up.cwiseProduct(sig));
  });
}

template <typename S>
Var<S> sin(Var<S> a) {
  return a.graph().record(a.value().array().sin().matrix(), "sin", {a}, [a](Graph<S>& g, const Matrix<S>& up) {
    g.accumulate(a, up.cwiseProduct(g.value(a).array().cos().matrix()));
  });
}

template <typename S>
Var<S> cos(Var<S> a) {
  return a.graph().record(a.value().array().cos().matrix(), "cos", {a}, [a](Graph<S>& g, const Matrix<S>& up) {
    g.accumulate(a, -up.cwiseProduct(g.value(a).array().sin().matrix()));
  });
}

template <typename S>
Var<S> square(Var<S> a) {
  return a.graph().record(a.value().array().square().matrix(), "square", {a},
                          [a](Graph<S>& g, const Matrix<S>& up) {
                            g.accumulate(a, S(2) * up.cwiseProduct(g.value(a)));
                          });
}

template <typename S>
Var<S> abs(Var<S> a) {
  return a.graph().record(a.value().cwiseAbs(), "abs", {a}, [a](Graph<S>& g, const Matrix<S>& up) {
    g.accumulate(a, up.cwiseProduct(g.value(a).unaryExpr([](S x) { return S((x > 0) - (x < 0)); })));
  });
}

template <typename S>
Var<S> sum(Var<S> a) {
  Matrix<S> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.graph().record(std::move(out), "sum", {a}, [a](Graph<S>& g, const Matrix<S>& up) {
    g.accumulate(a, Matrix<S>::Constant(g.value(a).rows(), g.value(a).cols(), up(0, 0)));
  });
}

template <typename S>
Var<S> transpose(Var<S> a) {
  return a.graph().record(a.value().transpose(), "transpose", {a}, [a](Graph<S>& g, const Matrix<S>& up) {
    g.accumulate(a, up.transpose());
  });
}

// Row-wise softmax.
template <typename S>
Var<S> softmax_rows(Var<S> a) {
  const Matrix<S>& x = a.value();
  Matrix<S> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S peak = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - peak).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  Matrix<S> saved = y;
  return a.graph().record(std::move(y), "softmax", {a}, [a, p = std::move(saved)](Graph<S>& g, const Matrix<S>& up) {
    Matrix<S> inner = up.cwiseProduct(p).rowwise().sum();
    g.accumulate(a, p.cwiseProduct(up - inner.replicate(1, up.cols())));
  });
}

// Layer normalisation over each row, with learned gain and bias rows.
template <typename S>
Var<S> layer_norm_rows(Var<S> x, Var<S> gain, Var<S> bias, S eps = S(1e-5)) {
  const Matrix<S>& v = x.value();
  const Eigen::Index n = v.cols();
  if (gain.cols() != n || bias.cols() != n) throw std::invalid_argument("layer_norm: parameter width mismatch");
  Matrix<S> xhat(v.rows(), n);
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(v.rows());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const S mean = v.row(r).mean();
    const S var = (v.row(r).array() - mean).square().mean();
    inv_std(r) = S(1) / std::sqrt(var + eps);
    xhat.row(r) = (v.row(r).array() - mean) * inv_std(r);
  }
  Matrix<S> y = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  y.rowwise() += bias.value().row(0);
  return x.graph().record(
      std::move(y), "layer_norm", {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph<S>& g, const Matrix<S>& up) {
        g.accumulate(gain, up.cwiseProduct(xhat).colwise().sum());
        g.accumulate(bias, up.colwise().sum());
        if (!g.requires_grad(x)) return;
        Matrix<S> gh = (up.array().rowwise() * g.value(gain).row(0).array()).matrix();
        const S width = static_cast<S>(gh.cols());
        Matrix<S> gx(gh.rows(), gh.cols());
        for (Eigen::Index r = 0; r < gh.rows(); ++r) {
          const S mean_g = gh.row(r).sum() / width;
          const S mean_gx = gh.row(r).dot(xhat.row(r)) / width;
          gx.row(r) = inv_std(r) * (gh.row(r).array() - mean_g - xhat.row(r).array() * mean_gx).matrix();
        }
        g.accumulate(x, gx);
      });
}

template <typename S>
Var<S> slice_cols(Var<S> a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::invalid_argument("slice_cols: out of range");
  return a.graph().record(a.value().middleCols(start, count), "slice_cols", {a},
                          [a, start](Graph<S>& g, const Matrix<S>& up) { g.accumulate_block(a, 0, start, up); });
}

template <typename S>
Var<S> slice_rows(Var<S> a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw std::invalid_argument("slice_rows: out of range");
  return a.graph().record(a.value().middleRows(start, count), "slice_rows", {a},
                          [a, start](Graph<S>& g, const Matrix<S>& up) { g.accumulate_block(a, start, 0, up); });
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts.front().rows()) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix<S> out(parts.front().rows(), cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().graph().record(std::move(out), "concat_cols", std::span<const Var<S>>(parts),
                                      [parts](Graph<S>& g, const Matrix<S>& up) {
                                        Eigen::Index at = 0;
                                        for (const auto& p : parts) {
                                          const Eigen::Index c = g.value(p).cols();
                                          g.accumulate(p, up.middleCols(at, c));
                                          at += c;
                                        }
                                      });
}

template <typename S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts.front().cols()) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix<S> out(rows, parts.front().cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return parts.front().graph().record(std::move(out), "concat_rows", std::span<const Var<S>>(parts),
                                      [parts](Graph<S>& g, const Matrix<S>& up) {
                                        Eigen::Index at = 0;
                                        for (const auto& p : parts) {
                                          const Eigen::Index r = g.value(p).rows();
                                          g.accumulate(p, up.middleRows(at, r));
                                          at += r;
                                        }
                                      });
}

// out[i] = a[index[i]]; repeated indices accumulate in backward.
template <typename S>
Var<S> gather_rows(Var<S> a, std::vector<int> index) {
  Matrix<S> out(static_cast<Eigen::Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= a.rows()) throw std::invalid_argument("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(index[i]);
  }
  return a.graph().record(std::move(out), "gather_rows", {a},
                          [a, index = std::move(index)](Graph<S>& g, const Matrix<S>& up) {
                            Matrix<S> ga = Matrix<S>::Zero(g.value(a).rows(), g.value(a).cols());
                            for (std::size_t i = 0; i < index.size(); ++i)
                              ga.row(index[i]) += up.row(static_cast<Eigen::Index>(i));
                            g.accumulate(a, ga);
                          });
}

// Applies a fixed matrix A to each consecutive block of A.cols() rows of x.
// x: (blocks * A.cols()) x c  ->  (blocks * A.rows()) x c.
template <typename S>
Var<S> block_left_multiply(const Matrix<S>& A, Var<S> x) {
  const Eigen::Index in = A.cols();
  const Eigen::Index outr = A.rows();
  if (in == 0 || x.rows() % in != 0) throw std::invalid_argument("block_left_multiply: rows not divisible by block size");
  const Eigen::Index blocks = x.rows() / in;
  Matrix<S> out(blocks * outr, x.cols());
  for (Eigen::Index b = 0; b < blocks; ++b) out.middleRows(b * outr, outr).noalias() = A * x.value().middleRows(b * in, in);
  return x.graph().record(std::move(out), "block_left_multiply", {x},
                          [A, x, blocks, in, outr](Graph<S>& g, const Matrix<S>& up) {
                            Matrix<S> gx(blocks * in, up.cols());
                            for (Eigen::Index b = 0; b < blocks; ++b)
                              gx.middleRows(b * in, in).noalias() = A.transpose() * up.middleRows(b * outr, outr);
                            g.accumulate(x, gx);
                          });
}

// Reinterprets the elements in row-major order with a new shape.
template <typename S>
Var<S> reshape(Var<S> a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.rows() * a.cols()) throw std::invalid_argument("reshape: element count mismatch");
  using RowMajor = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajor src = a.value();
  Matrix<S> out = Eigen::Map<RowMajor>(src.data(), rows, cols);
  return a.graph().record(std::move(out), "reshape", {a}, [a](Graph<S>& g, const Matrix<S>& up) {
    RowMajor u = up;
    Matrix<S> ga = Eigen::Map<RowMajor>(u.data(), g.value(a).rows(), g.value(a).cols());
    g.accumulate(a, ga);
  });
}

// Element-wise product with a fixed mask (used for dropout).
template <typename S>
Var<S> mask_multiply(Var<S> a, Matrix<S> mask) {
  if (mask.rows() != a.rows() || mask.cols() != a.cols()) throw std::invalid_argument("mask_multiply: shape mismatch");
  Matrix<S> out = a.value().cwiseProduct(mask);
  return a.graph().record(std::move(out), "mask_multiply", {a},
                          [a, mask = std::move(mask)](Graph<S>& g, const Matrix<S>& up) {
                            g.accumulate(a, up.cwiseProduct(mask));
                          });
}

// Sum of weights[i,j] * |a[i,j] - target[i,j]|.
template <typename S>
Var<S> weighted_l1(Var<S> a, Matrix<S> target, Matrix<S> weights) {
  if (target.rows() != a.rows() || target.cols() != a.cols() || weights.rows() != a.rows() ||
      weights.cols() != a.cols()) {
    throw std::invalid_argument("weighted_l1: shape mismatch");
  }
  Matrix<S> out(1, 1);
  out(0, 0) = weights.cwiseProduct((a.value() - target).cwiseAbs()).sum();
  return a.graph().record(
      std::move(out), "weighted_l1", {a},
      [a, target = std::move(target), weights = std::move(weights)](Graph<S>& g, const Matrix<S>& up) {
        Matrix<S> sign = (g.value(a) - target).unaryExpr([](S d) { return S((d > 0) - (d < 0)); });
        g.accumulate(a, up(0, 0) * weights.cwiseProduct(sign));
      });
}

// -log softmax(logits)[label] for a 1 x K row of logits.
template <typename S>
Var<S> cross_entropy(Var<S> logits, int label) {
  if (logits.rows() != 1) throw std::invalid_argument("cross_entropy: expected a single row of logits");
  if (label < 0 || label >= logits.cols()) {
    throw std::out_of_range("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                            std::to_string(logits.cols()) + ")");
  }
  const auto& z = logits.value();
  const S peak = z.maxCoeff();
  const S lse = peak + std::log((z.array() - peak).exp().sum());
  Matrix<S> out(1, 1);
  out(0, 0) = lse - z(0, label);
  return logits.graph().record(std::move(out), "cross_entropy", {logits},
                               [logits, label, lse](Graph<S>& g, const Matrix<S>& up) {
                                 Matrix<S> p = (g.value(logits).array() - lse).exp().matrix();
                                 p(0, label) -= S(1);
                                 g.accumulate(logits, up(0, 0) * p);
                               });
}

// ---------------------------------------------------------------------------

template <typename S>
struct ValueAndGrad {
  S value;
  std::vector<Matrix<S>> gradients;
};

// Evaluates `computation(graph, variables)` and returns its scalar value with
// the gradient for every entry of `parameters`.
template <typename S, typename Computation>
ValueAndGrad<S> value_and_grad(Computation&& computation, std::span<const Matrix<S>> parameters) {
  Graph<S> g;
  std::vector<Var<S>> vars;
  vars.reserve(parameters.size());
  for (const auto& p : parameters) vars.push_back(g.variable(p));
  Var<S> loss = computation(g, std::span<const Var<S>>(vars));
  g.backward(loss);
  ValueAndGrad<S> result{loss.value()(0, 0), {}};
  result.gradients.reserve(vars.size());
  for (const auto& v : vars) result.gradients.push_back(g.grad(v));
  return result;
}

}  // namespace handmask
