#include "revcd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace revcd {

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool trainable) {
  require_finite(value, "leaf");
  Node n;
  n.value = std::move(value);
  n.needs_grad = recording_ && trainable;
  n.trainable = trainable;
  nodes_.push_back(std::move(n));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backprop backprop, const char* op) {
  require_finite(value, op);
  Node n;
  n.value = std::move(value);
  if (recording_) {
    for (const auto& in : inputs) {
      if (in.tape != this) throw ShapeError(std::string(op) + ": input from a different tape");
      n.needs_grad = n.needs_grad || nodes_[in.id].needs_grad;
    }
    if (n.needs_grad) n.backprop = std::move(backprop);
  }
  nodes_.push_back(std::move(n));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
void Tape<T>::accumulate(Var<T> v, Tensor<T> g) {
  Node& n = nodes_[v.id];
  if (!n.needs_grad) return;
  if (g.dims() != n.value.dims())
    throw ShapeError("adjoint dims " + dims_to_string(g.dims()) + " differ from value dims " +
                     dims_to_string(n.value.dims()));
  if (n.grad.empty()) {
    n.grad = std::move(g);
    return;
  }
  auto dst = n.grad.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
void Tape<T>::truncate(std::size_t n) {
  if (n < nodes_.size()) nodes_.erase(nodes_.begin() + static_cast<std::ptrdiff_t>(n), nodes_.end());
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape != this) throw ShapeError("backward: loss belongs to a different tape");
  if (nodes_[loss.id].value.size() != 1)
    throw ShapeError("backward: loss must be a scalar, got dims " + dims_to_string(nodes_[loss.id].value.dims()));
  for (auto& n : nodes_) n.grad = Tensor<T>();
  if (nodes_[loss.id].needs_grad) nodes_[loss.id].grad = Tensor<T>(nodes_[loss.id].value.dims(), T(1));
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.backprop) continue;
    n.backprop(*this, n.grad);
  }
  for (auto& n : nodes_)
    if (n.trainable && n.grad.empty()) n.grad = Tensor<T>(n.value.dims(), T(0));
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Var<T> v) const {
  return nodes_[v.id].grad;
}

namespace ad {
namespace {

template <typename T>
void require_same_dims(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.dims() != b.dims())
    throw ShapeError(std::string(op) + ": dims differ " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
}

template <typename T>
void require_matrix(const Tensor<T>& a, const char* op) {
  if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + dims_to_string(a.dims()));
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  auto out = kernels::matmul(a.value(), b.value());
  return tape.push(std::move(out), {a, b},
                   [a, b](Tape<T>& tp, const Tensor<T>& g) {
                     if (tp.needs_grad(a)) tp.accumulate(a, kernels::matmul_nt(g, tp.value(b)));
                     if (tp.needs_grad(b)) tp.accumulate(b, kernels::matmul_tn(tp.value(a), g));
                   },
                   "matmul");
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_dims(a.value(), b.value(), "add");
  auto out = kernels::elementwise(kernels::Elementwise::add, a.value(), b.value());
  return a.tape->push(std::move(out), {a, b},
                      [a, b](Tape<T>& tp, const Tensor<T>& g) {
                        tp.accumulate(a, g);
                        tp.accumulate(b, g);
                      },
                      "add");
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_dims(a.value(), b.value(), "sub");
  auto out = kernels::elementwise(kernels::Elementwise::sub, a.value(), b.value());
  return a.tape->push(std::move(out), {a, b},
                      [a, b](Tape<T>& tp, const Tensor<T>& g) {
                        tp.accumulate(a, g);
                        if (tp.needs_grad(b)) tp.accumulate(b, kernels::scale(g, T(-1)));
                      },
                      "sub");
}

template <typename T>
Var<T> hadamard(Var<T> a, Var<T> b) {
  require_same_dims(a.value(), b.value(), "hadamard");
  auto out = kernels::elementwise(kernels::Elementwise::hadamard, a.value(), b.value());
  return a.tape->push(std::move(out), {a, b},
                      [a, b](Tape<T>& tp, const Tensor<T>& g) {
                        using kernels::Elementwise;
                        if (tp.needs_grad(a)) tp.accumulate(a, kernels::elementwise(Elementwise::hadamard, g, tp.value(b)));
                        if (tp.needs_grad(b)) tp.accumulate(b, kernels::elementwise(Elementwise::hadamard, g, tp.value(a)));
                      },
                      "hadamard");
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  return a.tape->push(kernels::add_scalar(a.value(), s), {a},
                      [a](Tape<T>& tp, const Tensor<T>& g) { tp.accumulate(a, g); }, "add_scalar");
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  return a.tape->push(kernels::scale(a.value(), s), {a},
                      [a, s](Tape<T>& tp, const Tensor<T>& g) { tp.accumulate(a, kernels::scale(g, s)); },
                      "scale");
}

template <typename T>
Var<T> relu(Var<T> a) {
  return a.tape->push(kernels::relu(a.value()), {a},
                      [a](Tape<T>& tp, const Tensor<T>& g) {
                        Tensor<T> ga = g;
                        auto x = tp.value(a).data();
                        auto d = ga.data();
                        for (std::size_t i = 0; i < d.size(); ++i)
                          if (!(x[i] > T(0))) d[i] = T(0);
                        tp.accumulate(a, std::move(ga));
                      },
                      "relu");
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  const auto& xv = x.value();
  require_matrix(xv, "add_bias");
  if (bias.value().size() != xv.cols())
    throw ShapeError("add_bias: bias dims " + dims_to_string(bias.dims()) + " do not match width " +
                     std::to_string(xv.cols()));
  Tensor<T> out = xv;
  auto b = bias.value().data();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += b[c];
  }
  return x.tape->push(std::move(out), {x, bias},
                      [x, bias](Tape<T>& tp, const Tensor<T>& g) {
                        tp.accumulate(x, g);
                        if (tp.needs_grad(bias)) {
                          Tensor<T> gb(tp.value(bias).dims(), T(0));
                          auto d = gb.data();
                          for (std::size_t r = 0; r < g.rows(); ++r) {
                            auto row = g.row(r);
                            for (std::size_t c = 0; c < row.size(); ++c) d[c] += row[c];
                          }
                          tp.accumulate(bias, std::move(gb));
                        }
                      },
                      "add_bias");
}

template <typename T>
Var<T> row_scale(Var<T> x, const Tensor<T>& coeff) {
  const auto& xv = x.value();
  if (coeff.size() != xv.rows())
    throw ShapeError("row_scale: " + std::to_string(coeff.size()) + " coefficients for " +
                     std::to_string(xv.rows()) + " rows");
  auto apply = [](const Tensor<T>& src, const Tensor<T>& k) {
    Tensor<T> out = src;
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (auto& v : out.row(r)) v *= k[r];
    return out;
  };
  return x.tape->push(apply(xv, coeff), {x},
                      [x, coeff, apply](Tape<T>& tp, const Tensor<T>& g) { tp.accumulate(x, apply(g, coeff)); },
                      "row_scale");
}

template <typename T>
Var<T> mul_const(Var<T> x, const Tensor<T>& c) {
  require_same_dims(x.value(), c, "mul_const");
  using kernels::Elementwise;
  return x.tape->push(kernels::elementwise(Elementwise::hadamard, x.value(), c), {x},
                      [x, c](Tape<T>& tp, const Tensor<T>& g) {
                        tp.accumulate(x, kernels::elementwise(Elementwise::hadamard, g, c));
                      },
                      "mul_const");
}

template <typename T>
Var<T> sum(Var<T> x) {
  T total = T(0);
  for (auto v : x.value().data()) total += v;
  return x.tape->push(Tensor<T>::scalar(total), {x},
                      [x](Tape<T>& tp, const Tensor<T>& g) { tp.accumulate(x, Tensor<T>(tp.value(x).dims(), g[0])); },
                      "sum");
}

template <typename T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T(1) / static_cast<T>(x.value().size()));
}

template <typename T>
Var<T> reshape(Var<T> x, Dims dims) {
  return x.tape->push(x.value().reshaped(std::move(dims)), {x},
                      [x](Tape<T>& tp, const Tensor<T>& g) { tp.accumulate(x, g.reshaped(tp.value(x).dims())); },
                      "reshape");
}

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>& stats, bool training) {
  const auto& xv = x.value();
  require_matrix(xv, "batch_norm");
  const std::size_t m = xv.rows();
  const std::size_t n = xv.cols();
  if (gamma.value().size() != n || beta.value().size() != n || stats.running_mean.size() != n)
    throw ShapeError("batch_norm: parameter width does not match input width " + std::to_string(n));
  if (training && m < 2) throw ShapeError("batch_norm: training mode needs at least 2 rows, got " + std::to_string(m));

  const T eps = static_cast<T>(kBatchNormEps);
  Tensor<T> inv({n});
  Tensor<T> xhat({m, n});
  if (training) {
    Tensor<T> mu({n}, T(0));
    Tensor<T> var({n}, T(0));
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) mu[c] += xv(r, c);
    for (std::size_t c = 0; c < n; ++c) mu[c] /= static_cast<T>(m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        const T d = xv(r, c) - mu[c];
        var[c] += d * d;
      }
    const T momentum = static_cast<T>(kBatchNormMomentum);
    for (std::size_t c = 0; c < n; ++c) {
      const T unbiased = var[c] / static_cast<T>(m - 1);
      var[c] /= static_cast<T>(m);
      inv[c] = T(1) / std::sqrt(var[c] + eps);
      stats.running_mean[c] = momentum * stats.running_mean[c] + (T(1) - momentum) * mu[c];
      stats.running_var[c] = momentum * stats.running_var[c] + (T(1) - momentum) * unbiased;
    }
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) xhat(r, c) = (xv(r, c) - mu[c]) * inv[c];
  } else {
    for (std::size_t c = 0; c < n; ++c) inv[c] = T(1) / std::sqrt(stats.running_var[c] + eps);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) xhat(r, c) = (xv(r, c) - stats.running_mean[c]) * inv[c];
  }

  Tensor<T> out({m, n});
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out(r, c) = gv[c] * xhat(r, c) + bv[c];

  return x.tape->push(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv = std::move(inv), training](Tape<T>& tp, const Tensor<T>& g) {
        const std::size_t m = g.rows();
        const std::size_t n = g.cols();
        const auto& gv = tp.value(gamma);
        Tensor<T> dgamma({n}, T(0));
        Tensor<T> dbeta({n}, T(0));
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) {
            dgamma[c] += g(r, c) * xhat(r, c);
            dbeta[c] += g(r, c);
          }
        if (tp.needs_grad(x)) {
          Tensor<T> dx({m, n});
          if (training) {
            // dxhat = g * gamma; dx = inv/m * (m*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
            for (std::size_t c = 0; c < n; ++c) {
              T s1 = T(0), s2 = T(0);
              for (std::size_t r = 0; r < m; ++r) {
                const T d = g(r, c) * gv[c];
                s1 += d;
                s2 += d * xhat(r, c);
              }
              const T k = inv[c] / static_cast<T>(m);
              for (std::size_t r = 0; r < m; ++r)
                dx(r, c) = k * (static_cast<T>(m) * g(r, c) * gv[c] - s1 - xhat(r, c) * s2);
            }
          } else {
            for (std::size_t r = 0; r < m; ++r)
              for (std::size_t c = 0; c < n; ++c) dx(r, c) = g(r, c) * gv[c] * inv[c];
          }
          tp.accumulate(x, std::move(dx));
        }
        tp.accumulate(gamma, std::move(dgamma));
        tp.accumulate(beta, std::move(dbeta));
      },
      "batch_norm");
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta) {
  const auto& xv = x.value();
  require_matrix(xv, "layer_norm");
  const std::size_t m = xv.rows();
  const std::size_t n = xv.cols();
  if (gamma.value().size() != n || beta.value().size() != n)
    throw ShapeError("layer_norm: parameter width does not match input width " + std::to_string(n));
  const T eps = static_cast<T>(kLayerNormEps);
  Tensor<T> xhat({m, n});
  Tensor<T> inv({m});
  Tensor<T> out({m, n});
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t r = 0; r < m; ++r) {
    T mu = T(0);
    for (std::size_t c = 0; c < n; ++c) mu += xv(r, c);
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t c = 0; c < n; ++c) var += (xv(r, c) - mu) * (xv(r, c) - mu);
    var /= static_cast<T>(n);
    inv[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat(r, c) = (xv(r, c) - mu) * inv[r];
      out(r, c) = gv[c] * xhat(r, c) + bv[c];
    }
  }
  return x.tape->push(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv = std::move(inv)](Tape<T>& tp, const Tensor<T>& g) {
        const std::size_t m = g.rows();
        const std::size_t n = g.cols();
        const auto& gv = tp.value(gamma);
        Tensor<T> dgamma({n}, T(0));
        Tensor<T> dbeta({n}, T(0));
        Tensor<T> dx({m, n});
        for (std::size_t r = 0; r < m; ++r) {
          T s1 = T(0), s2 = T(0);
          for (std::size_t c = 0; c < n; ++c) {
            dgamma[c] += g(r, c) * xhat(r, c);
            dbeta[c] += g(r, c);
            const T d = g(r, c) * gv[c];
            s1 += d;
            s2 += d * xhat(r, c);
          }
          const T k = inv[r] / static_cast<T>(n);
          for (std::size_t c = 0; c < n; ++c)
            dx(r, c) = k * (static_cast<T>(n) * g(r, c) * gv[c] - s1 - xhat(r, c) * s2);
        }
        tp.accumulate(x, std::move(dx));
        tp.accumulate(gamma, std::move(dgamma));
        tp.accumulate(beta, std::move(dbeta));
      },
      "layer_norm");
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t group, std::size_t heads, std::vector<T>* weights) {
  const auto& qv = q.value();
  require_matrix(qv, "attention");
  require_same_dims(qv, k.value(), "attention");
  require_same_dims(qv, v.value(), "attention");
  const std::size_t rows = qv.rows();
  const std::size_t d = qv.cols();
  if (group == 0 || rows % group != 0)
    throw ShapeError("attention: " + std::to_string(rows) + " rows not divisible into groups of " + std::to_string(group));
  if (heads == 0 || d % heads != 0)
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  const std::size_t batch = rows / group;
  const std::size_t dh = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  const auto& kv = k.value();
  const auto& vv = v.value();

  // probs laid out [b][h][i][j]
  std::vector<T> probs(batch * heads * group * group);
  Tensor<T> out({rows, d}, T(0));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      T* p = probs.data() + ((b * heads + h) * group) * group;
      for (std::size_t i = 0; i < group; ++i) {
        const std::size_t qi = b * group + i;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < group; ++j) {
          const std::size_t kj = b * group + j;
          T s = T(0);
          for (std::size_t c = 0; c < dh; ++c) s += qv(qi, h * dh + c) * kv(kj, h * dh + c);
          s *= inv_sqrt;
          p[i * group + j] = s;
          mx = std::max(mx, s);
        }
        T z = T(0);
        for (std::size_t j = 0; j < group; ++j) {
          p[i * group + j] = std::exp(p[i * group + j] - mx);
          z += p[i * group + j];
        }
        for (std::size_t j = 0; j < group; ++j) p[i * group + j] /= z;
        for (std::size_t j = 0; j < group; ++j) {
          const T w = p[i * group + j];
          const std::size_t vj = b * group + j;
          for (std::size_t c = 0; c < dh; ++c) out(qi, h * dh + c) += w * vv(vj, h * dh + c);
        }
      }
    }
  if (weights) *weights = probs;

  return q.tape->push(
      std::move(out), {q, k, v},
      [q, k, v, group, heads, probs = std::move(probs)](Tape<T>& tp, const Tensor<T>& g) {
        const auto& qv = tp.value(q);
        const auto& kv = tp.value(k);
        const auto& vv = tp.value(v);
        const std::size_t rows = qv.rows();
        const std::size_t d = qv.cols();
        const std::size_t batch = rows / group;
        const std::size_t dh = d / heads;
        const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
        Tensor<T> dq({rows, d}, T(0));
        Tensor<T> dk({rows, d}, T(0));
        Tensor<T> dv({rows, d}, T(0));
        std::vector<T> dp(group * group);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t h = 0; h < heads; ++h) {
            const T* p = probs.data() + ((b * heads + h) * group) * group;
            // dV = P^T dO ; dP = dO V^T
            for (std::size_t i = 0; i < group; ++i) {
              const std::size_t oi = b * group + i;
              for (std::size_t j = 0; j < group; ++j) {
                const std::size_t vj = b * group + j;
                T s = T(0);
                for (std::size_t c = 0; c < dh; ++c) {
                  dv(vj, h * dh + c) += p[i * group + j] * g(oi, h * dh + c);
                  s += g(oi, h * dh + c) * vv(vj, h * dh + c);
                }
                dp[i * group + j] = s;
              }
            }
            // dS = P * (dP - rowsum(dP * P))
            for (std::size_t i = 0; i < group; ++i) {
              T dot = T(0);
              for (std::size_t j = 0; j < group; ++j) dot += dp[i * group + j] * p[i * group + j];
              for (std::size_t j = 0; j < group; ++j) dp[i * group + j] = p[i * group + j] * (dp[i * group + j] - dot);
            }
            for (std::size_t i = 0; i < group; ++i) {
              const std::size_t qi = b * group + i;
              for (std::size_t j = 0; j < group; ++j) {
                const std::size_t kj = b * group + j;
                const T ds = dp[i * group + j] * inv_sqrt;
                for (std::size_t c = 0; c < dh; ++c) {
                  dq(qi, h * dh + c) += ds * kv(kj, h * dh + c);
                  dk(kj, h * dh + c) += ds * qv(qi, h * dh + c);
                }
              }
            }
          }
        tp.accumulate(q, std::move(dq));
        tp.accumulate(k, std::move(dk));
        tp.accumulate(v, std::move(dv));
      },
      "attention");
}

template <typename T>
Var<T> group_mean(Var<T> x, std::size_t group) {
  const auto& xv = x.value();
  require_matrix(xv, "group_mean");
  if (group == 0 || xv.rows() % group != 0)
    throw ShapeError("group_mean: " + std::to_string(xv.rows()) + " rows not divisible by " + std::to_string(group));
  const std::size_t batch = xv.rows() / group;
  const std::size_t d = xv.cols();
  Tensor<T> out({batch, d}, T(0));
  const T w = T(1) / static_cast<T>(group);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c) out(r / group, c) += xv(r, c);
  for (auto& val : out.data()) val *= w;
  return x.tape->push(std::move(out), {x},
                      [x, group, w](Tape<T>& tp, const Tensor<T>& g) {
                        Tensor<T> dx(tp.value(x).dims());
                        for (std::size_t r = 0; r < dx.rows(); ++r)
                          for (std::size_t c = 0; c < dx.cols(); ++c) dx(r, c) = g(r / group, c) * w;
                        tp.accumulate(x, std::move(dx));
                      },
                      "group_mean");
}

template <typename T>
Var<T> tile_rows(Var<T> x, std::size_t reps) {
  const auto& xv = x.value();
  require_matrix(xv, "tile_rows");
  if (reps == 0) throw ShapeError("tile_rows: reps must be positive");
  std::vector<T> data;
  data.reserve(xv.size() * reps);
  for (std::size_t i = 0; i < reps; ++i) data.insert(data.end(), xv.data().begin(), xv.data().end());
  return x.tape->push(Tensor<T>({xv.rows() * reps, xv.cols()}, std::move(data)), {x},
                      [x, reps](Tape<T>& tp, const Tensor<T>& g) {
                        const std::size_t block = tp.value(x).size();
                        Tensor<T> dx(tp.value(x).dims(), T(0));
                        auto src = g.data();
                        auto dst = dx.data();
                        for (std::size_t i = 0; i < reps; ++i)
                          for (std::size_t j = 0; j < block; ++j) dst[j] += src[i * block + j];
                        tp.accumulate(x, std::move(dx));
                      },
                      "tile_rows");
}

template <typename T>
Var<T> replace_rows(Var<T> x, Var<T> fill, std::span<const std::uint8_t> mask) {
  const auto& xv = x.value();
  require_matrix(xv, "replace_rows");
  if (fill.value().size() != xv.cols())
    throw ShapeError("replace_rows: fill dims " + dims_to_string(fill.dims()) + " do not match width " +
                     std::to_string(xv.cols()));
  if (mask.size() != xv.rows())
    throw ShapeError("replace_rows: mask length " + std::to_string(mask.size()) + " for " + std::to_string(xv.rows()) +
                     " rows");
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  Tensor<T> out = xv;
  auto f = fill.value().data();
  for (std::size_t r = 0; r < out.rows(); ++r)
    if (m[r]) std::copy(f.begin(), f.end(), out.row(r).begin());
  return x.tape->push(std::move(out), {x, fill},
                      [x, fill, m = std::move(m)](Tape<T>& tp, const Tensor<T>& g) {
                        Tensor<T> dx = g;
                        Tensor<T> dfill(tp.value(fill).dims(), T(0));
                        for (std::size_t r = 0; r < g.rows(); ++r) {
                          if (!m[r]) continue;
                          auto row = dx.row(r);
                          for (std::size_t c = 0; c < row.size(); ++c) {
                            dfill[c] += row[c];
                            row[c] = T(0);
                          }
                        }
                        tp.accumulate(x, std::move(dx));
                        tp.accumulate(fill, std::move(dfill));
                      },
                      "replace_rows");
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const std::size_t> labels) {
  const auto& lv = logits.value();
  require_matrix(lv, "softmax_cross_entropy");
  const std::size_t m = lv.rows();
  const std::size_t c = lv.cols();
  if (labels.size() != m)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(m) +
                     " rows");
  Tensor<T> probs({m, c});
  T loss = T(0);
  for (std::size_t r = 0; r < m; ++r) {
    if (labels[r] >= c)
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(labels[r]) + " outside " + std::to_string(c) +
                       " classes");
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, lv(r, j));
    T z = T(0);
    for (std::size_t j = 0; j < c; ++j) z += std::exp(lv(r, j) - mx);
    const T lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) probs(r, j) = std::exp(lv(r, j) - lse);
    loss += lse - lv(r, labels[r]);
  }
  loss /= static_cast<T>(m);
  std::vector<std::size_t> y(labels.begin(), labels.end());
  return logits.tape->push(Tensor<T>::scalar(loss), {logits},
                           [logits, probs = std::move(probs), y = std::move(y)](Tape<T>& tp, const Tensor<T>& g) {
                             Tensor<T> d = probs;
                             const T k = g[0] / static_cast<T>(d.rows());
                             for (std::size_t r = 0; r < d.rows(); ++r) {
                               d(r, y[r]) -= T(1);
                               for (auto& val : d.row(r)) val *= k;
                             }
                             tp.accumulate(logits, std::move(d));
                           },
                           "softmax_cross_entropy");
}

#define REVCD_INSTANTIATE_AD(T)                                                                     \
  template Var<T> matmul(Var<T>, Var<T>);                                                           \
  template Var<T> add(Var<T>, Var<T>);                                                              \
  template Var<T> sub(Var<T>, Var<T>);                                                              \
  template Var<T> hadamard(Var<T>, Var<T>);                                                         \
  template Var<T> add_scalar(Var<T>, T);                                                            \
  template Var<T> scale(Var<T>, T);                                                                 \
  template Var<T> relu(Var<T>);                                                                     \
  template Var<T> add_bias(Var<T>, Var<T>);                                                         \
  template Var<T> row_scale(Var<T>, const Tensor<T>&);                                              \
  template Var<T> mul_const(Var<T>, const Tensor<T>&);                                              \
  template Var<T> sum(Var<T>);                                                                      \
  template Var<T> mean(Var<T>);                                                                     \
  template Var<T> reshape(Var<T>, Dims);                                                            \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, BatchNormStats<T>&, bool);                     \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>);                                               \
  template Var<T> attention(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t, std::vector<T>*);     \
  template Var<T> group_mean(Var<T>, std::size_t);                                                  \
  template Var<T> tile_rows(Var<T>, std::size_t);                                                   \
  template Var<T> replace_rows(Var<T>, Var<T>, std::span<const std::uint8_t>);                      \
  template Var<T> softmax_cross_entropy(Var<T>, std::span<const std::size_t>);

REVCD_INSTANTIATE_AD(float)
REVCD_INSTANTIATE_AD(double)
#undef REVCD_INSTANTIATE_AD

}  // namespace ad

template class Tape<float>;
template class Tape<double>;

}  // namespace revcd
