#include "revcd/optim.hpp"

#include <cmath>
#include <string>

namespace revcd {

template <typename T>
void Adam<T>::step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads) {
  if (params.size() != grads.size())
    throw ShapeError("adam: " + std::to_string(params.size()) + " params but " + std::to_string(grads.size()) +
                     " gradients");
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(p->dims(), T(0));
      v_.emplace_back(p->dims(), T(0));
    }
  }
  if (m_.size() != params.size()) throw ShapeError("adam: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->dims() != grads[i].dims() || m_[i].dims() != grads[i].dims())
      throw ShapeError("adam: gradient dims " + dims_to_string(grads[i].dims()) + " do not match parameter dims " +
                       dims_to_string(params[i]->dims()));
  }

  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  const T b1 = static_cast<T>(config_.beta1);
  const T b2 = static_cast<T>(config_.beta2);
  const T step_size = static_cast<T>(config_.lr / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(config_.eps);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = grads[i].data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      p[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_bc2) + eps);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace revcd
