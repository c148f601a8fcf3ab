#include "revcd/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <sstream>

namespace revcd {

std::size_t dims_product(const Dims& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return dims.empty() ? 0 : n;
}

std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Dims dims, T fill) : dims_(std::move(dims)), data_(dims_product(dims_), fill) {
  for (auto d : dims_)
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + dims_to_string(dims_));
}

template <typename T>
Tensor<T>::Tensor(Dims dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
  for (auto d : dims_)
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + dims_to_string(dims_));
  if (dims_product(dims_) != data_.size())
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match dims " +
                     dims_to_string(dims_));
}

template <typename T>
Tensor<T> Tensor<T>::vector(std::initializer_list<T> values) {
  return Tensor({values.size()}, std::vector<T>(values));
}

template <typename T>
Tensor<T> Tensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows) {
  std::vector<T> data;
  const std::size_t n_cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != n_cols) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), n_cols}, std::move(data));
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of dims " + dims_to_string(dims_));
  return data_[0];
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Dims dims) const {
  return Tensor(std::move(dims), data_);
}

template <typename T>
Tensor<T> Tensor<T>::rows_subset(std::span<const std::size_t> idx) const {
  const std::size_t c = cols();
  std::vector<T> out;
  out.reserve(idx.size() * c);
  for (auto r : idx) {
    if (r >= rows()) throw ShapeError("row index " + std::to_string(r) + " out of range");
    auto src = row(r);
    out.insert(out.end(), src.begin(), src.end());
  }
  return Tensor({idx.size(), c}, std::move(out));
}

template <typename T>
void require_finite(const Tensor<T>& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite value produced by ") + what);
}

namespace kernels {
namespace {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<const RowMajor<T>> view(const Tensor<T>& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

template <typename T>
Eigen::Map<RowMajor<T>> view(Tensor<T>& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

void require_matrix(const Dims& d, const char* what) {
  if (d.size() != 2) throw ShapeError(std::string(what) + ": expected a matrix, got " + dims_to_string(d));
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a.dims(), "matmul");
  require_matrix(b.dims(), "matmul");
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dims differ " + dims_to_string(a.dims()) + " * " + dims_to_string(b.dims()));
  Tensor<T> out({a.rows(), b.cols()});
  view(out).noalias() = view(a) * view(b);
  return out;
}

template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a.dims(), "matmul_tn");
  require_matrix(b.dims(), "matmul_tn");
  if (a.rows() != b.rows())
    throw ShapeError("matmul_tn: row counts differ " + dims_to_string(a.dims()) + " / " + dims_to_string(b.dims()));
  Tensor<T> out({a.cols(), b.cols()});
  view(out).noalias() = view(a).transpose() * view(b);
  return out;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a.dims(), "matmul_nt");
  require_matrix(b.dims(), "matmul_nt");
  if (a.cols() != b.cols())
    throw ShapeError("matmul_nt: col counts differ " + dims_to_string(a.dims()) + " / " + dims_to_string(b.dims()));
  Tensor<T> out({a.rows(), b.rows()});
  view(out).noalias() = view(a) * view(b).transpose();
  return out;
}

template <typename T>
Tensor<T> elementwise(Elementwise op, const Tensor<T>& a, const Tensor<T>& b) {
  const bool scalar_b = b.size() == 1 && a.size() != 1;
  if (!scalar_b && a.dims() != b.dims())
    throw ShapeError("elementwise: dims differ " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
  Tensor<T> out(a.dims());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const T rhs = scalar_b ? y[0] : y[i];
    switch (op) {
      case Elementwise::add: o[i] = x[i] + rhs; break;
      case Elementwise::sub: o[i] = x[i] - rhs; break;
      case Elementwise::hadamard: o[i] = x[i] * rhs; break;
    }
  }
  return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  Tensor<T> out = a;
  for (auto& v : out.data()) v += s;
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out = a;
  for (auto& v : out.data()) v *= s;
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out = a;
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  return out;
}

#define REVCD_INSTANTIATE_KERNELS(T)                                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> matmul_tn(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> elementwise(Elementwise, const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                       \
  template Tensor<T> relu(const Tensor<T>&);

REVCD_INSTANTIATE_KERNELS(float)
REVCD_INSTANTIATE_KERNELS(double)
#undef REVCD_INSTANTIATE_KERNELS

}  // namespace kernels

template class Tensor<float>;
template class Tensor<double>;
template void require_finite(const Tensor<float>&, const char*);
template void require_finite(const Tensor<double>&, const char*);

}  // namespace revcd
