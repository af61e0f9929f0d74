#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "lesionseg/common.hpp"

namespace lesionseg {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor. All layers and ops in this library operate on these;
// heavy linear algebra maps the underlying buffer into Eigen.
template <typename S>
struct Tensor {
  Shape shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), S(0)) {}
  Tensor(Shape s, S fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}
  Tensor(Shape s, std::vector<S> values) : shape(std::move(s)), data(std::move(values)) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
      throw NumericError("tensor data size does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, S v) { return Tensor(std::move(s), v); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  S* ptr() { return data.data(); }
  const S* ptr() const { return data.data(); }

  S& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const S& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  S& at(int a, int b) { return data[static_cast<size_t>(a) * shape[1] + b]; }
  S& at(int a, int b, int c) {
    return data[(static_cast<size_t>(a) * shape[1] + b) * shape[2] + c];
  }
  S& at(int a, int b, int c, int d) {
    return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }
  const S& at(int a, int b) const { return data[static_cast<size_t>(a) * shape[1] + b]; }
  const S& at(int a, int b, int c) const {
    return data[(static_cast<size_t>(a) * shape[1] + b) * shape[2] + c];
  }
  const S& at(int a, int b, int c, int d) const {
    return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw NumericError("reshape " + shape_str(shape) + " -> " + shape_str(s));
    Tensor out;
    out.shape = std::move(s);
    out.data = data;
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

template <typename S>
using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapM = Eigen::Map<MatrixRM<S>>;
template <typename S>
using CMapM = Eigen::Map<const MatrixRM<S>>;

// Maps `rows x cols` of a contiguous buffer.
template <typename S>
MapM<S> as_matrix(Tensor<S>& t, int64_t rows, int64_t cols) {
  return MapM<S>(t.ptr(), rows, cols);
}
template <typename S>
CMapM<S> as_matrix(const Tensor<S>& t, int64_t rows, int64_t cols) {
  return CMapM<S>(t.ptr(), rows, cols);
}

}  // namespace lesionseg
