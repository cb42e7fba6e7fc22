// Copyright 2026 The stck Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor with optional gradient storage. Tensors are cheap
// shared handles (aliasing copies, like Eigen::Ref semantics for ownership):
// value data is immutable by convention after an op constructs it, gradients
// accumulate in place during reverse passes.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace stck {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};
struct CorruptionError : std::runtime_error {
  explicit CorruptionError(const std::string& msg) : std::runtime_error("corruption error: " + msg) {}
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? " x " : "") << s[i];
  os << "]";
  return os.str();
}

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

template <typename Scalar>
using MatrixR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorC = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using ArrayC = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using MatMap = Eigen::Map<MatrixR<Scalar>>;
template <typename Scalar>
using CMatMap = Eigen::Map<const MatrixR<Scalar>>;
template <typename Scalar>
using VecMap = Eigen::Map<VectorC<Scalar>>;
template <typename Scalar>
using CVecMap = Eigen::Map<const VectorC<Scalar>>;
template <typename Scalar>
using ArrMap = Eigen::Map<ArrayC<Scalar>>;
template <typename Scalar>
using CArrMap = Eigen::Map<const ArrayC<Scalar>>;
// Row-strided view, e.g. one attention head inside a [len, S, M] tensor.
template <typename Scalar>
using StridedMap = Eigen::Map<MatrixR<Scalar>, 0, Eigen::OuterStride<>>;
template <typename Scalar>
using CStridedMap = Eigen::Map<const MatrixR<Scalar>, 0, Eigen::OuterStride<>>;

/// Dense n-dimensional array of Scalar in contiguous row-major order.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = std::move(shape);
    t.s_->data = ArrayC<Scalar>::Zero(shape_numel(t.s_->shape));
    return t;
  }

  static Tensor full(Shape shape, Scalar v) {
    Tensor t = zeros(std::move(shape));
    t.s_->data.setConstant(v);
    return t;
  }

  static Tensor scalar(Scalar v) { return full({1}, v); }

  static Tensor from_data(Shape shape, std::vector<Scalar> values) {
    if (shape_numel(shape) != static_cast<Index>(values.size()))
      throw DimensionError("from_data: " + shape_str(shape) + " needs " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    Tensor t = zeros(std::move(shape));
    for (Index i = 0; i < t.numel(); ++i) t.s_->data[i] = values[static_cast<size_t>(i)];
    return t;
  }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  int rank() const { return static_cast<int>(s_->shape.size()); }
  Index dim(int i) const { return s_->shape[static_cast<size_t>(i)]; }
  Index numel() const { return s_->data.size(); }

  Scalar* data() { return s_->data.data(); }
  const Scalar* data() const { return s_->data.data(); }

  Scalar& operator()(Index i) { return s_->data[i]; }
  Scalar operator()(Index i) const { return s_->data[i]; }
  Scalar& operator()(Index i, Index j) { return s_->data[i * dim(1) + j]; }
  Scalar operator()(Index i, Index j) const { return s_->data[i * dim(1) + j]; }
  Scalar& operator()(Index i, Index j, Index k) { return s_->data[(i * dim(1) + j) * dim(2) + k]; }
  Scalar operator()(Index i, Index j, Index k) const {
    return s_->data[(i * dim(1) + j) * dim(2) + k];
  }
  Scalar& operator()(Index i, Index j, Index k, Index l) {
    return s_->data[((i * dim(1) + j) * dim(2) + k) * dim(3) + l];
  }
  Scalar operator()(Index i, Index j, Index k, Index l) const {
    return s_->data[((i * dim(1) + j) * dim(2) + k) * dim(3) + l];
  }

  VecMap<Scalar> vec() { return VecMap<Scalar>(data(), numel()); }
  CVecMap<Scalar> vec() const { return CVecMap<Scalar>(data(), numel()); }
  ArrMap<Scalar> arr() { return ArrMap<Scalar>(data(), numel()); }
  CArrMap<Scalar> arr() const { return CArrMap<Scalar>(data(), numel()); }

  /// Rank-2 matrix view; requires rank() == 2.
  MatMap<Scalar> mat() {
    require_rank(2, "mat");
    return MatMap<Scalar>(data(), dim(0), dim(1));
  }
  CMatMap<Scalar> mat() const {
    require_rank(2, "mat");
    return CMatMap<Scalar>(data(), dim(0), dim(1));
  }

  /// View as [numel/last, last]: collapses all leading axes. Valid for rank >= 1.
  MatMap<Scalar> rows_by_last() {
    Index last = dim(rank() - 1);
    return MatMap<Scalar>(data(), numel() / last, last);
  }
  CMatMap<Scalar> rows_by_last() const {
    Index last = dim(rank() - 1);
    return CMatMap<Scalar>(data(), numel() / last, last);
  }

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool b = true) {
    s_->requires_grad = b;
    return *this;
  }
  /// True when this tensor participates in the current recorded graph,
  /// either as a differentiable leaf or as a recorded op output.
  bool tracked() const { return s_->tracked || s_->requires_grad; }
  void mark_tracked() { s_->tracked = true; }
  bool grad_needed() const { return s_->requires_grad || s_->tracked; }

  bool has_grad() const { return s_->grad.size() == numel(); }
  void ensure_grad() {
    if (!has_grad()) s_->grad = ArrayC<Scalar>::Zero(numel());
  }
  void zero_grad() {
    if (has_grad()) s_->grad.setZero();
  }
  void drop_grad() { s_->grad.resize(0); }

  VecMap<Scalar> grad_vec() {
    ensure_grad();
    return VecMap<Scalar>(s_->grad.data(), numel());
  }
  ArrMap<Scalar> grad_arr() {
    ensure_grad();
    return ArrMap<Scalar>(s_->grad.data(), numel());
  }
  MatMap<Scalar> grad_mat() {
    ensure_grad();
    require_rank(2, "grad_mat");
    return MatMap<Scalar>(s_->grad.data(), dim(0), dim(1));
  }
  MatMap<Scalar> grad_rows_by_last() {
    ensure_grad();
    Index last = dim(rank() - 1);
    return MatMap<Scalar>(s_->grad.data(), numel() / last, last);
  }

  /// Deep copy of values (grad and flags are not copied).
  Tensor clone() const {
    Tensor t = zeros(shape());
    t.s_->data = s_->data;
    return t;
  }

  /// Deep copy reinterpreted with a new shape of equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw DimensionError("reshape " + shape_str(this->shape()) + " -> " + shape_str(shape));
    Tensor t = clone();
    t.s_->shape = std::move(shape);
    return t;
  }

  /// Identity check: do two handles share storage?
  bool same_storage(const Tensor& o) const { return s_ == o.s_; }

 private:
  struct Storage {
    Shape shape;
    ArrayC<Scalar> data;
    ArrayC<Scalar> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool tracked = false;
  };

  void require_rank(int r, const char* what) const {
    if (rank() != r)
      throw DimensionError(std::string(what) + ": expected rank " + std::to_string(r) +
                           ", tensor is " + shape_str(shape()));
  }

  std::shared_ptr<Storage> s_;
};

}  // namespace stck
