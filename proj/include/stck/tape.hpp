// Copyright 2026 The stck Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation tape. Ops append one backward closure per
// recorded application, in execution order, so the list is topologically
// sorted by construction: replaying it in reverse propagates gradients from
// a scalar loss to every tensor that asked for them.

#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "stck/tensor.hpp"

namespace stck {

template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(BackwardFn fn) { nodes_.push_back(std::move(fn)); }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward in reverse
  /// order. Gradients accumulate into Tensor::grad of each participant;
  /// leaves created with requires_grad keep theirs for the caller.
  void backward(Tensor<Scalar> loss) {
    if (loss.numel() != 1)
      throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    loss.grad_vec()[0] += Scalar(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<BackwardFn> nodes_;
};

template <typename Scalar>
inline Tape<Scalar>*& active_tape() {
  thread_local Tape<Scalar>* tape = nullptr;
  return tape;
}

/// RAII activation of a tape on the current thread.
template <typename Scalar>
class TapeScope {
 public:
  explicit TapeScope(Tape<Scalar>& tape) : prev_(active_tape<Scalar>()) {
    active_tape<Scalar>() = &tape;
  }
  ~TapeScope() { active_tape<Scalar>() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Scalar>* prev_;
};

}  // namespace stck
