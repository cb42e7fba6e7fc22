// Copyright 2026 The stck Authors
// SPDX-License-Identifier: Apache-2.0
//
// Primitive tensor operations. Each op computes its forward result
// unconditionally (the value never depends on whether a tape is active) and,
// when a tape is active and an input participates in the graph, records one
// backward closure implementing the analytic vector-Jacobian product.
//
// Broadcasting is deliberately limited to bias_add over the last axis; every
// other shape agreement is explicit.

#pragma once

#include <cmath>
#include <vector>

#include "stck/random.hpp"
#include "stck/tape.hpp"
#include "stck/tensor.hpp"

namespace stck {

template <typename Scalar, typename Fn>
inline void record_if_tracked(Tensor<Scalar>& out, bool inputs_tracked, Fn&& fn) {
  auto* tape = active_tape<Scalar>();
  if (tape && inputs_tracked) {
    out.mark_tracked();
    tape->record(std::forward<Fn>(fn));
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Tensor<Scalar> matmul(Tensor<Scalar> a, Tensor<Scalar> b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  auto out = Tensor<Scalar>::zeros({a.dim(0), b.dim(1)});
  out.mat().noalias() = a.mat() * b.mat();
  record_if_tracked(out, a.tracked() || b.tracked(), [a, b, out]() mutable {
    if (!out.has_grad()) return;
    auto go = out.grad_mat();
    if (a.grad_needed()) a.grad_mat().noalias() += go * b.mat().transpose();
    if (b.grad_needed()) b.grad_mat().noalias() += a.mat().transpose() * go;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
inline void check_same_shape(Tensor<Scalar> a, Tensor<Scalar> b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <typename Scalar>
Tensor<Scalar> add(Tensor<Scalar> a, Tensor<Scalar> b) {
  check_same_shape(a, b, "add");
  auto out = Tensor<Scalar>::zeros(a.shape());
  out.arr() = a.arr() + b.arr();
  record_if_tracked(out, a.tracked() || b.tracked(), [a, b, out]() mutable {
    if (!out.has_grad()) return;
    if (a.grad_needed()) a.grad_arr() += out.grad_arr();
    if (b.grad_needed()) b.grad_arr() += out.grad_arr();
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> sub(Tensor<Scalar> a, Tensor<Scalar> b) {
  check_same_shape(a, b, "sub");
  auto out = Tensor<Scalar>::zeros(a.shape());
  out.arr() = a.arr() - b.arr();
  record_if_tracked(out, a.tracked() || b.tracked(), [a, b, out]() mutable {
    if (!out.has_grad()) return;
    if (a.grad_needed()) a.grad_arr() += out.grad_arr();
    if (b.grad_needed()) b.grad_arr() -= out.grad_arr();
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> mul(Tensor<Scalar> a, Tensor<Scalar> b) {
  check_same_shape(a, b, "mul");
  auto out = Tensor<Scalar>::zeros(a.shape());
  out.arr() = a.arr() * b.arr();
  record_if_tracked(out, a.tracked() || b.tracked(), [a, b, out]() mutable {
    if (!out.has_grad()) return;
    if (a.grad_needed()) a.grad_arr() += out.grad_arr() * b.arr();
    if (b.grad_needed()) b.grad_arr() += out.grad_arr() * a.arr();
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> scale(Tensor<Scalar> a, Scalar c) {
  auto out = Tensor<Scalar>::zeros(a.shape());
  out.arr() = a.arr() * c;
  record_if_tracked(out, a.tracked(), [a, out, c]() mutable {
    if (!out.has_grad()) return;
    if (a.grad_needed()) a.grad_arr() += out.grad_arr() * c;
  });
  return out;
}

/// x + b with b broadcast over the last axis (the one permitted broadcast).
template <typename Scalar>
Tensor<Scalar> bias_add(Tensor<Scalar> x, Tensor<Scalar> b) {
  if (b.rank() != 1 || b.dim(0) != x.dim(x.rank() - 1))
    throw DimensionError("bias_add: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  auto out = Tensor<Scalar>::zeros(x.shape());
  out.rows_by_last() = x.rows_by_last().rowwise() + b.vec().transpose();
  record_if_tracked(out, x.tracked() || b.tracked(), [x, b, out]() mutable {
    if (!out.has_grad()) return;
    if (x.grad_needed()) x.grad_arr() += out.grad_arr();
    if (b.grad_needed()) b.grad_vec() += out.grad_rows_by_last().colwise().sum().transpose();
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> relu(Tensor<Scalar> x) {
  auto out = Tensor<Scalar>::zeros(x.shape());
  out.arr() = x.arr().max(Scalar(0));
  record_if_tracked(out, x.tracked(), [x, out]() mutable {
    if (!out.has_grad() || !x.grad_needed()) return;
    x.grad_arr() += out.grad_arr() * (x.arr() > Scalar(0)).template cast<Scalar>();
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> sigmoid(Tensor<Scalar> x) {
  auto out = Tensor<Scalar>::zeros(x.shape());
  out.arr() = Scalar(1) / (Scalar(1) + (-x.arr()).exp());
  record_if_tracked(out, x.tracked(), [x, out]() mutable {
    if (!out.has_grad() || !x.grad_needed()) return;
    x.grad_arr() += out.grad_arr() * out.arr() * (Scalar(1) - out.arr());
  });
  return out;
}

// ---------------------------------------------------------------------------
// Row-structured ops (operate over the last axis, leading axes collapsed)

template <typename Scalar>
Tensor<Scalar> softmax_lastdim(Tensor<Scalar> x) {
  auto out = Tensor<Scalar>::zeros(x.shape());
  auto xm = x.rows_by_last();
  auto ym = out.rows_by_last();
  for (Index r = 0; r < xm.rows(); ++r) {
    Scalar m = xm.row(r).maxCoeff();
    ym.row(r) = (xm.row(r).array() - m).exp();
    ym.row(r) /= ym.row(r).sum();
  }
  record_if_tracked(out, x.tracked(), [x, out]() mutable {
    if (!out.has_grad() || !x.grad_needed()) return;
    auto y = out.rows_by_last();
    auto gy = out.grad_rows_by_last();
    auto gx = x.grad_rows_by_last();
    for (Index r = 0; r < y.rows(); ++r) {
      Scalar dot = gy.row(r).dot(y.row(r));
      gx.row(r).array() += y.row(r).array() * (gy.row(r).array() - dot);
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> layernorm(Tensor<Scalar> x, Tensor<Scalar> gamma,
                         Tensor<Scalar> beta, Scalar eps = Scalar(1e-5)) {
  Index d = x.dim(x.rank() - 1);
  if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d)
    throw DimensionError("layernorm: params " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " vs input " + shape_str(x.shape()));
  auto out = Tensor<Scalar>::zeros(x.shape());
  auto xm = x.rows_by_last();
  auto ym = out.rows_by_last();
  MatrixR<Scalar> xhat(xm.rows(), d);
  VectorC<Scalar> inv_sd(xm.rows());
  for (Index r = 0; r < xm.rows(); ++r) {
    Scalar mu = xm.row(r).mean();
    Scalar var = (xm.row(r).array() - mu).square().mean();
    inv_sd[r] = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = (xm.row(r).array() - mu) * inv_sd[r];
    ym.row(r) = xhat.row(r).array() * gamma.vec().transpose().array() +
                beta.vec().transpose().array();
  }
  record_if_tracked(out, x.tracked() || gamma.tracked() || beta.tracked(),
                    [x, gamma, beta, out, xhat, inv_sd]() mutable {
                      if (!out.has_grad()) return;
                      auto gy = out.grad_rows_by_last();
                      Index d = xhat.cols();
                      for (Index r = 0; r < xhat.rows(); ++r) {
                        if (gamma.grad_needed())
                          gamma.grad_vec().array() +=
                              gy.row(r).transpose().array() * xhat.row(r).transpose().array();
                        if (beta.grad_needed()) beta.grad_vec() += gy.row(r).transpose();
                        if (x.grad_needed()) {
                          ArrayC<Scalar> g =
                              gy.row(r).transpose().array() * gamma.vec().array();
                          Scalar gm = g.mean();
                          Scalar gxm = (g * xhat.row(r).transpose().array()).mean();
                          x.grad_rows_by_last().row(r).array() +=
                              inv_sd[r] *
                              (g - gm - xhat.row(r).transpose().array() * gxm).transpose();
                        }
                        (void)d;
                      }
                    });
  return out;
}

// ---------------------------------------------------------------------------
// Gather / scatter

template <typename Scalar>
Tensor<Scalar> gather_rows(Tensor<Scalar> x, const std::vector<Index>& idx) {
  if (x.rank() != 2) throw DimensionError("gather_rows: need rank-2, got " + shape_str(x.shape()));
  for (Index i : idx)
    if (i < 0 || i >= x.dim(0))
      throw CorruptionError("gather_rows: index " + std::to_string(i) + " outside [0, " +
                            std::to_string(x.dim(0)) + ")");
  auto out = Tensor<Scalar>::zeros({static_cast<Index>(idx.size()), x.dim(1)});
  for (size_t r = 0; r < idx.size(); ++r) out.mat().row(static_cast<Index>(r)) = x.mat().row(idx[r]);
  record_if_tracked(out, x.tracked(), [x, out, idx]() mutable {
    if (!out.has_grad() || !x.grad_needed()) return;
    for (size_t r = 0; r < idx.size(); ++r)
      x.grad_mat().row(idx[r]) += out.grad_mat().row(static_cast<Index>(r));
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> gather_columns(Tensor<Scalar> x, const std::vector<Index>& idx) {
  if (x.rank() != 2)
    throw DimensionError("gather_columns: need rank-2, got " + shape_str(x.shape()));
  for (Index i : idx)
    if (i < 0 || i >= x.dim(1))
      throw CorruptionError("gather_columns: index " + std::to_string(i) + " outside [0, " +
                            std::to_string(x.dim(1)) + ")");
  auto out = Tensor<Scalar>::zeros({x.dim(0), static_cast<Index>(idx.size())});
  for (size_t c = 0; c < idx.size(); ++c) out.mat().col(static_cast<Index>(c)) = x.mat().col(idx[c]);
  record_if_tracked(out, x.tracked(), [x, out, idx]() mutable {
    if (!out.has_grad() || !x.grad_needed()) return;
    for (size_t c = 0; c < idx.size(); ++c)
      x.grad_mat().col(idx[c]) += out.grad_mat().col(static_cast<Index>(c));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Convolution over (length, modules): causal zero padding of F-1 on the
// leading edge of the length axis, symmetric zero padding on the module axis.
// input [L, S, M_in], kernel [F, F, M_in, M_out] -> [L, S, M_out].

template <typename Scalar>
Tensor<Scalar> conv2d(Tensor<Scalar> x, Tensor<Scalar> kernel) {
  if (x.rank() != 3 || kernel.rank() != 4)
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + ", kernel " +
                         shape_str(kernel.shape()));
  const Index L = x.dim(0), S = x.dim(1), Mi = x.dim(2);
  const Index F = kernel.dim(0);
  if (kernel.dim(1) != F || kernel.dim(2) != Mi)
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " vs input " +
                         shape_str(x.shape()));
  if (L < 1 || S < 1)
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) +
                         " larger than padded input " + shape_str(x.shape()));
  const Index Mo = kernel.dim(3);
  const Index pad_s = (F - 1) / 2;  // symmetric module padding (left side)

  auto out = Tensor<Scalar>::zeros({L, S, Mo});
  CMatMap<Scalar> xr(x.data(), L * S, Mi);
  MatMap<Scalar> yr(out.data(), L * S, Mo);
  for (Index l = 0; l < L; ++l) {
    for (Index s = 0; s < S; ++s) {
      auto acc = yr.row(l * S + s);
      for (Index a = 0; a < F; ++a) {
        Index lp = l - (F - 1) + a;  // only history: lp <= l
        if (lp < 0) continue;
        for (Index b = 0; b < F; ++b) {
          Index sp = s - pad_s + b;
          if (sp < 0 || sp >= S) continue;
          CMatMap<Scalar> k(kernel.data() + ((a * F + b) * Mi) * Mo, Mi, Mo);
          acc.noalias() += xr.row(lp * S + sp) * k;
        }
      }
    }
  }
  record_if_tracked(out, x.tracked() || kernel.tracked(), [x, kernel, out]() mutable {
    if (!out.has_grad()) return;
    const Index L = x.dim(0), S = x.dim(1), Mi = x.dim(2);
    const Index F = kernel.dim(0), Mo = kernel.dim(3);
    const Index pad_s = (F - 1) / 2;
    CMatMap<Scalar> xr(x.data(), L * S, Mi);
    MatMap<Scalar> gy(out.grad_vec().data(), L * S, Mo);
    for (Index l = 0; l < L; ++l) {
      for (Index s = 0; s < S; ++s) {
        for (Index a = 0; a < F; ++a) {
          Index lp = l - (F - 1) + a;
          if (lp < 0) continue;
          for (Index b = 0; b < F; ++b) {
            Index sp = s - pad_s + b;
            if (sp < 0 || sp >= S) continue;
            if (x.grad_needed()) {
              CMatMap<Scalar> k(kernel.data() + ((a * F + b) * Mi) * Mo, Mi, Mo);
              MatMap<Scalar> gx(x.grad_vec().data(), L * S, Mi);
              gx.row(lp * S + sp).noalias() += gy.row(l * S + s) * k.transpose();
            }
            if (kernel.grad_needed()) {
              MatMap<Scalar> gk(kernel.grad_vec().data() + ((a * F + b) * Mi) * Mo, Mi, Mo);
              gk.noalias() += xr.row(lp * S + sp).transpose() * gy.row(l * S + s);
            }
          }
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Structural ops

template <typename Scalar>
Tensor<Scalar> concat_rows(Tensor<Scalar> a, Tensor<Scalar> b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw DimensionError("concat_rows: " + shape_str(a.shape()) + " ++ " + shape_str(b.shape()));
  auto out = Tensor<Scalar>::zeros({a.dim(0) + b.dim(0), a.dim(1)});
  out.mat().topRows(a.dim(0)) = a.mat();
  out.mat().bottomRows(b.dim(0)) = b.mat();
  record_if_tracked(out, a.tracked() || b.tracked(), [a, b, out]() mutable {
    if (!out.has_grad()) return;
    if (a.grad_needed()) a.grad_mat() += out.grad_mat().topRows(a.dim(0));
    if (b.grad_needed()) b.grad_mat() += out.grad_mat().bottomRows(b.dim(0));
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> slice_rows(Tensor<Scalar> x, Index start, Index count) {
  if (x.rank() != 2 || start < 0 || count < 0 || start + count > x.dim(0))
    throw DimensionError("slice_rows(" + std::to_string(start) + ", " + std::to_string(count) +
                         ") of " + shape_str(x.shape()));
  auto out = Tensor<Scalar>::zeros({count, x.dim(1)});
  out.mat() = x.mat().middleRows(start, count);
  record_if_tracked(out, x.tracked(), [x, out, start, count]() mutable {
    if (!out.has_grad() || !x.grad_needed()) return;
    x.grad_mat().middleRows(start, count) += out.grad_mat();
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> reshape(Tensor<Scalar> x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  auto out = Tensor<Scalar>::zeros(std::move(shape));
  out.arr() = x.arr();
  record_if_tracked(out, x.tracked(), [x, out]() mutable {
    if (!out.has_grad() || !x.grad_needed()) return;
    x.grad_arr() += out.grad_arr();
  });
  return out;
}

/// Value copy that does not participate in the graph (stops gradients).
template <typename Scalar>
Tensor<Scalar> detach(Tensor<Scalar> x) {
  return x.clone();
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <typename Scalar>
Tensor<Scalar> sum(Tensor<Scalar> x) {
  auto out = Tensor<Scalar>::scalar(x.arr().sum());
  record_if_tracked(out, x.tracked(), [x, out]() mutable {
    if (!out.has_grad() || !x.grad_needed()) return;
    x.grad_arr() += out.grad_vec()[0];
  });
  return out;
}

/// Mean negative log-likelihood of integer targets under row-wise softmax.
template <typename Scalar>
Tensor<Scalar> cross_entropy_rows(Tensor<Scalar> logits, const std::vector<Index>& targets) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<Index>(targets.size()))
    throw DimensionError("cross_entropy_rows: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
  const Index n = logits.dim(0);
  Scalar total = 0;
  for (Index r = 0; r < n; ++r) {
    auto row = logits.mat().row(r);
    Scalar m = row.maxCoeff();
    Scalar lse = m + std::log((row.array() - m).exp().sum());
    total += lse - row[targets[static_cast<size_t>(r)]];
  }
  auto out = Tensor<Scalar>::scalar(total / static_cast<Scalar>(n));
  record_if_tracked(out, logits.tracked(), [logits, out, targets]() mutable {
    if (!out.has_grad() || !logits.grad_needed()) return;
    const Index n = logits.dim(0);
    Scalar go = out.grad_vec()[0] / static_cast<Scalar>(n);
    for (Index r = 0; r < n; ++r) {
      auto row = logits.mat().row(r);
      Scalar m = row.maxCoeff();
      ArrayC<Scalar> p = (row.transpose().array() - m).exp();
      p /= p.sum();
      logits.grad_mat().row(r) += (go * p).matrix().transpose();
      logits.grad_mat()(r, targets[static_cast<size_t>(r)]) -= go;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Dropout (inverted scaling; identity when rate <= 0)

template <typename Scalar>
Tensor<Scalar> dropout(Tensor<Scalar> x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
  auto out = Tensor<Scalar>::zeros(x.shape());
  ArrayC<Scalar> mask(x.numel());
  const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - rate));
  for (Index i = 0; i < x.numel(); ++i)
    mask[i] = rng.bernoulli(rate) ? Scalar(0) : keep_scale;
  out.arr() = x.arr() * mask;
  record_if_tracked(out, x.tracked(), [x, out, mask]() mutable {
    if (!out.has_grad() || !x.grad_needed()) return;
    x.grad_arr() += out.grad_arr() * mask;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Small helpers shared across modules

template <typename Scalar>
Index argmax_first(const Scalar* v, Index n) {
  // Ties resolve to the lowest index (strict > scan).
  Index best = 0;
  for (Index i = 1; i < n; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace stck
