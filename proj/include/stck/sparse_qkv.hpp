// Copyright 2026 The stck Authors
// SPDX-License-Identifier: Apache-2.0
//
// Sparse replacement for the attention projection layers: a multiplicative
// (bilinear) layer that splits d_model into S modules of size M and can
// express any permutation of dimensions, composed with per-head causal
// convolutions over (length, modules). Q, K and V share one multiplicative
// output; the combined layer has no output projection at all.

#pragma once

#include <utility>
#include <vector>

#include "stck/instrument.hpp"
#include "stck/ops.hpp"
#include "stck/random.hpp"
#include "stck/sparse_ff.hpp"

namespace stck {

template <typename Scalar>
struct MultiplicativeWeights {
  Tensor<Scalar> D;  // [d_model, S]
  Tensor<Scalar> E;  // [d_model, M]

  Index d_model() const { return D.dim(0); }
  Index modules() const { return D.dim(1); }
  Index module_size() const { return E.dim(1); }
};

template <typename Scalar>
MultiplicativeWeights<Scalar> mult_init(Index d_model, Index s, Index m, Rng& rng) {
  MultiplicativeWeights<Scalar> w;
  const double sd = std::pow(double(d_model), -0.25);
  w.D = randn<Scalar>({d_model, s}, rng, sd);
  w.E = randn<Scalar>({d_model, m}, rng, sd);
  return w;
}

template <typename Scalar>
struct ConvHeadWeights {
  Tensor<Scalar> kernel;  // [F, F, M, M]
  Tensor<Scalar> bias;    // [M]

  Index kernel_size() const { return kernel.dim(0); }
};

template <typename Scalar>
ConvHeadWeights<Scalar> conv_head_init(Index m, Index f, Rng& rng) {
  ConvHeadWeights<Scalar> w;
  w.kernel = randn<Scalar>({f, f, m, m}, rng, 1.0 / std::sqrt(double(f * f * m)));
  w.bias = Tensor<Scalar>::zeros({m});
  return w;
}

/// y[l, s, m] = sum_i x[l, i] D[i, s] E[i, m].
template <typename Scalar>
Tensor<Scalar> mult_forward(Tensor<Scalar> x, const MultiplicativeWeights<Scalar>& w) {
  if (x.rank() != 2 || x.dim(1) != w.d_model())
    throw DimensionError("mult_forward: input " + shape_str(x.shape()) + " vs D " +
                         shape_str(w.D.shape()));
  instr::add_mult_call();
  const Index len = x.dim(0), d = w.d_model(), s_mod = w.modules(), m_mod = w.module_size();
  auto out = Tensor<Scalar>::zeros({len, s_mod, m_mod});
  MatrixR<Scalar> scaled(len, d);
  for (Index s = 0; s < s_mod; ++s) {
    scaled = x.mat().array().rowwise() * w.D.mat().col(s).transpose().array();
    StridedMap<Scalar> ys(out.data() + s * m_mod, len, m_mod,
                          Eigen::OuterStride<>(s_mod * m_mod));
    ys.noalias() = scaled * w.E.mat();
  }
  record_if_tracked(out, x.tracked() || w.D.tracked() || w.E.tracked(),
                    [x, D = w.D, E = w.E, out]() mutable {
                      if (!out.has_grad()) return;
                      const Index len = x.dim(0), d = D.dim(0);
                      const Index s_mod = D.dim(1), m_mod = E.dim(1);
                      MatrixR<Scalar> gE_s(len, d), scaled(len, d);
                      for (Index s = 0; s < s_mod; ++s) {
                        CStridedMap<Scalar> gy(out.grad_vec().data() + s * m_mod, len, m_mod,
                                               Eigen::OuterStride<>(s_mod * m_mod));
                        gE_s.noalias() = gy * E.mat().transpose();  // [len, d]
                        if (x.grad_needed())
                          x.grad_mat().array() +=
                              gE_s.array().rowwise() * D.mat().col(s).transpose().array();
                        if (D.grad_needed())
                          D.grad_mat().col(s) +=
                              (x.mat().array() * gE_s.array()).colwise().sum().matrix().transpose();
                        if (E.grad_needed()) {
                          scaled = x.mat().array().rowwise() * D.mat().col(s).transpose().array();
                          E.grad_mat().noalias() += scaled.transpose() * gy;
                        }
                      }
                    });
  return out;
}

/// Builds 0/1 weights realizing a bijection i -> (s, m): after mult_forward,
/// y[f(i)] == x[i] exactly for every input.
template <typename Scalar>
MultiplicativeWeights<Scalar> build_permutation(const std::vector<std::pair<Index, Index>>& f,
                                                Index s_mod, Index m_mod) {
  const Index d = static_cast<Index>(f.size());
  if (s_mod * m_mod != d)
    throw ContractError("build_permutation: S*M = " + std::to_string(s_mod * m_mod) +
                        " but domain has " + std::to_string(d) + " elements");
  std::vector<char> seen(static_cast<size_t>(d), 0);
  for (auto [s, m] : f) {
    if (s < 0 || s >= s_mod || m < 0 || m >= m_mod)
      throw ContractError("build_permutation: image (" + std::to_string(s) + ", " +
                          std::to_string(m) + ") out of range");
    auto flat = static_cast<size_t>(s * m_mod + m);
    if (seen[flat]) throw ContractError("build_permutation: mapping is not injective");
    seen[flat] = 1;
  }
  MultiplicativeWeights<Scalar> w;
  w.D = Tensor<Scalar>::zeros({d, s_mod});
  w.E = Tensor<Scalar>::zeros({d, m_mod});
  for (Index i = 0; i < d; ++i) {
    w.D(i, f[static_cast<size_t>(i)].first) = 1;
    w.E(i, f[static_cast<size_t>(i)].second) = 1;
  }
  return w;
}

/// The (i div M, i mod M) identity layout.
inline std::vector<std::pair<Index, Index>> identity_bijection(Index d, Index m_mod) {
  std::vector<std::pair<Index, Index>> f(static_cast<size_t>(d));
  for (Index i = 0; i < d; ++i) f[static_cast<size_t>(i)] = {i / m_mod, i % m_mod};
  return f;
}

/// Convolution over (length, modules) plus per-filter bias.
template <typename Scalar>
Tensor<Scalar> conv_head_forward(Tensor<Scalar> y, const ConvHeadWeights<Scalar>& w) {
  return bias_add(conv2d(y, w.kernel), w.bias);
}

template <typename Scalar>
struct QKV {
  Tensor<Scalar> q, k, v;  // each [len, S, M]
};

/// Combined sparse QKV layer: one shared multiplicative evaluation feeding
/// three independent convolutional heads. There is no output dense layer in
/// this path.
template <typename Scalar>
QKV<Scalar> sparse_qkv_forward(Tensor<Scalar> x, const MultiplicativeWeights<Scalar>& mult,
                               const ConvHeadWeights<Scalar>& convq,
                               const ConvHeadWeights<Scalar>& convk,
                               const ConvHeadWeights<Scalar>& convv) {
  if (mult.modules() * mult.module_size() != mult.d_model())
    throw ConfigError("sparse qkv: S*M = " +
                      std::to_string(mult.modules() * mult.module_size()) + " != d_model " +
                      std::to_string(mult.d_model()));
  auto shared = mult_forward(x, mult);
  return {conv_head_forward(shared, convq), conv_head_forward(shared, convk),
          conv_head_forward(shared, convv)};
}

// ---------------------------------------------------------------------------
// Exact stored-parameter counts (duplicate inference layouts excluded).

template <typename Scalar>
std::int64_t count_params(const MultiplicativeWeights<Scalar>& w) {
  return w.D.numel() + w.E.numel();
}

template <typename Scalar>
std::int64_t count_params(const ConvHeadWeights<Scalar>& w) {
  return w.kernel.numel() + w.bias.numel();
}

template <typename Scalar>
std::int64_t count_params(const SparseFFWeights<Scalar>& w) {
  return w.W1.numel() + w.b1.numel() + w.W2.numel() + w.b2.numel() + w.C1.numel() +
         w.C2.numel();
}

}  // namespace stck
