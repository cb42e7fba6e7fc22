// Copyright 2026 The stck Authors
// SPDX-License-Identifier: Apache-2.0
//
// Sparse feedforward block: a low-rank controller picks one unit out of every
// consecutive block of N feedforward units per token. Training uses a
// straight-through Gumbel-Softmax estimator; decoding gathers only the
// selected columns of W1 and rows of W2.

#pragma once

#include <cstdint>
#include <vector>

#include "stck/instrument.hpp"
#include "stck/ops.hpp"
#include "stck/random.hpp"
#include "stck/tensor.hpp"

namespace stck {

template <typename Scalar>
struct SparseFFWeights {
  Tensor<Scalar> W1;  // [d_model, d_ff]
  Tensor<Scalar> b1;  // [d_ff]
  Tensor<Scalar> W2;  // [d_ff, d_model]
  Tensor<Scalar> b2;  // [d_model]
  Tensor<Scalar> C1;  // [d_model, d_lowrank]
  Tensor<Scalar> C2;  // [d_lowrank, d_ff]
  Index block_size = 1;

  // Row-contiguous copy of W1 columns ([d_ff, d_model]); built once for
  // decoding so column gathers stream memory linearly.
  Tensor<Scalar> W1t;

  Index d_model() const { return W1.dim(0); }
  Index d_ff() const { return W1.dim(1); }
  Index blocks() const { return d_ff() / block_size; }

  void check() const {
    if (block_size < 1 || d_ff() % block_size != 0)
      throw ConfigError("sparse ff: d_ff " + std::to_string(d_ff()) +
                        " not divisible by block size " + std::to_string(block_size));
    if (C1.dim(1) < 1) throw ConfigError("sparse ff: d_lowrank must be >= 1");
  }

  void prepare_inference() {
    W1t = Tensor<Scalar>::zeros({d_ff(), d_model()});
    for (Index i = 0; i < d_model(); ++i)
      for (Index j = 0; j < d_ff(); ++j) W1t(j, i) = W1(i, j);
  }
};

template <typename Scalar>
SparseFFWeights<Scalar> sparse_ff_init(Index d_model, Index d_ff, Index block_size,
                                       Index d_lowrank, Rng& rng) {
  SparseFFWeights<Scalar> w;
  w.W1 = randn<Scalar>({d_model, d_ff}, rng, 1.0 / std::sqrt(double(d_model)));
  w.b1 = Tensor<Scalar>::zeros({d_ff});
  w.W2 = randn<Scalar>({d_ff, d_model}, rng, 1.0 / std::sqrt(double(d_ff)));
  w.b2 = Tensor<Scalar>::zeros({d_model});
  w.C1 = randn<Scalar>({d_model, d_lowrank}, rng, 1.0 / std::sqrt(double(d_model)));
  w.C2 = randn<Scalar>({d_lowrank, d_ff}, rng, 1.0 / std::sqrt(double(d_lowrank)));
  w.block_size = block_size;
  w.check();
  return w;
}

template <typename Scalar>
struct ControllerOutput {
  // Inference: exactly one unit entry per block of N; {0,1} valued.
  Tensor<Scalar> mask;  // [d_ff] or [len, d_ff]
  // Training surrogate: nonnegative, sums to 1 within each block. Connected
  // to the tape so gradients always flow through it.
  Tensor<Scalar> soft;
  // Forward value consumed by the feedforward: the mask at inference, the
  // straight-through hard/soft mix during training.
  Tensor<Scalar> value;
  // Argmax position within each block, lowest index on ties.
  std::vector<Index> indices;  // len * blocks entries, token-major
};

// Canonical per-token controller logits: logits = x C1 C2. Both the batch
// and the incremental decode paths call this exact kernel so that argmax
// decisions can never disagree between them.
template <typename Scalar>
inline void controller_logits_token(const Scalar* x, const SparseFFWeights<Scalar>& w,
                                    Scalar* logits_out) {
  const Index d = w.d_model(), dl = w.C1.dim(1), dff = w.d_ff();
  CVecMap<Scalar> xv(x, d);
  VectorC<Scalar> lr(dl);
  lr.noalias() = w.C1.mat().transpose() * xv;
  VecMap<Scalar> out(logits_out, dff);
  out.noalias() = w.C2.mat().transpose() * lr;
}

template <typename Scalar>
inline void argmax_per_block(const Scalar* logits, Index blocks, Index n, Index* idx_out) {
  for (Index b = 0; b < blocks; ++b) idx_out[b] = argmax_first(logits + b * n, n);
}

/// Deterministic inference controller for one token.
template <typename Scalar>
ControllerOutput<Scalar> controller_infer(Tensor<Scalar> x, const SparseFFWeights<Scalar>& w) {
  w.check();
  if (x.numel() != w.d_model())
    throw DimensionError("controller: input " + shape_str(x.shape()) + " vs d_model " +
                         std::to_string(w.d_model()));
  const Index n = w.block_size, blocks = w.blocks();
  ControllerOutput<Scalar> out;
  VectorC<Scalar> logits(w.d_ff());
  controller_logits_token(x.data(), w, logits.data());
  out.indices.resize(static_cast<size_t>(blocks));
  argmax_per_block(logits.data(), blocks, n, out.indices.data());
  out.mask = Tensor<Scalar>::zeros({w.d_ff()});
  for (Index b = 0; b < blocks; ++b) out.mask(b * n + out.indices[static_cast<size_t>(b)]) = 1;
  out.value = out.mask;
  return out;
}

/// Forward mixes the hard one-hot rows into the soft rows exactly (selected
/// rows are bit-for-bit the hard values); backward routes everything through
/// the soft surrogate.
template <typename Scalar>
Tensor<Scalar> straight_through_mix(Tensor<Scalar> soft, Tensor<Scalar> hard,
                                    const std::vector<char>& hard_row) {
  check_same_shape(soft, hard, "straight_through_mix");
  const Index rows = soft.dim(0), cols = soft.numel() / rows;
  auto out = Tensor<Scalar>::zeros(soft.shape());
  CMatMap<Scalar> sm(soft.data(), rows, cols);
  CMatMap<Scalar> hm(hard.data(), rows, cols);
  MatMap<Scalar> om(out.data(), rows, cols);
  for (Index r = 0; r < rows; ++r) om.row(r) = hard_row[static_cast<size_t>(r)] ? hm.row(r) : sm.row(r);
  record_if_tracked(out, soft.tracked(), [soft, out]() mutable {
    if (!out.has_grad() || !soft.grad_needed()) return;
    soft.grad_arr() += out.grad_arr();
  });
  return out;
}

/// Training controller over a sequence ([len, d_model] input). Gumbel noise
/// is drawn independently per token and per unit; each token independently
/// uses the hard one-hot forward with probability argmax_mix_prob, otherwise
/// the tempered softmax value.
template <typename Scalar>
ControllerOutput<Scalar> controller_train_seq(Tensor<Scalar> x, const SparseFFWeights<Scalar>& w,
                                              double temperature, double argmax_mix_prob,
                                              Rng& rng) {
  w.check();
  if (temperature <= 0) throw ConfigError("controller: temperature must be > 0");
  if (argmax_mix_prob < 0 || argmax_mix_prob > 1)
    throw ConfigError("controller: argmax_mix_prob must be in [0, 1]");
  const Index len = x.dim(0), n = w.block_size, blocks = w.blocks(), dff = w.d_ff();

  auto logits = matmul(matmul(x, w.C1), w.C2);  // [len, d_ff]
  auto noise = Tensor<Scalar>::zeros({len, dff});
  for (Index i = 0; i < noise.numel(); ++i) noise(i) = static_cast<Scalar>(rng.gumbel());
  std::vector<char> hard_row(static_cast<size_t>(len));
  for (Index t = 0; t < len; ++t) hard_row[static_cast<size_t>(t)] = rng.bernoulli(argmax_mix_prob);

  auto noised = add(logits, noise);
  auto soft = reshape(softmax_lastdim(reshape(scale(noised, Scalar(1.0 / temperature)),
                                              {len * blocks, n})),
                      {len, dff});

  ControllerOutput<Scalar> out;
  out.soft = soft;
  out.indices.resize(static_cast<size_t>(len * blocks));
  out.mask = Tensor<Scalar>::zeros({len, dff});
  for (Index t = 0; t < len; ++t) {
    argmax_per_block(noised.data() + t * dff, blocks, n, out.indices.data() + t * blocks);
    for (Index b = 0; b < blocks; ++b)
      out.mask(t, b * n + out.indices[static_cast<size_t>(t * blocks + b)]) = 1;
  }
  out.value = straight_through_mix(soft, out.mask, hard_row);
  return out;
}

/// Single-token training controller.
template <typename Scalar>
ControllerOutput<Scalar> controller_train(Tensor<Scalar> x, const SparseFFWeights<Scalar>& w,
                                          double temperature, double argmax_mix_prob, Rng& rng) {
  return controller_train_seq(reshape(x, {Index(1), w.d_model()}), w, temperature,
                              argmax_mix_prob, rng);
}

// ---------------------------------------------------------------------------
// Feedforward evaluation
//
// Both single-token paths below run the same per-unit kernels (a dot against
// a W1t row, then an axpy of a W2 row). The reference path evaluates every
// unit and multiplies by the controller value, so where the mask is one-hot
// the fast path reproduces it bit for bit: skipped units contribute exact
// zero vectors to the accumulation.

/// Reference: full evaluation of relu(x W1 + b1) (.) ctrl, times W2, plus b2.
template <typename Scalar>
Tensor<Scalar> sparse_ff_dense_oracle(Tensor<Scalar> x, const SparseFFWeights<Scalar>& w,
                                      const ControllerOutput<Scalar>& ctrl) {
  const Index d = w.d_model(), dff = w.d_ff();
  if (x.numel() != d)
    throw DimensionError("sparse ff: input " + shape_str(x.shape()) + " vs d_model " +
                         std::to_string(d));
  if (!w.W1t.defined()) throw ContractError("sparse ff: call prepare_inference() first");
  CVecMap<Scalar> xv(x.data(), d);
  auto out = Tensor<Scalar>::zeros({d});
  VecMap<Scalar> acc(out.data(), d);
  acc = w.b2.vec();
  const Tensor<Scalar>& v = ctrl.value;
  for (Index j = 0; j < dff; ++j) {
    Scalar h = w.W1t.mat().row(j).dot(xv) + w.b1(j);
    Scalar y = (h > Scalar(0) ? h : Scalar(0)) * v(j);
    acc.noalias() += y * w.W2.mat().row(j).transpose();
  }
  instr::add_ff_weight_scalars(static_cast<std::uint64_t>((2 * d + 1) * dff));
  return out;
}

/// Fast decode path: touches only the selected 1-in-N units' weights.
template <typename Scalar>
Tensor<Scalar> sparse_ff_fast(Tensor<Scalar> x, const SparseFFWeights<Scalar>& w,
                              const ControllerOutput<Scalar>& ctrl) {
  const Index d = w.d_model(), n = w.block_size, blocks = w.blocks();
  if (!w.W1t.defined()) throw ContractError("sparse ff: call prepare_inference() first");
  if (static_cast<Index>(ctrl.indices.size()) != blocks)
    throw ContractError("sparse ff: controller produced " + std::to_string(ctrl.indices.size()) +
                        " indices for " + std::to_string(blocks) + " blocks");
  CVecMap<Scalar> xv(x.data(), d);
  auto out = Tensor<Scalar>::zeros({d});
  VecMap<Scalar> acc(out.data(), d);
  acc = w.b2.vec();
  for (Index b = 0; b < blocks; ++b) {
    const Index pick = ctrl.indices[static_cast<size_t>(b)];
    if (pick < 0 || pick >= n)
      throw CorruptionError("sparse ff: stored index " + std::to_string(pick) +
                            " outside block of " + std::to_string(n));
    const Index j = b * n + pick;
    Scalar h = w.W1t.mat().row(j).dot(xv) + w.b1(j);
    if (h > Scalar(0)) acc.noalias() += h * w.W2.mat().row(j).transpose();
  }
  instr::add_ff_weight_scalars(static_cast<std::uint64_t>((2 * d + 1) * blocks));
  return out;
}

/// Taped training forward over a sequence, composed from primitives.
template <typename Scalar>
Tensor<Scalar> sparse_ff_train_seq(Tensor<Scalar> x, const SparseFFWeights<Scalar>& w,
                                   Tensor<Scalar> ctrl_value) {
  auto y = mul(relu(bias_add(matmul(x, w.W1), w.b1)), ctrl_value);
  return bias_add(matmul(y, w.W2), w.b2);
}

}  // namespace stck
