// Copyright 2026 The stck Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "oracles.hpp"
#include "stck/ops.hpp"
#include "stck/random.hpp"
#include "stck/tape.hpp"
#include "stck/tensor.hpp"

using namespace stck;
using D = Tensor<double>;

TEST_CASE("matmul identity and small products") {
  auto eye = D::from_data({2, 2}, {1, 0, 0, 1});
  auto m = D::from_data({2, 2}, {2, 3, 4, 5});
  auto out = matmul(eye, m);
  for (Index i = 0; i < 4; ++i) CHECK(out(i) == m(i));

  auto a = D::from_data({1, 2}, {1, 2});
  auto b = D::from_data({2, 1}, {3, 4});
  CHECK(matmul(a, b)(0, 0) == 11.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(7);
  auto a = randn<double>({5, 7}, rng);
  auto b = randn<double>({7, 3}, rng);
  auto got = matmul(a, b);
  auto want = testing::matmul_loops(a, b);
  for (Index i = 0; i < got.numel(); ++i) CHECK(std::abs(got(i) - want(i)) <= 1e-12);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  auto a = D::zeros({2, 3});
  auto b = D::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2 x 3]") != std::string::npos);
    CHECK(msg.find("[4 x 2]") != std::string::npos);
  }
}

TEST_CASE("conv2d zero input gives zero output") {
  Rng rng(3);
  auto x = D::zeros({4, 3, 2});
  auto k = randn<double>({3, 3, 2, 2}, rng);
  auto y = conv2d(x, k);
  for (Index i = 0; i < y.numel(); ++i) CHECK(y(i) == 0.0);
}

TEST_CASE("conv2d F=1 identity kernel is the identity") {
  Rng rng(4);
  const Index M = 3;
  auto x = randn<double>({5, 2, M}, rng);
  auto k = D::zeros({1, 1, M, M});
  for (Index i = 0; i < M; ++i) k(0, 0, i, i) = 1.0;
  auto y = conv2d(x, k);
  for (Index i = 0; i < y.numel(); ++i) CHECK(y(i) == doctest::Approx(x(i)).epsilon(1e-15));
}

TEST_CASE("conv2d F=3 matches nested-loop oracle") {
  Rng rng(5);
  auto x = randn<double>({6, 4, 3}, rng);
  auto k = randn<double>({3, 3, 3, 5}, rng);
  auto got = conv2d(x, k);
  auto want = testing::conv2d_loops(x, k);
  for (Index i = 0; i < got.numel(); ++i) CHECK(std::abs(got(i) - want(i)) <= 1e-10);
}

TEST_CASE("conv2d is causal along the length axis") {
  Rng rng(6);
  auto x = randn<double>({7, 3, 2}, rng);
  auto k = randn<double>({3, 3, 2, 2}, rng);
  auto base = conv2d(x, k);
  for (Index l = 0; l < 7; ++l) {
    auto xp = x.clone();
    xp(l, 1, 0) += 1.25;
    auto pert = conv2d(xp, k);
    for (Index before = 0; before < l; ++before)
      for (Index s = 0; s < 3; ++s)
        for (Index m = 0; m < 2; ++m) CHECK(pert(before, s, m) == base(before, s, m));
  }
}

TEST_CASE("conv2d rejects kernel beyond padded extent and bad channel counts") {
  CHECK_THROWS_AS(conv2d(D::zeros({0, 2, 2}), D::zeros({3, 3, 2, 2})), DimensionError);
  CHECK_THROWS_AS(conv2d(D::zeros({4, 2, 3}), D::zeros({3, 3, 2, 2})), DimensionError);
}

TEST_CASE("backward of sum is all-ones") {
  auto x = D::from_data({3}, {1.5, -2.0, 0.25}).set_requires_grad();
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    auto loss = sum(x);
    tape.backward(loss);
  }
  for (Index i = 0; i < 3; ++i) CHECK(x.grad_vec()[i] == 1.0);
}

TEST_CASE("backward of sum(relu(x)) masks negatives") {
  auto x = D::from_data({2}, {-1.0, 2.0}).set_requires_grad();
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    tape.backward(sum(relu(x)));
  }
  CHECK(x.grad_vec()[0] == 0.0);
  CHECK(x.grad_vec()[1] == 1.0);
}

TEST_CASE("non-scalar loss is a contract error") {
  auto x = D::zeros({2}).set_requires_grad();
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto y = relu(x);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("two-layer MLP gradients match finite differences") {
  Rng rng(11);
  auto x = randn<double>({2, 4}, rng);
  auto w1 = randn<double>({4, 5}, rng, 0.7).set_requires_grad();
  auto b1 = randn<double>({5}, rng, 0.3).set_requires_grad();
  auto w2 = randn<double>({5, 3}, rng, 0.7).set_requires_grad();
  auto b2 = randn<double>({3}, rng, 0.3).set_requires_grad();
  auto mix = randn<double>({2, 3}, rng);  // fixed output weighting

  auto value = [&]() {
    auto h = relu(bias_add(matmul(x, w1), b1));
    auto y = bias_add(matmul(h, w2), b2);
    return sum(mul(y, mix))(0);
  };

  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    tape.backward(sum(mul(bias_add(matmul(relu(bias_add(matmul(x, w1), b1)), w2), b2), mix)));
  }
  std::vector<D> params = {w1, b1, w2, b2};
  for (auto& p : params)
    for (Index c = 0; c < p.numel(); ++c) {
      const double fd = testing::fd_derivative<double>(value, p, c);
      CHECK(testing::rel_err(p.grad_vec()[c], fd) <= 1e-5);
    }
}

TEST_CASE("forward results identical with and without a tape") {
  Rng rng(13);
  auto x = randn<double>({3, 4}, rng);
  auto w = randn<double>({4, 4}, rng).set_requires_grad();
  auto g = D::full({4}, 1.0);
  auto b = D::zeros({4});

  auto run = [&]() {
    auto h = layernorm(relu(matmul(x, w)), g, b);
    return softmax_lastdim(h);
  };
  auto plain = run();
  Tape<double> tape;
  Tensor<double> taped;
  {
    TapeScope<double> scope(tape);
    taped = run();
  }
  CHECK(tape.size() > 0);
  for (Index i = 0; i < plain.numel(); ++i) CHECK(plain(i) == taped(i));
}

TEST_CASE("tensor invariants: shape product, grad shape") {
  auto t = D::zeros({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(shape_numel(t.shape()) == t.numel());
  t.ensure_grad();
  CHECK(t.has_grad());
  CHECK(t.grad_vec().size() == t.numel());
}

TEST_CASE("gather ops validate indices") {
  auto x = D::zeros({3, 2});
  CHECK_THROWS_AS(gather_rows(x, {0, 3}), CorruptionError);
  CHECK_THROWS_AS(gather_columns(x, {-1}), CorruptionError);
}
