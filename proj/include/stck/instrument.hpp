// Copyright 2026 The stck Authors
// SPDX-License-Identifier: Apache-2.0
//
// Lightweight thread-local counters used by tests and the decode benchmark
// to verify how much weight data a code path actually reads.

#pragma once

#include <cstdint>

namespace stck::instr {

struct Counters {
  // Scalars read from W1 / W2 / b1 by a feedforward evaluation.
  std::uint64_t ff_weight_scalars = 0;
  // Invocations of the multiplicative layer forward.
  std::uint64_t mult_calls = 0;
};

inline Counters& counters() {
  thread_local Counters c;
  return c;
}

inline void reset() { counters() = Counters{}; }
inline std::uint64_t ff_weight_scalars() { return counters().ff_weight_scalars; }
inline std::uint64_t mult_calls() { return counters().mult_calls; }
inline void add_ff_weight_scalars(std::uint64_t n) { counters().ff_weight_scalars += n; }
inline void add_mult_call() { ++counters().mult_calls; }

}  // namespace stck::instr
