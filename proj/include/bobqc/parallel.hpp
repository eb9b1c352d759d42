// Copyright 2026 The BobQC Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef BOBQC_PARALLEL_HPP_
#define BOBQC_PARALLEL_HPP_

#include <cstdint>
#include <vector>

namespace bobqc {

// Reads BOBQC_THREADS (0 or unset = all hardware threads) and applies it
// to the OpenMP runtime. Called once by entry points; safe to call again.
void init_threads_from_env();

// Current OpenMP thread budget.
int thread_budget();

// Sum of term(i) for i in [0, n). The range is split into fixed-size blocks,
// block partials are computed independently (in parallel) and then added in
// block order, so the result does not depend on the number of threads.
template <typename F>
double blocked_sum(std::int64_t n, F&& term) {
  constexpr std::int64_t kBlock = 4096;
  if (n <= 0) return 0.0;
  const std::int64_t nblocks = (n + kBlock - 1) / kBlock;
  std::vector<double> partial(static_cast<std::size_t>(nblocks), 0.0);
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < nblocks; ++b) {
    const std::int64_t lo = b * kBlock;
    const std::int64_t hi = lo + kBlock < n ? lo + kBlock : n;
    double s = 0.0;
    for (std::int64_t i = lo; i < hi; ++i) s += term(i);
    partial[static_cast<std::size_t>(b)] = s;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

}  // namespace bobqc

#endif  // BOBQC_PARALLEL_HPP_
