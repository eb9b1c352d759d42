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

#include "bobqc/parallel.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bobqc {

void init_threads_from_env() {
#ifdef _OPENMP
  const char* env = std::getenv("BOBQC_THREADS");
  if (env == nullptr) return;
  int n = 0;
  try {
    n = std::stoi(env);
  } catch (...) {
    return;  // malformed value, keep runtime default
  }
  if (n > 0) omp_set_num_threads(n);
#endif
}

int thread_budget() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace bobqc
