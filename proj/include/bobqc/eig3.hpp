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

#ifndef BOBQC_EIG3_HPP_
#define BOBQC_EIG3_HPP_

#include <array>

namespace bobqc {

// Symmetric 3x3 matrix, upper triangle: [xx, yy, zz, xy, xz, yz].
struct Sym3 {
  double xx = 0, yy = 0, zz = 0, xy = 0, xz = 0, yz = 0;
};

// Eigenvalues of a symmetric 3x3 matrix by the trigonometric closed form,
// sorted ascending. Deterministic: no iteration, no pivot choices.
std::array<double, 3> sym3_eigenvalues(const Sym3& m);

}  // namespace bobqc

#endif  // BOBQC_EIG3_HPP_
