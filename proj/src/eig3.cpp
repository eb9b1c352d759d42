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

#include "bobqc/eig3.hpp"

#include <algorithm>
#include <cmath>

namespace bobqc {

std::array<double, 3> sym3_eigenvalues(const Sym3& m) {
  const double p1 = m.xy * m.xy + m.xz * m.xz + m.yz * m.yz;
  if (p1 == 0.0) {
    std::array<double, 3> eig = {m.xx, m.yy, m.zz};
    std::sort(eig.begin(), eig.end());
    return eig;
  }

  const double q = (m.xx + m.yy + m.zz) / 3.0;
  const double p2 = (m.xx - q) * (m.xx - q) + (m.yy - q) * (m.yy - q) +
                    (m.zz - q) * (m.zz - q) + 2.0 * p1;
  const double p = std::sqrt(p2 / 6.0);

  // B = (A - qI) / p; r = det(B) / 2, clamped into acos domain.
  const double bxx = (m.xx - q) / p, byy = (m.yy - q) / p, bzz = (m.zz - q) / p;
  const double bxy = m.xy / p, bxz = m.xz / p, byz = m.yz / p;
  double r = 0.5 * (bxx * (byy * bzz - byz * byz) -
                    bxy * (bxy * bzz - byz * bxz) +
                    bxz * (bxy * byz - byy * bxz));
  r = std::clamp(r, -1.0, 1.0);

  const double phi = std::acos(r) / 3.0;
  constexpr double kTwoPiThird = 2.0943951023931954923084289221863;
  const double emax = q + 2.0 * p * std::cos(phi);
  const double emin = q + 2.0 * p * std::cos(phi + kTwoPiThird);
  const double emid = 3.0 * q - emax - emin;
  return {emin, emid, emax};
}

}  // namespace bobqc
