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

#ifndef BOBQC_REFERENCE_HPP_
#define BOBQC_REFERENCE_HPP_

// Serial reference kernels. These are deliberately simple, independent
// implementations of the hot-path algorithms. Tests compare the production
// kernels against them; the benchmark tool measures the speedup. Nothing in
// the production library may call into this namespace.

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "bobqc/eig3.hpp"
#include "bobqc/volume.hpp"

namespace bobqc::ref {

std::int64_t voxel_count(const LabelVolume& vol, int class_id);

// Face-centric sweep: walks every grid face per axis and counts the ones
// separating mask from non-mask. The production kernel is voxel-centric.
double surface_area(const LabelVolume& vol, int class_id);

// Two-pass population covariance of physical voxel centers in double.
Sym3 covariance(const LabelVolume& vol, int class_id);

// Characteristic-polynomial root finder: bisection to the first root,
// synthetic-division deflation to a quadratic, Newton polish on all three.
// Ascending order.
std::array<double, 3> eigenvalues_roots(const Sym3& m);

double sphericity(const LabelVolume& vol, int class_id);
double eccentricity(const LabelVolume& vol, int class_id);

// Rank interpolation written out directly against a sorted copy.
double percentile(std::vector<double> values, double p);

double dice(const LabelVolume& pred, const LabelVolume& gt, int class_id);

// All-pairs max-of-directed-max over 6-connectivity boundary voxel centers.
// Empty mask on either side -> nullopt.
std::optional<double> hausdorff(const LabelVolume& pred, const LabelVolume& gt,
                                int class_id);

double entropy_mean(const ProbVolume& probs);

// Naive serial 3x3x3 "same" convolution, channel-major buffers:
// in[ci*nvox + idx], out[co*nvox + idx], weights[((co*cin + ci)*27) + k]
// with k = (kz+1)*9 + (ky+1)*3 + (kx+1), bias[co]. Zero padding.
void conv3x3x3(const double* in, int cin, const double* weights,
               const double* bias, int cout, const Dims& dims, double* out);

}  // namespace bobqc::ref

#endif  // BOBQC_REFERENCE_HPP_
