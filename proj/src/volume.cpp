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

#include "bobqc/volume.hpp"

#include <cmath>

namespace bobqc {

std::uint16_t LabelVolume::max_class() const {
  std::uint16_t m = 0;
  for (std::uint16_t v : voxels)
    if (v > m) m = v;
  return m;
}

bool ScalarVolume::all_finite() const {
  for (double v : voxels)
    if (!std::isfinite(v)) return false;
  return true;
}

bool ProbVolume::is_normalized(double tol) const {
  const std::int64_t n = dims.count();
  for (std::int64_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (int c = 0; c < channels; ++c) {
      const double p = values[static_cast<std::size_t>(i * channels + c)];
      if (!(p >= 0.0 && p <= 1.0)) return false;
      sum += p;
    }
    if (std::fabs(sum - 1.0) > tol) return false;
  }
  return true;
}

static void check_geometry(const Dims& dims, const Spacing& spacing) {
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0)
    throw data_error("volume dims must be positive");
  if (!spacing.valid()) throw data_error("voxel spacing must be positive");
}

LabelVolume make_label_volume(Dims dims, Spacing spacing, std::uint16_t fill) {
  check_geometry(dims, spacing);
  LabelVolume v;
  v.dims = dims;
  v.spacing = spacing;
  v.voxels.assign(static_cast<std::size_t>(dims.count()), fill);
  return v;
}

ScalarVolume make_scalar_volume(Dims dims, Spacing spacing, double fill) {
  check_geometry(dims, spacing);
  ScalarVolume v;
  v.dims = dims;
  v.spacing = spacing;
  v.voxels.assign(static_cast<std::size_t>(dims.count()), fill);
  return v;
}

ProbVolume make_prob_volume(Dims dims, Spacing spacing, int channels) {
  check_geometry(dims, spacing);
  if (channels < 2) throw data_error("probability volume needs >= 2 channels");
  ProbVolume v;
  v.dims = dims;
  v.spacing = spacing;
  v.channels = channels;
  v.values.assign(static_cast<std::size_t>(dims.count() * channels), 0.0);
  return v;
}

}  // namespace bobqc
