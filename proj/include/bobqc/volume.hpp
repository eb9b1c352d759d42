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

#ifndef BOBQC_VOLUME_HPP_
#define BOBQC_VOLUME_HPP_

#include <cstdint>
#include <vector>

#include "bobqc/errors.hpp"

namespace bobqc {

// Physical voxel size in millimeters along each axis. All values positive.
struct Spacing {
  double dx = 1.0;
  double dy = 1.0;
  double dz = 1.0;

  double voxel_volume() const { return dx * dy * dz; }
  bool valid() const { return dx > 0.0 && dy > 0.0 && dz > 0.0; }
  bool operator==(const Spacing&) const = default;
};

// Grid extents. Voxel (x, y, z) lives at flat index x + nx*(y + ny*z),
// i.e. x is the fastest-varying axis.
struct Dims {
  int nx = 0;
  int ny = 0;
  int nz = 0;

  std::int64_t count() const {
    return static_cast<std::int64_t>(nx) * ny * nz;
  }
  std::int64_t index(int x, int y, int z) const {
    return x + static_cast<std::int64_t>(nx) *
                   (y + static_cast<std::int64_t>(ny) * z);
  }
  bool contains(int x, int y, int z) const {
    return x >= 0 && x < nx && y >= 0 && y < ny && z >= 0 && z < nz;
  }
  bool operator==(const Dims&) const = default;
};

// 3D grid of integer class IDs; 0 is background. Classes are mutually
// exclusive: exactly one ID per voxel.
struct LabelVolume {
  Dims dims;
  Spacing spacing;
  std::vector<std::uint16_t> voxels;

  std::uint16_t at(int x, int y, int z) const {
    return voxels[static_cast<std::size_t>(dims.index(x, y, z))];
  }
  std::uint16_t& at(int x, int y, int z) {
    return voxels[static_cast<std::size_t>(dims.index(x, y, z))];
  }
  std::uint16_t max_class() const;
  bool operator==(const LabelVolume&) const = default;
};

// 3D grid of real intensities.
struct ScalarVolume {
  Dims dims;
  Spacing spacing;
  std::vector<double> voxels;

  double at(int x, int y, int z) const {
    return voxels[static_cast<std::size_t>(dims.index(x, y, z))];
  }
  double& at(int x, int y, int z) {
    return voxels[static_cast<std::size_t>(dims.index(x, y, z))];
  }
  bool all_finite() const;
  bool operator==(const ScalarVolume&) const = default;
};

// Per-voxel class probability field with C >= 2 channels, stored
// channel-interleaved: value index = c + C*(x + nx*(y + ny*z)).
struct ProbVolume {
  Dims dims;
  Spacing spacing;
  int channels = 0;
  std::vector<double> values;

  const double* at(int x, int y, int z) const {
    return values.data() + channels * dims.index(x, y, z);
  }
  double* at(int x, int y, int z) {
    return values.data() + channels * dims.index(x, y, z);
  }
  // Every entry in [0,1] and each voxel sums to 1 within tol.
  bool is_normalized(double tol = 1e-6) const;
};

LabelVolume make_label_volume(Dims dims, Spacing spacing,
                              std::uint16_t fill = 0);
ScalarVolume make_scalar_volume(Dims dims, Spacing spacing, double fill = 0.0);
ProbVolume make_prob_volume(Dims dims, Spacing spacing, int channels);

}  // namespace bobqc

#endif  // BOBQC_VOLUME_HPP_
