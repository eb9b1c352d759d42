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
//
// Per-organ shape descriptors over a labeled volume: voxel count, volume
// normalized by the non-background body count, exposed-face surface area,
// sphericity and covariance eccentricity. A class is treated as one point
// set even when fragmented.

#ifndef BOBQC_SHAPE_FEATURES_HPP_
#define BOBQC_SHAPE_FEATURES_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bobqc/eig3.hpp"
#include "bobqc/volume.hpp"

namespace bobqc {

// One row of the cohort feature table: shape descriptors for a single
// (sample, class) pair. Shape fields are unset when the class is absent.
struct OrganFeatures {
  std::string sample_id;
  int class_id = 0;
  std::int64_t voxel_count = 0;
  double normalized_volume = 0.0;
  bool present = false;
  std::optional<double> surface_area_mm2;
  std::optional<double> sphericity;
  std::optional<double> eccentricity;
};

struct BodyStats {
  std::string sample_id;
  std::int64_t body_voxel_count = 0;  // non-background voxels
};

struct FeatureSet {
  std::vector<OrganFeatures> rows;
  BodyStats body;
};

std::int64_t organ_voxel_count(const LabelVolume& vol, int class_id);
std::int64_t body_voxel_count(const LabelVolume& vol);

// V_c / V_body. Throws data_error on an all-background volume.
double normalized_volume(const LabelVolume& vol, int class_id);

// Sum of exposed voxel-face areas in mm^2; a face is exposed when its
// 6-neighbor has a different class or lies outside the grid. Throws
// data_error when the class is absent.
double surface_area(const LabelVolume& vol, int class_id);

// pi^(1/3) * (6 V)^(2/3) / A with V and A in physical units, so the value
// is unit-consistent under anisotropic spacing and equals the plain
// voxel-count form at isotropic 1 mm.
double sphericity(const LabelVolume& vol, int class_id);

// sqrt(1 - lambda_min / lambda_max) of the population covariance of the
// organ's physical voxel-center coordinates (index * spacing). Defined as 0
// when lambda_max < 1e-12 mm^2.
double eccentricity(const LabelVolume& vol, int class_id);

// Covariance matrix behind eccentricity(); exposed for verification.
Sym3 organ_covariance(const LabelVolume& vol, int class_id);

// One row per class in `universe` (absent classes carry present=false),
// computed in a single pass over the volume. Deterministic regardless of
// thread count: all accumulators are integers.
FeatureSet compute_features(const LabelVolume& vol,
                            const std::string& sample_id,
                            const std::vector<int>& universe);

// Sorted list of class IDs (>= 1) present in the volume.
std::vector<int> observed_classes(const LabelVolume& vol);

}  // namespace bobqc

#endif  // BOBQC_SHAPE_FEATURES_HPP_
