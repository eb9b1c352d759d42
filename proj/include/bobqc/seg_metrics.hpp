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

#ifndef BOBQC_SEG_METRICS_HPP_
#define BOBQC_SEG_METRICS_HPP_

// Overlap and boundary-distance metrics between label volumes.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bobqc/volume.hpp"

namespace bobqc {

struct ClassMetrics {
  double dice = 0.0;
  std::optional<double> hausdorff_mm;  // unset when either mask is empty
};

struct SegMetrics {
  std::map<int, ClassMetrics> per_class;
  double mean_dice = 0.0;
  std::optional<double> mean_hausdorff_mm;  // over classes with a defined value
  int skipped_classes = 0;                  // classes without a defined value
};

// 2|P & G| / (|P| + |G|); 1.0 when both masks are empty.
double dice(const LabelVolume& pred, const LabelVolume& gt, int class_id);

// Symmetric max of directed greatest nearest-neighbor distances between
// boundary voxel centers (6-connectivity boundary, physical mm). Unset when
// either mask is empty.
std::optional<double> hausdorff(const LabelVolume& pred, const LabelVolume& gt,
                                int class_id);

SegMetrics evaluate(const LabelVolume& pred, const LabelVolume& gt,
                    const std::vector<int>& universe);

void write_metrics_json(const SegMetrics& m, const std::string& path);
SegMetrics read_metrics_json(const std::string& path);

}  // namespace bobqc

#endif  // BOBQC_SEG_METRICS_HPP_
