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

#ifndef BOBQC_PHANTOM_HPP_
#define BOBQC_PHANTOM_HPP_

// Synthetic labeled body phantoms: an ellipsoidal body carrying ellipsoidal
// organs, with seeded Gaussian intensity noise and a set of deterministic
// label corruptions (erode, elongate, drop, spill) modeling real annotation
// failure modes. Geometry is analytic, so shape measurements have known
// ground truth.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bobqc/manifest.hpp"
#include "bobqc/volume.hpp"

namespace bobqc {

struct OrganSpec {
  int class_id = 0;
  std::array<double, 3> center_mm{};     // voxel-center coordinate frame
  std::array<double, 3> semi_axes_mm{};
  double intensity = 0.0;
  double sigma = 0.0;
};

struct PhantomSpec {
  Dims dims;
  Spacing spacing;
  std::array<double, 3> body_center_mm{};
  std::array<double, 3> body_axes_mm{};
  int body_class = 1;
  double body_intensity = 0.0;
  double body_sigma = 0.0;
  std::vector<OrganSpec> organs;  // later entries win on overlap
  std::uint64_t seed = 0;
};

enum class CorruptionKind { kErode, kElongate, kDrop, kSpill };

const char* corruption_name(CorruptionKind kind);
CorruptionKind corruption_from_name(const std::string& name);

struct Corruption {
  CorruptionKind kind = CorruptionKind::kErode;
  int target_class = 2;
  double fraction = 0.8;  // erode
  int rod_length = 12;    // elongate, voxels
  int spill_steps = 2;    // spill
  std::uint64_t seed = 0; // reserved; current corruptions are deterministic

  void validate() const;  // throws config_error
};

struct PhantomSample {
  ScalarVolume intensity;
  LabelVolume labels;
};

// Voxel centers at index*spacing. Labels: organs override body, body
// overrides background. Intensity: class mean plus sigma times a Gaussian
// drawn from a per-voxel stream of the documented PRNG (background stays
// exactly zero).
PhantomSample generate(const PhantomSpec& spec);

// Removed organ voxels are relabeled to the modal 6-neighbor class of the
// organ boundary (ties to the lowest id).
LabelVolume corrupt(const LabelVolume& labels, const Corruption& corruption);

// Four-organ QC template on a grid^3 lattice at 1.5 mm spacing; geometry
// scales with grid/48.
PhantomSpec default_template(int grid = 48);

// Two-organ template at 2 mm spacing, small enough to train on.
PhantomSpec tiny_template(int grid = 20);

// Per-sample perturbation: each organ gets a common scale draw plus small
// per-axis wiggle (total within +-5 percent of the template semi-axes) and
// a center offset within +-5 percent of each semi-axis. The returned spec's
// noise seed is derived from sample_seed.
PhantomSpec jitter_spec(const PhantomSpec& tmpl, std::uint64_t sample_seed);

struct CohortOptions {
  int n = 100;
  std::vector<int> corrupt_indices;      // subset of [0, n)
  std::vector<Corruption> corruptions;   // cycled across corrupt_indices
  std::uint64_t seed = 0;
  std::string out_dir;
};

// Default corruption rotation for default_template targets.
std::vector<Corruption> default_corruptions();

// Writes intensity/label NIfTI pairs into out_dir and returns the manifest
// (paths relative to out_dir). Sample i draws everything from
// derive_seed(seed, i), so generation order does not matter.
Manifest make_cohort(const PhantomSpec& tmpl, const CohortOptions& opts);

}  // namespace bobqc

#endif  // BOBQC_PHANTOM_HPP_
