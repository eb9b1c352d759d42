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

#ifndef BOBQC_ETTA_HPP_
#define BOBQC_ETTA_HPP_

// Test-time adaptation by entropy minimization. Two independent mechanisms:
// recalibrating BN running statistics on test inputs, and gradient descent
// on the BN scale/shift parameters against the mean prediction entropy.
// Everything outside the BN layers stays bitwise frozen.

#include <string>
#include <vector>

#include "bobqc/tinyseg.hpp"
#include "bobqc/volume.hpp"

namespace bobqc {

enum class AdaptMode { kStats, kEntropy, kBoth };

const char* adapt_mode_name(AdaptMode mode);
AdaptMode adapt_mode_from_name(const std::string& name);

struct AdaptConfig {
  AdaptMode mode = AdaptMode::kBoth;
  int steps = 10;
  double lr = 1e-3;
  int stats_epochs = 1;
  bool backtrack = true;  // halve lr (up to 20 times) if a step raises entropy

  void validate() const;  // throws config_error
};

// Mean over voxels of -sum_c p log p, with 0 log 0 = 0.
double entropy_loss(const ProbVolume& probs);

// Per-voxel entropies; the map's mean equals entropy_loss.
ScalarVolume entropy_map(const ProbVolume& probs);

// Adapt-mode forward sweeps that only move running_mean / running_var.
TinySegParams update_bn_statistics(TinySegParams params,
                                   const std::vector<ScalarVolume>& inputs,
                                   int epochs);

struct AdaptResult {
  TinySegParams params;
  std::vector<double> entropy_trace;  // entry 0 is the pre-update entropy
};

// Stats pass (per mode), then `steps` descent updates of gamma/beta against
// the entropy of a frozen-statistics forward on x. Running statistics are
// not touched by the descent loop.
AdaptResult adapt(const TinySegParams& trained, const ScalarVolume& x,
                  const AdaptConfig& cfg);

struct InferResult {
  ProbVolume probs;
  LabelVolume labels;  // argmax, ties to the lowest class id
};

InferResult infer(const TinySegParams& params, const ScalarVolume& x);

void write_entropy_trace_csv(const std::vector<double>& trace,
                             const std::string& path);

}  // namespace bobqc

#endif  // BOBQC_ETTA_HPP_
