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

#ifndef BOBQC_TINYSEG_HPP_
#define BOBQC_TINYSEG_HPP_

// A small fixed-architecture 3D segmentation network with batch
// normalization, written directly in double precision with hand-derived
// reverse-mode gradients. Three conv(3x3x3)+BN+ReLU stages (1->8->8->16)
// feed a 1x1x1 classification head and a channelwise softmax.
//
// The trainable parameters split into the BN affine set (every gamma and
// beta) and the fixed set (everything else); adaptation code relies on that
// partition being exact.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bobqc/volume.hpp"

namespace bobqc {

inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.1;
inline constexpr double kDiceSmooth = 1e-5;

struct ConvLayer {
  int cin = 0, cout = 0, ksize = 0;  // ksize 3 (padded same) or 1
  std::vector<double> w;             // [((co*cin)+ci)*k^3 + tap]
  std::vector<double> b;             // [co]
};

struct BnLayer {
  std::vector<double> gamma, beta;               // adapted set
  std::vector<double> running_mean, running_var; // eval-mode statistics
};

struct TinySegParams {
  int num_classes = 0;
  std::uint64_t seed = 0;
  ConvLayer conv1, conv2, conv3, head;
  BnLayer bn1, bn2, bn3;
};

// Kernels uniform in +-sqrt(6 / fan_in); gamma 1, beta 0, running mean 0,
// running var 1. Deterministic in seed.
TinySegParams init_params(std::uint64_t seed, int num_classes);

enum class RunMode { kTrain, kEval, kAdapt };

// Everything backward needs from a batch-statistics forward pass.
struct ForwardCache {
  bool valid = false;
  Dims dims;
  int batch = 0;
  std::vector<double> input;               // [b][1][vox]
  std::vector<double> z1, z2, z3;          // conv outputs
  std::vector<double> y1, y2, y3;          // post-ReLU activations
  std::vector<double> mean1, var1, mean2, var2, mean3, var3;  // batch stats
  std::vector<double> logits;              // [b][C][vox]
  std::vector<double> probs;               // softmax of logits
};

// Train and adapt modes normalize with batch statistics and fold them into
// the running statistics with momentum 0.1 (running variance stores the
// biased batch variance); eval mode reads the running statistics and leaves
// params untouched.
std::vector<ProbVolume> forward(TinySegParams& params,
                                const std::vector<ScalarVolume>& batch,
                                RunMode mode, ForwardCache* cache = nullptr);

// Batch-statistics forward that never commits running statistics. The
// entropy fine-tuning loop and the gradient checks evaluate through this so
// repeated calls are pure.
std::vector<ProbVolume> forward_frozen_stats(
    const TinySegParams& params, const std::vector<ScalarVolume>& batch,
    ForwardCache* cache = nullptr);

struct LossTerms {
  double total = 0, cross_entropy = 0, dice = 0;  // dice term is 1 - mean DSC
};

// Mean voxel cross-entropy of the true class plus one minus the mean soft
// Dice over classes (smooth 1e-5), weighted.
LossTerms loss_supervised(const std::vector<ProbVolume>& probs,
                          const std::vector<const LabelVolume*>& labels,
                          double ce_weight = 1.0, double dice_weight = 1.0);

struct TinySegGrads {
  ConvLayer conv1, conv2, conv3, head;  // same shapes, w/b hold gradients
  std::vector<double> bn1_gamma, bn1_beta;
  std::vector<double> bn2_gamma, bn2_beta;
  std::vector<double> bn3_gamma, bn3_beta;
};

// Exact reverse-mode gradients of the supervised loss through the cached
// batch-statistics forward, including the flow through batch mean and
// variance.
TinySegGrads backward_supervised(const TinySegParams& params,
                                 const ForwardCache& cache,
                                 const std::vector<const LabelVolume*>& labels,
                                 double ce_weight = 1.0,
                                 double dice_weight = 1.0);

// Same machinery for the mean prediction-entropy objective.
TinySegGrads backward_entropy(const TinySegParams& params,
                              const ForwardCache& cache);

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999;
  int epochs = 1;
  int batch_size = 4;
  std::uint64_t seed = 0;
  double ce_weight = 1.0, dice_weight = 1.0;

  void validate() const;  // throws config_error
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

// Adam-style moment updates (eps 1e-8, no weight decay), seeded shuffle
// order, deterministic end to end.
TrainResult train(TinySegParams& params,
                  const std::vector<std::pair<ScalarVolume, LabelVolume>>& dataset,
                  const TrainConfig& cfg);

// Flat copies of the two parameter partitions, declared order. Used by
// freeze-contract checks and the adaptation update.
std::vector<double> theta_fixed(const TinySegParams& params);
std::vector<double> theta_bn_affine(const TinySegParams& params);
void set_theta_bn_affine(TinySegParams& params, const std::vector<double>& values);
std::vector<double> grads_bn_affine(const TinySegGrads& grads);

// Versioned little-endian binary container; round-trips bit-exactly.
void save_checkpoint(const TinySegParams& params, const std::string& path);
TinySegParams load_checkpoint(const std::string& path);

}  // namespace bobqc

#endif  // BOBQC_TINYSEG_HPP_
