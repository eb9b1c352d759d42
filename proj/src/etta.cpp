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

#include "bobqc/etta.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "bobqc/errors.hpp"
#include "bobqc/parallel.hpp"

namespace bobqc {

const char* adapt_mode_name(AdaptMode mode) {
  switch (mode) {
    case AdaptMode::kStats:
      return "stats";
    case AdaptMode::kEntropy:
      return "entropy";
    case AdaptMode::kBoth:
      return "both";
  }
  throw config_error("unknown adaptation mode");
}

AdaptMode adapt_mode_from_name(const std::string& name) {
  if (name == "stats") return AdaptMode::kStats;
  if (name == "entropy") return AdaptMode::kEntropy;
  if (name == "both") return AdaptMode::kBoth;
  throw config_error("unknown adaptation mode: \"" + name + "\"");
}

void AdaptConfig::validate() const {
  if (steps < 0) throw config_error("adaptation steps must be >= 0");
  if (!(lr > 0) || !std::isfinite(lr))
    throw config_error("adaptation learning rate must be finite and > 0");
  if (stats_epochs < 0) throw config_error("stats epochs must be >= 0");
}

namespace {

void check_probs(const ProbVolume& probs) {
  if (!probs.is_normalized(1e-6))
    throw data_error("probabilities do not sum to 1 per voxel");
}

double voxel_entropy(const ProbVolume& probs, std::int64_t i) {
  double h = 0;
  for (int c = 0; c < probs.channels; ++c) {
    const double p =
        probs.values[static_cast<std::size_t>(c + probs.channels * i)];
    if (p > 0) h -= p * std::log(p);
  }
  return h;
}

}  // namespace

double entropy_loss(const ProbVolume& probs) {
  check_probs(probs);
  const std::int64_t n = probs.dims.count();
  return blocked_sum(n, [&](std::int64_t i) { return voxel_entropy(probs, i); }) /
         static_cast<double>(n);
}

ScalarVolume entropy_map(const ProbVolume& probs) {
  check_probs(probs);
  ScalarVolume map = make_scalar_volume(probs.dims, probs.spacing);
  const std::int64_t n = probs.dims.count();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    map.voxels[static_cast<std::size_t>(i)] = voxel_entropy(probs, i);
  return map;
}

TinySegParams update_bn_statistics(TinySegParams params,
                                   const std::vector<ScalarVolume>& inputs,
                                   int epochs) {
  if (inputs.empty()) throw data_error("statistics update needs inputs");
  if (epochs < 0) throw config_error("stats epochs must be >= 0");
  for (int e = 0; e < epochs; ++e) forward(params, inputs, RunMode::kAdapt);
  return params;
}

AdaptResult adapt(const TinySegParams& trained, const ScalarVolume& x,
                  const AdaptConfig& cfg) {
  cfg.validate();
  AdaptResult result;
  result.params = trained;
  TinySegParams& P = result.params;

  if (cfg.mode != AdaptMode::kEntropy)
    P = update_bn_statistics(std::move(P), {x}, cfg.stats_epochs);

  ForwardCache cache;
  auto probs = forward_frozen_stats(P, {x}, &cache);
  double current = entropy_loss(probs[0]);
  if (!std::isfinite(current))
    throw numeric_error("non-finite entropy at adaptation step 0");
  result.entropy_trace.push_back(current);
  if (cfg.mode == AdaptMode::kStats) return result;

  for (int step = 1; step <= cfg.steps; ++step) {
    const TinySegGrads grads = backward_entropy(P, cache);
    const std::vector<double> direction = grads_bn_affine(grads);
    const std::vector<double> theta0 = theta_bn_affine(P);

    double lr = cfg.lr;
    int halvings = 0;
    for (;;) {
      std::vector<double> trial = theta0;
      for (std::size_t j = 0; j < trial.size(); ++j)
        trial[j] -= lr * direction[j];
      set_theta_bn_affine(P, trial);
      ForwardCache next;
      probs = forward_frozen_stats(P, {x}, &next);
      const double candidate = entropy_loss(probs[0]);
      if (!std::isfinite(candidate))
        throw numeric_error("non-finite entropy at adaptation step " +
                            std::to_string(step));
      if (!cfg.backtrack || candidate <= current || halvings >= 20) {
        // After 20 halvings the step is accepted as-is.
        current = candidate;
        cache = std::move(next);
        break;
      }
      lr *= 0.5;
      ++halvings;
    }
    result.entropy_trace.push_back(current);
  }
  return result;
}

InferResult infer(const TinySegParams& params, const ScalarVolume& x) {
  TinySegParams copy = params;  // eval never mutates; the copy guarantees it
  auto probs = forward(copy, {x}, RunMode::kEval);
  ProbVolume& p = probs[0];

  LabelVolume labels = make_label_volume(p.dims, p.spacing);
  const std::int64_t n = p.dims.count();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    int best = 0;
    double best_p = p.values[static_cast<std::size_t>(0 + p.channels * i)];
    for (int c = 1; c < p.channels; ++c) {
      const double v = p.values[static_cast<std::size_t>(c + p.channels * i)];
      if (v > best_p) {
        best_p = v;
        best = c;
      }
    }
    labels.voxels[static_cast<std::size_t>(i)] =
        static_cast<std::uint16_t>(best);
  }
  return InferResult{std::move(p), std::move(labels)};
}

void write_entropy_trace_csv(const std::vector<double>& trace,
                             const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write entropy trace: " + path);
  out << "step,entropy\n";
  char buf[40];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", trace[i]);
    out << i << ',' << buf << "\n";
  }
  if (!out) throw io_error("write failure on entropy trace: " + path);
}

}  // namespace bobqc
