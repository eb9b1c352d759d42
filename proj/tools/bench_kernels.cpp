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

// Compares the OpenMP production kernels against the serial reference
// implementations on phantom data. Thread count follows BOBQC_THREADS.

#include <benchmark/benchmark.h>

#include "bobqc/parallel.hpp"
#include "bobqc/phantom.hpp"
#include "bobqc/reference.hpp"
#include "bobqc/seg_metrics.hpp"
#include "bobqc/shape_features.hpp"
#include "bobqc/tinyseg.hpp"
#include "bobqc/volume.hpp"

namespace {

const bobqc::PhantomSample& sample48() {
  static const bobqc::PhantomSample s =
      bobqc::generate(bobqc::default_template(48));
  return s;
}

const bobqc::PhantomSample& shifted48() {
  static const bobqc::PhantomSample s = [] {
    bobqc::PhantomSpec spec = bobqc::default_template(48);
    spec.seed = 99;
    for (bobqc::OrganSpec& o : spec.organs) o.center_mm[0] += 1.5;
    return bobqc::generate(spec);
  }();
  return s;
}

const bobqc::PhantomSample& sample20() {
  static const bobqc::PhantomSample s =
      bobqc::generate(bobqc::tiny_template(20));
  return s;
}

void BM_SurfaceAreaParallel(benchmark::State& state) {
  const bobqc::LabelVolume& v = sample48().labels;
  for (auto _ : state)
    benchmark::DoNotOptimize(bobqc::surface_area(v, 2));
}
BENCHMARK(BM_SurfaceAreaParallel)->Unit(benchmark::kMillisecond);

void BM_SurfaceAreaSerial(benchmark::State& state) {
  const bobqc::LabelVolume& v = sample48().labels;
  for (auto _ : state)
    benchmark::DoNotOptimize(bobqc::ref::surface_area(v, 2));
}
BENCHMARK(BM_SurfaceAreaSerial)->Unit(benchmark::kMillisecond);

void BM_FeatureTableParallel(benchmark::State& state) {
  const bobqc::LabelVolume& v = sample48().labels;
  for (auto _ : state)
    benchmark::DoNotOptimize(bobqc::compute_features(v, "s", {1, 2, 3, 4, 5}));
}
BENCHMARK(BM_FeatureTableParallel)->Unit(benchmark::kMillisecond);

void BM_DiceParallel(benchmark::State& state) {
  const bobqc::LabelVolume& a = sample48().labels;
  const bobqc::LabelVolume& b = shifted48().labels;
  for (auto _ : state)
    benchmark::DoNotOptimize(bobqc::dice(a, b, 2));
}
BENCHMARK(BM_DiceParallel)->Unit(benchmark::kMillisecond);

void BM_DiceSerial(benchmark::State& state) {
  const bobqc::LabelVolume& a = sample48().labels;
  const bobqc::LabelVolume& b = shifted48().labels;
  for (auto _ : state)
    benchmark::DoNotOptimize(bobqc::ref::dice(a, b, 2));
}
BENCHMARK(BM_DiceSerial)->Unit(benchmark::kMillisecond);

void BM_HausdorffParallel(benchmark::State& state) {
  const bobqc::LabelVolume& a = sample48().labels;
  const bobqc::LabelVolume& b = shifted48().labels;
  for (auto _ : state)
    benchmark::DoNotOptimize(bobqc::hausdorff(a, b, 2));
}
BENCHMARK(BM_HausdorffParallel)->Unit(benchmark::kMillisecond);

void BM_HausdorffSerial(benchmark::State& state) {
  const bobqc::LabelVolume& a = sample48().labels;
  const bobqc::LabelVolume& b = shifted48().labels;
  for (auto _ : state)
    benchmark::DoNotOptimize(bobqc::ref::hausdorff(a, b, 2));
}
BENCHMARK(BM_HausdorffSerial)->Unit(benchmark::kMillisecond);

void BM_NetworkForwardEval(benchmark::State& state) {
  bobqc::TinySegParams params = bobqc::init_params(7, 4);
  const std::vector<bobqc::ScalarVolume> batch{sample20().intensity};
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        bobqc::forward(params, batch, bobqc::RunMode::kEval, nullptr));
  }
}
BENCHMARK(BM_NetworkForwardEval)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
  bobqc::init_threads_from_env();
  benchmark::Initialize(&argc, argv);
  benchmark::RunSpecifiedBenchmarks();
  return 0;
}
