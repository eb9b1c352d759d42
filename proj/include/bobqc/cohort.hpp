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

#ifndef BOBQC_COHORT_HPP_
#define BOBQC_COHORT_HPP_

// Cohort-level quality control. A feature table collects per-organ shape
// measurements across samples; percentile bounds per class and per feature
// mark a row inaccurate when at least k features fall outside, with an
// interquartile-range fence on volume as the baseline method.

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bobqc/manifest.hpp"
#include "bobqc/shape_features.hpp"

namespace bobqc {

enum class Feature { kVolume, kSphericity, kEccentricity };

// Stable wire names, used in JSON and CLI flags.
const char* feature_name(Feature f);
Feature feature_from_name(const std::string& name);

enum class FilterScope { kPerOrgan, kWholeSample };

struct SolfConfig {
  double epsilon = 2.0;  // total percent excluded, half per tail
  std::vector<Feature> features{Feature::kVolume, Feature::kSphericity,
                                Feature::kEccentricity};
  int k = 2;
  FilterScope scope = FilterScope::kPerOrgan;
  bool missing_is_inaccurate = false;

  void validate() const;  // throws config_error
};

struct CohortTable {
  std::vector<OrganFeatures> rows;
  std::vector<int> universe;
};

struct FeatureBounds {
  int class_id = 0;
  bool usable = false;  // requires >= 2 present rows
  std::map<Feature, std::pair<double, double>> range;
};

struct FilterVerdict {
  std::string sample_id;
  int class_id = 0;
  bool oor_volume = false;
  bool oor_sphericity = false;
  bool oor_eccentricity = false;
  bool missing = false;
  bool inaccurate = false;
};

struct ClassHistogram {
  int class_id = 0;
  std::vector<double> edges;  // bins+1 ascending
  std::vector<std::int64_t> count_all;
  std::vector<std::int64_t> count_kept;
};

// Rank interpolation: r = p/100*(N-1), linear between adjacent order
// statistics. Values need not be pre-sorted.
double percentile(std::vector<double> values, double p);

std::vector<FeatureBounds> solf_bounds(const CohortTable& table,
                                       const SolfConfig& cfg);

std::vector<FilterVerdict> solf_verdicts(const CohortTable& table,
                                         const std::vector<FeatureBounds>& bounds,
                                         const SolfConfig& cfg);

std::vector<FilterVerdict> iqr_verdicts(const CohortTable& table,
                                        double factor = 1.5);

// Per-organ scope annotates each sample with its inaccurate classes;
// whole-sample scope drops any sample that has one.
Manifest apply_filter(const Manifest& manifest,
                      const std::vector<FilterVerdict>& verdicts,
                      FilterScope scope);

std::vector<ClassHistogram> distribution_report(
    const CohortTable& table, const std::vector<FilterVerdict>& verdicts,
    int bins = 50);

// Serialization. Floats are printed with 9 significant digits; absent
// organs leave the shape columns empty.
void write_feature_csv(const CohortTable& table, const std::string& path);
CohortTable read_feature_csv(const std::string& path);

void write_verdict_csv(const std::vector<FilterVerdict>& verdicts,
                       const std::string& path);
std::vector<FilterVerdict> read_verdict_csv(const std::string& path);

void write_bounds_json(const std::vector<FeatureBounds>& bounds,
                       const SolfConfig& cfg, const std::string& path);
std::vector<FeatureBounds> read_bounds_json(const std::string& path,
                                            SolfConfig* cfg_out = nullptr);

void write_histogram_csv(const std::vector<ClassHistogram>& hists,
                         const std::string& path);

// Single-panel SVG of one class histogram, kept vs all.
void write_histogram_svg(const ClassHistogram& hist, const std::string& path);

}  // namespace bobqc

#endif  // BOBQC_COHORT_HPP_
