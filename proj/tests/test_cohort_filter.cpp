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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "bobqc/cohort.hpp"
#include "bobqc/errors.hpp"
#include "bobqc/manifest.hpp"
#include "bobqc/reference.hpp"
#include "bobqc/rng.hpp"
#include "test_util.hpp"

using namespace bobqc;
using testutil::TempDir;

namespace {

OrganFeatures row(const std::string& id, int cls, double nv, double sph,
                  double ecc) {
  OrganFeatures r;
  r.sample_id = id;
  r.class_id = cls;
  r.present = true;
  r.voxel_count = 100;
  r.normalized_volume = nv;
  r.surface_area_mm2 = 50.0;
  r.sphericity = sph;
  r.eccentricity = ecc;
  return r;
}

OrganFeatures absent_row(const std::string& id, int cls) {
  OrganFeatures r;
  r.sample_id = id;
  r.class_id = cls;
  r.present = false;
  return r;
}

// N typical rows for one class plus optional extremes appended by the test.
CohortTable typical_table(int n, int cls = 2) {
  CohortTable t;
  t.universe = {cls};
  for (int i = 0; i < n; ++i)
    t.rows.push_back(row("s" + std::to_string(1000 + i), cls,
                         0.010 + 0.0001 * i, 0.70 + 0.001 * i,
                         0.40 + 0.002 * i));
  return t;
}

int flagged_count(const std::vector<FilterVerdict>& v) {
  int n = 0;
  for (const FilterVerdict& x : v) n += x.inaccurate;
  return n;
}

const FilterVerdict& find_verdict(const std::vector<FilterVerdict>& v,
                                  const std::string& id, int cls) {
  for (const FilterVerdict& x : v)
    if (x.sample_id == id && x.class_id == cls) return x;
  REQUIRE(false);
  return v.front();
}

}  // namespace

TEST_CASE("percentile rank interpolation on 1..100") {
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[static_cast<std::size_t>(i)] = i + 1;
  CHECK(percentile(v, 0.0) == 1.0);
  CHECK(percentile(v, 100.0) == 100.0);
  CHECK(percentile(v, 25.0) == doctest::Approx(25.75).epsilon(1e-15));
  CHECK(percentile(v, 50.0) == doctest::Approx(50.5).epsilon(1e-15));
  CHECK(percentile(v, 75.0) == doctest::Approx(75.25).epsilon(1e-15));
  CHECK(percentile(v, 1.0) == doctest::Approx(1.99).epsilon(1e-15));
  CHECK(percentile(v, 99.0) == doctest::Approx(99.01).epsilon(1e-15));
}

TEST_CASE("percentile handles unsorted input, singletons, and errors") {
  CHECK(percentile({5.0, 1.0, 3.0}, 50.0) == 3.0);
  CHECK(percentile({42.0}, 0.0) == 42.0);
  CHECK(percentile({42.0}, 63.0) == 42.0);
  CHECK(percentile({42.0}, 100.0) == 42.0);
  CHECK_THROWS_AS(percentile({}, 50.0), data_error);
  CHECK_THROWS_AS(percentile({1.0}, -0.5), config_error);
  CHECK_THROWS_AS(percentile({1.0}, 100.5), config_error);
  CHECK_THROWS_AS(percentile({1.0, std::nan("")}, 50.0), data_error);
}

TEST_CASE("percentile is monotone in p and matches the reference oracle") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.next_below(50));
    std::vector<double> v(static_cast<std::size_t>(n));
    for (double& x : v) x = rng.uniform(-100.0, 100.0);
    double prev = -1e300;
    for (double p : {0.0, 0.5, 1.0, 2.5, 25.0, 50.0, 97.5, 99.5, 100.0}) {
      const double got = percentile(v, p);
      const double want = ref::percentile(v, p);
      CHECK(std::abs(got - want) <=
            1e-12 * std::max({1.0, std::abs(got), std::abs(want)}));
      CHECK(got >= prev);
      prev = got;
    }
  }
}

TEST_CASE("bounds use half the excluded mass per tail") {
  // 100 volumes 0.001..0.100: epsilon=2 keeps [P1, P99] = [0.00199, 0.09901].
  CohortTable t;
  t.universe = {1};
  for (int i = 1; i <= 100; ++i)
    t.rows.push_back(row("s" + std::to_string(1000 + i), 1, 0.001 * i, 0.8, 0.5));
  SolfConfig cfg;
  cfg.epsilon = 2.0;
  const auto bounds = solf_bounds(t, cfg);
  REQUIRE(bounds.size() == 1);
  CHECK(bounds[0].usable);
  const auto [lo, hi] = bounds[0].range.at(Feature::kVolume);
  CHECK(lo == doctest::Approx(0.00199).epsilon(1e-12));
  CHECK(hi == doctest::Approx(0.09901).epsilon(1e-12));
}

TEST_CASE("row is inaccurate when at least k features leave their range") {
  CohortTable t = typical_table(60);
  // Volume and sphericity far outside; eccentricity typical.
  OrganFeatures bad = row("s0999", 2, 0.5, 0.99, 0.41);
  t.rows.push_back(bad);

  SolfConfig cfg;
  cfg.epsilon = 2.0;

  SUBCASE("k=2 flags the row") {
    const auto verdicts = solf_verdicts(t, solf_bounds(t, cfg), cfg);
    const FilterVerdict& v = find_verdict(verdicts, "s0999", 2);
    CHECK(v.oor_volume);
    CHECK(v.oor_sphericity);
    CHECK_FALSE(v.oor_eccentricity);
    CHECK(v.inaccurate);
  }
  SUBCASE("k=3 needs all three") {
    cfg.k = 3;
    const auto verdicts = solf_verdicts(t, solf_bounds(t, cfg), cfg);
    CHECK_FALSE(find_verdict(verdicts, "s0999", 2).inaccurate);
  }
  SUBCASE("k=1 flags tail rows too") {
    cfg.k = 1;
    const auto verdicts = solf_verdicts(t, solf_bounds(t, cfg), cfg);
    CHECK(find_verdict(verdicts, "s0999", 2).inaccurate);
    CHECK(flagged_count(verdicts) > 1);  // natural tails join in
  }
}

TEST_CASE("epsilon zero keeps every row, bounds inclusive at the edges") {
  CohortTable t = typical_table(40);
  SolfConfig cfg;
  cfg.epsilon = 0.0;
  cfg.k = 1;
  const auto verdicts = solf_verdicts(t, solf_bounds(t, cfg), cfg);
  CHECK(flagged_count(verdicts) == 0);
}

TEST_CASE("flagged set grows monotonically with epsilon") {
  Rng rng(77);
  CohortTable t;
  t.universe = {1, 2};
  for (int i = 0; i < 80; ++i) {
    t.rows.push_back(row("s" + std::to_string(100 + i), 1,
                         rng.uniform(0.01, 0.05), rng.uniform(0.6, 0.9),
                         rng.uniform(0.2, 0.8)));
    t.rows.push_back(row("s" + std::to_string(100 + i), 2,
                         rng.uniform(0.001, 0.01), rng.uniform(0.5, 0.7),
                         rng.uniform(0.3, 0.9)));
  }
  SolfConfig cfg;
  cfg.k = 2;
  std::set<std::pair<std::string, int>> prev;
  for (double eps : {0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 10.0, 20.0}) {
    cfg.epsilon = eps;
    const auto verdicts = solf_verdicts(t, solf_bounds(t, cfg), cfg);
    std::set<std::pair<std::string, int>> cur;
    for (const FilterVerdict& v : verdicts)
      if (v.inaccurate) cur.insert({v.sample_id, v.class_id});
    CHECK(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
    prev = std::move(cur);
  }
}

TEST_CASE("verdicts are invariant under uniform feature rescaling") {
  Rng rng(99);
  CohortTable t;
  t.universe = {3};
  for (int i = 0; i < 50; ++i)
    t.rows.push_back(row("s" + std::to_string(200 + i), 3,
                         rng.uniform(0.001, 0.2), rng.uniform(0.3, 1.0),
                         rng.uniform(0.0, 1.0)));
  CohortTable scaled = t;
  for (OrganFeatures& r : scaled.rows) r.normalized_volume *= 1000.0;

  SolfConfig cfg;
  cfg.epsilon = 6.0;
  cfg.k = 1;
  const auto v1 = solf_verdicts(t, solf_bounds(t, cfg), cfg);
  const auto v2 = solf_verdicts(scaled, solf_bounds(scaled, cfg), cfg);
  REQUIRE(v1.size() == v2.size());
  for (std::size_t i = 0; i < v1.size(); ++i)
    CHECK(v1[i].inaccurate == v2[i].inaccurate);
}

TEST_CASE("missing organs: reported, policy decides the verdict") {
  CohortTable t = typical_table(30);
  t.rows.push_back(absent_row("s0001", 2));
  SolfConfig cfg;

  SUBCASE("default leaves missing rows accurate") {
    const auto verdicts = solf_verdicts(t, solf_bounds(t, cfg), cfg);
    const FilterVerdict& v = find_verdict(verdicts, "s0001", 2);
    CHECK(v.missing);
    CHECK_FALSE(v.inaccurate);
    CHECK_FALSE(v.oor_volume);
  }
  SUBCASE("missing_is_inaccurate flips them") {
    cfg.missing_is_inaccurate = true;
    const auto verdicts = solf_verdicts(t, solf_bounds(t, cfg), cfg);
    const FilterVerdict& v = find_verdict(verdicts, "s0001", 2);
    CHECK(v.missing);
    CHECK(v.inaccurate);
  }
}

TEST_CASE("classes with fewer than two present rows never flag") {
  CohortTable t = typical_table(20, 1);
  t.universe = {1, 9};
  t.rows.push_back(row("s1000", 9, 0.5, 0.9, 0.9));  // single row for class 9
  SolfConfig cfg;
  cfg.k = 1;
  const auto bounds = solf_bounds(t, cfg);
  REQUIRE(bounds.size() == 2);
  CHECK(bounds[0].usable);
  CHECK_FALSE(bounds[1].usable);
  const auto verdicts = solf_verdicts(t, bounds, cfg);
  CHECK_FALSE(find_verdict(verdicts, "s1000", 9).inaccurate);
}

TEST_CASE("interquartile fence on 1..100 plus one gross outlier") {
  CohortTable t;
  t.universe = {1};
  for (int i = 1; i <= 100; ++i)
    t.rows.push_back(
        row("s" + std::to_string(1000 + i), 1, static_cast<double>(i), 0.8, 0.5));

  SUBCASE("clean 1..100 stays inside the fences") {
    // Q1 = 25.75, Q3 = 75.25, fences [-48.5, 149.5].
    const auto verdicts = iqr_verdicts(t, 1.5);
    CHECK(flagged_count(verdicts) == 0);
  }
  SUBCASE("appended 500 is flagged on volume only") {
    t.rows.push_back(row("s2000", 1, 500.0, 0.8, 0.5));
    const auto verdicts = iqr_verdicts(t, 1.5);
    CHECK(flagged_count(verdicts) == 1);
    const FilterVerdict& v = find_verdict(verdicts, "s2000", 1);
    CHECK(v.oor_volume);
    CHECK(v.inaccurate);
    CHECK_FALSE(v.oor_sphericity);
  }
  SUBCASE("larger factor widens the fence") {
    t.rows.push_back(row("s2000", 1, 180.0, 0.8, 0.5));
    CHECK(flagged_count(iqr_verdicts(t, 1.5)) == 1);
    CHECK(flagged_count(iqr_verdicts(t, 3.0)) == 0);
  }
}

TEST_CASE("config validation") {
  SolfConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  SUBCASE("epsilon below zero") {
    cfg.epsilon = -1.0;
    CHECK_THROWS_AS(cfg.validate(), config_error);
  }
  SUBCASE("epsilon at 100") {
    cfg.epsilon = 100.0;
    CHECK_THROWS_AS(cfg.validate(), config_error);
  }
  SUBCASE("k zero") {
    cfg.k = 0;
    CHECK_THROWS_AS(cfg.validate(), config_error);
  }
  SUBCASE("k above feature count") {
    cfg.k = 4;
    CHECK_THROWS_AS(cfg.validate(), config_error);
  }
  SUBCASE("empty feature list") {
    cfg.features.clear();
    CHECK_THROWS_AS(cfg.validate(), config_error);
  }
  SUBCASE("duplicate features") {
    cfg.features = {Feature::kVolume, Feature::kVolume};
    cfg.k = 2;
    CHECK_THROWS_AS(cfg.validate(), config_error);
  }
}

TEST_CASE("feature names round trip; unknown rejected") {
  for (Feature f :
       {Feature::kVolume, Feature::kSphericity, Feature::kEccentricity})
    CHECK(feature_from_name(feature_name(f)) == f);
  CHECK_THROWS_AS(feature_from_name("volume "), config_error);
  CHECK_THROWS_AS(feature_from_name("dice"), config_error);
}

TEST_CASE("feature csv round trip") {
  TempDir tmp("cohort");
  CohortTable t = typical_table(5);
  t.rows.push_back(absent_row("s2000", 2));
  const std::string p1 = tmp.str("f1.csv");
  const std::string p2 = tmp.str("f2.csv");
  write_feature_csv(t, p1);

  const CohortTable back = read_feature_csv(p1);
  REQUIRE(back.rows.size() == t.rows.size());
  CHECK(back.universe == t.universe);
  CHECK(back.rows[0].sample_id == "s1000");
  CHECK(back.rows[0].voxel_count == 100);
  CHECK(back.rows[0].normalized_volume ==
        doctest::Approx(t.rows[0].normalized_volume).epsilon(1e-8));
  CHECK_FALSE(back.rows[5].present);
  CHECK_FALSE(back.rows[5].sphericity.has_value());

  // Write-read-write is byte stable.
  write_feature_csv(back, p2);
  CHECK(testutil::slurp(p1) == testutil::slurp(p2));

  // Header is part of the contract.
  std::ifstream in(p1);
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "sample_id,class_id,present,voxel_count,normalized_volume,"
        "surface_area_mm2,sphericity,eccentricity");
}

TEST_CASE("feature csv rejects malformed input") {
  TempDir tmp("cohort");
  const std::string p = tmp.str("bad.csv");
  const auto write_text = [&](const std::string& text) {
    std::ofstream out(p);
    out << text;
  };
  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_feature_csv(tmp.str("missing.csv")), io_error);
  }
  SUBCASE("wrong header") {
    write_text("sample,class\ns1,1\n");
    CHECK_THROWS_AS(read_feature_csv(p), data_error);
  }
  SUBCASE("wrong column count") {
    write_text(
        "sample_id,class_id,present,voxel_count,normalized_volume,"
        "surface_area_mm2,sphericity,eccentricity\ns1,1,1,5\n");
    CHECK_THROWS_AS(read_feature_csv(p), data_error);
  }
  SUBCASE("absent row carrying shape values") {
    write_text(
        "sample_id,class_id,present,voxel_count,normalized_volume,"
        "surface_area_mm2,sphericity,eccentricity\ns1,1,0,0,0,12.5,0.8,0.5\n");
    CHECK_THROWS_AS(read_feature_csv(p), data_error);
  }
  SUBCASE("non-numeric value") {
    write_text(
        "sample_id,class_id,present,voxel_count,normalized_volume,"
        "surface_area_mm2,sphericity,eccentricity\ns1,1,1,ten,0.1,12.5,0.8,0.5\n");
    CHECK_THROWS_AS(read_feature_csv(p), data_error);
  }
  SUBCASE("duplicate sample and class pair") {
    CohortTable t = typical_table(2);
    t.rows.push_back(t.rows[0]);
    CHECK_THROWS_AS(write_feature_csv(t, p), data_error);
  }
}

TEST_CASE("verdict csv round trip with exact header") {
  TempDir tmp("cohort");
  CohortTable t = typical_table(25);
  t.rows.push_back(row("s0998", 2, 0.9, 0.2, 0.99));
  SolfConfig cfg;
  cfg.k = 2;
  const auto verdicts = solf_verdicts(t, solf_bounds(t, cfg), cfg);
  const std::string p = tmp.str("v.csv");
  write_verdict_csv(verdicts, p);
  const auto back = read_verdict_csv(p);
  REQUIRE(back.size() == verdicts.size());
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    CHECK(back[i].sample_id == verdicts[i].sample_id);
    CHECK(back[i].class_id == verdicts[i].class_id);
    CHECK(back[i].oor_volume == verdicts[i].oor_volume);
    CHECK(back[i].oor_sphericity == verdicts[i].oor_sphericity);
    CHECK(back[i].oor_eccentricity == verdicts[i].oor_eccentricity);
    CHECK(back[i].missing == verdicts[i].missing);
    CHECK(back[i].inaccurate == verdicts[i].inaccurate);
  }
  std::ifstream in(p);
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "sample_id,class_id,oor_volume,oor_sphericity,oor_eccentricity,"
        "missing,inaccurate");
}

TEST_CASE("bounds json round trip preserves ranges and config") {
  TempDir tmp("cohort");
  CohortTable t = typical_table(30, 4);
  SolfConfig cfg;
  cfg.epsilon = 5.0;
  cfg.k = 1;
  const auto bounds = solf_bounds(t, cfg);
  const std::string p = tmp.str("b.json");
  write_bounds_json(bounds, cfg, p);

  SolfConfig cfg_back;
  const auto back = read_bounds_json(p, &cfg_back);
  REQUIRE(back.size() == 1);
  CHECK(back[0].class_id == 4);
  CHECK(back[0].usable);
  CHECK(back[0].range.at(Feature::kVolume) == bounds[0].range.at(Feature::kVolume));
  CHECK(back[0].range.at(Feature::kSphericity) ==
        bounds[0].range.at(Feature::kSphericity));
  CHECK(cfg_back.epsilon == 5.0);
  CHECK(cfg_back.k == 1);
  CHECK(cfg_back.features == cfg.features);
}

TEST_CASE("whole-sample filtering drops samples, per-organ annotates") {
  Manifest m;
  m.seed = 5;
  for (const char* id : {"a", "b", "c"}) {
    ManifestEntry e;
    e.id = id;
    e.intensity_path = std::string(id) + "_i.nii";
    e.label_path = std::string(id) + "_l.nii";
    m.samples.push_back(e);
  }
  std::vector<FilterVerdict> verdicts;
  FilterVerdict v;
  v.sample_id = "b";
  v.class_id = 3;
  v.inaccurate = true;
  verdicts.push_back(v);
  v.class_id = 2;
  verdicts.push_back(v);
  v.sample_id = "a";
  v.class_id = 1;
  v.inaccurate = false;
  verdicts.push_back(v);

  SUBCASE("per-organ") {
    const Manifest out = apply_filter(m, verdicts, FilterScope::kPerOrgan);
    REQUIRE(out.samples.size() == 3);
    CHECK(out.samples[0].removed_classes.empty());
    CHECK(out.samples[1].removed_classes == std::vector<int>{2, 3});
    CHECK(out.samples[2].removed_classes.empty());
  }
  SUBCASE("whole-sample") {
    const Manifest out = apply_filter(m, verdicts, FilterScope::kWholeSample);
    REQUIRE(out.samples.size() == 2);
    CHECK(out.samples[0].id == "a");
    CHECK(out.samples[1].id == "c");
  }
  SUBCASE("verdict for unknown sample") {
    v.sample_id = "zz";
    verdicts.push_back(v);
    CHECK_THROWS_AS(apply_filter(m, verdicts, FilterScope::kPerOrgan),
                    data_error);
  }
}

TEST_CASE("distribution report splits kept from all") {
  CohortTable t;
  t.universe = {1};
  for (int i = 0; i < 10; ++i)
    t.rows.push_back(
        row("s" + std::to_string(10 + i), 1, 0.1 * (i + 1), 0.8, 0.5));
  std::vector<FilterVerdict> verdicts;
  FilterVerdict v;
  v.sample_id = "s19";  // the largest volume
  v.class_id = 1;
  v.inaccurate = true;
  verdicts.push_back(v);

  const auto hists = distribution_report(t, verdicts, 9);
  REQUIRE(hists.size() == 1);
  const ClassHistogram& h = hists[0];
  CHECK(h.class_id == 1);
  REQUIRE(h.edges.size() == 10);
  CHECK(h.edges.front() == doctest::Approx(0.1));
  CHECK(h.edges.back() == doctest::Approx(1.0));
  std::int64_t all = 0, kept = 0;
  for (std::size_t i = 0; i < h.count_all.size(); ++i) {
    all += h.count_all[i];
    kept += h.count_kept[i];
    CHECK(h.count_kept[i] <= h.count_all[i]);
  }
  CHECK(all == 10);
  CHECK(kept == 9);
  // The flagged maximum lands in the last bin; only it is dropped there.
  CHECK(h.count_all.back() >= 1);
  CHECK(h.count_kept.back() == h.count_all.back() - 1);

  CHECK_THROWS_AS(distribution_report(t, verdicts, 0), config_error);
}

TEST_CASE("histogram csv and svg outputs") {
  TempDir tmp("cohort");
  CohortTable t = typical_table(12);
  const auto hists = distribution_report(t, {}, 4);
  const std::string csv = tmp.str("h.csv");
  write_histogram_csv(hists, csv);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == "class_id,bin_lo,bin_hi,count_all,count_kept");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 4);

  const std::string svg = tmp.str("h.svg");
  write_histogram_svg(hists[0], svg);
  const auto blob = testutil::slurp(svg);
  const std::string text(blob.begin(), blob.end());
  CHECK(text.find("<svg") != std::string::npos);
  CHECK(text.find("</svg>") != std::string::npos);
}
