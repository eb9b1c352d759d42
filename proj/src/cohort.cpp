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

#include "bobqc/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "bobqc/errors.hpp"

namespace bobqc {

namespace {

constexpr const char* kFeatureHeader =
    "sample_id,class_id,present,voxel_count,normalized_volume,"
    "surface_area_mm2,sphericity,eccentricity";
constexpr const char* kVerdictHeader =
    "sample_id,class_id,oor_volume,oor_sphericity,oor_eccentricity,missing,"
    "inaccurate";
constexpr const char* kHistogramHeader =
    "class_id,bin_lo,bin_hi,count_all,count_kept";

std::string g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double feature_value(const OrganFeatures& row, Feature f) {
  switch (f) {
    case Feature::kVolume:
      return row.normalized_volume;
    case Feature::kSphericity:
      if (!row.sphericity)
        throw data_error("present row lacks sphericity: " + row.sample_id);
      return *row.sphericity;
    case Feature::kEccentricity:
      if (!row.eccentricity)
        throw data_error("present row lacks eccentricity: " + row.sample_id);
      return *row.eccentricity;
  }
  throw config_error("unknown feature");
}

void validate_table(const CohortTable& table) {
  std::set<std::pair<std::string, int>> seen;
  for (const OrganFeatures& row : table.rows)
    if (!seen.insert({row.sample_id, row.class_id}).second)
      throw data_error("duplicate feature row: sample " + row.sample_id +
                       " class " + std::to_string(row.class_id));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_double(const std::string& s, int line_no) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw data_error("bad numeric field \"" + s + "\" on line " +
                     std::to_string(line_no));
  }
}

std::int64_t parse_int(const std::string& s, int line_no) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw data_error("bad integer field \"" + s + "\" on line " +
                     std::to_string(line_no));
  }
}

bool parse_bool01(const std::string& s, int line_no) {
  if (s == "0") return false;
  if (s == "1") return true;
  throw data_error("bad boolean field \"" + s + "\" on line " +
                   std::to_string(line_no));
}

void check_sample_id(const std::string& id) {
  if (id.empty() || id.find_first_of(",\n\r") != std::string::npos)
    throw data_error("sample id not CSV-safe: \"" + id + "\"");
}

}  // namespace

const char* feature_name(Feature f) {
  switch (f) {
    case Feature::kVolume:
      return "volume";
    case Feature::kSphericity:
      return "sphericity";
    case Feature::kEccentricity:
      return "eccentricity";
  }
  throw config_error("unknown feature");
}

Feature feature_from_name(const std::string& name) {
  if (name == "volume") return Feature::kVolume;
  if (name == "sphericity") return Feature::kSphericity;
  if (name == "eccentricity") return Feature::kEccentricity;
  throw config_error("unknown feature name: \"" + name + "\"");
}

void SolfConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon < 100.0))
    throw config_error("epsilon must be in [0, 100), got " +
                       std::to_string(epsilon));
  if (features.empty()) throw config_error("feature set must not be empty");
  std::set<Feature> uniq(features.begin(), features.end());
  if (uniq.size() != features.size())
    throw config_error("duplicate entries in feature set");
  if (k < 1 || static_cast<std::size_t>(k) > features.size())
    throw config_error("flag threshold k must satisfy 1 <= k <= " +
                       std::to_string(features.size()) + ", got " +
                       std::to_string(k));
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw data_error("percentile of empty value set");
  if (!(p >= 0.0 && p <= 100.0))
    throw config_error("percentile rank must be in [0, 100], got " +
                       std::to_string(p));
  for (double v : values)
    if (!std::isfinite(v)) throw data_error("non-finite value in percentile");
  std::sort(values.begin(), values.end());
  const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto k = static_cast<std::size_t>(std::floor(rank));
  if (k + 1 >= values.size()) return values.back();
  const double frac = rank - static_cast<double>(k);
  return values[k] + frac * (values[k + 1] - values[k]);
}

std::vector<FeatureBounds> solf_bounds(const CohortTable& table,
                                       const SolfConfig& cfg) {
  cfg.validate();
  validate_table(table);
  std::vector<FeatureBounds> out;
  out.reserve(table.universe.size());
  for (int class_id : table.universe) {
    FeatureBounds b;
    b.class_id = class_id;
    std::vector<const OrganFeatures*> rows;
    for (const OrganFeatures& row : table.rows)
      if (row.class_id == class_id && row.present) rows.push_back(&row);
    b.usable = rows.size() >= 2;
    if (b.usable) {
      for (Feature f : cfg.features) {
        std::vector<double> values;
        values.reserve(rows.size());
        for (const OrganFeatures* row : rows)
          values.push_back(feature_value(*row, f));
        const double lo = percentile(values, cfg.epsilon / 2.0);
        const double hi = percentile(std::move(values), 100.0 - cfg.epsilon / 2.0);
        b.range[f] = {lo, hi};
      }
    }
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<FilterVerdict> solf_verdicts(
    const CohortTable& table, const std::vector<FeatureBounds>& bounds,
    const SolfConfig& cfg) {
  cfg.validate();
  validate_table(table);
  std::map<int, const FeatureBounds*> by_class;
  for (const FeatureBounds& b : bounds) by_class[b.class_id] = &b;

  std::vector<FilterVerdict> out;
  out.reserve(table.rows.size());
  for (const OrganFeatures& row : table.rows) {
    FilterVerdict v;
    v.sample_id = row.sample_id;
    v.class_id = row.class_id;
    if (!row.present) {
      v.missing = true;
      v.inaccurate = cfg.missing_is_inaccurate;
      out.push_back(std::move(v));
      continue;
    }
    const auto it = by_class.find(row.class_id);
    if (it != by_class.end() && it->second->usable) {
      int hits = 0;
      for (Feature f : cfg.features) {
        const auto& [lo, hi] = it->second->range.at(f);
        const double value = feature_value(row, f);
        const bool oor = value < lo || value > hi;
        hits += oor;
        switch (f) {
          case Feature::kVolume:
            v.oor_volume = oor;
            break;
          case Feature::kSphericity:
            v.oor_sphericity = oor;
            break;
          case Feature::kEccentricity:
            v.oor_eccentricity = oor;
            break;
        }
      }
      v.inaccurate = hits >= cfg.k;
    }
    out.push_back(std::move(v));
  }
  std::sort(out.begin(), out.end(),
            [](const FilterVerdict& a, const FilterVerdict& b) {
              return std::tie(a.sample_id, a.class_id) <
                     std::tie(b.sample_id, b.class_id);
            });
  return out;
}

std::vector<FilterVerdict> iqr_verdicts(const CohortTable& table,
                                        double factor) {
  if (!(factor >= 0.0) || !std::isfinite(factor))
    throw config_error("IQR factor must be a finite value >= 0");
  validate_table(table);

  std::map<int, std::vector<double>> volumes;
  for (const OrganFeatures& row : table.rows)
    if (row.present) volumes[row.class_id].push_back(row.normalized_volume);

  std::map<int, std::pair<double, double>> fences;
  for (const auto& [class_id, values] : volumes) {
    if (values.size() < 2) continue;
    const double q1 = percentile(values, 25.0);
    const double q3 = percentile(values, 75.0);
    const double spread = q3 - q1;
    fences[class_id] = {q1 - factor * spread, q3 + factor * spread};
  }

  std::vector<FilterVerdict> out;
  out.reserve(table.rows.size());
  for (const OrganFeatures& row : table.rows) {
    FilterVerdict v;
    v.sample_id = row.sample_id;
    v.class_id = row.class_id;
    if (!row.present) {
      v.missing = true;
    } else if (const auto it = fences.find(row.class_id); it != fences.end()) {
      v.oor_volume = row.normalized_volume < it->second.first ||
                     row.normalized_volume > it->second.second;
      v.inaccurate = v.oor_volume;
    }
    out.push_back(std::move(v));
  }
  std::sort(out.begin(), out.end(),
            [](const FilterVerdict& a, const FilterVerdict& b) {
              return std::tie(a.sample_id, a.class_id) <
                     std::tie(b.sample_id, b.class_id);
            });
  return out;
}

Manifest apply_filter(const Manifest& manifest,
                      const std::vector<FilterVerdict>& verdicts,
                      FilterScope scope) {
  std::set<std::string> known;
  for (const ManifestEntry& e : manifest.samples) known.insert(e.id);
  std::map<std::string, std::set<int>> flagged;
  for (const FilterVerdict& v : verdicts) {
    if (!known.count(v.sample_id))
      throw data_error("verdict for unknown sample: " + v.sample_id);
    if (v.inaccurate) flagged[v.sample_id].insert(v.class_id);
  }

  Manifest out;
  out.seed = manifest.seed;
  for (const ManifestEntry& e : manifest.samples) {
    const auto it = flagged.find(e.id);
    if (scope == FilterScope::kWholeSample) {
      if (it == flagged.end()) out.samples.push_back(e);
      continue;
    }
    ManifestEntry kept = e;
    if (it != flagged.end())
      kept.removed_classes.assign(it->second.begin(), it->second.end());
    out.samples.push_back(std::move(kept));
  }
  return out;
}

std::vector<ClassHistogram> distribution_report(
    const CohortTable& table, const std::vector<FilterVerdict>& verdicts,
    int bins) {
  if (bins < 1) throw config_error("histogram needs at least one bin");
  validate_table(table);
  std::map<std::pair<std::string, int>, bool> dropped;
  for (const FilterVerdict& v : verdicts)
    dropped[{v.sample_id, v.class_id}] = v.inaccurate;

  std::vector<ClassHistogram> out;
  for (int class_id : table.universe) {
    std::vector<std::pair<double, bool>> values;  // volume, kept
    for (const OrganFeatures& row : table.rows) {
      if (row.class_id != class_id || !row.present) continue;
      const auto it = dropped.find({row.sample_id, row.class_id});
      const bool kept = it == dropped.end() || !it->second;
      values.push_back({row.normalized_volume, kept});
    }
    if (values.empty()) continue;

    double lo = values[0].first, hi = values[0].first;
    for (const auto& [v, kept] : values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    ClassHistogram h;
    h.class_id = class_id;
    h.edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int i = 0; i <= bins; ++i)
      h.edges[static_cast<std::size_t>(i)] =
          lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
    h.count_all.assign(static_cast<std::size_t>(bins), 0);
    h.count_kept.assign(static_cast<std::size_t>(bins), 0);
    const double width = (hi - lo) / static_cast<double>(bins);
    for (const auto& [v, kept] : values) {
      int b = width > 0 ? static_cast<int>(std::floor((v - lo) / width)) : 0;
      b = std::clamp(b, 0, bins - 1);
      h.count_all[static_cast<std::size_t>(b)] += 1;
      if (kept) h.count_kept[static_cast<std::size_t>(b)] += 1;
    }
    out.push_back(std::move(h));
  }
  return out;
}

void write_feature_csv(const CohortTable& table, const std::string& path) {
  validate_table(table);
  std::ofstream out(path);
  if (!out) throw io_error("cannot write feature table: " + path);
  out << kFeatureHeader << "\n";
  for (const OrganFeatures& row : table.rows) {
    check_sample_id(row.sample_id);
    out << row.sample_id << ',' << row.class_id << ',' << (row.present ? 1 : 0)
        << ',' << row.voxel_count << ',' << g9(row.normalized_volume) << ',';
    if (row.present) {
      out << g9(*row.surface_area_mm2) << ',' << g9(*row.sphericity) << ','
          << g9(*row.eccentricity);
    } else {
      out << ",,";
    }
    out << "\n";
  }
  if (!out) throw io_error("write failure on feature table: " + path);
}

CohortTable read_feature_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open feature table: " + path);
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != split_csv_line(kFeatureHeader))
    throw data_error("feature table header mismatch in " + path);

  CohortTable table;
  std::set<int> classes;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 8)
      throw data_error("expected 8 fields on line " + std::to_string(line_no));
    OrganFeatures row;
    row.sample_id = f[0];
    row.class_id = static_cast<int>(parse_int(f[1], line_no));
    row.present = parse_bool01(f[2], line_no);
    row.voxel_count = parse_int(f[3], line_no);
    row.normalized_volume = parse_double(f[4], line_no);
    if (row.present) {
      row.surface_area_mm2 = parse_double(f[5], line_no);
      row.sphericity = parse_double(f[6], line_no);
      row.eccentricity = parse_double(f[7], line_no);
    } else if (!f[5].empty() || !f[6].empty() || !f[7].empty()) {
      throw data_error("absent row carries shape values on line " +
                       std::to_string(line_no));
    }
    classes.insert(row.class_id);
    table.rows.push_back(std::move(row));
  }
  table.universe.assign(classes.begin(), classes.end());
  validate_table(table);
  return table;
}

void write_verdict_csv(const std::vector<FilterVerdict>& verdicts,
                       const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write verdicts: " + path);
  out << kVerdictHeader << "\n";
  for (const FilterVerdict& v : verdicts) {
    check_sample_id(v.sample_id);
    out << v.sample_id << ',' << v.class_id << ',' << v.oor_volume << ','
        << v.oor_sphericity << ',' << v.oor_eccentricity << ',' << v.missing
        << ',' << v.inaccurate << "\n";
  }
  if (!out) throw io_error("write failure on verdicts: " + path);
}

std::vector<FilterVerdict> read_verdict_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open verdicts: " + path);
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != split_csv_line(kVerdictHeader))
    throw data_error("verdict header mismatch in " + path);
  std::vector<FilterVerdict> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 7)
      throw data_error("expected 7 fields on line " + std::to_string(line_no));
    FilterVerdict v;
    v.sample_id = f[0];
    v.class_id = static_cast<int>(parse_int(f[1], line_no));
    v.oor_volume = parse_bool01(f[2], line_no);
    v.oor_sphericity = parse_bool01(f[3], line_no);
    v.oor_eccentricity = parse_bool01(f[4], line_no);
    v.missing = parse_bool01(f[5], line_no);
    v.inaccurate = parse_bool01(f[6], line_no);
    out.push_back(std::move(v));
  }
  return out;
}

void write_bounds_json(const std::vector<FeatureBounds>& bounds,
                       const SolfConfig& cfg, const std::string& path) {
  nlohmann::ordered_json j;
  for (const FeatureBounds& b : bounds) {
    if (!b.usable) continue;
    nlohmann::ordered_json cls;
    for (const auto& [f, range] : b.range)
      cls[feature_name(f)] = {{"lo", range.first}, {"hi", range.second}};
    j[std::to_string(b.class_id)] = std::move(cls);
  }
  j["epsilon"] = cfg.epsilon;
  nlohmann::ordered_json names = nlohmann::ordered_json::array();
  for (Feature f : cfg.features) names.push_back(feature_name(f));
  j["features"] = std::move(names);
  j["k"] = cfg.k;
  std::ofstream out(path);
  if (!out) throw io_error("cannot write bounds: " + path);
  out << j.dump(2) << "\n";
}

std::vector<FeatureBounds> read_bounds_json(const std::string& path,
                                            SolfConfig* cfg_out) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open bounds: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw data_error("bounds parse error in " + path + ": " + e.what());
  }
  SolfConfig cfg;
  std::vector<FeatureBounds> out;
  try {
    cfg.epsilon = j.at("epsilon").get<double>();
    cfg.k = j.at("k").get<int>();
    cfg.features.clear();
    for (const auto& name : j.at("features"))
      cfg.features.push_back(feature_from_name(name.get<std::string>()));
    for (const auto& [key, value] : j.items()) {
      if (key == "epsilon" || key == "features" || key == "k") continue;
      FeatureBounds b;
      b.class_id = static_cast<int>(parse_int(key, 0));
      b.usable = true;
      for (const auto& [fname, range] : value.items())
        b.range[feature_from_name(fname)] = {range.at("lo").get<double>(),
                                             range.at("hi").get<double>()};
      out.push_back(std::move(b));
    }
  } catch (const nlohmann::json::exception& e) {
    throw data_error("malformed bounds " + path + ": " + e.what());
  }
  std::sort(out.begin(), out.end(),
            [](const FeatureBounds& a, const FeatureBounds& b) {
              return a.class_id < b.class_id;
            });
  if (cfg_out != nullptr) *cfg_out = cfg;
  return out;
}

void write_histogram_csv(const std::vector<ClassHistogram>& hists,
                         const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write histograms: " + path);
  out << kHistogramHeader << "\n";
  for (const ClassHistogram& h : hists)
    for (std::size_t b = 0; b + 1 < h.edges.size(); ++b)
      out << h.class_id << ',' << g9(h.edges[b]) << ',' << g9(h.edges[b + 1])
          << ',' << h.count_all[b] << ',' << h.count_kept[b] << "\n";
  if (!out) throw io_error("write failure on histograms: " + path);
}

void write_histogram_svg(const ClassHistogram& hist, const std::string& path) {
  const int width = 640, height = 360;
  const int ml = 50, mr = 15, mt = 35, mb = 40;
  const int plot_w = width - ml - mr, plot_h = height - mt - mb;
  const std::size_t bins = hist.count_all.size();
  std::int64_t peak = 1;
  for (std::int64_t c : hist.count_all) peak = std::max(peak, c);

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << ml << "\" y=\"22\" font-family=\"sans-serif\" "
         "font-size=\"14\">class "
      << hist.class_id << " normalized volume, all vs kept</text>\n";
  for (std::size_t b = 0; b < bins; ++b) {
    const double x0 = ml + static_cast<double>(b) * plot_w / bins;
    const double bw = static_cast<double>(plot_w) / bins;
    auto bar = [&](std::int64_t count, const char* color, double inset) {
      const double h = static_cast<double>(count) / peak * plot_h;
      svg << "<rect x=\"" << x0 + inset << "\" y=\"" << mt + plot_h - h
          << "\" width=\"" << std::max(bw - 2 * inset, 0.5) << "\" height=\""
          << h << "\" fill=\"" << color << "\"/>\n";
    };
    bar(hist.count_all[b], "#c8c8c8", 0.5);
    bar(hist.count_kept[b], "#4682b4", bw * 0.22);
  }
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt + plot_h << "\" x2=\""
      << ml + plot_w << "\" y2=\"" << mt + plot_h
      << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << ml << "\" y=\"" << height - 12
      << "\" font-family=\"sans-serif\" font-size=\"12\">"
      << g9(hist.edges.front()) << "</text>\n"
      << "<text x=\"" << ml + plot_w - 80 << "\" y=\"" << height - 12
      << "\" font-family=\"sans-serif\" font-size=\"12\">"
      << g9(hist.edges.back()) << "</text>\n</svg>\n";

  std::ofstream out(path);
  if (!out) throw io_error("cannot write histogram figure: " + path);
  out << svg.str();
}

}  // namespace bobqc
