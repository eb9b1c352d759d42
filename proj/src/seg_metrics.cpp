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

#include "bobqc/seg_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "bobqc/errors.hpp"

namespace bobqc {

namespace {

void check_geometry_match(const LabelVolume& a, const LabelVolume& b) {
  if (!(a.dims == b.dims))
    throw data_error("volume dimensions differ between prediction and truth");
  if (!(a.spacing == b.spacing))
    throw data_error("voxel spacing differs between prediction and truth");
}

struct Idx3 {
  int x, y, z;
};

std::vector<Idx3> boundary_voxels(const LabelVolume& vol, int class_id) {
  const std::uint16_t c = static_cast<std::uint16_t>(class_id);
  const Dims d = vol.dims;
  auto outside = [&](int x, int y, int z) {
    return !d.contains(x, y, z) || vol.at(x, y, z) != c;
  };
  std::vector<Idx3> out;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        if (vol.at(x, y, z) != c) continue;
        if (outside(x - 1, y, z) || outside(x + 1, y, z) ||
            outside(x, y - 1, z) || outside(x, y + 1, z) ||
            outside(x, y, z - 1) || outside(x, y, z + 1))
          out.push_back({x, y, z});
      }
  return out;
}

// Greatest nearest-neighbor squared distance from `from` to `to`. Exact
// max-of-min semantics, so the result is order and thread-count invariant.
double directed_sq(const std::vector<Idx3>& from, const std::vector<Idx3>& to,
                   const Spacing& s) {
  const std::int64_t n = static_cast<std::int64_t>(from.size());
  double worst = 0.0;
#pragma omp parallel for schedule(static) reduction(max : worst)
  for (std::int64_t i = 0; i < n; ++i) {
    const Idx3 p = from[static_cast<std::size_t>(i)];
    double best = std::numeric_limits<double>::infinity();
    for (const Idx3& q : to) {
      const double dx = (p.x - q.x) * s.dx;
      const double dy = (p.y - q.y) * s.dy;
      const double dz = (p.z - q.z) * s.dz;
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace

double dice(const LabelVolume& pred, const LabelVolume& gt, int class_id) {
  check_geometry_match(pred, gt);
  const std::uint16_t c = static_cast<std::uint16_t>(class_id);
  const std::int64_t n = pred.dims.count();
  std::int64_t np = 0, ng = 0, ni = 0;
#pragma omp parallel for schedule(static) reduction(+ : np, ng, ni)
  for (std::int64_t i = 0; i < n; ++i) {
    const bool a = pred.voxels[static_cast<std::size_t>(i)] == c;
    const bool b = gt.voxels[static_cast<std::size_t>(i)] == c;
    np += a;
    ng += b;
    ni += a && b;
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(ni) / static_cast<double>(np + ng);
}

std::optional<double> hausdorff(const LabelVolume& pred, const LabelVolume& gt,
                                int class_id) {
  check_geometry_match(pred, gt);
  const auto a = boundary_voxels(pred, class_id);
  const auto b = boundary_voxels(gt, class_id);
  if (a.empty() || b.empty()) return std::nullopt;
  const Spacing s = pred.spacing;
  return std::sqrt(std::max(directed_sq(a, b, s), directed_sq(b, a, s)));
}

SegMetrics evaluate(const LabelVolume& pred, const LabelVolume& gt,
                    const std::vector<int>& universe) {
  check_geometry_match(pred, gt);
  if (universe.empty()) throw data_error("empty class universe");

  SegMetrics m;
  double dice_sum = 0.0;
  double hd_sum = 0.0;
  int hd_count = 0;
  for (int class_id : universe) {
    ClassMetrics cm;
    cm.dice = dice(pred, gt, class_id);
    cm.hausdorff_mm = hausdorff(pred, gt, class_id);
    dice_sum += cm.dice;
    if (cm.hausdorff_mm) {
      hd_sum += *cm.hausdorff_mm;
      ++hd_count;
    } else {
      ++m.skipped_classes;
    }
    m.per_class[class_id] = cm;
  }
  m.mean_dice = dice_sum / static_cast<double>(universe.size());
  if (hd_count > 0) m.mean_hausdorff_mm = hd_sum / hd_count;
  return m;
}

void write_metrics_json(const SegMetrics& m, const std::string& path) {
  nlohmann::ordered_json per_class;
  for (const auto& [class_id, cm] : m.per_class) {
    nlohmann::ordered_json entry{{"dice", cm.dice}};
    entry["hausdorff_mm"] =
        cm.hausdorff_mm ? nlohmann::ordered_json(*cm.hausdorff_mm)
                        : nlohmann::ordered_json(nullptr);
    per_class[std::to_string(class_id)] = std::move(entry);
  }
  nlohmann::ordered_json j{
      {"per_class", std::move(per_class)},
      {"mean_dice", m.mean_dice},
      {"mean_hausdorff_mm",
       m.mean_hausdorff_mm ? nlohmann::ordered_json(*m.mean_hausdorff_mm)
                           : nlohmann::ordered_json(nullptr)},
      {"skipped_classes", m.skipped_classes}};
  std::ofstream out(path);
  if (!out) throw io_error("cannot write metrics: " + path);
  out << j.dump(2) << "\n";
}

SegMetrics read_metrics_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open metrics: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw data_error("metrics parse error in " + path + ": " + e.what());
  }
  SegMetrics m;
  try {
    for (const auto& [key, entry] : j.at("per_class").items()) {
      ClassMetrics cm;
      cm.dice = entry.at("dice").get<double>();
      if (!entry.at("hausdorff_mm").is_null())
        cm.hausdorff_mm = entry.at("hausdorff_mm").get<double>();
      m.per_class[std::stoi(key)] = cm;
    }
    m.mean_dice = j.at("mean_dice").get<double>();
    if (!j.at("mean_hausdorff_mm").is_null())
      m.mean_hausdorff_mm = j.at("mean_hausdorff_mm").get<double>();
    m.skipped_classes = j.at("skipped_classes").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw data_error("malformed metrics " + path + ": " + e.what());
  }
  return m;
}

}  // namespace bobqc
