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

#include "bobqc/shape_features.hpp"

#include <algorithm>
#include <cmath>

#include "bobqc/errors.hpp"

namespace bobqc {

namespace {

// Integer accumulators for one class. Integer sums make the reduction exact
// and independent of evaluation order, which keeps parallel and serial
// results bitwise identical.
struct ClassAcc {
  std::int64_t count = 0;
  std::int64_t faces_x = 0, faces_y = 0, faces_z = 0;
  std::int64_t si = 0, sj = 0, sk = 0;
  std::int64_t sii = 0, sjj = 0, skk = 0;
  std::int64_t sij = 0, sik = 0, sjk = 0;

  void merge(const ClassAcc& o) {
    count += o.count;
    faces_x += o.faces_x;
    faces_y += o.faces_y;
    faces_z += o.faces_z;
    si += o.si;
    sj += o.sj;
    sk += o.sk;
    sii += o.sii;
    sjj += o.sjj;
    skk += o.skk;
    sij += o.sij;
    sik += o.sik;
    sjk += o.sjk;
  }
};

void accumulate_voxel(ClassAcc& acc, const LabelVolume& vol, int x, int y,
                      int z, std::uint16_t c) {
  acc.count += 1;
  acc.si += x;
  acc.sj += y;
  acc.sk += z;
  acc.sii += static_cast<std::int64_t>(x) * x;
  acc.sjj += static_cast<std::int64_t>(y) * y;
  acc.skk += static_cast<std::int64_t>(z) * z;
  acc.sij += static_cast<std::int64_t>(x) * y;
  acc.sik += static_cast<std::int64_t>(x) * z;
  acc.sjk += static_cast<std::int64_t>(y) * z;

  const Dims& d = vol.dims;
  auto other = [&](int nx, int ny, int nz) {
    return !d.contains(nx, ny, nz) || vol.at(nx, ny, nz) != c;
  };
  if (other(x - 1, y, z)) acc.faces_x += 1;
  if (other(x + 1, y, z)) acc.faces_x += 1;
  if (other(x, y - 1, z)) acc.faces_y += 1;
  if (other(x, y + 1, z)) acc.faces_y += 1;
  if (other(x, y, z - 1)) acc.faces_z += 1;
  if (other(x, y, z + 1)) acc.faces_z += 1;
}

// One class only; parallel over z-slabs.
ClassAcc accumulate_class(const LabelVolume& vol, int class_id) {
  const Dims d = vol.dims;
  const std::uint16_t c = static_cast<std::uint16_t>(class_id);
  ClassAcc total;
#pragma omp parallel
  {
    ClassAcc local;
#pragma omp for schedule(static) nowait
    for (int z = 0; z < d.nz; ++z)
      for (int y = 0; y < d.ny; ++y)
        for (int x = 0; x < d.nx; ++x)
          if (vol.at(x, y, z) == c) accumulate_voxel(local, vol, x, y, z, c);
#pragma omp critical(bobqc_class_acc)
    total.merge(local);
  }
  return total;
}

// All classes in one sweep.
std::vector<ClassAcc> accumulate_all(const LabelVolume& vol) {
  const Dims d = vol.dims;
  const std::size_t nclasses = static_cast<std::size_t>(vol.max_class()) + 1;
  std::vector<ClassAcc> total(nclasses);
#pragma omp parallel
  {
    std::vector<ClassAcc> local(nclasses);
#pragma omp for schedule(static) nowait
    for (int z = 0; z < d.nz; ++z)
      for (int y = 0; y < d.ny; ++y)
        for (int x = 0; x < d.nx; ++x) {
          const std::uint16_t c = vol.at(x, y, z);
          if (c != 0) accumulate_voxel(local[c], vol, x, y, z, c);
        }
#pragma omp critical(bobqc_all_acc)
    for (std::size_t i = 0; i < nclasses; ++i) total[i].merge(local[i]);
  }
  return total;
}

double area_from_faces(const ClassAcc& acc, const Spacing& s) {
  return static_cast<double>(acc.faces_x) * s.dy * s.dz +
         static_cast<double>(acc.faces_y) * s.dx * s.dz +
         static_cast<double>(acc.faces_z) * s.dx * s.dy;
}

double sphericity_from(const ClassAcc& acc, const Spacing& s) {
  const double v_phys = static_cast<double>(acc.count) * s.voxel_volume();
  const double area = area_from_faces(acc, s);
  constexpr double kPi = 3.141592653589793238462643383279503;
  return std::cbrt(kPi) * std::pow(6.0 * v_phys, 2.0 / 3.0) / area;
}

Sym3 covariance_from(const ClassAcc& acc, const Spacing& s) {
  const double n = static_cast<double>(acc.count);
  const double mi = static_cast<double>(acc.si) / n;
  const double mj = static_cast<double>(acc.sj) / n;
  const double mk = static_cast<double>(acc.sk) / n;
  Sym3 cov;
  cov.xx = (static_cast<double>(acc.sii) / n - mi * mi) * s.dx * s.dx;
  cov.yy = (static_cast<double>(acc.sjj) / n - mj * mj) * s.dy * s.dy;
  cov.zz = (static_cast<double>(acc.skk) / n - mk * mk) * s.dz * s.dz;
  cov.xy = (static_cast<double>(acc.sij) / n - mi * mj) * s.dx * s.dy;
  cov.xz = (static_cast<double>(acc.sik) / n - mi * mk) * s.dx * s.dz;
  cov.yz = (static_cast<double>(acc.sjk) / n - mj * mk) * s.dy * s.dz;
  return cov;
}

double eccentricity_from(const ClassAcc& acc, const Spacing& s) {
  constexpr double kDegenerate = 1e-12;  // mm^2
  const auto eig = sym3_eigenvalues(covariance_from(acc, s));
  const double lmax = eig[2];
  if (lmax < kDegenerate) return 0.0;
  const double lmin = std::max(eig[0], 0.0);
  const double ratio = std::clamp(lmin / lmax, 0.0, 1.0);
  return std::sqrt(1.0 - ratio);
}

void require_present(const ClassAcc& acc, int class_id) {
  if (acc.count == 0)
    throw data_error("empty organ: class " + std::to_string(class_id) +
                     " has no voxels");
}

}  // namespace

std::int64_t organ_voxel_count(const LabelVolume& vol, int class_id) {
  if (class_id < 1) throw data_error("class_id must be >= 1");
  return accumulate_class(vol, class_id).count;
}

std::int64_t body_voxel_count(const LabelVolume& vol) {
  const Dims d = vol.dims;
  const std::int64_t n = d.count();
  std::int64_t body = 0;
#pragma omp parallel for schedule(static) reduction(+ : body)
  for (std::int64_t i = 0; i < n; ++i)
    if (vol.voxels[static_cast<std::size_t>(i)] != 0) ++body;
  return body;
}

double normalized_volume(const LabelVolume& vol, int class_id) {
  const std::int64_t body = body_voxel_count(vol);
  if (body == 0) throw data_error("empty body: volume has no labeled voxels");
  return static_cast<double>(organ_voxel_count(vol, class_id)) /
         static_cast<double>(body);
}

double surface_area(const LabelVolume& vol, int class_id) {
  const ClassAcc acc = accumulate_class(vol, class_id);
  require_present(acc, class_id);
  return area_from_faces(acc, vol.spacing);
}

double sphericity(const LabelVolume& vol, int class_id) {
  const ClassAcc acc = accumulate_class(vol, class_id);
  require_present(acc, class_id);
  return sphericity_from(acc, vol.spacing);
}

Sym3 organ_covariance(const LabelVolume& vol, int class_id) {
  const ClassAcc acc = accumulate_class(vol, class_id);
  require_present(acc, class_id);
  return covariance_from(acc, vol.spacing);
}

double eccentricity(const LabelVolume& vol, int class_id) {
  const ClassAcc acc = accumulate_class(vol, class_id);
  require_present(acc, class_id);
  return eccentricity_from(acc, vol.spacing);
}

FeatureSet compute_features(const LabelVolume& vol,
                            const std::string& sample_id,
                            const std::vector<int>& universe) {
  const std::vector<ClassAcc> acc = accumulate_all(vol);

  std::int64_t body = 0;
  for (const ClassAcc& a : acc) body += a.count;
  if (body == 0) throw data_error("empty body: volume has no labeled voxels");

  FeatureSet out;
  out.body = BodyStats{sample_id, body};
  out.rows.reserve(universe.size());
  for (int class_id : universe) {
    OrganFeatures row;
    row.sample_id = sample_id;
    row.class_id = class_id;
    const bool known = class_id >= 1 &&
                       static_cast<std::size_t>(class_id) < acc.size();
    const ClassAcc* a = known ? &acc[static_cast<std::size_t>(class_id)] : nullptr;
    if (a != nullptr && a->count > 0) {
      row.present = true;
      row.voxel_count = a->count;
      row.normalized_volume =
          static_cast<double>(a->count) / static_cast<double>(body);
      row.surface_area_mm2 = area_from_faces(*a, vol.spacing);
      row.sphericity = sphericity_from(*a, vol.spacing);
      row.eccentricity = eccentricity_from(*a, vol.spacing);
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

std::vector<int> observed_classes(const LabelVolume& vol) {
  std::vector<bool> seen(static_cast<std::size_t>(vol.max_class()) + 1, false);
  for (std::uint16_t v : vol.voxels) seen[v] = true;
  std::vector<int> out;
  for (std::size_t c = 1; c < seen.size(); ++c)
    if (seen[c]) out.push_back(static_cast<int>(c));
  return out;
}

}  // namespace bobqc
