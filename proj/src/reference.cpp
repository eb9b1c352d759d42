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

#include "bobqc/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace bobqc::ref {

namespace {

bool in_mask(const LabelVolume& vol, int x, int y, int z, std::uint16_t c) {
  return vol.dims.contains(x, y, z) && vol.at(x, y, z) == c;
}

struct Idx3 {
  int x, y, z;
};

std::vector<Idx3> boundary_voxels(const LabelVolume& vol, int class_id) {
  const std::uint16_t c = static_cast<std::uint16_t>(class_id);
  std::vector<Idx3> out;
  const Dims d = vol.dims;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        if (vol.at(x, y, z) != c) continue;
        const bool exposed =
            !in_mask(vol, x - 1, y, z, c) || !in_mask(vol, x + 1, y, z, c) ||
            !in_mask(vol, x, y - 1, z, c) || !in_mask(vol, x, y + 1, z, c) ||
            !in_mask(vol, x, y, z - 1, c) || !in_mask(vol, x, y, z + 1, c);
        if (exposed) out.push_back({x, y, z});
      }
  return out;
}

double char_poly(double l, double c2, double c1, double c0) {
  // q(l) = l^3 - c2 l^2 + c1 l - c0, same roots as det(A - lI).
  return ((l - c2) * l + c1) * l - c0;
}

}  // namespace

std::int64_t voxel_count(const LabelVolume& vol, int class_id) {
  const std::uint16_t c = static_cast<std::uint16_t>(class_id);
  std::int64_t n = 0;
  for (std::uint16_t v : vol.voxels)
    if (v == c) ++n;
  return n;
}

double surface_area(const LabelVolume& vol, int class_id) {
  const std::uint16_t c = static_cast<std::uint16_t>(class_id);
  const Dims d = vol.dims;
  const Spacing s = vol.spacing;
  std::int64_t fx = 0, fy = 0, fz = 0;
  // A face at slot x between cells x-1 and x is exposed when exactly one
  // side belongs to the mask. Slots run 0..n inclusive per axis.
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x <= d.nx; ++x)
        if (in_mask(vol, x - 1, y, z, c) != in_mask(vol, x, y, z, c)) ++fx;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y <= d.ny; ++y)
      for (int x = 0; x < d.nx; ++x)
        if (in_mask(vol, x, y - 1, z, c) != in_mask(vol, x, y, z, c)) ++fy;
  for (int z = 0; z <= d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x)
        if (in_mask(vol, x, y, z - 1, c) != in_mask(vol, x, y, z, c)) ++fz;
  return static_cast<double>(fx) * s.dy * s.dz +
         static_cast<double>(fy) * s.dx * s.dz +
         static_cast<double>(fz) * s.dx * s.dy;
}

Sym3 covariance(const LabelVolume& vol, int class_id) {
  const std::uint16_t c = static_cast<std::uint16_t>(class_id);
  const Dims d = vol.dims;
  const Spacing s = vol.spacing;
  double n = 0, mx = 0, my = 0, mz = 0;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x)
        if (vol.at(x, y, z) == c) {
          n += 1;
          mx += x * s.dx;
          my += y * s.dy;
          mz += z * s.dz;
        }
  if (n == 0) throw std::runtime_error("covariance of empty mask");
  mx /= n;
  my /= n;
  mz /= n;
  Sym3 cov{};
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x)
        if (vol.at(x, y, z) == c) {
          const double px = x * s.dx - mx;
          const double py = y * s.dy - my;
          const double pz = z * s.dz - mz;
          cov.xx += px * px;
          cov.yy += py * py;
          cov.zz += pz * pz;
          cov.xy += px * py;
          cov.xz += px * pz;
          cov.yz += py * pz;
        }
  cov.xx /= n;
  cov.yy /= n;
  cov.zz /= n;
  cov.xy /= n;
  cov.xz /= n;
  cov.yz /= n;
  return cov;
}

std::array<double, 3> eigenvalues_roots(const Sym3& m) {
  const double c2 = m.xx + m.yy + m.zz;
  const double c1 = m.xx * m.yy + m.xx * m.zz + m.yy * m.zz - m.xy * m.xy -
                    m.xz * m.xz - m.yz * m.yz;
  const double c0 = m.xx * (m.yy * m.zz - m.yz * m.yz) -
                    m.xy * (m.xy * m.zz - m.yz * m.xz) +
                    m.xz * (m.xy * m.yz - m.yy * m.xz);

  // Gershgorin bracket; the cubic changes sign across it.
  const double rx = std::abs(m.xy) + std::abs(m.xz);
  const double ry = std::abs(m.xy) + std::abs(m.yz);
  const double rz = std::abs(m.xz) + std::abs(m.yz);
  double lo = std::min({m.xx - rx, m.yy - ry, m.zz - rz});
  double hi = std::max({m.xx + rx, m.yy + ry, m.zz + rz});
  const double pad = 1e-8 * (1.0 + std::max(std::abs(lo), std::abs(hi)));
  lo -= pad;
  hi += pad;

  double a = lo, b = hi;
  for (int it = 0; it < 200 && b - a > 0; ++it) {
    const double mid = 0.5 * (a + b);
    if (char_poly(mid, c2, c1, c0) <= 0)
      a = mid;
    else
      b = mid;
  }
  double r0 = 0.5 * (a + b);

  // Deflate to l^2 + p l + q and solve; clamp a slightly negative
  // discriminant produced by rounding.
  const double p = r0 - c2;
  const double q = c1 + r0 * p;
  double disc = p * p - 4.0 * q;
  if (disc < 0) disc = 0;
  const double sq = std::sqrt(disc);
  double r1 = 0.5 * (-p - sq);
  double r2 = 0.5 * (-p + sq);

  std::array<double, 3> roots{r0, r1, r2};
  for (double& r : roots)
    for (int it = 0; it < 3; ++it) {
      const double f = char_poly(r, c2, c1, c0);
      const double df = (3.0 * r - 2.0 * c2) * r + c1;
      if (std::abs(df) < 1e-300) break;
      r -= f / df;
    }
  std::sort(roots.begin(), roots.end());
  return roots;
}

double sphericity(const LabelVolume& vol, int class_id) {
  const double v = static_cast<double>(voxel_count(vol, class_id)) *
                   vol.spacing.voxel_volume();
  const double area = surface_area(vol, class_id);
  const double pi = std::acos(-1.0);
  return std::pow(pi, 1.0 / 3.0) * std::pow(6.0 * v, 2.0 / 3.0) / area;
}

double eccentricity(const LabelVolume& vol, int class_id) {
  const auto eig = eigenvalues_roots(covariance(vol, class_id));
  if (eig[2] < 1e-12) return 0.0;
  const double ratio =
      std::clamp(std::max(eig[0], 0.0) / eig[2], 0.0, 1.0);
  return std::sqrt(1.0 - ratio);
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw std::runtime_error("percentile of empty set");
  std::sort(values.begin(), values.end());
  const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto k = static_cast<std::size_t>(std::floor(rank));
  if (k + 1 >= values.size()) return values.back();
  const double frac = rank - static_cast<double>(k);
  return values[k] + frac * (values[k + 1] - values[k]);
}

double dice(const LabelVolume& pred, const LabelVolume& gt, int class_id) {
  const std::uint16_t c = static_cast<std::uint16_t>(class_id);
  std::int64_t np = 0, ng = 0, ni = 0;
  for (std::size_t i = 0; i < pred.voxels.size(); ++i) {
    const bool a = pred.voxels[i] == c;
    const bool b = gt.voxels[i] == c;
    np += a;
    ng += b;
    ni += a && b;
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(ni) / static_cast<double>(np + ng);
}

std::optional<double> hausdorff(const LabelVolume& pred,
                                const LabelVolume& gt, int class_id) {
  const auto a = boundary_voxels(pred, class_id);
  const auto b = boundary_voxels(gt, class_id);
  if (a.empty() || b.empty()) return std::nullopt;
  const Spacing s = pred.spacing;
  auto directed = [&](const std::vector<Idx3>& from,
                      const std::vector<Idx3>& to) {
    double worst = 0;
    for (const Idx3& p : from) {
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
  };
  return std::sqrt(std::max(directed(a, b), directed(b, a)));
}

double entropy_mean(const ProbVolume& probs) {
  const std::int64_t n = probs.dims.count();
  double total = 0;
  for (std::int64_t i = 0; i < n; ++i)
    for (int c = 0; c < probs.channels; ++c) {
      const double p = probs.values[static_cast<std::size_t>(
          c + static_cast<std::int64_t>(probs.channels) * i)];
      if (p > 0) total += p * std::log(p);
    }
  return -total / static_cast<double>(n);
}

void conv3x3x3(const double* in, int cin, const double* weights,
               const double* bias, int cout, const Dims& dims, double* out) {
  const std::int64_t nvox = dims.count();
  for (int co = 0; co < cout; ++co)
    for (int z = 0; z < dims.nz; ++z)
      for (int y = 0; y < dims.ny; ++y)
        for (int x = 0; x < dims.nx; ++x) {
          double acc = bias[co];
          for (int ci = 0; ci < cin; ++ci)
            for (int kz = -1; kz <= 1; ++kz)
              for (int ky = -1; ky <= 1; ++ky)
                for (int kx = -1; kx <= 1; ++kx) {
                  const int sx = x + kx, sy = y + ky, sz = z + kz;
                  if (!dims.contains(sx, sy, sz)) continue;
                  const std::int64_t idx = dims.index(sx, sy, sz);
                  const int k = (kz + 1) * 9 + (ky + 1) * 3 + (kx + 1);
                  acc += in[ci * nvox + idx] *
                         weights[(co * cin + ci) * 27 + k];
                }
          out[co * nvox + dims.index(x, y, z)] = acc;
        }
}

}  // namespace bobqc::ref
