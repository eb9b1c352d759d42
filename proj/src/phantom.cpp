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

#include "bobqc/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <map>
#include <set>

#include "bobqc/errors.hpp"
#include "bobqc/nifti.hpp"
#include "bobqc/rng.hpp"

namespace bobqc {

namespace {

bool inside_ellipsoid(const std::array<double, 3>& p,
                      const std::array<double, 3>& center,
                      const std::array<double, 3>& axes) {
  double q = 0;
  for (int k = 0; k < 3; ++k) {
    const double t = (p[k] - center[k]) / axes[k];
    q += t * t;
  }
  return q <= 1.0;
}

// 64 roughly uniform unit directions (Fibonacci lattice) for the sampled
// surface-containment check.
std::vector<std::array<double, 3>> sphere_directions() {
  constexpr int kPoints = 64;
  constexpr double kGolden = 2.399963229728653;  // radians
  std::vector<std::array<double, 3>> dirs;
  dirs.reserve(kPoints);
  for (int i = 0; i < kPoints; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / kPoints;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = kGolden * i;
    dirs.push_back({r * std::cos(phi), r * std::sin(phi), z});
  }
  return dirs;
}

void validate_spec(const PhantomSpec& spec) {
  if (!spec.dims.contains(0, 0, 0))
    throw config_error("phantom grid must be non-empty");
  if (!spec.spacing.valid())
    throw config_error("phantom spacing must be positive");
  for (double a : spec.body_axes_mm)
    if (!(a > 0)) throw config_error("body semi-axes must be positive");
  if (spec.body_class < 1 || spec.body_class > 0xffff)
    throw config_error("body class must be a positive label");
  std::set<int> ids{spec.body_class};
  const auto dirs = sphere_directions();
  for (const OrganSpec& o : spec.organs) {
    if (o.class_id < 1 || o.class_id > 0xffff)
      throw config_error("organ class must be a positive label");
    if (!ids.insert(o.class_id).second)
      throw config_error("duplicate class id " + std::to_string(o.class_id));
    for (double a : o.semi_axes_mm)
      if (!(a > 0)) throw config_error("organ semi-axes must be positive");
    if (!(o.sigma >= 0)) throw config_error("noise sigma must be >= 0");
    for (const auto& d : dirs) {
      const std::array<double, 3> surface{
          o.center_mm[0] + o.semi_axes_mm[0] * d[0],
          o.center_mm[1] + o.semi_axes_mm[1] * d[1],
          o.center_mm[2] + o.semi_axes_mm[2] * d[2]};
      double q = 0;
      for (int k = 0; k < 3; ++k) {
        const double t = (surface[k] - spec.body_center_mm[k]) / spec.body_axes_mm[k];
        q += t * t;
      }
      if (q > 1.0 + 1e-9)
        throw config_error("organ " + std::to_string(o.class_id) +
                           " extends outside the body");
    }
  }
}

// Modal class among non-target 6-neighbors of the target's voxels; ties go
// to the lowest id, out-of-grid neighbors are ignored.
int modal_neighbor_class(const LabelVolume& vol, int target) {
  const std::uint16_t c = static_cast<std::uint16_t>(target);
  const Dims d = vol.dims;
  std::map<int, std::int64_t> counts;
  constexpr int kOff[6][3] = {{-1, 0, 0}, {1, 0, 0},  {0, -1, 0},
                              {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        if (vol.at(x, y, z) != c) continue;
        for (const auto& o : kOff) {
          const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
          if (!d.contains(nx, ny, nz)) continue;
          const std::uint16_t n = vol.at(nx, ny, nz);
          if (n != c) counts[n] += 1;
        }
      }
  int best = 0;
  std::int64_t best_count = -1;
  for (const auto& [cls, count] : counts)
    if (count > best_count) {
      best = cls;
      best_count = count;
    }
  return best;  // background if the organ is fully enclosed by the grid edge
}

std::vector<std::int64_t> organ_indices(const LabelVolume& vol, int target) {
  const std::uint16_t c = static_cast<std::uint16_t>(target);
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < vol.voxels.size(); ++i)
    if (vol.voxels[i] == c) out.push_back(static_cast<std::int64_t>(i));
  return out;
}

LabelVolume erode_corruption(const LabelVolume& labels, int target,
                             double fraction) {
  const std::uint16_t c = static_cast<std::uint16_t>(target);
  const Dims d = labels.dims;
  const auto organ = organ_indices(labels, target);

  // Peeling depth by BFS from the exposed surface inward.
  std::vector<int> depth(labels.voxels.size(), -1);
  std::deque<std::int64_t> queue;
  constexpr int kOff[6][3] = {{-1, 0, 0}, {1, 0, 0},  {0, -1, 0},
                              {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
  for (std::int64_t i : organ) {
    const int x = static_cast<int>(i % d.nx);
    const int y = static_cast<int>((i / d.nx) % d.ny);
    const int z = static_cast<int>(i / (static_cast<std::int64_t>(d.nx) * d.ny));
    for (const auto& o : kOff) {
      const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
      if (!d.contains(nx, ny, nz) || labels.at(nx, ny, nz) != c) {
        depth[static_cast<std::size_t>(i)] = 0;
        queue.push_back(i);
        break;
      }
    }
  }
  while (!queue.empty()) {
    const std::int64_t i = queue.front();
    queue.pop_front();
    const int x = static_cast<int>(i % d.nx);
    const int y = static_cast<int>((i / d.nx) % d.ny);
    const int z = static_cast<int>(i / (static_cast<std::int64_t>(d.nx) * d.ny));
    for (const auto& o : kOff) {
      const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
      if (!d.contains(nx, ny, nz) || labels.at(nx, ny, nz) != c) continue;
      const std::int64_t n = d.index(nx, ny, nz);
      if (depth[static_cast<std::size_t>(n)] < 0) {
        depth[static_cast<std::size_t>(n)] = depth[static_cast<std::size_t>(i)] + 1;
        queue.push_back(n);
      }
    }
  }

  std::vector<std::int64_t> order = organ;
  std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    const int da = depth[static_cast<std::size_t>(a)];
    const int db = depth[static_cast<std::size_t>(b)];
    return da != db ? da < db : a < b;
  });
  const auto remove_count = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(organ.size())));

  LabelVolume out = labels;
  const auto fill = static_cast<std::uint16_t>(modal_neighbor_class(labels, target));
  for (std::size_t i = 0; i < remove_count && i < order.size(); ++i)
    out.voxels[static_cast<std::size_t>(order[i])] = fill;
  return out;
}

LabelVolume elongate_corruption(const LabelVolume& labels, int target,
                                int rod_length) {
  const std::uint16_t c = static_cast<std::uint16_t>(target);
  const Dims d = labels.dims;
  // Anchor: the voxel with maximal x, ties to the lowest flat index.
  std::int64_t anchor = -1;
  int anchor_x = -1;
  for (std::int64_t i = 0; i < d.count(); ++i) {
    if (labels.voxels[static_cast<std::size_t>(i)] != c) continue;
    const int x = static_cast<int>(i % d.nx);
    if (x > anchor_x) {
      anchor_x = x;
      anchor = i;
    }
  }
  LabelVolume out = labels;
  const int y = static_cast<int>((anchor / d.nx) % d.ny);
  const int z = static_cast<int>(anchor / (static_cast<std::int64_t>(d.nx) * d.ny));
  for (int step = 1; step <= rod_length; ++step) {
    const int x = anchor_x + step;
    if (!d.contains(x, y, z)) break;
    out.voxels[static_cast<std::size_t>(d.index(x, y, z))] = c;
  }
  return out;
}

LabelVolume drop_corruption(const LabelVolume& labels, int target) {
  const auto fill = static_cast<std::uint16_t>(modal_neighbor_class(labels, target));
  const std::uint16_t c = static_cast<std::uint16_t>(target);
  LabelVolume out = labels;
  for (std::uint16_t& v : out.voxels)
    if (v == c) v = fill;
  return out;
}

LabelVolume spill_corruption(const LabelVolume& labels, int target, int steps) {
  const std::uint16_t c = static_cast<std::uint16_t>(target);
  // The spill medium is fixed from the uncorrupted input.
  const auto medium = static_cast<std::uint16_t>(modal_neighbor_class(labels, target));
  const Dims d = labels.dims;
  LabelVolume out = labels;
  constexpr int kOff[6][3] = {{-1, 0, 0}, {1, 0, 0},  {0, -1, 0},
                              {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
  for (int s = 0; s < steps; ++s) {
    std::vector<std::int64_t> grow;
    for (int z = 0; z < d.nz; ++z)
      for (int y = 0; y < d.ny; ++y)
        for (int x = 0; x < d.nx; ++x) {
          if (out.at(x, y, z) != medium) continue;
          for (const auto& o : kOff) {
            const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
            if (d.contains(nx, ny, nz) && out.at(nx, ny, nz) == c) {
              grow.push_back(d.index(x, y, z));
              break;
            }
          }
        }
    for (std::int64_t i : grow) out.voxels[static_cast<std::size_t>(i)] = c;
  }
  return out;
}

}  // namespace

const char* corruption_name(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::kErode:
      return "erode";
    case CorruptionKind::kElongate:
      return "elongate";
    case CorruptionKind::kDrop:
      return "drop";
    case CorruptionKind::kSpill:
      return "spill";
  }
  throw config_error("unknown corruption kind");
}

CorruptionKind corruption_from_name(const std::string& name) {
  if (name == "erode") return CorruptionKind::kErode;
  if (name == "elongate") return CorruptionKind::kElongate;
  if (name == "drop") return CorruptionKind::kDrop;
  if (name == "spill") return CorruptionKind::kSpill;
  throw config_error("unknown corruption kind: \"" + name + "\"");
}

void Corruption::validate() const {
  if (target_class < 1 || target_class > 0xffff)
    throw config_error("corruption target must be a positive label");
  if (kind == CorruptionKind::kErode && !(fraction > 0.0 && fraction < 1.0))
    throw config_error("erode fraction must lie in (0, 1)");
  if (kind == CorruptionKind::kElongate && rod_length < 1)
    throw config_error("rod length must be >= 1");
  if (kind == CorruptionKind::kSpill && spill_steps < 1)
    throw config_error("spill steps must be >= 1");
}

PhantomSample generate(const PhantomSpec& spec) {
  validate_spec(spec);
  const Dims d = spec.dims;
  const Spacing s = spec.spacing;
  LabelVolume labels = make_label_volume(d, s);
  ScalarVolume intensity = make_scalar_volume(d, s);

  // Per-class intensity model, indexed by label.
  std::map<int, std::pair<double, double>> model;  // mean, sigma
  model[0] = {0.0, 0.0};
  model[spec.body_class] = {spec.body_intensity, spec.body_sigma};
  for (const OrganSpec& o : spec.organs) model[o.class_id] = {o.intensity, o.sigma};

  const std::int64_t n = d.count();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const int x = static_cast<int>(i % d.nx);
    const int y = static_cast<int>((i / d.nx) % d.ny);
    const int z = static_cast<int>(i / (static_cast<std::int64_t>(d.nx) * d.ny));
    const std::array<double, 3> p{x * s.dx, y * s.dy, z * s.dz};

    int label = 0;
    if (inside_ellipsoid(p, spec.body_center_mm, spec.body_axes_mm))
      label = spec.body_class;
    for (const OrganSpec& o : spec.organs)
      if (inside_ellipsoid(p, o.center_mm, o.semi_axes_mm)) label = o.class_id;
    labels.voxels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(label);

    const auto [mean, sigma] = model.at(label);
    double v = mean;
    if (sigma > 0) {
      // Independent stream per voxel keeps the noise field identical no
      // matter how the loop is scheduled.
      Rng noise(derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
      v += sigma * noise.next_gaussian();
    }
    intensity.voxels[static_cast<std::size_t>(i)] = v;
  }
  return PhantomSample{std::move(intensity), std::move(labels)};
}

LabelVolume corrupt(const LabelVolume& labels, const Corruption& corruption) {
  corruption.validate();
  bool present = false;
  const std::uint16_t c = static_cast<std::uint16_t>(corruption.target_class);
  for (std::uint16_t v : labels.voxels)
    if (v == c) {
      present = true;
      break;
    }
  if (!present)
    throw data_error("corruption target class " +
                     std::to_string(corruption.target_class) + " is absent");

  switch (corruption.kind) {
    case CorruptionKind::kErode:
      return erode_corruption(labels, corruption.target_class,
                              corruption.fraction);
    case CorruptionKind::kElongate:
      return elongate_corruption(labels, corruption.target_class,
                                 corruption.rod_length);
    case CorruptionKind::kDrop:
      return drop_corruption(labels, corruption.target_class);
    case CorruptionKind::kSpill:
      return spill_corruption(labels, corruption.target_class,
                              corruption.spill_steps);
  }
  throw config_error("unknown corruption kind");
}

PhantomSpec default_template(int grid) {
  if (grid < 16) throw config_error("QC template needs a grid of at least 16");
  const double f = static_cast<double>(grid) / 48.0;
  PhantomSpec spec;
  spec.dims = Dims{grid, grid, grid};
  spec.spacing = Spacing{1.5, 1.5, 1.5};
  const double mid = (grid - 1) / 2.0 * 1.5;
  spec.body_center_mm = {mid, mid, mid};
  spec.body_axes_mm = {30 * f, 26 * f, 24 * f};
  spec.body_class = 1;
  spec.body_intensity = 0.30;
  spec.body_sigma = 0.05;
  auto organ = [&](int cls, double ox, double oy, double oz, double ax,
                   double ay, double az, double mean) {
    OrganSpec o;
    o.class_id = cls;
    o.center_mm = {mid + ox * f, mid + oy * f, mid + oz * f};
    o.semi_axes_mm = {ax * f, ay * f, az * f};
    o.intensity = mean;
    o.sigma = 0.05;
    return o;
  };
  spec.organs = {organ(2, -13, -8, 0, 11, 9.5, 8, 0.70),
                 organ(3, 11, 7, 3, 9, 8, 7, 0.95),
                 organ(4, -3, 12, -11, 8.5, 7.5, 6.5, 0.55),
                 organ(5, 3, -12, 11, 6, 5.5, 5, 0.85)};
  return spec;
}

PhantomSpec tiny_template(int grid) {
  if (grid < 12) throw config_error("tiny template needs a grid of at least 12");
  const double f = static_cast<double>(grid) / 20.0;
  PhantomSpec spec;
  spec.dims = Dims{grid, grid, grid};
  spec.spacing = Spacing{2.0, 2.0, 2.0};
  const double mid = (grid - 1) / 2.0 * 2.0;
  spec.body_center_mm = {mid, mid, mid};
  spec.body_axes_mm = {16 * f, 14 * f, 13 * f};
  spec.body_class = 1;
  spec.body_intensity = 0.40;
  spec.body_sigma = 0.10;
  OrganSpec a;
  a.class_id = 2;
  a.center_mm = {mid - 5.5 * f, mid - 3.5 * f, mid};
  a.semi_axes_mm = {6.5 * f, 5.5 * f, 5.0 * f};
  a.intensity = 0.85;
  a.sigma = 0.10;
  OrganSpec b;
  b.class_id = 3;
  b.center_mm = {mid + 5.5 * f, mid + 4.0 * f, mid + 1.5 * f};
  b.semi_axes_mm = {5.0 * f, 4.5 * f, 4.0 * f};
  b.intensity = 1.30;
  b.sigma = 0.10;
  spec.organs = {a, b};
  return spec;
}

PhantomSpec jitter_spec(const PhantomSpec& tmpl, std::uint64_t sample_seed) {
  PhantomSpec spec = tmpl;
  Rng rng(derive_seed(sample_seed, 1));
  for (OrganSpec& o : spec.organs) {
    const double scale = 1.0 + rng.uniform(-0.038, 0.038);
    for (int k = 0; k < 3; ++k) {
      const double wiggle = 1.0 + rng.uniform(-0.012, 0.012);
      const double factor = std::clamp(scale * wiggle, 0.95, 1.05);
      o.semi_axes_mm[static_cast<std::size_t>(k)] *= factor;
    }
    for (int k = 0; k < 3; ++k)
      o.center_mm[static_cast<std::size_t>(k)] +=
          rng.uniform(-0.05, 0.05) * o.semi_axes_mm[static_cast<std::size_t>(k)];
  }
  spec.seed = derive_seed(sample_seed, 2);
  return spec;
}

std::vector<Corruption> default_corruptions() {
  Corruption erode;
  erode.kind = CorruptionKind::kErode;
  erode.target_class = 2;
  erode.fraction = 0.8;
  Corruption elongate;
  elongate.kind = CorruptionKind::kElongate;
  elongate.target_class = 3;
  elongate.rod_length = 12;
  Corruption drop;
  drop.kind = CorruptionKind::kDrop;
  drop.target_class = 4;
  Corruption spill;
  spill.kind = CorruptionKind::kSpill;
  spill.target_class = 5;
  spill.spill_steps = 2;
  return {erode, elongate, drop, spill};
}

Manifest make_cohort(const PhantomSpec& tmpl, const CohortOptions& opts) {
  if (opts.n < 1) throw config_error("cohort size must be >= 1");
  if (opts.out_dir.empty()) throw config_error("cohort output directory not set");
  std::set<int> corrupt_set;
  for (int i : opts.corrupt_indices) {
    if (i < 0 || i >= opts.n)
      throw config_error("corrupt index " + std::to_string(i) +
                         " outside [0, " + std::to_string(opts.n) + ")");
    if (!corrupt_set.insert(i).second)
      throw config_error("duplicate corrupt index " + std::to_string(i));
  }
  if (!corrupt_set.empty() && opts.corruptions.empty())
    throw config_error("corrupt indices given but no corruptions");
  for (const Corruption& c : opts.corruptions) c.validate();

  std::size_t width = 3;
  for (std::int64_t bound = 1000; opts.n - 1 >= bound; bound *= 10) ++width;

  Manifest manifest;
  manifest.seed = opts.seed;
  std::size_t corrupt_rank = 0;
  for (int i = 0; i < opts.n; ++i) {
    std::string digits = std::to_string(i);
    if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
    const std::string id = "sample_" + digits;

    const std::uint64_t sample_seed = derive_seed(opts.seed, static_cast<std::uint64_t>(i));
    PhantomSample sample = generate(jitter_spec(tmpl, sample_seed));

    ManifestEntry entry;
    entry.id = id;
    entry.intensity_path = id + "_intensity.nii";
    entry.label_path = id + "_labels.nii";
    if (corrupt_set.count(i) != 0) {
      const Corruption& c =
          opts.corruptions[corrupt_rank % opts.corruptions.size()];
      ++corrupt_rank;
      sample.labels = corrupt(sample.labels, c);
      entry.corrupted = true;
      entry.corruption = corruption_name(c.kind);
    }
    write_nifti(sample.intensity, opts.out_dir + "/" + entry.intensity_path);
    write_nifti(sample.labels, opts.out_dir + "/" + entry.label_path);
    manifest.samples.push_back(std::move(entry));
  }
  return manifest;
}

}  // namespace bobqc
