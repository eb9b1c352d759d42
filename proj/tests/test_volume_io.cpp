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

#include <cmath>
#include <cstdint>
#include <vector>

#include "bobqc/errors.hpp"
#include "bobqc/nifti.hpp"
#include "bobqc/rng.hpp"
#include "bobqc/volume.hpp"
#include "test_util.hpp"

using namespace bobqc;
using testutil::TempDir;

namespace {

LabelVolume random_labels(Rng& rng, int max_side, int max_class) {
  const Dims d{1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(max_side))),
               1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(max_side))),
               1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(max_side)))};
  const Spacing s{rng.uniform(0.2, 4.0), rng.uniform(0.2, 4.0),
                  rng.uniform(0.2, 4.0)};
  LabelVolume vol = make_label_volume(d, s);
  for (std::uint16_t& v : vol.voxels)
    v = static_cast<std::uint16_t>(
        rng.next_below(static_cast<std::uint64_t>(max_class + 1)));
  return vol;
}

bool spacing_close_f32(const Spacing& a, const Spacing& b) {
  const auto same = [](double x, double y) {
    return static_cast<float>(x) == static_cast<float>(y);
  };
  return same(a.dx, b.dx) && same(a.dy, b.dy) && same(a.dz, b.dz);
}

}  // namespace

TEST_CASE("dims utilities") {
  const Dims d{3, 4, 5};
  CHECK(d.count() == 60);
  CHECK(d.index(0, 0, 0) == 0);
  CHECK(d.index(1, 0, 0) == 1);  // x is fastest-varying
  CHECK(d.index(0, 1, 0) == 3);
  CHECK(d.index(0, 0, 1) == 12);
  CHECK(d.index(2, 3, 4) == 59);
  CHECK(d.contains(2, 3, 4));
  CHECK_FALSE(d.contains(3, 0, 0));
  CHECK_FALSE(d.contains(0, -1, 0));
}

TEST_CASE("label volume round trip preserves payload, uint8 on disk") {
  TempDir tmp("nifti");
  LabelVolume vol = make_label_volume({4, 3, 2}, {1.5, 2.0, 2.5});
  for (std::size_t i = 0; i < vol.voxels.size(); ++i)
    vol.voxels[i] = static_cast<std::uint16_t>(i % 7);
  write_nifti(vol, tmp.str("a.nii"));

  const auto raw = testutil::slurp(tmp.str("a.nii"));
  REQUIRE(raw.size() == 352 + 24);  // header + one byte per voxel
  CHECK(raw[70] == 2);              // uint8 datatype code

  const LabelVolume back = read_label_nifti(tmp.str("a.nii"));
  CHECK(back.dims == vol.dims);
  CHECK(back.voxels == vol.voxels);
  CHECK(spacing_close_f32(back.spacing, vol.spacing));
}

TEST_CASE("label volume with class above 255 uses uint16 on disk") {
  TempDir tmp("nifti");
  LabelVolume vol = make_label_volume({2, 2, 2}, {1, 1, 1});
  vol.voxels = {0, 1, 255, 256, 300, 40000, 7, 0};
  write_nifti(vol, tmp.str("wide.nii"));

  const auto raw = testutil::slurp(tmp.str("wide.nii"));
  REQUIRE(raw.size() == 352 + 16);  // two bytes per voxel
  CHECK((static_cast<unsigned char>(raw[70]) |
         (static_cast<unsigned char>(raw[71]) << 8)) == 512);

  const LabelVolume back = read_label_nifti(tmp.str("wide.nii"));
  CHECK(back.voxels == vol.voxels);
}

TEST_CASE("scalar volume round trip is exact for float32 values") {
  TempDir tmp("nifti");
  ScalarVolume vol = make_scalar_volume({3, 2, 2}, {0.7, 0.8, 0.9});
  Rng rng(11);
  for (double& v : vol.voxels)
    v = static_cast<double>(static_cast<float>(rng.uniform(-5.0, 5.0)));
  write_nifti(vol, tmp.str("s.nii"));
  const ScalarVolume back = read_scalar_nifti(tmp.str("s.nii"));
  CHECK(back.dims == vol.dims);
  CHECK(back.voxels == vol.voxels);  // values already float32-representable
}

TEST_CASE("scalar write quantizes doubles to float32") {
  TempDir tmp("nifti");
  ScalarVolume vol = make_scalar_volume({1, 1, 1}, {1, 1, 1});
  vol.voxels[0] = 0.1;  // not exactly representable
  write_nifti(vol, tmp.str("q.nii"));
  const ScalarVolume back = read_scalar_nifti(tmp.str("q.nii"));
  CHECK(back.voxels[0] == static_cast<double>(static_cast<float>(0.1)));
}

TEST_CASE("random label volumes survive write-read round trips") {
  TempDir tmp("nifti");
  Rng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const LabelVolume vol = random_labels(rng, 9, trial % 2 == 0 ? 5 : 600);
    const std::string path = tmp.str("r" + std::to_string(trial) + ".nii");
    write_nifti(vol, path);
    const LabelVolume back = read_label_nifti(path);
    CHECK(back.dims == vol.dims);
    CHECK(back.voxels == vol.voxels);
    CHECK(spacing_close_f32(back.spacing, vol.spacing));
  }
}

TEST_CASE("scalar reader accepts label files") {
  TempDir tmp("nifti");
  LabelVolume vol = make_label_volume({2, 1, 1}, {1, 1, 1});
  vol.voxels = {3, 9};
  write_nifti(vol, tmp.str("l.nii"));
  const ScalarVolume s = read_scalar_nifti(tmp.str("l.nii"));
  CHECK(s.voxels == std::vector<double>{3.0, 9.0});
}

TEST_CASE("label reader rejects float payloads") {
  TempDir tmp("nifti");
  ScalarVolume vol = make_scalar_volume({2, 1, 1}, {1, 1, 1});
  write_nifti(vol, tmp.str("f.nii"));
  CHECK_THROWS_AS(read_label_nifti(tmp.str("f.nii")), io_error);
}

TEST_CASE("reader failure modes") {
  TempDir tmp("nifti");
  LabelVolume vol = make_label_volume({2, 2, 2}, {1, 1, 1});
  const std::string path = tmp.str("bad.nii");

  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_label_nifti(tmp.str("nope.nii")), io_error);
  }
  SUBCASE("truncated header") {
    write_nifti(vol, path);
    testutil::truncate_file(path, 100);
    CHECK_THROWS_AS(read_label_nifti(path), io_error);
  }
  SUBCASE("truncated payload") {
    write_nifti(vol, path);
    testutil::truncate_file(path, 352 + 3);
    CHECK_THROWS_AS(read_label_nifti(path), io_error);
  }
  SUBCASE("wrong magic") {
    write_nifti(vol, path);
    testutil::patch_bytes(path, 344, {'n', 'i', '1', 0});
    CHECK_THROWS_AS(read_label_nifti(path), io_error);
  }
  SUBCASE("wrong header size") {
    write_nifti(vol, path);
    testutil::patch_bytes(path, 0, {0x00, 0x01, 0x00, 0x00});
    CHECK_THROWS_AS(read_label_nifti(path), io_error);
  }
  SUBCASE("big-endian header is called out") {
    write_nifti(vol, path);
    testutil::patch_bytes(path, 0, {0x00, 0x00, 0x01, 0x5c});
    CHECK_THROWS_WITH_AS(read_label_nifti(path),
                         doctest::Contains("big-endian"), io_error);
  }
  SUBCASE("4-D volume rejected") {
    write_nifti(vol, path);
    testutil::patch_bytes(path, 40, {4, 0});
    CHECK_THROWS_AS(read_label_nifti(path), io_error);
  }
  SUBCASE("unsupported datatype code") {
    write_nifti(vol, path);
    testutil::patch_bytes(path, 70, {8, 0});  // int32
    CHECK_THROWS_AS(read_label_nifti(path), io_error);
  }
  SUBCASE("bitpix inconsistent with datatype") {
    write_nifti(vol, path);
    testutil::patch_bytes(path, 72, {32, 0});
    CHECK_THROWS_AS(read_label_nifti(path), io_error);
  }
  SUBCASE("unsupported vox_offset") {
    write_nifti(vol, path);
    testutil::patch_bytes(path, 108, {0x00, 0x00, 0x40, 0x44});  // 768.0f
    CHECK_THROWS_AS(read_label_nifti(path), io_error);
  }
  SUBCASE("negative int16 label value") {
    write_nifti(vol, path);
    testutil::patch_bytes(path, 70, {4, 0});   // int16 datatype
    testutil::patch_bytes(path, 72, {16, 0});  // matching bitpix
    // Payload must now be 16 bytes; extend with a negative value.
    testutil::patch_bytes(path, 352, {0xff, 0xff, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0,
                                      0, 0, 0, 0});
    CHECK_THROWS_AS(read_label_nifti(path), io_error);
  }
}

TEST_CASE("zero pixdim falls back to 1 mm") {
  TempDir tmp("nifti");
  LabelVolume vol = make_label_volume({2, 2, 2}, {2, 2, 2});
  const std::string path = tmp.str("z.nii");
  write_nifti(vol, path);
  testutil::patch_bytes(path, 80, {0, 0, 0, 0});  // pixdim[1] = 0
  const LabelVolume back = read_label_nifti(path);
  CHECK(back.spacing.dx == 1.0);
  CHECK(back.spacing.dy == 2.0);
}

TEST_CASE("non-finite scalar voxel refuses to serialize") {
  TempDir tmp("nifti");
  ScalarVolume vol = make_scalar_volume({2, 1, 1}, {1, 1, 1});
  vol.voxels[1] = std::nan("");
  CHECK_THROWS_AS(write_nifti(vol, tmp.str("n.nii")), data_error);
  CHECK_FALSE(vol.all_finite());
}

TEST_CASE("prob volume normalization check") {
  ProbVolume p = make_prob_volume({2, 1, 1}, {1, 1, 1}, 2);
  p.values = {0.25, 0.75, 0.5, 0.5};
  CHECK(p.is_normalized(1e-9));
  p.values[0] = 0.3;
  CHECK_FALSE(p.is_normalized(1e-6));
  p.values = {1.2, -0.2, 0.5, 0.5};  // sums to 1 but leaves [0,1]
  CHECK_FALSE(p.is_normalized(1e-6));
}
