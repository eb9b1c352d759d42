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

#include "bobqc/nifti.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <vector>

namespace bobqc {

namespace {

constexpr int kHeaderSize = 348;
constexpr int kPayloadOffset = 352;

// Datatype codes from the published header layout.
constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtUint16 = 512;

void put_i16(std::uint8_t* buf, int off, std::int16_t v) {
  buf[off] = static_cast<std::uint8_t>(v & 0xff);
  buf[off + 1] = static_cast<std::uint8_t>((v >> 8) & 0xff);
}

void put_i32(std::uint8_t* buf, int off, std::int32_t v) {
  for (int i = 0; i < 4; ++i)
    buf[off + i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xff);
}

void put_f32(std::uint8_t* buf, int off, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  for (int i = 0; i < 4; ++i)
    buf[off + i] = static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff);
}

std::int16_t get_i16(const std::uint8_t* buf, int off) {
  return static_cast<std::int16_t>(buf[off] | (buf[off + 1] << 8));
}

std::int32_t get_i32(const std::uint8_t* buf, int off) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i)
    bits |= static_cast<std::uint32_t>(buf[off + i]) << (8 * i);
  return static_cast<std::int32_t>(bits);
}

float get_f32(const std::uint8_t* buf, int off) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i)
    bits |= static_cast<std::uint32_t>(buf[off + i]) << (8 * i);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

int bitpix_for(std::int16_t datatype) {
  switch (datatype) {
    case kDtUint8:
      return 8;
    case kDtInt16:
    case kDtUint16:
      return 16;
    case kDtFloat32:
      return 32;
    default:
      return 0;
  }
}

struct ParsedHeader {
  Dims dims;
  Spacing spacing;
  std::int16_t datatype = 0;
};

ParsedHeader parse_header(const std::uint8_t* h, const std::string& path) {
  const std::int32_t sizeof_hdr = get_i32(h, 0);
  if (sizeof_hdr != kHeaderSize) {
    // 348 with swapped byte order marks a big-endian writer.
    if (sizeof_hdr == 0x5c010000)
      throw io_error(path + ": big-endian NIfTI header not supported");
    throw io_error(path + ": not a NIfTI-1 header (sizeof_hdr != 348)");
  }
  const char* magic = reinterpret_cast<const char*>(h + 344);
  if (std::memcmp(magic, "n+1\0", 4) != 0)
    throw io_error(path + ": unsupported magic \"" +
                   std::string(magic, magic + 3) + "\"");
  const std::int16_t ndim = get_i16(h, 40);
  if (ndim != 3)
    throw io_error(path + ": only 3-D volumes supported (dim[0] = " +
                   std::to_string(ndim) + ")");

  ParsedHeader out;
  out.dims.nx = get_i16(h, 42);
  out.dims.ny = get_i16(h, 44);
  out.dims.nz = get_i16(h, 46);
  if (out.dims.nx <= 0 || out.dims.ny <= 0 || out.dims.nz <= 0)
    throw io_error(path + ": non-positive dimension in header");

  out.datatype = get_i16(h, 70);
  const int want_bitpix = bitpix_for(out.datatype);
  if (want_bitpix == 0)
    throw io_error(path + ": unsupported datatype code " +
                   std::to_string(out.datatype));
  const std::int16_t bitpix = get_i16(h, 72);
  if (bitpix != 0 && bitpix != want_bitpix)
    throw io_error(path + ": bitpix " + std::to_string(bitpix) +
                   " inconsistent with datatype " +
                   std::to_string(out.datatype));

  double pix[3];
  for (int i = 0; i < 3; ++i) {
    float p = get_f32(h, 76 + 4 * (i + 1));
    if (!std::isfinite(p) || p < 0.0f)
      throw io_error(path + ": invalid pixdim[" + std::to_string(i + 1) + "]");
    if (p == 0.0f) {
      std::cerr << "bobqc: warning: " << path << ": pixdim["
                << (i + 1) << "] is 0, assuming 1.0 mm\n";
      p = 1.0f;
    }
    pix[i] = static_cast<double>(p);
  }
  out.spacing = Spacing{pix[0], pix[1], pix[2]};

  const float vox_offset = get_f32(h, 108);
  if (vox_offset != static_cast<float>(kPayloadOffset))
    throw io_error(path + ": unsupported vox_offset " +
                   std::to_string(vox_offset));
  return out;
}

std::vector<std::uint8_t> read_payload(std::ifstream& in,
                                       const ParsedHeader& hdr,
                                       const std::string& path) {
  const std::int64_t n = hdr.dims.count();
  const std::int64_t bytes = n * (bitpix_for(hdr.datatype) / 8);
  std::vector<std::uint8_t> payload(static_cast<std::size_t>(bytes));
  in.seekg(kPayloadOffset, std::ios::beg);
  in.read(reinterpret_cast<char*>(payload.data()), bytes);
  if (in.gcount() != bytes)
    throw io_error(path + ": truncated payload: expected " +
                   std::to_string(bytes) + " bytes, got " +
                   std::to_string(in.gcount()));
  return payload;
}

ParsedHeader open_and_parse(const std::string& path, std::ifstream& in,
                            std::vector<std::uint8_t>* payload) {
  in.open(path, std::ios::binary);
  if (!in) throw io_error(path + ": cannot open file");
  std::uint8_t h[kHeaderSize];
  in.read(reinterpret_cast<char*>(h), kHeaderSize);
  if (in.gcount() != kHeaderSize) throw io_error(path + ": truncated header");
  ParsedHeader hdr = parse_header(h, path);
  *payload = read_payload(in, hdr, path);
  return hdr;
}

void write_file(const std::string& path, const std::uint8_t* header,
                const std::uint8_t* payload, std::size_t payload_bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error(path + ": cannot open file for writing");
  out.write(reinterpret_cast<const char*>(header), kPayloadOffset);
  out.write(reinterpret_cast<const char*>(payload),
            static_cast<std::streamsize>(payload_bytes));
  if (!out) throw io_error(path + ": write failed");
}

// All fields not listed here stay zero.
void fill_header(std::uint8_t* h, const Dims& dims, const Spacing& spacing,
                 std::int16_t datatype) {
  std::memset(h, 0, kPayloadOffset);
  put_i32(h, 0, kHeaderSize);
  put_i16(h, 40, 3);  // dim[0]
  put_i16(h, 42, static_cast<std::int16_t>(dims.nx));
  put_i16(h, 44, static_cast<std::int16_t>(dims.ny));
  put_i16(h, 46, static_cast<std::int16_t>(dims.nz));
  put_i16(h, 70, datatype);
  put_i16(h, 72, static_cast<std::int16_t>(bitpix_for(datatype)));
  put_f32(h, 80, static_cast<float>(spacing.dx));
  put_f32(h, 84, static_cast<float>(spacing.dy));
  put_f32(h, 88, static_cast<float>(spacing.dz));
  put_f32(h, 108, static_cast<float>(kPayloadOffset));
  std::memcpy(h + 344, "n+1\0", 4);
}

}  // namespace

LabelVolume read_label_nifti(const std::string& path) {
  std::ifstream in;
  std::vector<std::uint8_t> payload;
  const ParsedHeader hdr = open_and_parse(path, in, &payload);
  if (hdr.datatype == kDtFloat32)
    throw io_error(path + ": label volume requires integer datatype");

  LabelVolume vol = make_label_volume(hdr.dims, hdr.spacing);
  const std::int64_t n = hdr.dims.count();
  switch (hdr.datatype) {
    case kDtUint8:
      for (std::int64_t i = 0; i < n; ++i)
        vol.voxels[static_cast<std::size_t>(i)] = payload[static_cast<std::size_t>(i)];
      break;
    case kDtInt16:
      for (std::int64_t i = 0; i < n; ++i) {
        const std::int16_t v = get_i16(payload.data(), static_cast<int>(2 * i));
        if (v < 0)
          throw io_error(path + ": negative label value " + std::to_string(v) +
                         " at voxel " + std::to_string(i));
        vol.voxels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(v);
      }
      break;
    case kDtUint16:
      for (std::int64_t i = 0; i < n; ++i)
        vol.voxels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(
            static_cast<std::uint16_t>(payload[static_cast<std::size_t>(2 * i)]) |
            (static_cast<std::uint16_t>(payload[static_cast<std::size_t>(2 * i + 1)]) << 8));
      break;
    default:
      throw io_error(path + ": unsupported datatype code " +
                     std::to_string(hdr.datatype));
  }
  return vol;
}

ScalarVolume read_scalar_nifti(const std::string& path) {
  std::ifstream in;
  std::vector<std::uint8_t> payload;
  const ParsedHeader hdr = open_and_parse(path, in, &payload);

  ScalarVolume vol = make_scalar_volume(hdr.dims, hdr.spacing);
  const std::int64_t n = hdr.dims.count();
  switch (hdr.datatype) {
    case kDtUint8:
      for (std::int64_t i = 0; i < n; ++i)
        vol.voxels[static_cast<std::size_t>(i)] =
            static_cast<double>(payload[static_cast<std::size_t>(i)]);
      break;
    case kDtInt16:
      for (std::int64_t i = 0; i < n; ++i)
        vol.voxels[static_cast<std::size_t>(i)] = static_cast<double>(
            get_i16(payload.data(), static_cast<int>(2 * i)));
      break;
    case kDtUint16:
      for (std::int64_t i = 0; i < n; ++i)
        vol.voxels[static_cast<std::size_t>(i)] = static_cast<double>(
            static_cast<std::uint16_t>(payload[static_cast<std::size_t>(2 * i)]) |
            (static_cast<std::uint16_t>(payload[static_cast<std::size_t>(2 * i + 1)]) << 8));
      break;
    case kDtFloat32:
      for (std::int64_t i = 0; i < n; ++i) {
        const float v = get_f32(payload.data(), static_cast<int>(4 * i));
        if (!std::isfinite(v))
          throw io_error(path + ": non-finite value at voxel " +
                         std::to_string(i));
        vol.voxels[static_cast<std::size_t>(i)] = static_cast<double>(v);
      }
      break;
    default:
      throw io_error(path + ": unsupported datatype code " +
                     std::to_string(hdr.datatype));
  }
  return vol;
}

void write_nifti(const LabelVolume& vol, const std::string& path) {
  const std::uint16_t maxc = vol.max_class();
  const std::int16_t datatype = maxc <= 255 ? kDtUint8 : kDtUint16;
  const std::int64_t n = vol.dims.count();

  std::uint8_t header[kPayloadOffset];
  fill_header(header, vol.dims, vol.spacing, datatype);

  std::vector<std::uint8_t> payload;
  if (datatype == kDtUint8) {
    payload.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
      payload[static_cast<std::size_t>(i)] =
          static_cast<std::uint8_t>(vol.voxels[static_cast<std::size_t>(i)]);
  } else {
    payload.resize(static_cast<std::size_t>(2 * n));
    for (std::int64_t i = 0; i < n; ++i) {
      const std::uint16_t v = vol.voxels[static_cast<std::size_t>(i)];
      payload[static_cast<std::size_t>(2 * i)] = static_cast<std::uint8_t>(v & 0xff);
      payload[static_cast<std::size_t>(2 * i + 1)] = static_cast<std::uint8_t>(v >> 8);
    }
  }
  write_file(path, header, payload.data(), payload.size());
}

void write_nifti(const ScalarVolume& vol, const std::string& path) {
  const std::int64_t n = vol.dims.count();
  std::uint8_t header[kPayloadOffset];
  fill_header(header, vol.dims, vol.spacing, kDtFloat32);

  std::vector<std::uint8_t> payload(static_cast<std::size_t>(4 * n));
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = vol.voxels[static_cast<std::size_t>(i)];
    if (!std::isfinite(d))
      throw data_error(path + ": refusing to write non-finite voxel " +
                       std::to_string(i));
    put_f32(payload.data(), static_cast<int>(4 * i), static_cast<float>(d));
  }
  write_file(path, header, payload.data(), payload.size());
}

}  // namespace bobqc
