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
//
// Single-file uncompressed NIfTI-1 subset. Little-endian only, magic
// "n+1\0", 348-byte header, payload at byte 352, datatypes uint8 / int16 /
// uint16 / float32. Orientation metadata (qform/sform) is ignored.

#ifndef BOBQC_NIFTI_HPP_
#define BOBQC_NIFTI_HPP_

#include <string>

#include "bobqc/volume.hpp"

namespace bobqc {

// Label volumes require an integer datatype and nonnegative values; written
// as the smallest unsigned type that fits the maximum class ID.
LabelVolume read_label_nifti(const std::string& path);
void write_nifti(const LabelVolume& vol, const std::string& path);

// Scalar volumes accept any supported datatype on read; written as float32.
ScalarVolume read_scalar_nifti(const std::string& path);
void write_nifti(const ScalarVolume& vol, const std::string& path);

}  // namespace bobqc

#endif  // BOBQC_NIFTI_HPP_
