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

#ifndef BOBQC_MANIFEST_HPP_
#define BOBQC_MANIFEST_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace bobqc {

// One dataset sample on disk. corruption is empty for clean samples.
// removed_classes is filled by per-organ filtering; consumers treat those
// labels as background.
struct ManifestEntry {
  std::string id;
  std::string intensity_path;
  std::string label_path;
  bool corrupted = false;
  std::string corruption;
  std::vector<int> removed_classes;
};

struct Manifest {
  std::vector<ManifestEntry> samples;
  std::uint64_t seed = 0;
};

Manifest read_manifest(const std::string& path);
void write_manifest(const Manifest& m, const std::string& path);

}  // namespace bobqc

#endif  // BOBQC_MANIFEST_HPP_
