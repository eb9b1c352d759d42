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

#include "bobqc/manifest.hpp"

#include <fstream>

#include <json.hpp>

#include "bobqc/errors.hpp"

namespace bobqc {

using nlohmann::json;

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open manifest: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw data_error("manifest parse error in " + path + ": " + e.what());
  }
  Manifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const json& s : j.at("samples")) {
      ManifestEntry e;
      e.id = s.at("id").get<std::string>();
      e.intensity_path = s.at("intensity_path").get<std::string>();
      e.label_path = s.at("label_path").get<std::string>();
      e.corrupted = s.at("corrupted").get<bool>();
      if (!s.at("corruption").is_null())
        e.corruption = s.at("corruption").get<std::string>();
      if (s.contains("removed_classes"))
        e.removed_classes = s.at("removed_classes").get<std::vector<int>>();
      m.samples.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw data_error("malformed manifest " + path + ": " + e.what());
  }
  return m;
}

void write_manifest(const Manifest& m, const std::string& path) {
  json samples = json::array();
  for (const ManifestEntry& e : m.samples) {
    json s{{"id", e.id},
           {"intensity_path", e.intensity_path},
           {"label_path", e.label_path},
           {"corrupted", e.corrupted},
           {"corruption",
            e.corruption.empty() ? json(nullptr) : json(e.corruption)}};
    if (!e.removed_classes.empty()) s["removed_classes"] = e.removed_classes;
    samples.push_back(std::move(s));
  }
  json j{{"samples", std::move(samples)}, {"seed", m.seed}};
  std::ofstream out(path);
  if (!out) throw io_error("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace bobqc
