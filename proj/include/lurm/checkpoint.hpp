// Copyright 2026 The LURM Authors.
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

#pragma once

#include "lurm/core/tensor.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace lurm {

/// Versioned binary container: a JSON metadata block followed by named
/// float64 tensors.
///
///   bytes 0..7   "LURMCKPT"
///   u32          format version
///   u64          metadata length L
///   L bytes      UTF-8 JSON; key "tensors" lists {name, rows, cols} in order
///   payload      row-major little-endian float64 values of each tensor
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();

  void put(std::string name, const MatR& value);
  const MatR& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<std::pair<std::string, MatR>>& tensors() const { return tensors_; }

  /// Writes to a temporary sibling and renames into place.
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, MatR>> tensors_;
};

}  // namespace lurm
