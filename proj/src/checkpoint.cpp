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

#include "lurm/checkpoint.hpp"

#include "lurm/errors.hpp"
#include "lurm/hashing.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lurm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'L', 'U', 'R', 'M', 'C', 'K', 'P', 'T'};

template <typename T>
void put_raw(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_raw(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("truncated checkpoint");
  return v;
}

}  // namespace

void Checkpoint::put(std::string name, const MatR& value) {
  for (auto& [n, m] : tensors_) {
    if (n == name) {
      m = value;
      return;
    }
  }
  tensors_.emplace_back(std::move(name), value);
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, m] : tensors_) {
    if (n == name) return true;
  }
  return false;
}

const MatR& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, m] : tensors_) {
    if (n == name) return m;
  }
  throw DataError("checkpoint has no tensor '" + name + "'");
}

void Checkpoint::save(const std::filesystem::path& path) const {
  nlohmann::json header = meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [n, m] : tensors_) header["tensors"].push_back({{"name", n}, {"rows", m.rows()}, {"cols", m.cols()}});
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_raw(out, kVersion);
  put_raw(out, static_cast<std::uint64_t>(text.size()));
  out += text;
  for (const auto& [n, m] : tensors_) {
    for (Index i = 0; i < m.size(); ++i) put_raw(out, static_cast<double>(m.data()[i]));
  }
  write_file_atomic(path, out);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError(path.string() + " is not a checkpoint");
  }
  const auto version = get_raw<std::uint32_t>(in);
  if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto len = get_raw<std::uint64_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("truncated checkpoint header");
  Checkpoint ck;
  auto header = nlohmann::json::parse(text, nullptr, false);
  if (header.is_discarded() || !header.contains("tensors")) throw DataError("corrupt checkpoint header");
  for (const auto& t : header["tensors"]) {
    const auto rows = t.at("rows").get<Index>();
    const auto cols = t.at("cols").get<Index>();
    MatR m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(get_raw<double>(in));
    ck.tensors_.emplace_back(t.at("name").get<std::string>(), std::move(m));
  }
  header.erase("tensors");
  ck.meta = std::move(header);
  return ck;
}

}  // namespace lurm
