// Copyright 2026 The SALAD Authors. All Rights Reserved.
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

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "salad/aggregation.hpp"
#include "salad/features.hpp"
#include "salad/model.hpp"

// Little-endian binary formats. Every layout starts with a 4-byte magic and
// a u16 version; strings are a u16 byte length followed by UTF-8 bytes;
// a geotag record is a u8 kind (0 none, 1 planar: f64 x, f64 y, 2 frame: i64).
//
//   SALF  n u32, d u32, id, geotag, n*d f32 tokens (row-major), d f32 global
//   SALW  m, l, g_dim, d, hidden u32; dropout f32; sinkhorn_iters u32;
//         tensor count u32; per tensor: name, ndim u8, dims u32[ndim],
//         f32 data (row-major)
//   SALD  count u32, dim u32; per record: id, geotag, dim f32 values
namespace salad::io {

inline constexpr std::uint16_t kFormatVersion = 1;

using Bytes = std::vector<std::uint8_t>;

struct WeightFile {
  AggregatorConfig config;
  AggregatorWeights<float> weights;
};

struct DescriptorRecord {
  Descriptor descriptor;
  std::optional<GeoTag> geotag;
};

Bytes encode_features(const FeatureSet& features);
/// FormatError (with byte offset) on bad magic, version, truncation or
/// trailing bytes; ValidationError if the decoded set violates its invariants.
FeatureSet decode_features(std::span<const std::uint8_t> bytes);

Bytes encode_weights(const AggregatorConfig& config, const AggregatorWeights<float>& weights);
/// Also rejects duplicate, missing or unknown tensors and shapes that
/// disagree with the stored config.
WeightFile decode_weights(std::span<const std::uint8_t> bytes);

/// DimensionError if records disagree on the descriptor dim.
Bytes encode_db(std::span<const DescriptorRecord> records);
/// Also ValidationError when a record's norm is off by more than 1e-4.
std::vector<DescriptorRecord> decode_db(std::span<const std::uint8_t> bytes);

void write_features(const FeatureSet& features, const std::filesystem::path& path);
FeatureSet read_features(const std::filesystem::path& path);

void write_weights(const AggregatorConfig& config, const AggregatorWeights<float>& weights,
                   const std::filesystem::path& path);
WeightFile read_weights(const std::filesystem::path& path);

void write_db(std::span<const DescriptorRecord> records, const std::filesystem::path& path);
std::vector<DescriptorRecord> read_db(const std::filesystem::path& path);

/// Text geotags, one record per line: "id,x,y" (planar meters) or
/// "id,frame". Blank lines and lines starting with '#' are skipped.
/// FormatError carries the 1-based line number; duplicate ids are errors.
std::map<std::string, GeoTag> parse_geotags(std::istream& in);
std::map<std::string, GeoTag> read_geotags(const std::filesystem::path& path);

/// Text labels, one "id,label" per line, same comment rules as geotags.
std::map<std::string, int> parse_labels(std::istream& in);
std::map<std::string, int> read_labels(const std::filesystem::path& path);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace salad::io
