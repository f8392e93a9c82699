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
#include <optional>
#include <string>
#include <variant>

#include "salad/tensor.hpp"

namespace salad {

/// Planar position in meters (e.g. UTM easting/northing).
struct PlanarPosition {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const PlanarPosition&, const PlanarPosition&) = default;
};

/// Position along a frame-indexed sequence (Nordland-style datasets).
struct FrameIndex {
  std::int64_t frame = 0;

  friend bool operator==(const FrameIndex&, const FrameIndex&) = default;
};

using GeoTag = std::variant<PlanarPosition, FrameIndex>;

/// Output tokens of the backbone for one image: n patch tokens and the
/// global (class) token, all of dimension d.
struct FeatureSet {
  std::string id;
  Matrix<float> tokens;        // n x d
  Vector<float> global_token;  // d
  std::optional<GeoTag> geotag;

  Index num_tokens() const { return tokens.rows(); }
  Index dim() const { return tokens.cols(); }
};

/// Throws ValidationError unless n >= 1, the global token has length d and
/// every value is finite.
void validate(const FeatureSet& features);

}  // namespace salad
