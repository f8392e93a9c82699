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
#include <vector>

#include "salad/features.hpp"
#include "salad/retrieval.hpp"

namespace salad::synth {

struct SynthSpec {
  std::uint64_t seed = 0;
  Index num_places = 50;
  Index images_per_place = 4;
  Index n = 32;
  Index d = 64;
  double sigma_within = 0.5;
  double sigma_between = 1.0;
  PositiveMode geotag_mode = PositiveMode::planar;

  /// ConfigError unless P >= 2, K >= 2, n, d >= 1, 0 <= sigma_within < sigma_between.
  void validate() const;
};

struct SynthImage {
  FeatureSet features;  // geotag populated
  int place = 0;
};

/// Every place draws prototype tokens (and a global token) with entries
/// ~ N(0, sigma_between^2); each image adds N(0, sigma_within^2) noise.
/// Planar tags put images within 5 m of their place center on a 150 m grid;
/// frame tags give image i of place p frame 10p + (i mod 3). Ids are
/// "p%04d_i%02d".
/// Images are ordered place-major.
std::vector<SynthImage> gen_places(const SynthSpec& spec);

}  // namespace salad::synth
