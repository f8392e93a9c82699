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

#include "salad/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "salad/error.hpp"

namespace salad::synth {

void SynthSpec::validate() const {
  if (num_places < 2) throw ConfigError("synth: need at least 2 places");
  if (images_per_place < 2) throw ConfigError("synth: need at least 2 images per place");
  if (n < 1 || d < 1) throw ConfigError("synth: n and d must be >= 1");
  if (!(sigma_within >= 0.0) || !(sigma_within < sigma_between)) {
    throw ConfigError("synth: need 0 <= sigma_within < sigma_between");
  }
}

namespace {

constexpr double kGridSpacing = 150.0;
constexpr double kImageRadius = 5.0;

std::string image_id(Index place, Index image) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "p%04lld_i%02lld", static_cast<long long>(place), static_cast<long long>(image));
  return buf;
}

}  // namespace

std::vector<SynthImage> gen_places(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto columns = static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(spec.num_places))));

  std::vector<SynthImage> images;
  images.reserve(static_cast<std::size_t>(spec.num_places * spec.images_per_place));
  Matrix<float> proto_tokens(spec.n, spec.d);
  Vector<float> proto_global(spec.d);
  for (Index p = 0; p < spec.num_places; ++p) {
    for (Index k = 0; k < proto_tokens.size(); ++k) {
      proto_tokens.data()[k] = static_cast<float>(spec.sigma_between * normal(rng));
    }
    for (Index k = 0; k < spec.d; ++k) proto_global(k) = static_cast<float>(spec.sigma_between * normal(rng));
    const double cx = kGridSpacing * static_cast<double>(p % columns);
    const double cy = kGridSpacing * static_cast<double>(p / columns);

    for (Index i = 0; i < spec.images_per_place; ++i) {
      SynthImage img;
      img.place = static_cast<int>(p);
      img.features.id = image_id(p, i);
      img.features.tokens = proto_tokens;
      img.features.global_token = proto_global;
      for (Index k = 0; k < img.features.tokens.size(); ++k) {
        img.features.tokens.data()[k] += static_cast<float>(spec.sigma_within * normal(rng));
      }
      for (Index k = 0; k < spec.d; ++k) {
        img.features.global_token(k) += static_cast<float>(spec.sigma_within * normal(rng));
      }
      // Uniform in a disk of radius kImageRadius around the place center.
      const double radius = kImageRadius * std::sqrt(unit(rng));
      const double angle = 2.0 * std::numbers::pi * unit(rng);
      if (spec.geotag_mode == PositiveMode::planar) {
        img.features.geotag = PlanarPosition{cx + radius * std::cos(angle), cy + radius * std::sin(angle)};
      } else {
        img.features.geotag = FrameIndex{10 * static_cast<std::int64_t>(p) + static_cast<std::int64_t>(i % 3)};
      }
      images.push_back(std::move(img));
    }
  }
  return images;
}

}  // namespace salad::synth
