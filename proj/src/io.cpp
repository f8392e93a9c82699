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

#include "salad/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "salad/error.hpp"

namespace salad::io {

namespace {

constexpr char kFeatureMagic[4] = {'S', 'A', 'L', 'F'};
constexpr char kWeightMagic[4] = {'S', 'A', 'L', 'W'};
constexpr char kDbMagic[4] = {'S', 'A', 'L', 'D'};

class Writer {
 public:
  void magic(const char (&m)[4]) { bytes_.insert(bytes_.end(), m, m + 4); }

  template <typename U>
  void uint(U value) {
    for (std::size_t b = 0; b < sizeof(U); ++b) bytes_.push_back(static_cast<std::uint8_t>(value >> (8 * b)));
  }

  void u8(std::uint8_t v) { uint(v); }
  void u16(std::uint16_t v) { uint(v); }
  void u32(std::uint32_t v) { uint(v); }
  void i64(std::int64_t v) { uint(static_cast<std::uint64_t>(v)); }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }

  void size32(Index v, const char* what) {
    if (v < 0 || v > static_cast<Index>(UINT32_MAX)) throw DimensionError(std::string(what) + " does not fit u32");
    u32(static_cast<std::uint32_t>(v));
  }

  void string(const std::string& s) {
    if (s.size() > UINT16_MAX) throw ValidationError("string longer than 65535 bytes: " + s.substr(0, 32));
    u16(static_cast<std::uint16_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }

  void geotag(const std::optional<GeoTag>& tag) {
    if (!tag) {
      u8(0);
    } else if (const auto* p = std::get_if<PlanarPosition>(&*tag)) {
      u8(1);
      f64(p->x);
      f64(p->y);
    } else {
      u8(2);
      i64(std::get<FrameIndex>(*tag).frame);
    }
  }

  template <typename Derived>
  void floats(const Eigen::DenseBase<Derived>& values) {
    // Row-major traversal regardless of the storage order of `values`.
    for (Index r = 0; r < values.rows(); ++r) {
      for (Index c = 0; c < values.cols(); ++c) f32(static_cast<float>(values(r, c)));
    }
  }

  Bytes take() { return std::move(bytes_); }

 private:
  Bytes bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t offset() const { return pos_; }

  [[noreturn]] void fail(const std::string& what) const { throw FormatError(what, pos_); }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) fail(std::string("truncated payload reading ") + what);
  }

  void magic(const char (&m)[4], const char* format) {
    need(4, "magic");
    if (std::memcmp(bytes_.data() + pos_, m, 4) != 0) fail(std::string("bad magic, expected ") + format);
    pos_ += 4;
  }

  void version() {
    const std::size_t at = pos_;
    const std::uint16_t v = u16("version");
    if (v != kFormatVersion) {
      throw FormatError("unsupported format version " + std::to_string(v), at);
    }
  }

  template <typename U>
  U uint(const char* what) {
    need(sizeof(U), what);
    U value = 0;
    for (std::size_t b = 0; b < sizeof(U); ++b) value |= static_cast<U>(static_cast<U>(bytes_[pos_ + b]) << (8 * b));
    pos_ += sizeof(U);
    return value;
  }

  std::uint8_t u8(const char* what) { return uint<std::uint8_t>(what); }
  std::uint16_t u16(const char* what) { return uint<std::uint16_t>(what); }
  std::uint32_t u32(const char* what) { return uint<std::uint32_t>(what); }
  std::int64_t i64(const char* what) { return static_cast<std::int64_t>(uint<std::uint64_t>(what)); }
  float f32(const char* what) { return std::bit_cast<float>(uint<std::uint32_t>(what)); }
  double f64(const char* what) { return std::bit_cast<double>(uint<std::uint64_t>(what)); }

  std::string string(const char* what) {
    const std::uint16_t len = u16(what);
    need(len, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }

  std::optional<GeoTag> geotag() {
    const std::size_t at = pos_;
    switch (u8("geotag kind")) {
      case 0:
        return std::nullopt;
      case 1: {
        const double x = f64("geotag x");
        const double y = f64("geotag y");
        return GeoTag{PlanarPosition{x, y}};
      }
      case 2:
        return GeoTag{FrameIndex{i64("geotag frame")}};
      default:
        throw FormatError("unknown geotag kind", at);
    }
  }

  // Element count is checked against the remaining bytes before allocating.
  void floats(float* out, std::uint64_t count, const char* what) {
    if (count > (bytes_.size() - pos_) / 4) fail(std::string("truncated payload reading ") + what);
    for (std::uint64_t k = 0; k < count; ++k) out[k] = f32(what);
  }

  void finish() const {
    if (pos_ != bytes_.size()) fail("unexpected trailing bytes");
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

const char* kTensorNames[] = {"score.w1",     "score.b1",     "score.w2",  "score.b2",  "reduction.w1",
                              "reduction.b1", "reduction.w2", "reduction.b2", "global.w1", "global.b1",
                              "global.w2",    "global.b2",    "dustbin.z"};

}  // namespace

Bytes encode_features(const FeatureSet& features) {
  if (features.global_token.size() != features.tokens.cols()) {
    throw DimensionError("encode_features: global token length differs from token dim");
  }
  Writer w;
  w.magic(kFeatureMagic);
  w.u16(kFormatVersion);
  w.size32(features.tokens.rows(), "n");
  w.size32(features.tokens.cols(), "d");
  w.string(features.id);
  w.geotag(features.geotag);
  w.floats(features.tokens);
  w.floats(features.global_token.transpose());
  return w.take();
}

FeatureSet decode_features(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kFeatureMagic, "SALF");
  r.version();
  const std::uint32_t n = r.u32("n");
  const std::uint32_t d = r.u32("d");
  FeatureSet f;
  f.id = r.string("id");
  f.geotag = r.geotag();
  const std::uint64_t count = static_cast<std::uint64_t>(n) * d;
  if (count + d > (bytes.size() - r.offset()) / 4) r.fail("truncated payload: header implies more tokens");
  f.tokens.resize(n, d);
  r.floats(f.tokens.data(), count, "tokens");
  f.global_token.resize(d);
  r.floats(f.global_token.data(), d, "global token");
  r.finish();
  validate(f);
  return f;
}

Bytes encode_weights(const AggregatorConfig& config, const AggregatorWeights<float>& weights) {
  validate_weights(weights, config);
  Writer w;
  w.magic(kWeightMagic);
  w.u16(kFormatVersion);
  w.size32(config.m, "m");
  w.size32(config.l, "l");
  w.size32(config.g_dim, "g_dim");
  w.size32(config.d, "d");
  w.size32(config.hidden, "hidden");
  w.f32(config.dropout_rate);
  w.size32(config.sinkhorn_iters, "sinkhorn_iters");
  const auto views = parameter_views(weights);
  w.size32(static_cast<Index>(views.size()), "tensor count");
  for (const auto& v : views) {
    w.string(std::string(v.name));
    w.u8(static_cast<std::uint8_t>(v.ndim));
    if (v.ndim >= 1) w.size32(v.rows, "dim");
    if (v.ndim >= 2) w.size32(v.cols, "dim");
    for (float x : v.values()) w.f32(x);
  }
  return w.take();
}

WeightFile decode_weights(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kWeightMagic, "SALW");
  r.version();
  WeightFile file;
  AggregatorConfig& c = file.config;
  c.m = r.u32("m");
  c.l = r.u32("l");
  c.g_dim = r.u32("g_dim");
  c.d = r.u32("d");
  c.hidden = r.u32("hidden");
  c.dropout_rate = r.f32("dropout_rate");
  const std::uint32_t iters = r.u32("sinkhorn_iters");
  if (iters > static_cast<std::uint32_t>(INT32_MAX)) r.fail("sinkhorn_iters out of range");
  c.sinkhorn_iters = static_cast<int>(iters);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    r.fail(e.what());
  }

  // Shape the destination from the config, then fill tensors by name.
  AggregatorWeights<float>& wts = file.weights;
  auto shape_mlp = [&c](Mlp2Weights<float>& mlp, Index out) {
    mlp.w1.resize(c.hidden, c.d);
    mlp.b1.resize(c.hidden);
    mlp.w2.resize(out, c.hidden);
    mlp.b2.resize(out);
  };
  shape_mlp(wts.score, c.m);
  shape_mlp(wts.reduction, c.l);
  shape_mlp(wts.global, c.g_dim);
  const auto views = parameter_views(wts);

  const std::uint32_t count = r.u32("tensor count");
  std::set<std::string> seen;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint64_t name_at = r.offset();
    const std::string name = r.string("tensor name");
    if (!seen.insert(name).second) throw FormatError("duplicate tensor '" + name + "'", name_at);
    const ParamView<float>* target = nullptr;
    for (const auto& v : views) {
      if (v.name == name) target = &v;
    }
    if (target == nullptr) throw FormatError("unknown tensor '" + name + "'", name_at);
    const std::uint64_t shape_at = r.offset();
    const int ndim = r.u8("ndim");
    std::vector<std::uint32_t> dims;
    for (int k = 0; k < ndim; ++k) dims.push_back(r.u32("dim"));
    const bool ok = ndim == target->ndim && (ndim < 1 || dims[0] == target->rows) &&
                    (ndim < 2 || dims[1] == target->cols);
    if (!ok) throw FormatError("tensor '" + name + "' shape disagrees with config", shape_at);
    r.floats(target->data, static_cast<std::uint64_t>(target->size()), "tensor data");
  }
  if (seen.size() != views.size()) {
    for (const char* want : kTensorNames) {
      if (!seen.count(want)) r.fail(std::string("missing tensor '") + want + "'");
    }
  }
  r.finish();
  validate_weights(wts, c);
  return file;
}

Bytes encode_db(std::span<const DescriptorRecord> records) {
  const Index dim = records.empty() ? 0 : records.front().descriptor.values.size();
  Writer w;
  w.magic(kDbMagic);
  w.u16(kFormatVersion);
  w.size32(static_cast<Index>(records.size()), "count");
  w.size32(dim, "dim");
  for (const auto& rec : records) {
    if (rec.descriptor.values.size() != dim) throw DimensionError("encode_db: records disagree on dim");
    w.string(rec.descriptor.id);
    w.geotag(rec.geotag);
    w.floats(rec.descriptor.values.transpose());
  }
  return w.take();
}

std::vector<DescriptorRecord> decode_db(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kDbMagic, "SALD");
  r.version();
  const std::uint32_t count = r.u32("count");
  const std::uint32_t dim = r.u32("dim");
  std::vector<DescriptorRecord> records;
  // Each record needs at least 3 bytes besides its values.
  if (count > (bytes.size() - r.offset()) / (3 + 4ull * dim)) r.fail("truncated payload: header implies more records");
  records.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint64_t record_at = r.offset();
    DescriptorRecord rec;
    rec.descriptor.id = r.string("record id");
    rec.geotag = r.geotag();
    rec.descriptor.values.resize(dim);
    r.floats(rec.descriptor.values.data(), dim, "record values");
    const double norm = rec.descriptor.values.cast<double>().norm();
    if (!(std::abs(norm - 1.0) <= 1e-4)) {
      throw ValidationError("descriptor '" + rec.descriptor.id + "' at byte " + std::to_string(record_at) +
                            " has norm " + std::to_string(norm));
    }
    records.push_back(std::move(rec));
  }
  r.finish();
  return records;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

namespace {

template <typename Fn>
auto with_path(const std::filesystem::path& path, Fn&& fn) {
  try {
    return fn();
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.message(), e.offset());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace

void write_features(const FeatureSet& features, const std::filesystem::path& path) {
  write_file(path, encode_features(features));
}

FeatureSet read_features(const std::filesystem::path& path) {
  return with_path(path, [&] { return decode_features(read_file(path)); });
}

void write_weights(const AggregatorConfig& config, const AggregatorWeights<float>& weights,
                   const std::filesystem::path& path) {
  write_file(path, encode_weights(config, weights));
}

WeightFile read_weights(const std::filesystem::path& path) {
  return with_path(path, [&] { return decode_weights(read_file(path)); });
}

void write_db(std::span<const DescriptorRecord> records, const std::filesystem::path& path) {
  write_file(path, encode_db(records));
}

std::vector<DescriptorRecord> read_db(const std::filesystem::path& path) {
  return with_path(path, [&] { return decode_db(read_file(path)); });
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

template <typename N>
bool parse_number(std::string_view text, N& out) {
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

// Calls `on_record(fields, line_number)` for every non-comment line.
template <typename Fn>
void for_each_record(std::istream& in, Fn&& on_record) {
  std::string raw;
  std::uint64_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    on_record(split_fields(line), line_no);
  }
}

}  // namespace

std::map<std::string, GeoTag> parse_geotags(std::istream& in) {
  std::map<std::string, GeoTag> tags;
  for_each_record(in, [&tags](const std::vector<std::string_view>& f, std::uint64_t line) {
    if (f.front().empty()) throw FormatError("geotags: empty id", line);
    GeoTag tag;
    if (f.size() == 3) {
      PlanarPosition p;
      if (!parse_number(f[1], p.x) || !parse_number(f[2], p.y) || !std::isfinite(p.x) || !std::isfinite(p.y)) {
        throw FormatError("geotags: malformed coordinates", line);
      }
      tag = p;
    } else if (f.size() == 2) {
      FrameIndex fr;
      if (!parse_number(f[1], fr.frame)) throw FormatError("geotags: malformed frame index", line);
      tag = fr;
    } else {
      throw FormatError("geotags: expected 'id,x,y' or 'id,frame'", line);
    }
    if (!tags.emplace(std::string(f.front()), tag).second) {
      throw FormatError("geotags: duplicate id '" + std::string(f.front()) + "'", line);
    }
  });
  return tags;
}

std::map<std::string, GeoTag> read_geotags(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  try {
    return parse_geotags(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.message(), e.offset());
  }
}

std::map<std::string, int> parse_labels(std::istream& in) {
  std::map<std::string, int> labels;
  for_each_record(in, [&labels](const std::vector<std::string_view>& f, std::uint64_t line) {
    int label = 0;
    if (f.size() != 2 || f.front().empty() || !parse_number(f[1], label)) {
      throw FormatError("labels: expected 'id,label'", line);
    }
    if (!labels.emplace(std::string(f.front()), label).second) {
      throw FormatError("labels: duplicate id '" + std::string(f.front()) + "'", line);
    }
  });
  return labels;
}

std::map<std::string, int> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  try {
    return parse_labels(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.message(), e.offset());
  }
}

}  // namespace salad::io
