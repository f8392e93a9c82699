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

// salad: aggregate, train, index, query, eval and synth subcommands.
//
// Exit codes: 0 success, 1 data or validation error, 2 bad invocation.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "salad/aggregation.hpp"
#include "salad/error.hpp"
#include "salad/io.hpp"
#include "salad/retrieval.hpp"
#include "salad/synth.hpp"
#include "salad/training.hpp"

namespace fs = std::filesystem;
using namespace salad;

namespace {

std::vector<fs::path> feature_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".salf") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("no feature files in '" + dir.string() + "'");
  return files;
}

std::vector<FeatureSet> load_features(const fs::path& dir) {
  std::vector<FeatureSet> out;
  for (const auto& path : feature_files(dir)) out.push_back(io::read_features(path));
  return out;
}

std::vector<int> parse_ks(const std::string& text) {
  std::vector<int> ks;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    int k = 0;
    try {
      k = std::stoi(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || used == 0 || k < 1) throw UsageError("--ks: bad value '" + item + "'");
    ks.push_back(k);
  }
  if (ks.empty()) throw UsageError("--ks: empty list");
  return ks;
}

/// Tag for `id`: the geotag file wins over the tag embedded in the data.
std::optional<GeoTag> tag_for(const std::string& id, const std::optional<GeoTag>& embedded,
                              const std::map<std::string, GeoTag>& file_tags) {
  if (auto it = file_tags.find(id); it != file_tags.end()) return it->second;
  return embedded;
}

PositiveMode mode_of(const GeoTag& tag) {
  return std::holds_alternative<PlanarPosition>(tag) ? PositiveMode::planar : PositiveMode::frame;
}

/// Places = connected components of the positive relation over geotags.
std::vector<int> components(const std::vector<GeoTag>& tags) {
  std::vector<int> parent(tags.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      x = parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
    }
    return x;
  };
  const PositiveMode mode = mode_of(tags.front());
  for (std::size_t i = 0; i < tags.size(); ++i) {
    for (std::size_t j = i + 1; j < tags.size(); ++j) {
      if (is_positive(tags[i], tags[j], mode)) parent[static_cast<std::size_t>(find(static_cast<int>(i)))] = find(static_cast<int>(j));
    }
  }
  std::map<int, int> relabel;
  std::vector<int> labels;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const int root = find(static_cast<int>(i));
    labels.push_back(relabel.try_emplace(root, static_cast<int>(relabel.size())).first->second);
  }
  return labels;
}

// ---- aggregate ----

struct AggregateArgs {
  std::string weights, features, out;
  bool training = false;
  std::uint64_t seed = 0;
};

int cmd_aggregate(const AggregateArgs& a) {
  const io::WeightFile wf = io::read_weights(a.weights);
  const auto files = feature_files(a.features);
  Rng rng(a.seed);
  std::vector<io::DescriptorRecord> records;
  std::vector<double> millis;
  for (const auto& path : files) {
    const FeatureSet f = io::read_features(path);
    const auto start = std::chrono::steady_clock::now();
    Descriptor d = forward_full(f, wf.weights, wf.config, a.training, rng);
    millis.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
    records.push_back({std::move(d), f.geotag});
  }
  io::write_db(records, a.out);

  std::vector<double> sorted = millis;
  std::sort(sorted.begin(), sorted.end());
  const double mean = std::accumulate(millis.begin(), millis.end(), 0.0) / static_cast<double>(millis.size());
  std::printf("aggregated %zu descriptors (dim %lld) -> %s\n", records.size(),
              static_cast<long long>(wf.config.descriptor_dim()), a.out.c_str());
  std::printf("latency ms: mean %.3f, median %.3f, max %.3f\n", mean, sorted[sorted.size() / 2], sorted.back());
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string features, geotags, labels, out, loss_log, init;
  int epochs = 4;
  AggregatorConfig config;
  TrainParams params;
};

int cmd_train(TrainArgs a) {
  std::vector<FeatureSet> features = load_features(a.features);
  std::vector<LabeledFeatures> dataset;
  if (!a.labels.empty()) {
    const auto labels = io::read_labels(a.labels);
    for (auto& f : features) {
      const auto it = labels.find(f.id);
      if (it == labels.end()) throw ValidationError("no label for '" + f.id + "' in " + a.labels);
      dataset.push_back({std::move(f), it->second});
    }
  } else {
    const auto file_tags = a.geotags.empty() ? std::map<std::string, GeoTag>{} : io::read_geotags(a.geotags);
    std::vector<GeoTag> tags;
    for (const auto& f : features) {
      const auto tag = tag_for(f.id, f.geotag, file_tags);
      if (!tag) throw ValidationError("no geotag or label for '" + f.id + "'");
      if (!tags.empty() && tag->index() != tags.front().index()) throw ValidationError("mixed geotag kinds");
      tags.push_back(*tag);
    }
    const auto labels = components(tags);
    for (std::size_t k = 0; k < features.size(); ++k) dataset.push_back({std::move(features[k]), labels[k]});
  }

  a.config.d = dataset.front().features.dim();
  a.config.seed = a.params.seed;
  a.config.validate();
  std::optional<io::WeightFile> initial;
  if (!a.init.empty()) {
    // The checkpoint's stored config replaces the architecture flags.
    initial = io::read_weights(a.init);
    a.config = initial->config;
  }
  const auto result =
      train_run<float>(dataset, a.config, a.params, a.epochs, initial ? &initial->weights : nullptr);
  io::write_weights(a.config, result.weights, a.out);

  if (!a.loss_log.empty()) {
    std::ofstream log(a.loss_log);
    if (!log) throw Error("cannot open '" + a.loss_log + "' for writing");
    write_loss_log(log, result.log);
  }
  for (std::size_t e = 0; e < result.epoch_mean_loss.size(); ++e) {
    std::printf("epoch %zu mean loss %.6f\n", e + 1, result.epoch_mean_loss[e]);
  }
  std::printf("trained %zu iterations on %zu images -> %s\n", result.log.size(), dataset.size(), a.out.c_str());
  return 0;
}

// ---- index / query / eval ----

struct DbArgs {
  std::string db, query_db, geotags, out, id, ks = "1,5,10";
  int k = 10;
  bool frame_mode = false;
};

std::vector<io::DescriptorRecord> load_db(const std::string& path, const std::map<std::string, GeoTag>& tags) {
  auto records = io::read_db(path);
  for (auto& r : records) r.geotag = tag_for(r.descriptor.id, r.geotag, tags);
  return records;
}

RetrievalIndex index_of(const std::vector<io::DescriptorRecord>& records) {
  std::vector<Descriptor> ds;
  std::vector<std::optional<GeoTag>> tags;
  for (const auto& r : records) {
    ds.push_back(r.descriptor);
    tags.push_back(r.geotag);
  }
  return build_index(ds, tags);
}

std::map<std::string, GeoTag> optional_tags(const std::string& path) {
  return path.empty() ? std::map<std::string, GeoTag>{} : io::read_geotags(path);
}

int cmd_index(const DbArgs& a) {
  const auto records = load_db(a.db, optional_tags(a.geotags));
  const auto index = index_of(records);
  const auto tagged = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.geotag.has_value(); });
  std::printf("index: %lld descriptors, dim %lld, %lld geotagged\n", static_cast<long long>(index.size()),
              static_cast<long long>(index.dim()), static_cast<long long>(tagged));
  if (!a.out.empty()) {
    io::write_db(records, a.out);
    std::printf("wrote %s\n", a.out.c_str());
  }
  return 0;
}

int cmd_query(const DbArgs& a) {
  if (a.k < 1) throw UsageError("-k must be >= 1");
  const auto index = index_of(load_db(a.db, {}));
  const auto queries = io::read_db(a.query_db);
  bool found = false;
  for (const auto& q : queries) {
    if (!a.id.empty() && q.descriptor.id != a.id) continue;
    found = true;
    std::printf("# query %s\nrank,id,similarity\n", q.descriptor.id.c_str());
    const auto matches = query_topk(index, q.descriptor, a.k);
    for (std::size_t r = 0; r < matches.size(); ++r) {
      std::printf("%zu,%s,%.6f\n", r + 1, matches[r].id.c_str(), matches[r].similarity);
    }
  }
  if (!found) throw ValidationError("query id '" + a.id + "' not found in " + a.query_db);
  return 0;
}

int cmd_eval(const DbArgs& a) {
  const auto ks = parse_ks(a.ks);
  const auto tags = optional_tags(a.geotags);
  const auto index = index_of(load_db(a.db, tags));
  const auto query_records = load_db(a.query_db, tags);
  if (!query_records.empty() && query_records.front().descriptor.values.size() != index.dim()) {
    throw DimensionError("query dim " + std::to_string(query_records.front().descriptor.values.size()) +
                         " != reference dim " + std::to_string(index.dim()));
  }
  std::vector<EvalQuery> queries;
  for (const auto& r : query_records) {
    if (!r.geotag) throw ValidationError("query '" + r.descriptor.id + "' has no geotag");
    queries.push_back({r.descriptor, *r.geotag});
  }
  const EvalReport report =
      recall_at_k(index, queries, ks, a.frame_mode ? PositiveMode::frame : PositiveMode::planar);
  std::printf("queries: %lld evaluated, %lld excluded\n", static_cast<long long>(report.evaluated),
              static_cast<long long>(report.excluded));
  std::fputs(format_report(report).c_str(), stdout);
  return 0;
}

// ---- synth ----

struct SynthArgs {
  std::string out;
  synth::SynthSpec spec;
  Index queries_per_place = 1;
  bool frame_mode = false;
};

int cmd_synth(SynthArgs a) {
  if (a.queries_per_place < 0) throw UsageError("--queries-per-place must be >= 0");
  const Index database_per_place = a.spec.images_per_place;
  a.spec.images_per_place += a.queries_per_place;
  a.spec.geotag_mode = a.frame_mode ? PositiveMode::frame : PositiveMode::planar;
  const auto images = synth::gen_places(a.spec);

  const fs::path root(a.out);
  fs::create_directories(root / "database");
  if (a.queries_per_place > 0) fs::create_directories(root / "queries");
  std::ofstream geotags(root / "geotags.csv");
  std::ofstream labels(root / "labels.csv");
  if (!geotags || !labels) throw Error("cannot write into '" + a.out + "'");
  geotags << "# id,x,y (planar) or id,frame\n";
  labels << "# id,label\n";
  char line[128];
  Index index_in_place = 0;
  for (const auto& img : images) {
    const bool is_query = index_in_place >= database_per_place;
    io::write_features(img.features, root / (is_query ? "queries" : "database") / (img.features.id + ".salf"));
    if (const auto* p = std::get_if<PlanarPosition>(&*img.features.geotag)) {
      std::snprintf(line, sizeof(line), "%s,%.17g,%.17g\n", img.features.id.c_str(), p->x, p->y);
    } else {
      std::snprintf(line, sizeof(line), "%s,%lld\n", img.features.id.c_str(),
                    static_cast<long long>(std::get<FrameIndex>(*img.features.geotag).frame));
    }
    geotags << line;
    if (!is_query) labels << img.features.id << ',' << img.place << '\n';
    index_in_place = (index_in_place + 1) % a.spec.images_per_place;
  }
  std::printf("wrote %lld places x (%lld database + %lld query) images -> %s\n",
              static_cast<long long>(a.spec.num_places), static_cast<long long>(database_per_place),
              static_cast<long long>(a.queries_per_place), a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SALAD optimal-transport aggregation for visual place recognition"};
  app.require_subcommand(1);

  AggregateArgs agg;
  auto* aggregate = app.add_subcommand("aggregate", "Aggregate feature files into a descriptor database");
  aggregate->add_option("--weights", agg.weights, "Weight file (.salw)")->required();
  aggregate->add_option("--features", agg.features, "Directory of feature files (.salf)")->required();
  aggregate->add_option("--out", agg.out, "Output descriptor database (.sald)")->required();
  aggregate->add_flag("--training", agg.training, "Enable dropout");
  aggregate->add_option("--seed", agg.seed, "Dropout seed");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train aggregation weights");
  train->add_option("--features", tr.features, "Directory of feature files (.salf)")->required();
  train->add_option("--geotags", tr.geotags, "Geotag file; places are 25 m / two-frame components");
  train->add_option("--labels", tr.labels, "Label file (id,label); takes precedence over geotags");
  train->add_option("--epochs", tr.epochs, "Epochs")->capture_default_str()->check(CLI::NonNegativeNumber);
  train->add_option("--out", tr.out, "Output weight file (.salw)")->required();
  train->add_option("--loss-log", tr.loss_log, "Write iter,lr,loss lines here");
  train->add_option("--init", tr.init, "Start from this weight file");
  train->add_option("--clusters", tr.config.m, "m")->capture_default_str();
  train->add_option("--cluster-dim", tr.config.l, "l")->capture_default_str();
  train->add_option("--global-dim", tr.config.g_dim, "g_dim")->capture_default_str();
  train->add_option("--hidden", tr.config.hidden, "MLP hidden width")->capture_default_str();
  train->add_option("--dropout", tr.config.dropout_rate, "Dropout rate")->capture_default_str();
  train->add_option("--sinkhorn-iters", tr.config.sinkhorn_iters, "Sinkhorn passes")->capture_default_str();
  train->add_option("--batch-places", tr.params.batch_places, "Places per batch")->capture_default_str();
  train->add_option("--images-per-place", tr.params.images_per_place, "Images per place")->capture_default_str();
  train->add_option("--lr", tr.params.lr, "Initial learning rate")->capture_default_str();
  train->add_option("--final-lr-fraction", tr.params.final_lr_fraction, "Final LR / initial LR")
      ->capture_default_str();
  train->add_option("--weight-decay", tr.params.adamw.weight_decay, "AdamW weight decay")->capture_default_str();
  train->add_option("--ms-alpha", tr.params.loss.alpha, "Multi-similarity alpha")->capture_default_str();
  train->add_option("--ms-beta", tr.params.loss.beta, "Multi-similarity beta")->capture_default_str();
  train->add_option("--ms-lambda", tr.params.loss.lambda, "Multi-similarity lambda")->capture_default_str();
  train->add_option("--ms-epsilon", tr.params.loss.epsilon, "Mining margin")->capture_default_str();
  train->add_option("--seed", tr.params.seed, "Initialization, batch order and dropout seed");

  DbArgs idx;
  auto* index = app.add_subcommand("index", "Validate a descriptor database and attach geotags");
  index->add_option("--db", idx.db, "Descriptor database (.sald)")->required();
  index->add_option("--geotags", idx.geotags, "Geotag file");
  index->add_option("--out", idx.out, "Write the tagged database here");

  DbArgs qa;
  auto* query = app.add_subcommand("query", "Top-k matches for queries");
  query->add_option("--db", qa.db, "Reference database (.sald)")->required();
  query->add_option("--query-db", qa.query_db, "Query database (.sald)")->required();
  query->add_option("--id", qa.id, "Only this query id");
  query->add_option("-k", qa.k, "Matches per query")->capture_default_str();

  DbArgs ev;
  auto* eval = app.add_subcommand("eval", "Recall@k of queries against references");
  eval->add_option("--db", ev.db, "Reference database (.sald)")->required();
  eval->add_option("--query-db", ev.query_db, "Query database (.sald)")->required();
  eval->add_option("--geotags", ev.geotags, "Geotag file (overrides embedded tags)");
  eval->add_option("--ks", ev.ks, "Comma-separated k values")
      ->capture_default_str()
      ->check([](const std::string& text) {
        try {
          parse_ks(text);
        } catch (const std::exception& e) {
          return std::string(e.what());
        }
        return std::string();
      });
  eval->add_flag("--frame-mode", ev.frame_mode, "Positives within two frames instead of 25 m");

  SynthArgs sy;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic place dataset");
  synth_cmd->add_option("--out", sy.out, "Output directory")->required();
  synth_cmd->add_option("--seed", sy.spec.seed, "Seed");
  synth_cmd->add_option("--places", sy.spec.num_places, "Places")->capture_default_str();
  synth_cmd->add_option("--images-per-place", sy.spec.images_per_place, "Database images per place")
      ->capture_default_str();
  synth_cmd->add_option("--queries-per-place", sy.queries_per_place, "Held-out query images per place")
      ->capture_default_str();
  synth_cmd->add_option("--tokens", sy.spec.n, "Tokens per image (n)")->capture_default_str();
  synth_cmd->add_option("--dim", sy.spec.d, "Token dimension (d)")->capture_default_str();
  synth_cmd->add_option("--sigma-within", sy.spec.sigma_within, "Within-place noise")->capture_default_str();
  synth_cmd->add_option("--sigma-between", sy.spec.sigma_between, "Prototype scale")->capture_default_str();
  synth_cmd->add_flag("--frame-mode", sy.frame_mode, "Frame-index geotags");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* failed = &app;
    for (auto* sub : app.get_subcommands()) failed = sub;
    std::cerr << failed->help();
    return 2;
  }

  try {
    if (aggregate->parsed()) return cmd_aggregate(agg);
    if (train->parsed()) return cmd_train(tr);
    if (index->parsed()) return cmd_index(idx);
    if (query->parsed()) return cmd_query(qa);
    if (eval->parsed()) return cmd_eval(ev);
    if (synth_cmd->parsed()) return cmd_synth(sy);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
