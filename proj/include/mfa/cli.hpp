// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mfa/dataset.hpp"
#include "mfa/evaluation.hpp"
#include "mfa/io.hpp"
#include "mfa/splits.hpp"
#include "mfa/synthetic.hpp"
#include "mfa/training.hpp"
#include "mfa/tsne.hpp"
#include "mfa/validation.hpp"

namespace mfa::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

inline SplitFractions parse_fractions(const std::string& text) {
  std::vector<double> parts;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto token = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ConfigError("--fractions: cannot parse '" + token + "'");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (parts.size() != 3) throw ConfigError("--fractions takes three comma-separated values");
  SplitFractions f{parts[0], parts[1], parts[2]};
  f.validate();
  return f;
}

inline unsigned worker_threads() {
  if (test_mode()) return 1;
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Species subdirectories of a multi-species root, sorted by name.
inline std::vector<DatasetManifest> load_species_dirs(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  std::vector<DatasetManifest> out;
  for (const auto& n : names) out.push_back(load_manifest(root / n, n));
  if (out.empty()) throw InvalidInputError("no species directories under " + root.string());
  return out;
}

inline nlohmann::ordered_json serialize_lodo(const LodoSplit& lodo, std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["target_species"] = lodo.target_species;
  j["seed"] = seed;
  nlohmann::ordered_json train = nlohmann::ordered_json::object();
  for (const auto& m : lodo.train_manifests) {
    auto names = nlohmann::ordered_json::array();
    for (const auto& r : m.records()) names.push_back(r.name());
    train[m.species()] = names;
  }
  j["train"] = train;
  auto names_of = [&](const std::vector<std::size_t>& idx) {
    auto a = nlohmann::ordered_json::array();
    for (auto i : idx) a.push_back(lodo.target_manifest.records().at(i).name());
    return a;
  };
  j["gallery"] = names_of(lodo.eval_split.gallery);
  j["query"] = names_of(lodo.eval_split.query);
  return j;
}

/// Retrieval set from a dump; identity and camera come from record names.
inline RetrievalSet retrieval_set(const EmbeddingDump& dump) {
  RetrievalSet set;
  for (std::size_t i = 0; i < dump.records.size(); ++i) {
    const auto n = parse_image_name(dump.records[i]);
    set.vectors.push_back(dump.vectors[i]);
    set.ids.push_back(n.identity);
    set.cams.push_back(n.camera_id);
  }
  return set;
}

struct Options {
  std::string root;
  std::string species;
  std::string fractions = "0.6,0.25,0.15";
  std::uint64_t seed = 0;
  std::string config;
  std::string out;
  std::string metric;
  std::string protocol = "intra";
  std::string target_species;
  std::size_t runs = 1;
  bool gate_off = false;
  bool no_metadata = false;
  std::string expect;
  std::string split;
  bool strict = false;
  std::vector<std::string> embeddings;
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  std::size_t k_max = 20;
  bool exclude_same_camera = false;
  std::optional<std::size_t> epochs;
  std::string encoder_mode;
  std::string layout;
  SyntheticConfig synth;
};

inline int cmd_validate(const Options& o, std::ostream& out) {
  std::vector<std::string> warnings;
  const auto manifest = load_manifest(o.root, o.species, {{}, &warnings});
  for (const auto& w : warnings) out << "warning: " << w << "\n";
  std::optional<SplitManifest> split;
  fs::path split_path = o.split.empty() ? fs::path(o.root) / "split.json" : fs::path(o.split);
  if (!o.split.empty() || fs::exists(split_path)) {
    split = parse_split(read_file(split_path), manifest);
    check_split(manifest, *split);
  }
  if (o.expect.empty()) {
    out << o.species << ": " << manifest.size() << " images, " << manifest.identity_count() << " identities\n";
    return kExitOk;
  }
  const auto table = parse_expected_table(read_file(o.expect));
  const auto report = validate_dataset(manifest, split, table);
  out << report.to_text();
  if (!o.out.empty()) write_file_atomic(o.out, report.to_json().dump(2) + "\n");
  return report.passed() ? kExitOk : kExitFailure;
}

inline int cmd_split(const Options& o, std::ostream& out) {
  if (o.out.empty()) throw ConfigError("split requires --out");
  const auto fractions = parse_fractions(o.fractions);
  const fs::path dir(o.out);
  if (parse_protocol(o.protocol) == Protocol::kLodo) {
    if (o.target_species.empty()) throw ConfigError("--protocol lodo requires --target-species");
    const auto manifests = load_species_dirs(o.root);
    const auto lodo = make_loo_splits(manifests, o.target_species, fractions, o.seed, {o.strict});
    const auto path = dir / ("lodo_" + o.target_species + ".json");
    write_file_atomic(path, serialize_lodo(lodo, o.seed).dump(2) + "\n");
    out << "wrote " << path.string() << "\n";
    return kExitOk;
  }
  const auto manifest = load_manifest(o.root, o.species);
  const auto split = make_intra_splits(manifest, fractions, o.seed, {o.strict});
  write_file_atomic(dir / "split.json", serialize_split(manifest, split));
  out << "train " << split.train.size() << ", gallery " << split.gallery.size() << ", query " << split.query.size()
      << " -> " << (dir / "split.json").string() << "\n";
  return kExitOk;
}

inline int cmd_synth(const Options& o, std::ostream& out) {
  if (o.out.empty()) throw ConfigError("synth requires --out");
  const fs::path dir(o.out);
  if (!o.layout.empty()) {
    if (o.species.empty()) throw ConfigError("--layout requires --species");
    const auto layout = parse_corpus_layout(read_file(o.layout));
    const auto expanded = expand_layout(layout, o.species);
    const auto features = synthesize_features(expanded.manifest, o.synth.feature_dim, o.synth.noise_scale, o.seed);
    const auto written = write_dataset(expanded.manifest, features, dir);
    write_file_atomic(dir / "split.json", serialize_split(written, expanded.split));
    out << "wrote " << written.size() << " records to " << dir.string() << "\n";
    return kExitOk;
  }
  SyntheticConfig sc = o.synth;
  sc.seed = o.seed;
  if (!o.species.empty()) sc.species = o.species;
  const auto ds = generate_synthetic(sc);
  const auto written = write_dataset(ds.manifest, ds.features, dir);
  out << "wrote " << written.size() << " records to " << dir.string() << "\n";
  return kExitOk;
}

inline TrainConfig effective_config(const Options& o) {
  TrainConfig cfg;
  if (!o.config.empty()) {
    if (!fs::exists(o.config)) throw ConfigError("config file not found: " + o.config);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(o.config));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
    cfg = train_config_from_json(j);
  }
  cfg.seed = o.seed;
  if (!o.metric.empty()) cfg.metric = parse_metric(o.metric);
  if (o.gate_off) cfg.model.gate_off = true;
  if (o.no_metadata) cfg.model.use_metadata = false;
  if (o.epochs) cfg.epochs = *o.epochs;
  if (!o.encoder_mode.empty()) {
    if (o.encoder_mode != "frozen" && o.encoder_mode != "finetune")
      throw ConfigError("--encoder-mode must be frozen|finetune");
    cfg.encoder_mode = o.encoder_mode == "frozen" ? EncoderMode::kFrozen : EncoderMode::kFinetune;
  }
  cfg.validate();
  return cfg;
}

inline int cmd_train(const Options& o, std::ostream& out) {
  const TrainConfig cfg = effective_config(o);
  if (o.out.empty()) throw ConfigError("train requires --out");
  if (o.root.empty()) throw ConfigError("train requires --root");
  const auto fractions = parse_fractions(o.fractions);
  const fs::path dir(o.out);
  TrainingData data;
  if (parse_protocol(o.protocol) == Protocol::kLodo) {
    if (o.target_species.empty()) throw ConfigError("--protocol lodo requires --target-species");
    const auto manifests = load_species_dirs(o.root);
    std::map<std::string, FeatureStore> features;
    for (const auto& m : manifests) features.emplace(m.species(), load_features(m));
    const auto lodo = make_loo_splits(manifests, o.target_species, fractions, o.seed);
    data = make_lodo_data(lodo, features, manifests);
  } else {
    if (o.species.empty()) throw ConfigError("train requires --species");
    const auto manifest = load_manifest(o.root, o.species);
    const fs::path split_path = o.split.empty() ? fs::path(o.root) / "split.json" : fs::path(o.split);
    const SplitManifest split = (!o.split.empty() || fs::exists(split_path))
                                    ? parse_split(read_file(split_path), manifest)
                                    : make_intra_splits(manifest, fractions, o.seed);
    data = make_intra_data(manifest, load_features(manifest), split);
  }
  if (o.runs < 1) throw ConfigError("--runs must be >= 1");
  fs::create_directories(dir);
  write_file_atomic(dir / "config.json", to_json(cfg).dump(2) + "\n");
  const unsigned threads = worker_threads();
  if (o.runs == 1) {
    const auto log = run_training(cfg, data, {dir, threads});
    if (log.final_eval) out << log.final_eval->to_json().dump(2) << "\n";
    return kExitOk;
  }
  std::vector<EvalReport> reports;
  for (std::size_t k = 0; k < o.runs; ++k) {
    TrainConfig run = cfg;
    run.seed = cfg.seed + k;
    const auto run_dir = dir / ("run_" + std::to_string(k));
    fs::create_directories(run_dir);
    const auto log = run_training(run, data, {run_dir, threads});
    if (!log.final_eval) throw InvalidInputError("no eval side to aggregate over");
    reports.push_back(*log.final_eval);
  }
  const auto agg = aggregate_runs(reports);
  write_file_atomic(dir / "eval_report.json", agg.to_json().dump(2) + "\n");
  out << agg.to_json().dump(2) << "\n";
  return kExitOk;
}

inline int cmd_eval(const Options& o, std::ostream& out) {
  if (o.embeddings.empty()) throw ConfigError("eval requires --embeddings");
  const auto metric = o.metric.empty() ? DistanceMetric::kCosine : parse_metric(o.metric);
  const auto protocol = parse_protocol(o.protocol);
  std::vector<EvalReport> reports;
  for (const auto& e : o.embeddings) {
    const fs::path d(e);
    const auto query = retrieval_set(read_embedding_dump(d / "query"));
    const auto gallery = retrieval_set(read_embedding_dump(d / "gallery"));
    const auto dm = distance_matrix(query, gallery, metric, worker_threads());
    reports.push_back(evaluate(dm, o.k_max, protocol, {o.exclude_same_camera}));
  }
  const auto report = reports.size() == 1 ? reports.front() : aggregate_runs(reports);
  const auto text = report.to_json().dump(2) + "\n";
  if (!o.out.empty()) write_file_atomic(o.out, text);
  out << text;
  return kExitOk;
}

inline int cmd_tsne(const Options& o, std::ostream& out) {
  if (o.embeddings.empty()) throw ConfigError("tsne requires --embeddings");
  if (o.out.empty()) throw ConfigError("tsne requires --out");
  std::vector<Vector> rows;
  std::vector<std::int64_t> ids;
  for (const auto& stem : o.embeddings) {
    const auto dump = read_embedding_dump(stem);
    for (std::size_t i = 0; i < dump.records.size(); ++i) {
      rows.push_back(dump.vectors[i]);
      ids.push_back(parse_image_name(dump.records[i]).identity);
    }
  }
  if (rows.empty()) throw InvalidInputError("no embeddings to project");
  Matrix x(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  TsneOptions to;
  to.perplexity = o.perplexity;
  to.iterations = o.iterations;
  to.seed = o.seed;
  const auto y = tsne(x, to);
  write_file_atomic(o.out, tsne_csv(y, ids));
  out << "wrote " << rows.size() << " points to " << o.out << "\n";
  return kExitOk;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Meta-feature adapter for animal re-identification"};
  app.require_subcommand(1);
  Options o;

  auto* validate = app.add_subcommand("validate", "Check a species directory against expected counts");
  validate->add_option("--root", o.root, "Species directory")->required();
  validate->add_option("--species", o.species, "Species name")->required();
  validate->add_option("--expect", o.expect, "Expected-count table (JSON)");
  validate->add_option("--split", o.split, "Split file (default: <root>/split.json when present)");
  validate->add_option("--out", o.out, "Write the report as JSON");

  auto* split = app.add_subcommand("split", "Make identity-disjoint train/gallery/query splits");
  split->add_option("--root", o.root, "Species directory, or a directory of species directories for lodo")->required();
  split->add_option("--species", o.species, "Species name");
  split->add_option("--fractions", o.fractions, "train,gallery,query image fractions");
  split->add_option("--seed", o.seed, "Seed");
  split->add_option("--out", o.out, "Output directory")->required();
  split->add_option("--protocol", o.protocol, "intra|lodo");
  split->add_option("--target-species", o.target_species, "Held-out species for lodo");
  split->add_flag("--strict", o.strict, "Reject eval identities with a single image");

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  synth->add_option("--out", o.out, "Output directory")->required();
  synth->add_option("--seed", o.seed, "Seed");
  synth->add_option("--species", o.species, "Species name");
  synth->add_option("--identities", o.synth.identities, "Identities");
  synth->add_option("--images", o.synth.images_per_identity, "Images per identity");
  synth->add_option("--feature-dim", o.synth.feature_dim, "Raw feature width");
  synth->add_option("--correlation", o.synth.metadata_identity_correlation, "Metadata/identity correlation");
  synth->add_option("--noise", o.synth.noise_scale, "Per-image noise scale");
  synth->add_option("--cameras", o.synth.cameras, "Cameras");
  synth->add_option("--layout", o.layout, "Materialize a corpus layout instead (requires --species)");

  auto* train = app.add_subcommand("train", "Train and evaluate");
  train->add_option("--config", o.config, "Run config (JSON)");
  train->add_option("--root", o.root, "Species directory, or a directory of species directories for lodo");
  train->add_option("--species", o.species, "Species name");
  train->add_option("--split", o.split, "Split file (default: <root>/split.json when present)");
  train->add_option("--fractions", o.fractions, "Split fractions when no split file is given");
  train->add_option("--seed", o.seed, "Seed");
  train->add_option("--out", o.out, "Output directory");
  train->add_option("--metric", o.metric, "cosine|euclidean");
  train->add_option("--protocol", o.protocol, "intra|lodo");
  train->add_option("--target-species", o.target_species, "Held-out species for lodo");
  train->add_option("--runs", o.runs, "Runs with consecutive seeds, aggregated with a 95% CI");
  train->add_option("--epochs", o.epochs, "Override epochs");
  train->add_option("--encoder-mode", o.encoder_mode, "frozen|finetune");
  train->add_flag("--gate-off", o.gate_off, "Force the gate to 0");
  train->add_flag("--no-metadata", o.no_metadata, "Visual-only pipeline");

  auto* eval = app.add_subcommand("eval", "Evaluate dumped embeddings");
  eval->add_option("--embeddings", o.embeddings, "Directory with query/gallery dumps (repeat for runs)")->required();
  eval->add_option("--metric", o.metric, "cosine|euclidean");
  eval->add_option("--protocol", o.protocol, "intra|lodo");
  eval->add_option("--k-max", o.k_max, "Longest CMC rank");
  eval->add_flag("--exclude-same-camera", o.exclude_same_camera, "Drop same-camera gallery matches");
  eval->add_option("--out", o.out, "Write the report");
  eval->add_option("--runs", o.runs, "Ignored; runs are the repeated --embeddings");

  auto* tsne_cmd = app.add_subcommand("tsne", "Project embeddings to 2-D");
  tsne_cmd->add_option("--embeddings", o.embeddings, "Dump stem(s), e.g. run/query")->required();
  tsne_cmd->add_option("--perplexity", o.perplexity, "Perplexity");
  tsne_cmd->add_option("--iterations", o.iterations, "Iterations");
  tsne_cmd->add_option("--seed", o.seed, "Seed");
  tsne_cmd->add_option("--out", o.out, "CSV output")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  try {
    if (*validate) return cmd_validate(o, out);
    if (*split) return cmd_split(o, out);
    if (*synth) return cmd_synth(o, out);
    if (*train) return cmd_train(o, out);
    if (*eval) return cmd_eval(o, out);
    if (*tsne_cmd) return cmd_tsne(o, out);
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace mfa::cli
