#include "cdmea/error.hpp"
#include "cdmea/evaluation.hpp"
#include "cdmea/mmkg.hpp"
#include "cdmea/scoring.hpp"
#include "cdmea/text.hpp"
#include "cdmea/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cdmea;

namespace {

constexpr const char* kToolVersion = CDMEA_VERSION;

// Resolved settings for one subcommand: defaults, then config file, then
// command-line flags. Keys outside `values` are rejected.
class Settings {
 public:
  Settings(std::string subcommand, json defaults) : subcommand_(std::move(subcommand)), values_(std::move(defaults)) {}

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config file " + path + " must hold a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (key == "tool_version") continue;
      if (key == "subcommand") {
        if (value != subcommand_) throw ConfigError("config file " + path + " is for '" + value.dump() + "'");
        continue;
      }
      if (!values_.contains(key)) throw ConfigError("unknown config key '" + key + "'");
      if (!values_[key].is_null() && value.type() != values_[key].type() &&
          !(value.is_number() && values_[key].is_number())) {
        throw ConfigError("config key '" + key + "' has the wrong type");
      }
      values_[key] = value;
      explicit_.insert(key);
    }
  }

  template <class T>
  void override_with(const CLI::Option* opt, const std::string& key, const T& value) {
    if (opt->count() == 0) return;
    values_[key] = value;
    explicit_.insert(key);
  }

  bool is_explicit(const std::string& key) const { return explicit_.count(key) > 0; }
  const json& operator[](const std::string& key) const { return values_.at(key); }
  json& operator[](const std::string& key) { return values_.at(key); }
  const json& values() const { return values_; }

  void write_snapshot(const fs::path& dir) const {
    json snap = values_;
    snap["subcommand"] = subcommand_;
    snap["tool_version"] = kToolVersion;
    std::ofstream out(dir / "config.json", std::ios::binary);
    if (!out) throw ArgumentError("cannot write " + (dir / "config.json").string());
    out << snap.dump(2) << '\n';
  }

 private:
  std::string subcommand_;
  json values_;
  std::set<std::string> explicit_;
};

void prepare_output_dir(const fs::path& dir, bool require_empty) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ArgumentError(dir.string() + " exists and is not a directory");
    if (require_empty && !fs::is_empty(dir)) {
      throw ArgumentError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
    }
  }
  fs::create_directories(dir);
}

std::vector<double> as_doubles(const json& j) { return j.get<std::vector<double>>(); }

// ---------------------------------------------------------------------------
// generate

struct GenerateFlags {
  std::string config, out;
  int entities = 0, relations = 0, triples = 0, attributes = 0, attributes_per_entity = 0, image_dim = 0;
  double edge_dropout = 0, attribute_noise = 0, visual_bias = 0, image_noise_rate = 0;
  std::uint64_t seed = 0;
  bool force = false;
  std::map<std::string, CLI::Option*> opts;
};

json generate_defaults() {
  const SyntheticSpec s;
  return {{"out", nullptr},
          {"entities", s.entity_count},
          {"relations", s.relation_count},
          {"triples", s.triple_count},
          {"attributes", s.attribute_count},
          {"attributes_per_entity", s.attributes_per_entity},
          {"image_dim", s.image_dim},
          {"edge_dropout", s.edge_dropout},
          {"attribute_noise", s.attribute_noise},
          {"visual_bias", s.visual_bias},
          {"image_noise_rate", s.image_noise_rate},
          {"seed", s.seed}};
}

void add_generate(CLI::App& app, GenerateFlags& f) {
  auto* cmd = app.add_subcommand("generate", "Write a synthetic multi-modal graph pair");
  auto& o = f.opts;
  o["config"] = cmd->add_option("--config", f.config, "JSON file with default values");
  o["out"] = cmd->add_option("--out", f.out, "Output dataset directory");
  o["entities"] = cmd->add_option("--entities", f.entities)->check(CLI::PositiveNumber);
  o["relations"] = cmd->add_option("--relations", f.relations)->check(CLI::PositiveNumber);
  o["triples"] = cmd->add_option("--triples", f.triples)->check(CLI::PositiveNumber);
  o["attributes"] = cmd->add_option("--attributes", f.attributes)->check(CLI::NonNegativeNumber);
  o["attributes_per_entity"] = cmd->add_option("--attributes-per-entity", f.attributes_per_entity)->check(CLI::NonNegativeNumber);
  o["image_dim"] = cmd->add_option("--image-dim", f.image_dim)->check(CLI::PositiveNumber);
  o["edge_dropout"] = cmd->add_option("--edge-dropout", f.edge_dropout)->check(CLI::Range(0.0, 1.0));
  o["attribute_noise"] = cmd->add_option("--attribute-noise", f.attribute_noise)->check(CLI::Range(0.0, 1.0));
  o["visual_bias"] = cmd->add_option("--visual-bias", f.visual_bias, "Fraction of visually dissimilar pairs")
                         ->check(CLI::Range(0.0, 1.0));
  o["image_noise_rate"] = cmd->add_option("--image-noise", f.image_noise_rate, "Fraction of imputed images per graph")
                              ->check(CLI::Range(0.0, 1.0));
  o["seed"] = cmd->add_option("--seed", f.seed);
  cmd->add_flag("--force", f.force, "Write into a non-empty directory");
}

int run_generate(const GenerateFlags& f) {
  Settings s("generate", generate_defaults());
  if (!f.config.empty()) s.load_file(f.config);
  const auto& o = f.opts;
  s.override_with(o.at("out"), "out", f.out);
  s.override_with(o.at("entities"), "entities", f.entities);
  s.override_with(o.at("relations"), "relations", f.relations);
  s.override_with(o.at("triples"), "triples", f.triples);
  s.override_with(o.at("attributes"), "attributes", f.attributes);
  s.override_with(o.at("attributes_per_entity"), "attributes_per_entity", f.attributes_per_entity);
  s.override_with(o.at("image_dim"), "image_dim", f.image_dim);
  s.override_with(o.at("edge_dropout"), "edge_dropout", f.edge_dropout);
  s.override_with(o.at("attribute_noise"), "attribute_noise", f.attribute_noise);
  s.override_with(o.at("visual_bias"), "visual_bias", f.visual_bias);
  s.override_with(o.at("image_noise_rate"), "image_noise_rate", f.image_noise_rate);
  s.override_with(o.at("seed"), "seed", f.seed);
  if (s["out"].is_null()) throw ArgumentError("--out is required");

  SyntheticSpec spec;
  spec.entity_count = s["entities"].get<int>();
  spec.relation_count = s["relations"].get<int>();
  spec.triple_count = s["triples"].get<int>();
  spec.attribute_count = s["attributes"].get<int>();
  spec.attributes_per_entity = s["attributes_per_entity"].get<int>();
  spec.image_dim = s["image_dim"].get<int>();
  spec.edge_dropout = s["edge_dropout"].get<double>();
  spec.attribute_noise = s["attribute_noise"].get<double>();
  spec.visual_bias = s["visual_bias"].get<double>();
  spec.image_noise_rate = s["image_noise_rate"].get<double>();
  spec.seed = s["seed"].get<std::uint64_t>();
  spec.validate();

  const fs::path out = s["out"].get<std::string>();
  prepare_output_dir(out, !f.force);
  const auto pair = generate_synthetic_pair(spec);
  save_mmkg_pair(pair, out);
  s.write_snapshot(out);
  std::cout << "wrote " << pair.kg1.entity_count << " + " << pair.kg2.entity_count << " entities, "
            << pair.alignments.size() << " aligned pairs to " << out.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainFlags {
  std::string config, data, out;
  std::uint64_t seed = 0;
  int epochs = 0, batch_size = 0, iterative_every = 0, hidden_dim = 0, layers = 0, visual_dim = 0;
  double learning_rate = 0, temperature = 0, beta = 0, weight_decay = 0, seed_ratio = 0, validation_fraction = 0;
  std::vector<std::string> no_branch;
  bool loss_factual = true, loss_visual = true, loss_graph = true, loss_fused = true;
  bool strict = false, quiet = false;
  std::map<std::string, CLI::Option*> opts;
};

json train_defaults() {
  json j = TrainConfig{}.to_json();
  j["data"] = nullptr;
  j["out"] = nullptr;
  return j;
}

void add_train(CLI::App& app, TrainFlags& f) {
  auto* cmd = app.add_subcommand("train", "Train the alignment model on a dataset directory");
  auto& o = f.opts;
  o["config"] = cmd->add_option("--config", f.config, "JSON file with default values");
  o["data"] = cmd->add_option("--data", f.data, "Dataset directory");
  o["out"] = cmd->add_option("--out", f.out, "Run directory for checkpoint and trace");
  o["seed"] = cmd->add_option("--seed", f.seed);
  o["epochs"] = cmd->add_option("--epochs", f.epochs)->check(CLI::PositiveNumber);
  o["batch_size"] = cmd->add_option("--batch-size", f.batch_size)->check(CLI::Range(2, 1 << 30));
  o["learning_rate"] = cmd->add_option("--lr", f.learning_rate)->check(CLI::PositiveNumber);
  o["temperature"] = cmd->add_option("--temperature", f.temperature)->check(CLI::PositiveNumber);
  o["beta"] = cmd->add_option("--beta", f.beta, "Debiasing strength used for validation");
  o["weight_decay"] = cmd->add_option("--weight-decay", f.weight_decay)->check(CLI::NonNegativeNumber);
  o["iterative_every"] = cmd->add_option("--iterative-every", f.iterative_every, "Epochs between pseudo-label rounds; 0 disables")
                             ->check(CLI::NonNegativeNumber);
  o["hidden_dim"] = cmd->add_option("--hidden-dim", f.hidden_dim)->check(CLI::PositiveNumber);
  o["layer_count"] = cmd->add_option("--layers", f.layers)->check(CLI::PositiveNumber);
  o["visual_dim"] = cmd->add_option("--visual-dim", f.visual_dim)->check(CLI::PositiveNumber);
  o["seed_ratio"] = cmd->add_option("--seed-ratio", f.seed_ratio, "Fraction of alignments used as training seeds");
  o["validation_fraction"] = cmd->add_option("--validation-fraction", f.validation_fraction);
  o["no_branch"] = cmd->add_option("--no-branch", f.no_branch, "Remove a modality branch (v, g or m)")
                       ->check(CLI::IsMember({"v", "g", "m"}))
                       ->delimiter(',');
  o["loss_factual"] = cmd->add_flag("--loss-vgm,!--no-loss-vgm", f.loss_factual, "Fused-score contrastive term");
  o["loss_visual"] = cmd->add_flag("--loss-v,!--no-loss-v", f.loss_visual);
  o["loss_graph"] = cmd->add_flag("--loss-g,!--no-loss-g", f.loss_graph);
  o["loss_fused"] = cmd->add_flag("--loss-m,!--no-loss-m", f.loss_fused);
  o["exclude_positive"] = cmd->add_flag("--strict-eq19", f.strict, "Omit the positive from the InfoNCE denominator");
  cmd->add_flag("--quiet", f.quiet, "Suppress per-epoch progress");
}

TrainConfig resolve_train(const TrainFlags& f, Settings& s) {
  if (!f.config.empty()) s.load_file(f.config);
  const auto& o = f.opts;
  s.override_with(o.at("data"), "data", f.data);
  s.override_with(o.at("out"), "out", f.out);
  s.override_with(o.at("seed"), "seed", f.seed);
  s.override_with(o.at("epochs"), "epochs", f.epochs);
  s.override_with(o.at("batch_size"), "batch_size", f.batch_size);
  s.override_with(o.at("learning_rate"), "learning_rate", f.learning_rate);
  s.override_with(o.at("temperature"), "temperature", f.temperature);
  s.override_with(o.at("beta"), "beta", f.beta);
  s.override_with(o.at("weight_decay"), "weight_decay", f.weight_decay);
  s.override_with(o.at("iterative_every"), "iterative_every", f.iterative_every);
  s.override_with(o.at("hidden_dim"), "hidden_dim", f.hidden_dim);
  s.override_with(o.at("layer_count"), "layers", f.layers);
  s.override_with(o.at("visual_dim"), "visual_dim", f.visual_dim);
  s.override_with(o.at("seed_ratio"), "seed_ratio", f.seed_ratio);
  s.override_with(o.at("validation_fraction"), "validation_fraction", f.validation_fraction);
  s.override_with(o.at("loss_factual"), "loss_factual", f.loss_factual);
  s.override_with(o.at("loss_visual"), "loss_visual", f.loss_visual);
  s.override_with(o.at("loss_graph"), "loss_graph", f.loss_graph);
  s.override_with(o.at("loss_fused"), "loss_fused", f.loss_fused);
  s.override_with(o.at("exclude_positive"), "exclude_positive", f.strict);

  static const std::map<std::string, std::pair<std::string, std::string>> branch_keys{
      {"v", {"branch_visual", "loss_visual"}}, {"g", {"branch_graph", "loss_graph"}}, {"m", {"branch_fused", "loss_fused"}}};
  for (const auto& b : f.no_branch) {
    const auto& [branch_key, loss_key] = branch_keys.at(b);
    s[branch_key] = false;
  }
  for (const auto& [name, keys] : branch_keys) {
    if (s[keys.first].get<bool>()) continue;
    if (s.is_explicit(keys.second) && s[keys.second].get<bool>()) {
      throw ConfigError("loss for removed branch '" + name + "' was requested");
    }
    s[keys.second] = false;
  }

  json cfg = s.values();
  cfg.erase("data");
  cfg.erase("out");
  TrainConfig config = TrainConfig::from_json(cfg);
  config.validate();
  return config;
}

int run_train(const TrainFlags& f) {
  Settings s("train", train_defaults());
  const TrainConfig config = resolve_train(f, s);
  if (s["data"].is_null()) throw ArgumentError("--data is required");
  if (s["out"].is_null()) throw ArgumentError("--out is required");
  const fs::path out = s["out"].get<std::string>();

  const MmkgPair data = load_mmkg_pair(s["data"].get<std::string>());
  if (const auto check = self_check(data); !check.dataset_name.empty()) std::cerr << check.message << '\n';
  const SeedAlignments seeds = split_seed_alignments(data.alignments, config.seed_ratio, config.seed);
  prepare_output_dir(out, false);
  s.write_snapshot(out);

  const auto result = train(data, seeds, config, [&](const EpochRecord& r) {
    if (f.quiet) return;
    std::cerr << "epoch " << r.epoch << "  loss " << format_double(r.loss);
    if (!std::isnan(r.val_h1)) std::cerr << "  val H@1 " << format_double(r.val_h1);
    std::cerr << '\n';
  });
  save_checkpoint(result.checkpoint, out / "checkpoint.bin");
  write_trace_tsv(result.trace, out / "trace.tsv");
  write_entity_pairs(result.training_pairs, out / "train_pairs.tsv");
  write_entity_pairs(result.validation_pairs, out / "validation_pairs.tsv");
  write_entity_pairs(seeds.test_pairs, out / "test_pairs.tsv");
  const auto& last = result.trace.back();
  std::cout << "trained " << config.epochs << " epochs; final loss " << format_double(last.loss);
  if (!std::isnan(last.val_h1)) std::cout << ", validation H@1 " << format_double(last.val_h1);
  std::cout << "\ncheckpoint: " << (out / "checkpoint.bin").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateFlags {
  std::string config, data, out, checkpoint, train_config, debias_target, candidates;
  std::uint64_t seed = 0;
  double beta = 0;
  bool no_cdi = false, avg_directions = false, buckets = false, export_scores = false, svg = false,
       allow_mismatch = false;
  std::vector<double> beta_sweep, bucket_edges, noise_sweep, seed_ratio_sweep;
  std::map<std::string, CLI::Option*> opts;
};

json evaluate_defaults() {
  return {{"data", nullptr},
          {"out", nullptr},
          {"checkpoint", nullptr},
          {"train_config", nullptr},
          {"seed", nullptr},
          {"beta", nullptr},
          {"no_cdi", false},
          {"debias_target", "visual"},
          {"candidates", "test"},
          {"avg_directions", false},
          {"beta_sweep", json::array()},
          {"buckets", false},
          {"bucket_edges", default_bucket_edges()},
          {"noise_sweep", json::array()},
          {"seed_ratio_sweep", json::array()},
          {"export_scores", false},
          {"svg", false},
          {"allow_mismatch", false}};
}

void add_evaluate(CLI::App& app, EvaluateFlags& f) {
  auto* cmd = app.add_subcommand("evaluate", "Score a trained checkpoint on the held-out alignments");
  auto& o = f.opts;
  o["config"] = cmd->add_option("--config", f.config, "JSON file with default values");
  o["data"] = cmd->add_option("--data", f.data, "Dataset directory");
  o["out"] = cmd->add_option("--out", f.out, "Report directory");
  o["checkpoint"] = cmd->add_option("--checkpoint", f.checkpoint);
  o["train_config"] = cmd->add_option("--train-config", f.train_config,
                                      "Training config snapshot (default: config.json beside the checkpoint)");
  o["seed"] = cmd->add_option("--seed", f.seed, "Seed for models trained by sweeps");
  o["beta"] = cmd->add_option("--beta", f.beta, "Debiasing strength (default: the training value)");
  o["no_cdi"] = cmd->add_flag("--no-cdi", f.no_cdi, "Rank by the factual score (beta = 0)");
  o["debias_target"] = cmd->add_option("--debias-target", f.debias_target)->check(CLI::IsMember({"visual", "graph"}));
  o["candidates"] = cmd->add_option("--candidates", f.candidates)->check(CLI::IsMember({"test", "all"}));
  o["avg_directions"] = cmd->add_flag("--avg-directions", f.avg_directions, "Average kg1->kg2 and kg2->kg1");
  o["beta_sweep"] = cmd->add_option("--beta-sweep", f.beta_sweep, "Comma-separated beta values")->delimiter(',');
  o["buckets"] = cmd->add_flag("--buckets", f.buckets, "Per-bucket metrics by raw image similarity");
  o["bucket_edges"] = cmd->add_option("--bucket-edges", f.bucket_edges)->delimiter(',');
  o["noise_sweep"] = cmd->add_option("--noise-sweep", f.noise_sweep, "Image noise rates to regenerate and retrain at")
                         ->delimiter(',');
  o["seed_ratio_sweep"] = cmd->add_option("--seed-ratio-sweep", f.seed_ratio_sweep, "Seed ratios to retrain at")
                              ->delimiter(',');
  o["export_scores"] = cmd->add_flag("--export-scores", f.export_scores, "Write per-branch scores for the test queries");
  o["svg"] = cmd->add_flag("--svg", f.svg, "Draw sweep charts");
  o["allow_mismatch"] = cmd->add_flag("--allow-mismatch", f.allow_mismatch);
}

TrainConfig read_train_snapshot(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open training config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("training config " + path.string() + " is not valid JSON: " + e.what());
  }
  for (const char* key : {"data", "out", "subcommand", "tool_version"}) j.erase(key);
  return TrainConfig::from_json(j);
}

std::vector<EntityId> candidate_ids(const MmkgPair& data, std::span<const EntityPair> test, CandidateSet set) {
  std::set<EntityId> ids;
  if (set == CandidateSet::all) {
    for (EntityId e = 0; e < data.kg2.entity_count; ++e) ids.insert(e);
  } else {
    for (const auto& p : test) ids.insert(p.second);
  }
  return {ids.begin(), ids.end()};
}

void chart(const fs::path& path, const std::string& title, const std::string& x_label, std::vector<ChartSeries> series) {
  write_line_chart_svg(path, title, x_label, series);
}

int run_evaluate(const EvaluateFlags& f) {
  Settings s("evaluate", evaluate_defaults());
  if (!f.config.empty()) s.load_file(f.config);
  const auto& o = f.opts;
  s.override_with(o.at("data"), "data", f.data);
  s.override_with(o.at("out"), "out", f.out);
  s.override_with(o.at("checkpoint"), "checkpoint", f.checkpoint);
  s.override_with(o.at("train_config"), "train_config", f.train_config);
  s.override_with(o.at("seed"), "seed", f.seed);
  s.override_with(o.at("beta"), "beta", f.beta);
  s.override_with(o.at("no_cdi"), "no_cdi", f.no_cdi);
  s.override_with(o.at("debias_target"), "debias_target", f.debias_target);
  s.override_with(o.at("candidates"), "candidates", f.candidates);
  s.override_with(o.at("avg_directions"), "avg_directions", f.avg_directions);
  s.override_with(o.at("beta_sweep"), "beta_sweep", f.beta_sweep);
  s.override_with(o.at("buckets"), "buckets", f.buckets);
  s.override_with(o.at("bucket_edges"), "bucket_edges", f.bucket_edges);
  s.override_with(o.at("noise_sweep"), "noise_sweep", f.noise_sweep);
  s.override_with(o.at("seed_ratio_sweep"), "seed_ratio_sweep", f.seed_ratio_sweep);
  s.override_with(o.at("export_scores"), "export_scores", f.export_scores);
  s.override_with(o.at("svg"), "svg", f.svg);
  s.override_with(o.at("allow_mismatch"), "allow_mismatch", f.allow_mismatch);
  for (const char* key : {"data", "out", "checkpoint"}) {
    if (s[key].is_null()) throw ArgumentError(std::string("--") + key + " is required");
  }
  if (s["no_cdi"].get<bool>() && s.is_explicit("beta") && s["beta"].get<double>() != 0.0) {
    throw ConfigError("--no-cdi conflicts with a non-zero --beta");
  }

  const fs::path ckpt_path = s["checkpoint"].get<std::string>();
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  {
    const fs::path snapshot = s["train_config"].is_null() ? ckpt_path.parent_path() / "config.json"
                                                           : fs::path(s["train_config"].get<std::string>());
    const bool allow = s["allow_mismatch"].get<bool>();
    if (fs::exists(snapshot)) {
      if (read_train_snapshot(snapshot).hash() != ckpt.config_hash) {
        if (!allow) {
          throw ConfigError("checkpoint was trained with a different config than " + snapshot.string() +
                            " (use --allow-mismatch to evaluate anyway)");
        }
        std::cerr << "warning: config hash mismatch with " << snapshot.string() << '\n';
      }
    } else if (!allow) {
      throw ConfigError("no training config at " + snapshot.string() + " (pass --train-config or --allow-mismatch)");
    }
  }

  const MmkgPair data = load_mmkg_pair(s["data"].get<std::string>());
  const TrainConfig& tc = ckpt.config;
  const SeedAlignments seeds = split_seed_alignments(data.alignments, tc.seed_ratio, tc.seed);

  EvalOptions options;
  options.beta = s["no_cdi"].get<bool>() ? 0.0 : s["beta"].is_null() ? tc.beta : s["beta"].get<double>();
  if (!(options.beta >= 0.0 && options.beta < 1.0)) throw ArgumentError("--beta must lie in [0, 1)");
  options.target = parse_debias_target(s["debias_target"].get<std::string>());
  options.candidates = parse_candidate_set(s["candidates"].get<std::string>());
  options.average_directions = s["avg_directions"].get<bool>();

  const fs::path out = s["out"].get<std::string>();
  prepare_output_dir(out, false);
  s.write_snapshot(out);
  const bool svg = s["svg"].get<bool>();

  const EncodedPair enc = encode_pair(ckpt.model, data);
  const FusionParams& fusion = ckpt.model.fusion;
  const auto& test = seeds.test_pairs;
  const Metrics metrics = evaluate_alignment(enc.kg1, enc.kg2, fusion, test, test, options);
  write_metrics_tsv(metrics, out / "metrics.tsv");
  std::cout << "beta       " << format_double(options.beta) << "\ntarget     " << to_string(options.target) << '\n'
            << format_metrics_table(metrics);

  if (s["export_scores"].get<bool>()) {
    std::vector<EntityId> queries;
    for (const auto& p : test) queries.push_back(p.first);
    const auto m = score_matrix(enc.kg1, enc.kg2, queries, candidate_ids(data, test, options.candidates), fusion,
                                options.beta, options.target);
    write_score_tsv(m, out / "scores.tsv");
    write_entity_pairs(test, out / "test_pairs.tsv");
  }

  if (s["buckets"].get<bool>()) {
    const auto edges = as_doubles(s["bucket_edges"]);
    const auto report = bucket_report(test, data.kg1, data.kg2, [&](std::span<const EntityPair> subset) {
      return evaluate_alignment(enc.kg1, enc.kg2, fusion, subset, test, options);
    }, edges);
    write_bucket_tsv(report, out / "buckets.tsv");
  }

  const auto betas = as_doubles(s["beta_sweep"]);
  if (!betas.empty()) {
    const auto rows = beta_sweep(enc, fusion, test, betas, options);
    write_beta_sweep_tsv(rows, out / "beta_sweep.tsv");
    if (svg) {
      ChartSeries h1{"H@1", {}, {}}, mrr{"MRR", {}, {}};
      for (const auto& r : rows) {
        h1.x.push_back(r.beta);
        h1.y.push_back(r.metrics.h_at_1);
        mrr.x.push_back(r.beta);
        mrr.y.push_back(r.metrics.mrr);
      }
      chart(out / "beta_sweep.svg", "Alignment quality versus beta", "beta", {h1, mrr});
    }
  }

  TrainConfig sweep_config = tc;
  if (!s["seed"].is_null()) sweep_config.seed = s["seed"].get<std::uint64_t>();

  const auto rates = as_doubles(s["noise_sweep"]);
  if (!rates.empty()) {
    SyntheticSpec spec;
    try {
      spec = SyntheticSpec::from_provenance(data.provenance);
    } catch (const ArgumentError&) {
      throw ArgumentError("--noise-sweep needs a dataset written by the generate subcommand");
    }
    const auto rows = noise_sweep(spec, rates, sweep_config, options);
    write_noise_sweep_tsv(rows, out / "noise_sweep.tsv");
    if (svg) {
      ChartSeries te{"TE H@1", {}, {}}, tie{"TIE H@1", {}, {}};
      for (const auto& r : rows) {
        te.x.push_back(r.rate);
        te.y.push_back(r.result.te.h_at_1);
        tie.x.push_back(r.rate);
        tie.y.push_back(r.result.tie.h_at_1);
      }
      chart(out / "noise_sweep.svg", "H@1 versus image noise", "noise rate", {te, tie});
    }
  }

  const auto ratios = as_doubles(s["seed_ratio_sweep"]);
  if (!ratios.empty()) {
    const auto rows = low_resource_sweep(data, ratios, sweep_config, options);
    write_low_resource_tsv(rows, out / "low_resource.tsv");
    if (svg) {
      ChartSeries te{"TE H@1", {}, {}}, tie{"TIE H@1", {}, {}};
      for (const auto& r : rows) {
        te.x.push_back(r.seed_ratio);
        te.y.push_back(r.result.te.h_at_1);
        tie.x.push_back(r.seed_ratio);
        tie.y.push_back(r.result.tie.h_at_1);
      }
      chart(out / "low_resource.svg", "H@1 versus seed ratio", "seed ratio", {te, tie});
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// debias-external

struct ExternalFlags {
  std::string config, scores, truth, out, debias_target;
  double beta = 0;
  std::vector<double> beta_sweep, phi;
  std::map<std::string, CLI::Option*> opts;
};

json external_defaults() {
  return {{"scores", nullptr}, {"truth", nullptr},         {"out", nullptr},        {"beta", 0.2},
          {"beta_sweep", json::array()}, {"phi", json::array()}, {"debias_target", "visual"}};
}

void add_external(CLI::App& app, ExternalFlags& f) {
  auto* cmd = app.add_subcommand("debias-external", "Apply counterfactual debiasing to imported per-branch scores");
  auto& o = f.opts;
  o["config"] = cmd->add_option("--config", f.config, "JSON file with default values");
  o["scores"] = cmd->add_option("--scores", f.scores, "Score TSV (query, candidate, Y_v, Y_g, Y_m, TE, NDE, TIE)");
  o["truth"] = cmd->add_option("--truth", f.truth, "Gold pairs, one `kg1_id<TAB>kg2_id` per line");
  o["out"] = cmd->add_option("--out", f.out, "Report directory (optional)");
  o["beta"] = cmd->add_option("--beta", f.beta);
  o["beta_sweep"] = cmd->add_option("--beta-sweep", f.beta_sweep)->delimiter(',');
  o["phi"] = cmd->add_option("--phi", f.phi, "Fusion logits; recompute TE and NDE from the branch scores")
                 ->delimiter(',')
                 ->expected(3);
  o["debias_target"] = cmd->add_option("--debias-target", f.debias_target)->check(CLI::IsMember({"visual", "graph"}));
}

struct ExternalScores {
  std::vector<ScoreRecord> records;
  std::map<EntityId, std::vector<std::size_t>> by_query;
};

Metrics external_metrics(const ExternalScores& in, std::span<const EntityPair> truth, double beta,
                         const std::optional<FusionParams>& phi, DebiasTarget target) {
  std::vector<int> ranks;
  for (const auto& [q, gold] : truth) {
    auto it = in.by_query.find(q);
    if (it == in.by_query.end()) throw ValidationError("no scores for query " + std::to_string(q));
    std::vector<double> tie;
    std::vector<EntityId> ids;
    for (std::size_t k : it->second) {
      const auto& r = in.records[k];
      ids.push_back(r.candidate);
      tie.push_back(phi ? causal_scores(r.branch, *phi, beta, target).tie : r.te - beta * r.nde);
    }
    if (std::find(ids.begin(), ids.end(), gold) == ids.end()) {
      throw ValidationError("gold candidate " + std::to_string(gold) + " missing for query " + std::to_string(q));
    }
    ranks.push_back(rank_candidates(tie, ids, gold));
  }
  return compute_metrics(ranks);
}

int run_external(const ExternalFlags& f) {
  Settings s("debias-external", external_defaults());
  if (!f.config.empty()) s.load_file(f.config);
  const auto& o = f.opts;
  s.override_with(o.at("scores"), "scores", f.scores);
  s.override_with(o.at("truth"), "truth", f.truth);
  s.override_with(o.at("out"), "out", f.out);
  s.override_with(o.at("beta"), "beta", f.beta);
  s.override_with(o.at("beta_sweep"), "beta_sweep", f.beta_sweep);
  s.override_with(o.at("phi"), "phi", f.phi);
  s.override_with(o.at("debias_target"), "debias_target", f.debias_target);
  for (const char* key : {"scores", "truth"}) {
    if (s[key].is_null()) throw ArgumentError(std::string("--") + key + " is required");
  }
  const double beta = s["beta"].get<double>();
  if (!(beta >= 0.0 && beta < 1.0)) throw ArgumentError("--beta must lie in [0, 1)");
  const auto betas = as_doubles(s["beta_sweep"]);
  for (double b : betas) {
    if (!(b >= 0.0 && b < 1.0)) throw ArgumentError("--beta-sweep values must lie in [0, 1)");
  }
  std::optional<FusionParams> phi;
  if (const auto p = as_doubles(s["phi"]); !p.empty()) {
    if (p.size() != kBranchCount) throw ArgumentError("--phi needs three values");
    phi.emplace();
    std::copy(p.begin(), p.end(), phi->logits.begin());
  }
  const DebiasTarget target = parse_debias_target(s["debias_target"].get<std::string>());

  ExternalScores in;
  in.records = read_score_tsv(s["scores"].get<std::string>());
  for (std::size_t k = 0; k < in.records.size(); ++k) in.by_query[in.records[k].query].push_back(k);
  const auto truth = read_entity_pairs(s["truth"].get<std::string>());
  if (truth.empty()) throw ValidationError("no gold pairs in " + s["truth"].get<std::string>());

  const Metrics m = external_metrics(in, truth, beta, phi, target);
  std::cout << "beta       " << format_double(beta) << '\n' << format_metrics_table(m);
  if (!s["out"].is_null()) {
    const fs::path out = s["out"].get<std::string>();
    prepare_output_dir(out, false);
    s.write_snapshot(out);
    write_metrics_tsv(m, out / "metrics.tsv");
    if (!betas.empty()) {
      std::vector<BetaSweepRow> rows;
      for (double b : betas) rows.push_back({b, external_metrics(in, truth, b, phi, target)});
      write_beta_sweep_tsv(rows, out / "beta_sweep.tsv");
    }
  } else if (!betas.empty()) {
    for (double b : betas) {
      const auto row = external_metrics(in, truth, b, phi, target);
      std::cout << "beta " << format_double(b) << "  H@1 " << format_double(row.h_at_1) << "  MRR "
                << format_double(row.mrr) << '\n';
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal entity alignment with counterfactual debiasing"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  GenerateFlags generate;
  TrainFlags train_flags;
  EvaluateFlags evaluate;
  ExternalFlags external;
  add_generate(app, generate);
  add_train(app, train_flags);
  add_evaluate(app, evaluate);
  add_external(app, external);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("generate")) return run_generate(generate);
    if (app.got_subcommand("train")) return run_train(train_flags);
    if (app.got_subcommand("evaluate")) return run_evaluate(evaluate);
    return run_external(external);
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return 4;
  } catch (const LoadError& e) {
    std::cerr << "load error: " << e.what() << '\n';
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "invalid data: " << e.what() << '\n';
    return 3;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 3;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
