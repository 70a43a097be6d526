#pragma once

#include "cdmea/metrics.hpp"
#include "cdmea/training.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cdmea {

struct EncodedPair {
  ModalityEmbeddings kg1;
  ModalityEmbeddings kg2;
};

// Encodes both graphs with the same parameter snapshot.
EncodedPair encode_pair(const CdmeaModel& model, const MmkgPair& data);

// Test pairs restricted to those whose image row is imputed on either side.
std::vector<EntityPair> pairs_with_imputed_images(const MmkgPair& data, std::span<const EntityPair> pairs);

struct Bucket {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t pair_count = 0;
  // Pairs in this bucket with an imputed image on either side.
  std::size_t imputed_count = 0;
  std::optional<Metrics> metrics;  // empty for an empty bucket
};

struct BucketReport {
  std::vector<Bucket> buckets;
};

// Default edges: [-1, 0.3), [0.3, 0.5), [0.5, 1].
std::vector<double> default_bucket_edges();

// Assigns pairs to buckets by the cosine similarity of their raw image
// features. The last bucket is closed on the right. `metrics_fn` evaluates
// a subset of pairs (ranked against the full candidate set).
BucketReport bucket_report(std::span<const EntityPair> test_pairs, const Mmkg& kg1, const Mmkg& kg2,
                           const std::function<Metrics(std::span<const EntityPair>)>& metrics_fn,
                           std::span<const double> edges = {});

struct BetaSweepRow {
  double beta = 0.0;
  Metrics metrics;
};

// Re-scores the same embeddings for every beta in [0, 1).
std::vector<BetaSweepRow> beta_sweep(const EncodedPair& embeddings, const FusionParams& fusion,
                                     std::span<const EntityPair> test_pairs, std::span<const double> betas,
                                     const EvalOptions& options);

// Encodes once with the checkpoint's model, then sweeps.
std::vector<BetaSweepRow> beta_sweep(const Checkpoint& checkpoint, const MmkgPair& data,
                                     std::span<const EntityPair> test_pairs, std::span<const double> betas,
                                     const EvalOptions& options);

struct DebiasComparison {
  Metrics te;   // beta = 0
  Metrics tie;  // beta = options.beta
  std::optional<Metrics> te_noised;
  std::optional<Metrics> tie_noised;
};

struct NoiseSweepRow {
  double rate = 0.0;
  DebiasComparison result;
};

// For each rate, regenerates the synthetic pair with that image noise rate,
// trains with `config`, and evaluates TE and TIE overall and on pairs with
// noised images.
std::vector<NoiseSweepRow> noise_sweep(const SyntheticSpec& spec_template, std::span<const double> rates,
                                       const TrainConfig& config, const EvalOptions& options);

struct LowResourceRow {
  double seed_ratio = 0.0;
  DebiasComparison result;
};

// Trains once per seed ratio on the same data.
std::vector<LowResourceRow> low_resource_sweep(const MmkgPair& data, std::span<const double> seed_ratios,
                                               const TrainConfig& config, const EvalOptions& options);

DebiasComparison compare_debiasing(const EncodedPair& embeddings, const FusionParams& fusion, const MmkgPair& data,
                                   std::span<const EntityPair> test_pairs, const EvalOptions& options);

// `metric<TAB>value` lines.
void write_metrics_tsv(const Metrics& m, const std::filesystem::path& path);
std::string format_metrics_table(const Metrics& m);

void write_bucket_tsv(const BucketReport& report, const std::filesystem::path& path);
void write_beta_sweep_tsv(std::span<const BetaSweepRow> rows, const std::filesystem::path& path);
void write_noise_sweep_tsv(std::span<const NoiseSweepRow> rows, const std::filesystem::path& path);
void write_low_resource_tsv(std::span<const LowResourceRow> rows, const std::filesystem::path& path);

struct ChartSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

// Minimal line chart; y axis spans [0, 1].
void write_line_chart_svg(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                          std::span<const ChartSeries> series);

}  // namespace cdmea
