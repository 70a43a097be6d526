#pragma once

#include "cdmea/metrics.hpp"
#include "cdmea/mmkg.hpp"
#include "cdmea/model.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace cdmea {

struct LossToggles {
  bool factual = true;  // L_{v,g,m}
  bool visual = true;
  bool graph = true;
  bool fused = true;

  bool any() const { return factual || visual || graph || fused; }
  bool branch(Branch b) const { return b == Branch::visual ? visual : b == Branch::graph ? graph : fused; }
  bool operator==(const LossToggles&) const = default;
};

struct TrainConfig {
  int epochs = 200;
  int batch_size = 1000;
  double learning_rate = 5e-4;
  double temperature = 0.1;
  double beta = 0.2;
  double weight_decay = 0.01;
  // Epochs between pseudo-label rounds; 0 disables.
  int iterative_every = 10;
  int hidden_dim = 300;
  int layer_count = 2;
  int visual_dim = 100;
  LossToggles losses;
  BranchToggles branches;
  // Literal InfoNCE variant whose denominator omits the positive pair.
  bool exclude_positive = false;
  double seed_ratio = 0.3;
  double validation_fraction = 0.05;
  std::uint64_t seed = 0;

  // Throws ConfigError. A loss on a removed branch is rejected.
  void validate() const;
  // Turns off the loss of every removed branch.
  void drop_losses_of_removed_branches();

  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys raise ConfigError.
  static TrainConfig from_json(const nlohmann::json& j);
  // FNV-1a of the canonical JSON form.
  std::uint64_t hash() const;

  bool operator==(const TrainConfig&) const = default;
};

// -log(exp(s_pos/tau) / sum_j exp(s_j/tau)), the sum running over every
// score (or every score except the positive when exclude_positive is set).
// If `grad` is non-empty it receives d loss / d scores.
double infonce_loss(std::span<const double> scores, std::size_t positive_index, double temperature,
                    std::span<double> grad = {}, bool exclude_positive = false);

struct LossBreakdown {
  double factual = 0.0;
  double visual = 0.0;
  double graph = 0.0;
  double fused = 0.0;

  double total() const { return factual + visual + graph + fused; }
};

struct LossGradients {
  ModalityEmbeddings kg1;
  ModalityEmbeddings kg2;
  std::array<double, kBranchCount> fusion{};
};

// Sum of the enabled InfoNCE terms over an in-batch contrastive setup: for
// pair b, the other pairs' counterparts are its negatives. Every term is
// averaged over both alignment directions and the batch. Throws
// ConfigError when no term is enabled and ArgumentError for batches
// smaller than 2.
LossBreakdown total_loss(std::span<const EntityPair> batch, const ModalityEmbeddings& kg1,
                         const ModalityEmbeddings& kg2, const FusionParams& fusion, const TrainConfig& config,
                         LossGradients* grads = nullptr);

struct AdamState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t step = 0;
};

// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(CdmeaModel& model, double learning_rate, double weight_decay);

  void step(CdmeaModel& model, ModelGrads& grads);

  const AdamState& state() const { return state_; }
  void set_state(AdamState state);

 private:
  double learning_rate_;
  double weight_decay_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double epsilon_ = 1e-8;
  AdamState state_;
};

// Original seeds plus the mutual nearest neighbours among entities not in
// `original_seeds`, under `factual_scores` (kg1 rows x kg2 columns). Ties
// resolve to the smallest index.
std::vector<EntityPair> iterative_expand_seeds(std::span<const EntityPair> original_seeds,
                                               const Matrix& factual_scores);

// kg1 x kg2 matrix of fused (factual) scores.
Matrix factual_score_matrix(const ModalityEmbeddings& kg1, const ModalityEmbeddings& kg2,
                            const FusionParams& fusion);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double val_h1 = 0.0;  // NaN when no validation pairs were held out
};

struct Checkpoint {
  CdmeaModel model;
  AdamState optimizer;
  int epoch = 0;
  TrainConfig config;
  std::uint64_t config_hash = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochRecord> trace;
  std::vector<EntityPair> validation_pairs;
  std::vector<EntityPair> training_pairs;
};

// Optimizes every enabled branch. Throws DivergenceError naming the epoch and
// loss term if anything becomes non-finite.
TrainResult train(const MmkgPair& data, const SeedAlignments& seeds, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

ModelShape model_shape(const MmkgPair& data, const TrainConfig& config);

// Binary container: magic, version, config hash, epoch, then named blocks
// (config JSON text, parameters, optimizer moments).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void write_trace_tsv(std::span<const EpochRecord> trace, const std::filesystem::path& path);

}  // namespace cdmea
