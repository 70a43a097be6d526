#pragma once

#include "cdmea/types.hpp"

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cdmea {

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  auto operator<=>(const Triple&) const = default;
};

// One multi-modal knowledge graph. Attribute ids index a vocabulary shared
// with the paired graph; relation ids likewise live in a shared space.
struct Mmkg {
  int entity_count = 0;
  int relation_count = 0;
  int attribute_count = 0;
  std::vector<Triple> triples;
  // Sorted, duplicate-free attribute ids per entity (presence only).
  std::vector<std::vector<int>> attribute_bags;
  // entity_count x image_dim
  Matrix image_features;
  // 1 where the row was imputed rather than read from input.
  std::vector<std::uint8_t> image_imputed;

  int image_dim() const { return static_cast<int>(image_features.cols()); }

  // Dense entity_count x attribute_count binary matrix.
  Matrix attribute_matrix() const;

  // Throws ValidationError naming `label` on any broken invariant.
  void validate(std::string_view label) const;

  bool operator==(const Mmkg& other) const;
};

struct MmkgPair {
  Mmkg kg1;
  Mmkg kg2;
  // Full ground truth; splitting happens later.
  std::vector<EntityPair> alignments;
  std::uint64_t imputation_seed = 0;
  // meta.tsv keys beyond the required counts (dataset name, generator spec).
  std::map<std::string, std::string> provenance;

  // Relation space shared by both graphs.
  int relation_space() const;

  bool operator==(const MmkgPair&) const = default;
};

struct SeedAlignments {
  std::vector<EntityPair> train_pairs;
  std::vector<EntityPair> test_pairs;
  double seed_ratio = 0.0;
};

// Parameters for generate_synthetic_pair. KG2 is a perturbed copy of KG1.
struct SyntheticSpec {
  int entity_count = 100;
  int relation_count = 8;
  int triple_count = 300;
  int attribute_count = 64;
  int attributes_per_entity = 4;
  int image_dim = 64;
  double edge_dropout = 0.0;
  double attribute_noise = 0.0;
  // Fraction of aligned pairs whose KG2 image is made dissimilar.
  double visual_bias = 0.0;
  // Fraction of entities per graph whose image is replaced by imputation noise.
  double image_noise_rate = 0.0;
  std::uint64_t seed = 0;

  void validate() const;

  std::map<std::string, std::string> to_provenance() const;
  // Inverse of to_provenance; throws ArgumentError if keys are missing.
  static SyntheticSpec from_provenance(const std::map<std::string, std::string>& meta);
};

// Cosine similarity of the KG2 image to its KG1 counterpart for adversarial
// pairs is exactly this value.
inline constexpr double kAdversarialCosine = 0.1;

// Fills rows flagged in image_imputed with per-dimension Gaussian draws
// matching the mean and standard deviation of the unflagged rows. Each
// entity draws from its own stream keyed by (seed, graph_index, entity).
void impute_missing_images(Mmkg& graph, std::uint64_t seed, int graph_index);

MmkgPair load_mmkg_pair(const std::filesystem::path& data_dir);

// Writes the dataset directory layout. Imputed image rows are omitted so a
// reload re-imputes them.
void save_mmkg_pair(const MmkgPair& pair, const std::filesystem::path& data_dir);

// `kg1_id<TAB>kg2_id` lines, the alignments.tsv format.
std::vector<EntityPair> read_entity_pairs(const std::filesystem::path& path);
void write_entity_pairs(std::span<const EntityPair> pairs, const std::filesystem::path& path);

SeedAlignments split_seed_alignments(const std::vector<EntityPair>& all_pairs, double seed_ratio,
                                     std::uint64_t rng_seed);

MmkgPair generate_synthetic_pair(const SyntheticSpec& spec);

// Published pair counts for benchmark names recognized by self_check.
std::optional<std::size_t> published_pair_count(std::string_view dataset_name);

struct SelfCheckReport {
  std::string dataset_name;
  std::size_t pair_count = 0;
  std::optional<std::size_t> expected_pair_count;
  bool passed = true;
  std::string message;
};

// Compares the alignment count against the published figure when the
// provenance names a known benchmark ("dataset" key).
SelfCheckReport self_check(const MmkgPair& pair);

}  // namespace cdmea
