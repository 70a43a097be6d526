#pragma once

#include "cdmea/types.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace cdmea {

enum class Branch : int { visual = 0, graph = 1, fused = 2 };
inline constexpr int kBranchCount = 3;

// Set of branches whose input is replaced by the dummy value (score 0).
class BranchSet {
 public:
  constexpr BranchSet() = default;
  constexpr BranchSet(std::initializer_list<Branch> branches) {
    for (auto b : branches) bits_ |= bit(b);
  }
  constexpr bool contains(Branch b) const { return bits_ & bit(b); }
  constexpr BranchSet with(Branch b) const {
    BranchSet s = *this;
    s.bits_ |= bit(b);
    return s;
  }
  constexpr bool operator==(const BranchSet&) const = default;

  static constexpr BranchSet all() { return {Branch::visual, Branch::graph, Branch::fused}; }

 private:
  static constexpr std::uint8_t bit(Branch b) { return static_cast<std::uint8_t>(1u << static_cast<int>(b)); }
  std::uint8_t bits_ = 0;
};

// Learnable logits phi_v, phi_g, phi_m; weights are their softmax.
struct FusionParams {
  std::array<double, kBranchCount> logits{};

  std::array<double, kBranchCount> weights() const;
  double weight(Branch b) const { return weights()[static_cast<int>(b)]; }
};

struct BranchScores {
  double visual = 0.0;
  double graph = 0.0;
  double fused = 0.0;

  double operator[](Branch b) const {
    switch (b) {
      case Branch::visual: return visual;
      case Branch::graph: return graph;
      case Branch::fused: return fused;
    }
    return 0.0;
  }
};

// Which branch's direct effect is removed at inference. `graph` exists for
// the ablation that debiases the graph modality instead.
enum class DebiasTarget { visual, graph };

std::string to_string(DebiasTarget t);
DebiasTarget parse_debias_target(std::string_view text);

// Causal quantities for one (query, candidate) pair.
//
// The dummy-valued world (every branch blocked) scores exactly 0, so
// TE = factual - 0 and NDE = counterfactual - 0, where the counterfactual
// keeps only the debiased branch. TIE = TE - beta * NDE.
struct CausalScores {
  BranchScores branch;
  double factual = 0.0;         // all branches active
  double counterfactual = 0.0;  // only the debias target active
  double te = 0.0;
  double nde = 0.0;
  double tie = 0.0;
  double beta = 0.0;
};

// Dot product of two rows; 0 if either is (near) zero.
double similarity_score(std::span<const double> a, std::span<const double> b);

// Sum over unblocked branches of w_k * Y_k. Weights are not renormalized
// over the unblocked branches.
double fuse_scores(const BranchScores& scores, const FusionParams& params, BranchSet blocked = {});

// Accepts beta in [0, 1].
CausalScores causal_scores(const BranchScores& scores, const FusionParams& params, double beta,
                           DebiasTarget target = DebiasTarget::visual);

// Per-graph modality embeddings, rows unit norm or zero.
struct ModalityEmbeddings {
  Matrix visual;
  Matrix graph;
  Matrix fused;
  // Identity of the parameter snapshot that produced these rows.
  const void* source = nullptr;
  std::uint64_t version = 0;

  const Matrix& operator[](Branch b) const;
  Matrix& operator[](Branch b);
};

BranchScores branch_scores(const ModalityEmbeddings& a, EntityId ia, const ModalityEmbeddings& b, EntityId ib);

// Scores for queries x candidates in row-major order. Queries index `from`,
// candidates index `to`.
struct ScoreMatrix {
  std::vector<EntityId> queries;
  std::vector<EntityId> candidates;
  std::vector<CausalScores> cells;

  const CausalScores& at(std::size_t q, std::size_t c) const { return cells[q * candidates.size() + c]; }
  std::vector<double> tie_row(std::size_t q) const;
};

// Throws ArgumentError on an empty candidate set or when the embeddings come
// from different parameter snapshots. Rows are partitioned across worker
// threads; results do not depend on the partition.
ScoreMatrix score_matrix(const ModalityEmbeddings& from, const ModalityEmbeddings& to,
                         std::span<const EntityId> queries, std::span<const EntityId> candidates,
                         const FusionParams& params, double beta, DebiasTarget target = DebiasTarget::visual);

// Export/import in the TSV layout
// query_id, candidate_id, Y_v, Y_g, Y_m, TE, NDE, TIE (header line first).
void write_score_tsv(const ScoreMatrix& m, const std::filesystem::path& path);

struct ScoreRecord {
  EntityId query = 0;
  EntityId candidate = 0;
  BranchScores branch;
  double te = 0.0;
  double nde = 0.0;
  double tie = 0.0;
};

// Throws ParseError with the line number on malformed lines.
std::vector<ScoreRecord> read_score_tsv(const std::filesystem::path& path);

// Worker count from CDMEA_THREADS (default: hardware concurrency, min 1).
int worker_threads();

}  // namespace cdmea
