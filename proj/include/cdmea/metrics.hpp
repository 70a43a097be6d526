#pragma once

#include "cdmea/scoring.hpp"
#include "cdmea/types.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cdmea {

enum class Direction { kg1_to_kg2, kg2_to_kg1, averaged };

std::string to_string(Direction d);

struct Metrics {
  double h_at_1 = 0.0;
  double h_at_10 = 0.0;
  double mrr = 0.0;
  std::size_t pair_count = 0;
  Direction direction = Direction::kg1_to_kg2;
};

// 1-based rank of `true_candidate`: one plus the candidates scoring strictly
// higher, plus tied candidates with a smaller entity id. Throws
// ArgumentError if the true candidate is not in `candidate_ids`.
int rank_candidates(std::span<const double> scores, std::span<const EntityId> candidate_ids,
                    EntityId true_candidate);

// Throws ArgumentError on an empty list or a rank below 1.
Metrics compute_metrics(std::span<const int> ranks, Direction direction = Direction::kg1_to_kg2);

enum class CandidateSet { test, all };

CandidateSet parse_candidate_set(std::string_view text);

struct EvalOptions {
  double beta = 0.2;
  DebiasTarget target = DebiasTarget::visual;
  CandidateSet candidates = CandidateSet::test;
  bool average_directions = false;
};

// Ranks each of `scored_pairs` by TIE against the candidate pool: the
// target-side entities of `pool_pairs` (CandidateSet::test) or every entity
// of the target graph (CandidateSet::all).
Metrics evaluate_alignment(const ModalityEmbeddings& kg1, const ModalityEmbeddings& kg2,
                           const FusionParams& fusion, std::span<const EntityPair> scored_pairs,
                           std::span<const EntityPair> pool_pairs, const EvalOptions& options);

// Same ranking with an explicit kg1 -> kg2 candidate list.
std::vector<int> alignment_ranks(const ModalityEmbeddings& from, const ModalityEmbeddings& to,
                                 const FusionParams& fusion, std::span<const EntityPair> scored_pairs,
                                 std::span<const EntityId> candidates, double beta, DebiasTarget target);

}  // namespace cdmea
