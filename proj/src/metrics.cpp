#include "cdmea/metrics.hpp"

#include "cdmea/error.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace cdmea {

std::string to_string(Direction d) {
  switch (d) {
    case Direction::kg1_to_kg2: return "kg1->kg2";
    case Direction::kg2_to_kg1: return "kg2->kg1";
    case Direction::averaged: break;
  }
  return "averaged";
}

int rank_candidates(std::span<const double> scores, std::span<const EntityId> candidate_ids,
                    EntityId true_candidate) {
  if (scores.size() != candidate_ids.size()) throw ArgumentError("rank_candidates: size mismatch");
  const auto it = std::find(candidate_ids.begin(), candidate_ids.end(), true_candidate);
  if (it == candidate_ids.end()) {
    throw ArgumentError("rank_candidates: true candidate " + std::to_string(true_candidate) +
                        " not in the candidate set");
  }
  const double target = scores[static_cast<std::size_t>(it - candidate_ids.begin())];
  int rank = 1;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (scores[c] > target || (scores[c] == target && candidate_ids[c] < true_candidate)) ++rank;
  }
  return rank;
}

Metrics compute_metrics(std::span<const int> ranks, Direction direction) {
  if (ranks.empty()) throw ArgumentError("compute_metrics: empty rank list");
  Metrics m;
  m.direction = direction;
  m.pair_count = ranks.size();
  std::size_t hit1 = 0, hit10 = 0;
  double reciprocal = 0.0;
  for (int r : ranks) {
    if (r < 1) throw ArgumentError("compute_metrics: rank below 1");
    hit1 += r <= 1;
    hit10 += r <= 10;
    reciprocal += 1.0 / r;
  }
  const auto n = static_cast<double>(ranks.size());
  m.h_at_1 = static_cast<double>(hit1) / n;
  m.h_at_10 = static_cast<double>(hit10) / n;
  m.mrr = reciprocal / n;
  return m;
}

CandidateSet parse_candidate_set(std::string_view text) {
  if (text == "test") return CandidateSet::test;
  if (text == "all") return CandidateSet::all;
  throw ArgumentError("candidate set must be 'test' or 'all', got '" + std::string(text) + "'");
}

std::vector<int> alignment_ranks(const ModalityEmbeddings& from, const ModalityEmbeddings& to,
                                 const FusionParams& fusion, std::span<const EntityPair> scored_pairs,
                                 std::span<const EntityId> candidates, double beta, DebiasTarget target) {
  std::vector<EntityId> queries;
  queries.reserve(scored_pairs.size());
  for (const auto& p : scored_pairs) queries.push_back(p.first);
  const ScoreMatrix m = score_matrix(from, to, queries, candidates, fusion, beta, target);
  std::vector<int> ranks;
  ranks.reserve(scored_pairs.size());
  for (std::size_t q = 0; q < scored_pairs.size(); ++q) {
    const auto row = m.tie_row(q);
    ranks.push_back(rank_candidates(row, candidates, scored_pairs[q].second));
  }
  return ranks;
}

namespace {

std::vector<EntityId> candidate_pool(std::span<const EntityPair> pool_pairs, bool kg2_side, CandidateSet set,
                                     Eigen::Index entity_count) {
  std::vector<EntityId> out;
  if (set == CandidateSet::all) {
    out.resize(static_cast<std::size_t>(entity_count));
    std::iota(out.begin(), out.end(), 0);
    return out;
  }
  std::set<EntityId> ids;
  for (const auto& p : pool_pairs) ids.insert(kg2_side ? p.second : p.first);
  return {ids.begin(), ids.end()};
}

}  // namespace

Metrics evaluate_alignment(const ModalityEmbeddings& kg1, const ModalityEmbeddings& kg2,
                           const FusionParams& fusion, std::span<const EntityPair> scored_pairs,
                           std::span<const EntityPair> pool_pairs, const EvalOptions& options) {
  if (scored_pairs.empty()) throw ArgumentError("evaluate_alignment: no pairs to evaluate");
  const auto forward_pool = candidate_pool(pool_pairs, true, options.candidates, kg2.visual.rows());
  const auto forward = compute_metrics(
      alignment_ranks(kg1, kg2, fusion, scored_pairs, forward_pool, options.beta, options.target),
      Direction::kg1_to_kg2);
  if (!options.average_directions) return forward;

  std::vector<EntityPair> reversed;
  reversed.reserve(scored_pairs.size());
  for (const auto& [a, b] : scored_pairs) reversed.emplace_back(b, a);
  const auto backward_pool = candidate_pool(pool_pairs, false, options.candidates, kg1.visual.rows());
  const auto backward = compute_metrics(
      alignment_ranks(kg2, kg1, fusion, reversed, backward_pool, options.beta, options.target),
      Direction::kg2_to_kg1);
  Metrics avg;
  avg.direction = Direction::averaged;
  avg.pair_count = forward.pair_count;
  avg.h_at_1 = 0.5 * (forward.h_at_1 + backward.h_at_1);
  avg.h_at_10 = 0.5 * (forward.h_at_10 + backward.h_at_10);
  avg.mrr = 0.5 * (forward.mrr + backward.mrr);
  return avg;
}

}  // namespace cdmea
