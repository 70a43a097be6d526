#pragma once

#include "cdmea/mmkg.hpp"
#include "cdmea/random.hpp"
#include "cdmea/types.hpp"

#include <vector>

namespace cdmea {

// Householder reflection I - 2 h h^T. Throws ArgumentError unless
// ||h||_2 = 1 within 1e-6.
Matrix reflection_matrix(const Eigen::Ref<const Vector>& unit_relation);

// Applies I - 2 h h^T to x without materializing the matrix.
inline Vector reflect(const Eigen::Ref<const Vector>& h, const Eigen::Ref<const Vector>& x) {
  return x - 2.0 * h.dot(x) * h;
}

// Message-passing incidence list, grouped by receiving entity.
//
// For every triple (h, r, t), the head receives from the tail through r and
// the tail receives from the head through the inverse relation r + R. Every
// entity also receives from itself through the self-loop relation 2R, so no
// entity has an empty incidence set. R is the relation space shared by both
// graphs of a pair.
struct Incidences {
  int entity_count = 0;
  int relation_space = 0;
  // offsets[i] .. offsets[i+1] index the incidences received by entity i.
  std::vector<int> offsets;
  std::vector<EntityId> sources;
  std::vector<RelationId> relations;

  static Incidences build(const Mmkg& graph, int relation_space);

  int incidence_count() const { return static_cast<int>(sources.size()); }
  // Rows needed in the relation-embedding table: forward, inverse, self-loop.
  static int relation_rows(int relation_space) { return 2 * relation_space + 1; }
};

struct RrgatParams {
  Matrix input_projection;     // input_dim x hidden
  Matrix relation_embeddings;  // relation_rows x hidden, rows unit norm
  Vector attention;            // hidden
  int layer_count = 2;

  int hidden_dim() const { return static_cast<int>(attention.size()); }
  int input_dim() const { return static_cast<int>(input_projection.rows()); }
  int output_dim() const { return hidden_dim() * (layer_count + 1); }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init, relation rows then
  // rescaled to unit norm.
  static RrgatParams init(int input_dim, int relation_space, int hidden_dim, int layer_count, Rng& rng);

  void renormalize_relations();
  bool all_finite() const;
};

struct RrgatGrads {
  Matrix input_projection;
  Matrix relation_embeddings;
  Vector attention;

  static RrgatGrads zeros_like(const RrgatParams& p);
};

// Intermediate state kept by rrgat_forward for the backward pass.
struct RrgatCache {
  std::vector<Matrix> layers;  // h^0 .. h^L
  std::vector<double> weights;   // attention weight per incidence
};

// Per-incidence attention weights, softmax of q . h_r over each entity's
// incidences. Identical for every layer.
std::vector<double> attention_weights(const Incidences& inc, const RrgatParams& params);

// Returns [h^0 | h^1 | ... | h^L] (entity_count x hidden*(L+1)), unnormalized.
// Relation rows are used as given; unit norm is the caller's responsibility.
Matrix rrgat_forward(const Incidences& inc, const Matrix& initial_features, const RrgatParams& params,
                     RrgatCache* cache = nullptr);

// Accumulates into `grads` the gradient of a scalar loss given
// d loss / d output for the concatenated output of rrgat_forward.
void rrgat_backward(const Incidences& inc, const Matrix& initial_features, const RrgatParams& params,
                    const RrgatCache& cache, const Matrix& d_output, RrgatGrads& grads);

struct VisualParams {
  Matrix projection;  // image_dim x visual_dim

  static VisualParams init(int image_dim, int visual_dim, Rng& rng);
};

// Projection of precomputed image features followed by row normalization.
Matrix encode_visual(const Mmkg& graph, const VisualParams& params);

// Attribute-seeded RRGAT embedding, row normalized.
Matrix encode_graph(const Mmkg& graph, const Incidences& inc, const RrgatParams& params);

// Image-seeded RRGAT embedding, row normalized.
Matrix encode_fused(const Mmkg& graph, const Incidences& inc, const RrgatParams& params);

// Backward through normalize_rows: given the pre-normalization rows, their
// normalized form and d loss / d normalized, returns d loss / d raw.
Matrix normalize_rows_backward(const Matrix& normalized, const Vector& norms, const Matrix& d_normalized);

}  // namespace cdmea
