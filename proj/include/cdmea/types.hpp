#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <utility>

namespace cdmea {

// Entity-major storage: row i holds entity i.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

using EntityId = int;
using RelationId = int;

// (entity in KG1, entity in KG2)
using EntityPair = std::pair<EntityId, EntityId>;

// Rows with norm below this stay zero instead of being normalized.
inline constexpr double kZeroNormThreshold = 1e-12;

// L2-normalizes each row in place; near-zero rows are left at zero.
// Returns the pre-normalization norms.
Vector normalize_rows(Matrix& m);

double cosine_similarity(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b);

}  // namespace cdmea
