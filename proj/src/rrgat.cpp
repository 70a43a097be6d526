#include "cdmea/rrgat.hpp"

#include "cdmea/error.hpp"

#include <algorithm>
#include <cmath>

namespace cdmea {

Matrix reflection_matrix(const Eigen::Ref<const Vector>& unit_relation) {
  if (unit_relation.size() == 0) throw ArgumentError("reflection_matrix: empty vector");
  if (std::abs(unit_relation.norm() - 1.0) > 1e-6) {
    throw ArgumentError("reflection_matrix: relation embedding is not unit norm");
  }
  const auto d = unit_relation.size();
  return Matrix::Identity(d, d) - 2.0 * unit_relation * unit_relation.transpose();
}

Incidences Incidences::build(const Mmkg& graph, int relation_space) {
  if (relation_space < graph.relation_count) {
    throw ArgumentError("relation space smaller than the graph's relation count");
  }
  const int n = graph.entity_count;
  std::vector<int> counts(n, 1);  // self loop
  for (const auto& t : graph.triples) {
    ++counts[t.head];
    ++counts[t.tail];
  }
  Incidences inc;
  inc.entity_count = n;
  inc.relation_space = relation_space;
  inc.offsets.assign(n + 1, 0);
  for (int i = 0; i < n; ++i) inc.offsets[i + 1] = inc.offsets[i] + counts[i];
  inc.sources.resize(inc.offsets[n]);
  inc.relations.resize(inc.offsets[n]);

  std::vector<int> cursor(inc.offsets.begin(), inc.offsets.end() - 1);
  for (int i = 0; i < n; ++i) {
    inc.sources[cursor[i]] = i;
    inc.relations[cursor[i]] = 2 * relation_space;
    ++cursor[i];
  }
  for (const auto& t : graph.triples) {
    inc.sources[cursor[t.head]] = t.tail;
    inc.relations[cursor[t.head]] = t.relation;
    ++cursor[t.head];
    inc.sources[cursor[t.tail]] = t.head;
    inc.relations[cursor[t.tail]] = t.relation + relation_space;
    ++cursor[t.tail];
  }
  return inc;
}

namespace {

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-bound, bound);
  }
  return m;
}

void check_inputs(const Incidences& inc, const Matrix& x, const RrgatParams& params) {
  if (x.rows() != inc.entity_count) {
    throw ArgumentError("rrgat: feature rows (" + std::to_string(x.rows()) +
                        ") differ from entity count (" + std::to_string(inc.entity_count) + ")");
  }
  if (x.cols() != params.input_projection.rows()) {
    throw ArgumentError("rrgat: feature dim (" + std::to_string(x.cols()) +
                        ") differs from projection input dim (" +
                        std::to_string(params.input_projection.rows()) + ")");
  }
  if (params.relation_embeddings.rows() < Incidences::relation_rows(inc.relation_space) ||
      params.relation_embeddings.cols() != params.hidden_dim() ||
      params.input_projection.cols() != params.hidden_dim()) {
    throw ArgumentError("rrgat: parameter shapes are inconsistent with the graph");
  }
  if (params.layer_count < 1) throw ArgumentError("rrgat: layer count must be positive");
}

}  // namespace

RrgatParams RrgatParams::init(int input_dim, int relation_space, int hidden_dim, int layer_count, Rng& rng) {
  if (input_dim < 1 || hidden_dim < 1 || layer_count < 1 || relation_space < 0) {
    throw ArgumentError("RrgatParams::init: non-positive dimension");
  }
  RrgatParams p;
  p.layer_count = layer_count;
  p.input_projection = uniform_matrix(input_dim, hidden_dim, 1.0 / std::sqrt(input_dim), rng);
  p.relation_embeddings =
      uniform_matrix(Incidences::relation_rows(relation_space), hidden_dim, 1.0 / std::sqrt(hidden_dim), rng);
  p.attention = uniform_matrix(hidden_dim, 1, 1.0 / std::sqrt(hidden_dim), rng);
  p.renormalize_relations();
  return p;
}

void RrgatParams::renormalize_relations() {
  for (Eigen::Index k = 0; k < relation_embeddings.rows(); ++k) {
    const double n = relation_embeddings.row(k).norm();
    if (n > kZeroNormThreshold) relation_embeddings.row(k) /= n;
  }
}

bool RrgatParams::all_finite() const {
  return input_projection.allFinite() && relation_embeddings.allFinite() && attention.allFinite();
}

RrgatGrads RrgatGrads::zeros_like(const RrgatParams& p) {
  return {Matrix::Zero(p.input_projection.rows(), p.input_projection.cols()),
          Matrix::Zero(p.relation_embeddings.rows(), p.relation_embeddings.cols()),
          Vector::Zero(p.attention.size())};
}

std::vector<double> attention_weights(const Incidences& inc, const RrgatParams& params) {
  const Vector logits = params.relation_embeddings * params.attention;
  std::vector<double> weights(inc.sources.size());
  for (int i = 0; i < inc.entity_count; ++i) {
    const int begin = inc.offsets[i], end = inc.offsets[i + 1];
    double max_logit = -INFINITY;
    for (int k = begin; k < end; ++k) max_logit = std::max(max_logit, logits(inc.relations[k]));
    double total = 0.0;
    for (int k = begin; k < end; ++k) {
      weights[k] = std::exp(logits(inc.relations[k]) - max_logit);
      total += weights[k];
    }
    for (int k = begin; k < end; ++k) weights[k] /= total;
  }
  return weights;
}

Matrix rrgat_forward(const Incidences& inc, const Matrix& initial_features, const RrgatParams& params,
                     RrgatCache* cache) {
  check_inputs(inc, initial_features, params);
  const int n = inc.entity_count;
  const int d = params.hidden_dim();
  const int layers = params.layer_count;

  std::vector<Matrix> h;
  h.reserve(layers + 1);
  h.push_back(initial_features * params.input_projection);
  const auto weights = attention_weights(inc, params);

  for (int l = 0; l < layers; ++l) {
    const Matrix& prev = h.back();
    Matrix next = Matrix::Zero(n, d);
    for (int i = 0; i < n; ++i) {
      auto acc = next.row(i);
      for (int k = inc.offsets[i]; k < inc.offsets[i + 1]; ++k) {
        const auto r = params.relation_embeddings.row(inc.relations[k]);
        const auto src = prev.row(inc.sources[k]);
        acc += weights[k] * (src - 2.0 * r.dot(src) * r);
      }
    }
    h.push_back(next.array().tanh().matrix());
  }

  Matrix out(n, d * (layers + 1));
  for (int l = 0; l <= layers; ++l) out.middleCols(l * d, d) = h[l];
  if (cache) {
    cache->layers = std::move(h);
    cache->weights = weights;
  }
  return out;
}

void rrgat_backward(const Incidences& inc, const Matrix& initial_features, const RrgatParams& params,
                    const RrgatCache& cache, const Matrix& d_output, RrgatGrads& grads) {
  const int n = inc.entity_count;
  const int d = params.hidden_dim();
  const int layers = params.layer_count;
  if (d_output.rows() != n || d_output.cols() != d * (layers + 1)) {
    throw ArgumentError("rrgat_backward: gradient shape mismatch");
  }

  std::vector<Matrix> dh(layers + 1);
  for (int l = 0; l <= layers; ++l) dh[l] = d_output.middleCols(l * d, d);

  std::vector<double> d_weights(inc.sources.size(), 0.0);
  const auto& w = cache.weights;
  for (int l = layers; l >= 1; --l) {
    const Matrix& out = cache.layers[l];
    const Matrix& in = cache.layers[l - 1];
    const Matrix d_pre = (dh[l].array() * (1.0 - out.array().square())).matrix();
    Matrix& d_in = dh[l - 1];
    for (int i = 0; i < n; ++i) {
      const auto g = d_pre.row(i);
      for (int k = inc.offsets[i]; k < inc.offsets[i + 1]; ++k) {
        const int rel = inc.relations[k];
        const int src = inc.sources[k];
        const auto r = params.relation_embeddings.row(rel);
        const auto x = in.row(src);
        const double r_dot_g = r.dot(g);
        const double r_dot_x = r.dot(x);
        d_weights[k] += g.dot(x) - 2.0 * r_dot_x * r_dot_g;
        d_in.row(src) += w[k] * (g - 2.0 * r_dot_g * r);
        grads.relation_embeddings.row(rel) -= 2.0 * w[k] * (r_dot_x * g + r_dot_g * x);
      }
    }
  }

  // Softmax backward over each entity's incidences; logits are q . h_r.
  for (int i = 0; i < n; ++i) {
    double weighted = 0.0;
    for (int k = inc.offsets[i]; k < inc.offsets[i + 1]; ++k) weighted += w[k] * d_weights[k];
    for (int k = inc.offsets[i]; k < inc.offsets[i + 1]; ++k) {
      const double d_logit = w[k] * (d_weights[k] - weighted);
      if (d_logit == 0.0) continue;
      const int rel = inc.relations[k];
      grads.attention += d_logit * params.relation_embeddings.row(rel).transpose();
      grads.relation_embeddings.row(rel) += d_logit * params.attention.transpose();
    }
  }

  grads.input_projection.noalias() += initial_features.transpose() * dh[0];
}

VisualParams VisualParams::init(int image_dim, int visual_dim, Rng& rng) {
  if (image_dim < 1 || visual_dim < 1) throw ArgumentError("VisualParams::init: non-positive dimension");
  return {uniform_matrix(image_dim, visual_dim, 1.0 / std::sqrt(image_dim), rng)};
}

Matrix encode_visual(const Mmkg& graph, const VisualParams& params) {
  if (graph.image_features.cols() != params.projection.rows()) {
    throw ArgumentError("encode_visual: image dim (" + std::to_string(graph.image_features.cols()) +
                        ") differs from projection input dim (" +
                        std::to_string(params.projection.rows()) + ")");
  }
  Matrix z = graph.image_features * params.projection;
  normalize_rows(z);
  return z;
}

Matrix encode_graph(const Mmkg& graph, const Incidences& inc, const RrgatParams& params) {
  Matrix z = rrgat_forward(inc, graph.attribute_matrix(), params);
  normalize_rows(z);
  return z;
}

Matrix encode_fused(const Mmkg& graph, const Incidences& inc, const RrgatParams& params) {
  Matrix z = rrgat_forward(inc, graph.image_features, params);
  normalize_rows(z);
  return z;
}

Matrix normalize_rows_backward(const Matrix& normalized, const Vector& norms, const Matrix& d_normalized) {
  Matrix d_raw = Matrix::Zero(normalized.rows(), normalized.cols());
  for (Eigen::Index i = 0; i < normalized.rows(); ++i) {
    if (norms(i) < kZeroNormThreshold) continue;
    const auto z = normalized.row(i);
    const auto g = d_normalized.row(i);
    d_raw.row(i) = (g - z.dot(g) * z) / norms(i);
  }
  return d_raw;
}

}  // namespace cdmea
