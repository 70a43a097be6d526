#include "cdmea/model.hpp"

#include "cdmea/error.hpp"
#include "cdmea/random.hpp"

#include <algorithm>
#include <cmath>

namespace cdmea {

BranchSet BranchToggles::disabled() const {
  BranchSet s;
  for (Branch b : {Branch::visual, Branch::graph, Branch::fused}) {
    if (!enabled(b)) s = s.with(b);
  }
  return s;
}

CdmeaModel CdmeaModel::init(const ModelShape& shape, const BranchToggles& branches, std::uint64_t seed) {
  CdmeaModel m;
  m.branches = branches;
  Rng visual_rng(seed, Stream::init, 0);
  Rng graph_rng(seed, Stream::init, 1);
  Rng fused_rng(seed, Stream::init, 2);
  m.visual = VisualParams::init(shape.image_dim, shape.visual_dim, visual_rng);
  m.graph_encoder = RrgatParams::init(std::max(1, shape.attribute_dim), shape.relation_space, shape.hidden_dim,
                                      shape.layer_count, graph_rng);
  m.fused_encoder =
      RrgatParams::init(shape.image_dim, shape.relation_space, shape.hidden_dim, shape.layer_count, fused_rng);
  m.fusion.logits = {0.0, 0.0, 0.0};
  return m;
}

namespace {

ParamBlock block(std::string name, Matrix& m) { return {std::move(name), m.rows(), m.cols(), m.data()}; }
ParamBlock block(std::string name, Vector& v) { return {std::move(name), v.size(), 1, v.data()}; }

}  // namespace

std::vector<ParamBlock> CdmeaModel::blocks() {
  return {
      block("visual.projection", visual.projection),
      block("graph.input_projection", graph_encoder.input_projection),
      block("graph.relations", graph_encoder.relation_embeddings),
      block("graph.attention", graph_encoder.attention),
      block("fused.input_projection", fused_encoder.input_projection),
      block("fused.relations", fused_encoder.relation_embeddings),
      block("fused.attention", fused_encoder.attention),
      {"fusion.logits", kBranchCount, 1, fusion.logits.data()},
  };
}

bool CdmeaModel::all_finite() const {
  bool ok = visual.projection.allFinite() && graph_encoder.all_finite() && fused_encoder.all_finite();
  for (double x : fusion.logits) ok = ok && std::isfinite(x);
  return ok;
}

ModelGrads ModelGrads::zeros_like(const CdmeaModel& model) {
  ModelGrads g;
  g.visual_projection = Matrix::Zero(model.visual.projection.rows(), model.visual.projection.cols());
  g.graph = RrgatGrads::zeros_like(model.graph_encoder);
  g.fused = RrgatGrads::zeros_like(model.fused_encoder);
  return g;
}

std::vector<ParamBlock> ModelGrads::blocks() {
  return {
      block("visual.projection", visual_projection),
      block("graph.input_projection", graph.input_projection),
      block("graph.relations", graph.relation_embeddings),
      block("graph.attention", graph.attention),
      block("fused.input_projection", fused.input_projection),
      block("fused.relations", fused.relation_embeddings),
      block("fused.attention", fused.attention),
      {"fusion.logits", kBranchCount, 1, fusion.data()},
  };
}

GraphInputs GraphInputs::build(const Mmkg& graph, int relation_space) {
  GraphInputs in;
  in.incidences = Incidences::build(graph, relation_space);
  in.attributes = graph.attribute_count > 0 ? graph.attribute_matrix() : Matrix::Zero(graph.entity_count, 1);
  in.images = graph.image_features;
  return in;
}

ModalityEmbeddings encode(const CdmeaModel& model, const GraphInputs& inputs, EncodeCache* cache) {
  const auto n = inputs.incidences.entity_count;
  ModalityEmbeddings e;
  e.source = &model;
  e.version = model.version;

  if (model.branches.visual) {
    if (inputs.images.cols() != model.visual.projection.rows()) {
      throw ArgumentError("encode: image dim differs from the visual projection input dim");
    }
    e.visual = inputs.images * model.visual.projection;
    Vector norms = normalize_rows(e.visual);
    if (cache) cache->visual_norms = std::move(norms);
  } else {
    e.visual = Matrix::Zero(n, model.visual.projection.cols());
  }

  if (model.branches.graph) {
    e.graph = rrgat_forward(inputs.incidences, inputs.attributes, model.graph_encoder,
                            cache ? &cache->graph : nullptr);
    Vector norms = normalize_rows(e.graph);
    if (cache) cache->graph_norms = std::move(norms);
  } else {
    e.graph = Matrix::Zero(n, model.graph_encoder.output_dim());
  }

  if (model.branches.fused) {
    e.fused = rrgat_forward(inputs.incidences, inputs.images, model.fused_encoder,
                            cache ? &cache->fused : nullptr);
    Vector norms = normalize_rows(e.fused);
    if (cache) cache->fused_norms = std::move(norms);
  } else {
    e.fused = Matrix::Zero(n, model.fused_encoder.output_dim());
  }
  return e;
}

void backward_encode(const CdmeaModel& model, const GraphInputs& inputs, const EncodeCache& cache,
                     const ModalityEmbeddings& embeddings, const ModalityEmbeddings& d_embeddings,
                     ModelGrads& grads) {
  if (model.branches.visual) {
    const Matrix d_raw = normalize_rows_backward(embeddings.visual, cache.visual_norms, d_embeddings.visual);
    grads.visual_projection.noalias() += inputs.images.transpose() * d_raw;
  }
  if (model.branches.graph) {
    const Matrix d_raw = normalize_rows_backward(embeddings.graph, cache.graph_norms, d_embeddings.graph);
    rrgat_backward(inputs.incidences, inputs.attributes, model.graph_encoder, cache.graph, d_raw, grads.graph);
  }
  if (model.branches.fused) {
    const Matrix d_raw = normalize_rows_backward(embeddings.fused, cache.fused_norms, d_embeddings.fused);
    rrgat_backward(inputs.incidences, inputs.images, model.fused_encoder, cache.fused, d_raw, grads.fused);
  }
}

}  // namespace cdmea
