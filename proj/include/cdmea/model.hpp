#pragma once

#include "cdmea/mmkg.hpp"
#include "cdmea/rrgat.hpp"
#include "cdmea/scoring.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cdmea {

// Which modality modules exist. A removed branch encodes to zero rows and is
// treated as blocked in every fusion.
struct BranchToggles {
  bool visual = true;
  bool graph = true;
  bool fused = true;

  bool enabled(Branch b) const {
    return b == Branch::visual ? visual : b == Branch::graph ? graph : fused;
  }
  BranchSet disabled() const;
  bool operator==(const BranchToggles&) const = default;
};

struct ModelShape {
  int attribute_dim = 0;
  int image_dim = 0;
  int relation_space = 0;
  int hidden_dim = 300;
  int layer_count = 2;
  int visual_dim = 100;
};

// Named view of one parameter tensor, used by the optimizer and checkpoints.
struct ParamBlock {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  double* data = nullptr;

  std::span<double> values() const { return {data, static_cast<std::size_t>(rows * cols)}; }
};

// All learnable state: visual projection, the graph-branch RRGAT (attribute
// input), the fused-branch RRGAT (image input) and the fusion logits. One
// instance encodes both graphs of a pair.
struct CdmeaModel {
  VisualParams visual;
  RrgatParams graph_encoder;
  RrgatParams fused_encoder;
  FusionParams fusion;
  BranchToggles branches;
  // Bumped after every parameter update.
  std::uint64_t version = 0;

  static CdmeaModel init(const ModelShape& shape, const BranchToggles& branches, std::uint64_t seed);

  std::vector<ParamBlock> blocks();
  bool all_finite() const;
};

struct ModelGrads {
  Matrix visual_projection;
  RrgatGrads graph;
  RrgatGrads fused;
  std::array<double, kBranchCount> fusion{};

  static ModelGrads zeros_like(const CdmeaModel& model);
  // Same order and names as CdmeaModel::blocks.
  std::vector<ParamBlock> blocks();
};

// Per-graph inputs that do not change during training.
struct GraphInputs {
  Incidences incidences;
  Matrix attributes;
  Matrix images;

  static GraphInputs build(const Mmkg& graph, int relation_space);
};

struct EncodeCache {
  Vector visual_norms;
  Vector graph_norms;
  Vector fused_norms;
  RrgatCache graph;
  RrgatCache fused;
};

ModalityEmbeddings encode(const CdmeaModel& model, const GraphInputs& inputs, EncodeCache* cache = nullptr);

// Backpropagates d loss / d embeddings (same layout as `embeddings`) into
// `grads`. `cache` and `embeddings` must come from the same encode call.
void backward_encode(const CdmeaModel& model, const GraphInputs& inputs, const EncodeCache& cache,
                     const ModalityEmbeddings& embeddings, const ModalityEmbeddings& d_embeddings,
                     ModelGrads& grads);

}  // namespace cdmea
