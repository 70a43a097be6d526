#include "cdmea/training.hpp"

#include "cdmea/error.hpp"
#include "cdmea/random.hpp"
#include "cdmea/text.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

namespace cdmea {

using nlohmann::json;

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (epochs < 1) fail("epochs must be positive");
  if (batch_size < 2) fail("batch_size must be at least 2 (InfoNCE needs a negative)");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) fail("temperature must be positive");
  if (!(beta >= 0.0 && beta < 1.0)) fail("beta must lie in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) fail("weight_decay must be non-negative");
  if (iterative_every < 0) fail("iterative_every must be non-negative");
  if (hidden_dim < 1 || layer_count < 1 || visual_dim < 1) fail("model dimensions must be positive");
  if (!(seed_ratio > 0.0 && seed_ratio < 1.0)) fail("seed_ratio must lie in (0, 1)");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) fail("validation_fraction must lie in [0, 1)");
  if (!branches.visual && !branches.graph && !branches.fused) fail("every branch is removed");
  if (losses.visual && !branches.visual) fail("visual loss enabled but the visual branch is removed");
  if (losses.graph && !branches.graph) fail("graph loss enabled but the graph branch is removed");
  if (losses.fused && !branches.fused) fail("fused loss enabled but the fused branch is removed");
  if (!losses.any()) fail("no loss terms enabled");
}

void TrainConfig::drop_losses_of_removed_branches() {
  losses.visual = losses.visual && branches.visual;
  losses.graph = losses.graph && branches.graph;
  losses.fused = losses.fused && branches.fused;
}

json TrainConfig::to_json() const {
  return json{
      {"epochs", epochs},
      {"batch_size", batch_size},
      {"learning_rate", learning_rate},
      {"temperature", temperature},
      {"beta", beta},
      {"weight_decay", weight_decay},
      {"iterative_every", iterative_every},
      {"hidden_dim", hidden_dim},
      {"layers", layer_count},
      {"visual_dim", visual_dim},
      {"loss_factual", losses.factual},
      {"loss_visual", losses.visual},
      {"loss_graph", losses.graph},
      {"loss_fused", losses.fused},
      {"branch_visual", branches.visual},
      {"branch_graph", branches.graph},
      {"branch_fused", branches.fused},
      {"exclude_positive", exclude_positive},
      {"seed_ratio", seed_ratio},
      {"validation_fraction", validation_fraction},
      {"seed", seed},
  };
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  TrainConfig c;
  const json defaults = c.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      field = j.at(key).get<std::decay_t<decltype(field)>>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("bad value for config key '") + key + "'");
    }
  };
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("learning_rate", c.learning_rate);
  get("temperature", c.temperature);
  get("beta", c.beta);
  get("weight_decay", c.weight_decay);
  get("iterative_every", c.iterative_every);
  get("hidden_dim", c.hidden_dim);
  get("layers", c.layer_count);
  get("visual_dim", c.visual_dim);
  get("loss_factual", c.losses.factual);
  get("loss_visual", c.losses.visual);
  get("loss_graph", c.losses.graph);
  get("loss_fused", c.losses.fused);
  get("branch_visual", c.branches.visual);
  get("branch_graph", c.branches.graph);
  get("branch_fused", c.branches.fused);
  get("exclude_positive", c.exclude_positive);
  get("seed_ratio", c.seed_ratio);
  get("validation_fraction", c.validation_fraction);
  get("seed", c.seed);
  return c;
}

std::uint64_t TrainConfig::hash() const {
  const std::string text = to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Losses

double infonce_loss(std::span<const double> scores, std::size_t positive_index, double temperature,
                    std::span<double> grad, bool exclude_positive) {
  if (!(temperature > 0.0)) throw ArgumentError("infonce_loss: temperature must be positive");
  if (positive_index >= scores.size()) throw ArgumentError("infonce_loss: positive index out of range");
  if (!grad.empty() && grad.size() != scores.size()) throw ArgumentError("infonce_loss: gradient size mismatch");
  if (exclude_positive && scores.size() < 2) throw ArgumentError("infonce_loss: no negatives");

  auto in_denominator = [&](std::size_t j) { return !(exclude_positive && j == positive_index); };
  double max_scaled = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (in_denominator(j)) max_scaled = std::max(max_scaled, scores[j] / temperature);
  }
  double total = 0.0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (in_denominator(j)) total += std::exp(scores[j] / temperature - max_scaled);
  }
  const double log_denominator = max_scaled + std::log(total);
  const double loss = log_denominator - scores[positive_index] / temperature;

  if (!grad.empty()) {
    for (std::size_t j = 0; j < scores.size(); ++j) {
      grad[j] = in_denominator(j) ? std::exp(scores[j] / temperature - log_denominator) / temperature : 0.0;
    }
    grad[positive_index] -= 1.0 / temperature;
  }
  // Rounding can leave a tiny negative value for a saturated positive.
  return exclude_positive ? loss : std::max(loss, 0.0);
}

namespace {

// Symmetric in-batch InfoNCE over a B x B score matrix with positives on the
// diagonal. Writes d term / d scores into `grad` when non-null.
double symmetric_infonce(const Matrix& scores, double temperature, bool exclude_positive, Matrix* grad) {
  const auto b = scores.rows();
  const double scale = 1.0 / (2.0 * static_cast<double>(b));
  double loss = 0.0;
  std::vector<double> line(static_cast<std::size_t>(b)), line_grad(static_cast<std::size_t>(b));
  if (grad) *grad = Matrix::Zero(b, b);
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index j = 0; j < b; ++j) line[j] = scores(i, j);
    loss += infonce_loss(line, static_cast<std::size_t>(i), temperature,
                         grad ? std::span<double>(line_grad) : std::span<double>{}, exclude_positive);
    if (grad) {
      for (Eigen::Index j = 0; j < b; ++j) (*grad)(i, j) += scale * line_grad[j];
    }
    for (Eigen::Index j = 0; j < b; ++j) line[j] = scores(j, i);
    loss += infonce_loss(line, static_cast<std::size_t>(i), temperature,
                         grad ? std::span<double>(line_grad) : std::span<double>{}, exclude_positive);
    if (grad) {
      for (Eigen::Index j = 0; j < b; ++j) (*grad)(j, i) += scale * line_grad[j];
    }
  }
  return loss * scale;
}

Matrix gather_rows(const Matrix& m, std::span<const EntityId> ids) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), m.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(ids[k]);
  return out;
}

ModalityEmbeddings zeros_like(const ModalityEmbeddings& e) {
  ModalityEmbeddings z;
  z.visual = Matrix::Zero(e.visual.rows(), e.visual.cols());
  z.graph = Matrix::Zero(e.graph.rows(), e.graph.cols());
  z.fused = Matrix::Zero(e.fused.rows(), e.fused.cols());
  z.source = e.source;
  z.version = e.version;
  return z;
}

constexpr Branch kBranches[] = {Branch::visual, Branch::graph, Branch::fused};

}  // namespace

LossBreakdown total_loss(std::span<const EntityPair> batch, const ModalityEmbeddings& kg1,
                         const ModalityEmbeddings& kg2, const FusionParams& fusion, const TrainConfig& config,
                         LossGradients* grads) {
  if (!config.losses.any()) throw ConfigError("no loss terms enabled");
  if (batch.size() < 2) throw ArgumentError("total_loss: batch needs at least 2 pairs");
  const auto b = static_cast<Eigen::Index>(batch.size());
  std::vector<EntityId> left, right;
  for (const auto& [x, y] : batch) {
    left.push_back(x);
    right.push_back(y);
  }

  const auto w = fusion.weights();
  const BranchSet removed = config.branches.disabled();
  std::array<Matrix, kBranchCount> z1, z2, scores;
  Matrix factual = Matrix::Zero(b, b);
  for (Branch br : kBranches) {
    const int k = static_cast<int>(br);
    if (removed.contains(br)) {
      scores[k] = Matrix::Zero(b, b);
      continue;
    }
    z1[k] = gather_rows(kg1[br], left);
    z2[k] = gather_rows(kg2[br], right);
    scores[k] = z1[k] * z2[k].transpose();
    factual += w[k] * scores[k];
  }

  LossBreakdown out;
  std::array<Matrix, kBranchCount> d_scores;
  for (auto& d : d_scores) d = Matrix::Zero(b, b);
  std::array<double, kBranchCount> d_fusion{};

  if (config.losses.factual) {
    Matrix d_factual;
    out.factual = symmetric_infonce(factual, config.temperature, config.exclude_positive,
                                    grads ? &d_factual : nullptr);
    if (grads) {
      for (Branch br : kBranches) {
        const int k = static_cast<int>(br);
        if (removed.contains(br)) {
          d_fusion[k] = -w[k] * d_factual.cwiseProduct(factual).sum();
          continue;
        }
        d_scores[k] += w[k] * d_factual;
        d_fusion[k] = w[k] * d_factual.cwiseProduct(scores[k] - factual).sum();
      }
    }
  }
  for (Branch br : kBranches) {
    const int k = static_cast<int>(br);
    if (!config.losses.branch(br) || removed.contains(br)) continue;
    Matrix d_branch;
    const double term =
        symmetric_infonce(scores[k], config.temperature, config.exclude_positive, grads ? &d_branch : nullptr);
    if (br == Branch::visual) out.visual = term;
    if (br == Branch::graph) out.graph = term;
    if (br == Branch::fused) out.fused = term;
    if (grads) d_scores[k] += d_branch;
  }

  if (grads) {
    grads->kg1 = zeros_like(kg1);
    grads->kg2 = zeros_like(kg2);
    grads->fusion = d_fusion;
    for (Branch br : kBranches) {
      const int k = static_cast<int>(br);
      if (removed.contains(br)) continue;
      const Matrix d1 = d_scores[k] * z2[k];
      const Matrix d2 = d_scores[k].transpose() * z1[k];
      for (Eigen::Index i = 0; i < b; ++i) {
        grads->kg1[br].row(left[i]) += d1.row(i);
        grads->kg2[br].row(right[i]) += d2.row(i);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

AdamW::AdamW(CdmeaModel& model, double learning_rate, double weight_decay)
    : learning_rate_(learning_rate), weight_decay_(weight_decay) {
  for (const auto& blk : model.blocks()) {
    state_.first_moment.push_back(Matrix::Zero(blk.rows, blk.cols));
    state_.second_moment.push_back(Matrix::Zero(blk.rows, blk.cols));
  }
}

void AdamW::set_state(AdamState state) {
  if (state.first_moment.size() != state_.first_moment.size() ||
      state.second_moment.size() != state_.second_moment.size()) {
    throw ArgumentError("AdamW::set_state: block count mismatch");
  }
  for (std::size_t k = 0; k < state.first_moment.size(); ++k) {
    if (state.first_moment[k].rows() != state_.first_moment[k].rows() ||
        state.first_moment[k].cols() != state_.first_moment[k].cols() ||
        state.second_moment[k].rows() != state_.second_moment[k].rows() ||
        state.second_moment[k].cols() != state_.second_moment[k].cols()) {
      throw ArgumentError("AdamW::set_state: block shape mismatch");
    }
  }
  state_ = std::move(state);
}

void AdamW::step(CdmeaModel& model, ModelGrads& grads) {
  ++state_.step;
  const double correction1 = 1.0 - std::pow(beta1_, static_cast<double>(state_.step));
  const double correction2 = 1.0 - std::pow(beta2_, static_cast<double>(state_.step));
  auto params = model.blocks();
  auto gradients = grads.blocks();
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].values();
    auto g = gradients[k].values();
    double* m = state_.first_moment[k].data();
    double* v = state_.second_moment[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] -= learning_rate_ * weight_decay_ * p[i];
      p[i] -= learning_rate_ * m_hat / (std::sqrt(v_hat) + epsilon_);
    }
  }
}

// ---------------------------------------------------------------------------
// Pseudo-labeling

Matrix factual_score_matrix(const ModalityEmbeddings& kg1, const ModalityEmbeddings& kg2,
                            const FusionParams& fusion) {
  const auto w = fusion.weights();
  Matrix s = Matrix::Zero(kg1.visual.rows(), kg2.visual.rows());
  for (Branch br : kBranches) {
    s.noalias() += w[static_cast<int>(br)] * (kg1[br] * kg2[br].transpose());
  }
  return s;
}

std::vector<EntityPair> iterative_expand_seeds(std::span<const EntityPair> original_seeds,
                                               const Matrix& factual_scores) {
  std::vector<EntityPair> out(original_seeds.begin(), original_seeds.end());
  std::vector<bool> used_left(static_cast<std::size_t>(factual_scores.rows()), false);
  std::vector<bool> used_right(static_cast<std::size_t>(factual_scores.cols()), false);
  for (const auto& [a, b] : original_seeds) {
    if (a >= 0 && a < factual_scores.rows()) used_left[a] = true;
    if (b >= 0 && b < factual_scores.cols()) used_right[b] = true;
  }
  std::vector<EntityId> rows, cols;
  for (Eigen::Index i = 0; i < factual_scores.rows(); ++i) {
    if (!used_left[i]) rows.push_back(static_cast<EntityId>(i));
  }
  for (Eigen::Index j = 0; j < factual_scores.cols(); ++j) {
    if (!used_right[j]) cols.push_back(static_cast<EntityId>(j));
  }
  if (rows.empty() || cols.empty()) return out;

  std::vector<std::size_t> best_col(rows.size()), best_row(cols.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols.size(); ++c) {
      if (factual_scores(rows[r], cols[c]) > factual_scores(rows[r], cols[best])) best = c;
    }
    best_col[r] = best;
  }
  for (std::size_t c = 0; c < cols.size(); ++c) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      if (factual_scores(rows[r], cols[c]) > factual_scores(rows[best], cols[c])) best = r;
    }
    best_row[c] = best;
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (best_row[best_col[r]] == r) out.emplace_back(rows[r], cols[best_col[r]]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

ModelShape model_shape(const MmkgPair& data, const TrainConfig& config) {
  ModelShape s;
  s.attribute_dim = std::max(1, data.kg1.attribute_count);
  s.image_dim = data.kg1.image_dim();
  s.relation_space = data.relation_space();
  s.hidden_dim = config.hidden_dim;
  s.layer_count = config.layer_count;
  s.visual_dim = config.visual_dim;
  return s;
}

namespace {

const char* term_name(const LossBreakdown& l) {
  if (!std::isfinite(l.factual)) return "L_vgm";
  if (!std::isfinite(l.visual)) return "L_v";
  if (!std::isfinite(l.graph)) return "L_g";
  if (!std::isfinite(l.fused)) return "L_m";
  return "parameters";
}

std::vector<std::vector<EntityPair>> make_batches(std::vector<EntityPair> pool, int batch_size, Rng& rng) {
  rng.shuffle(pool);
  std::vector<std::vector<EntityPair>> batches;
  for (std::size_t start = 0; start < pool.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(pool.size(), start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(start),
                         pool.begin() + static_cast<std::ptrdiff_t>(end));
  }
  // A trailing singleton has no negatives; fold it into the previous batch.
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

}  // namespace

TrainResult train(const MmkgPair& data, const SeedAlignments& seeds, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (data.kg1.attribute_count != data.kg2.attribute_count || data.kg1.image_dim() != data.kg2.image_dim()) {
    throw ArgumentError("train: graphs disagree on attribute vocabulary or image dimension");
  }
  if (seeds.train_pairs.empty()) throw ArgumentError("train: no training seeds");

  TrainResult result;
  {
    std::vector<EntityPair> shuffled = seeds.train_pairs;
    Rng rng(config.seed, Stream::validation);
    rng.shuffle(shuffled);
    std::size_t held_out = 0;
    if (shuffled.size() >= 3 && config.validation_fraction > 0.0) {
      held_out = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::ceil(config.validation_fraction * static_cast<double>(shuffled.size()))));
      held_out = std::min(held_out, shuffled.size() - 2);
    }
    result.validation_pairs.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(held_out));
    result.training_pairs.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(held_out), shuffled.end());
  }
  const auto& core = result.training_pairs;
  if (core.size() < 2) throw ArgumentError("train: need at least two training pairs");

  const int relation_space = data.relation_space();
  const GraphInputs in1 = GraphInputs::build(data.kg1, relation_space);
  const GraphInputs in2 = GraphInputs::build(data.kg2, relation_space);

  Checkpoint& ckpt = result.checkpoint;
  ckpt.config = config;
  ckpt.config_hash = config.hash();
  ckpt.model = CdmeaModel::init(model_shape(data, config), config.branches, config.seed);
  CdmeaModel& model = ckpt.model;
  AdamW optimizer(model, config.learning_rate, config.weight_decay);
  Rng shuffle_rng(config.seed, Stream::shuffle);

  std::vector<EntityId> val_candidates;
  {
    std::set<EntityId> seeded;
    for (const auto& p : core) seeded.insert(p.second);
    for (EntityId e = 0; e < data.kg2.entity_count; ++e) {
      if (!seeded.count(e)) val_candidates.push_back(e);
    }
  }

  std::vector<EntityPair> pool = core;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.iterative_every > 0 && epoch > 1 && (epoch - 1) % config.iterative_every == 0) {
      const auto e1 = encode(model, in1);
      const auto e2 = encode(model, in2);
      pool = iterative_expand_seeds(core, factual_score_matrix(e1, e2, model.fusion));
    }

    double epoch_loss = 0.0;
    for (const auto& batch : make_batches(pool, config.batch_size, shuffle_rng)) {
      EncodeCache c1, c2;
      const auto e1 = encode(model, in1, &c1);
      const auto e2 = encode(model, in2, &c2);
      LossGradients lg;
      const LossBreakdown loss = total_loss(batch, e1, e2, model.fusion, config, &lg);
      if (!std::isfinite(loss.total())) {
        throw DivergenceError("epoch " + std::to_string(epoch) + ": non-finite " + term_name(loss) + " loss");
      }
      ModelGrads grads = ModelGrads::zeros_like(model);
      backward_encode(model, in1, c1, e1, lg.kg1, grads);
      backward_encode(model, in2, c2, e2, lg.kg2, grads);
      grads.fusion = lg.fusion;
      optimizer.step(model, grads);
      model.graph_encoder.renormalize_relations();
      model.fused_encoder.renormalize_relations();
      ++model.version;
      if (!model.all_finite()) {
        throw DivergenceError("epoch " + std::to_string(epoch) + ": non-finite parameters after update");
      }
      epoch_loss += loss.total() * static_cast<double>(batch.size());
    }
    epoch_loss /= static_cast<double>(pool.size());

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = epoch_loss;
    rec.val_h1 = std::numeric_limits<double>::quiet_NaN();
    if (!result.validation_pairs.empty()) {
      const auto e1 = encode(model, in1);
      const auto e2 = encode(model, in2);
      const auto ranks = alignment_ranks(e1, e2, model.fusion, result.validation_pairs, val_candidates,
                                         config.beta, DebiasTarget::visual);
      rec.val_h1 = compute_metrics(ranks).h_at_1;
    }
    result.trace.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  ckpt.epoch = config.epochs;
  ckpt.optimizer = optimizer.state();
  return result;
}

void write_trace_tsv(std::span<const EpochRecord> trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << "epoch\tloss\tval_h1\n";
  for (const auto& r : trace) out << r.epoch << '\t' << format_double(r.loss) << '\t' << format_double(r.val_h1) << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'C', 'D', 'M', 'E', 'A', 'C', 'K', 'P'};
constexpr std::uint32_t kFormatVersion = 1;
enum class DType : std::uint8_t { text = 0, f32 = 1, f64 = 2 };

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T take(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw LoadError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

void put_name(std::ostream& out, const std::string& name) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
}

void put_matrix(std::ostream& out, const std::string& name, const double* data, Eigen::Index rows,
                Eigen::Index cols) {
  put_name(out, name);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(DType::f64));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(rows));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cols));
  for (Eigen::Index i = 0; i < rows * cols; ++i) put<double>(out, data[i]);
}

struct RawBlock {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::vector<double> values;
  std::string text;
};

Matrix to_matrix(const RawBlock& b) {
  Matrix m(b.rows, b.cols);
  std::copy(b.values.begin(), b.values.end(), m.data());
  return m;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write checkpoint " + path.string());
  auto& model = const_cast<CdmeaModel&>(ckpt.model);
  const auto blocks = model.blocks();

  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint64_t>(out, ckpt.config_hash);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.epoch));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(ckpt.optimizer.step));
  put<std::uint64_t>(out, model.version);
  const bool with_optimizer = ckpt.optimizer.first_moment.size() == blocks.size();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(1 + blocks.size() * (with_optimizer ? 3 : 1)));

  const std::string config_text = ckpt.config.to_json().dump();
  put_name(out, "config");
  put<std::uint8_t>(out, static_cast<std::uint8_t>(DType::text));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(config_text.size()));
  put<std::uint32_t>(out, 1);
  out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));

  for (const auto& b : blocks) put_matrix(out, b.name, b.data, b.rows, b.cols);
  if (with_optimizer) {
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      const auto& m = ckpt.optimizer.first_moment[k];
      put_matrix(out, "adam.m." + blocks[k].name, m.data(), m.rows(), m.cols());
      const auto& v = ckpt.optimizer.second_moment[k];
      put_matrix(out, "adam.v." + blocks[k].name, v.data(), v.rows(), v.cols());
    }
  }
  if (!out) throw ArgumentError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + sizeof(magic), kMagic)) {
    throw LoadError(path.string() + " is not a checkpoint");
  }
  if (take<std::uint32_t>(in) != kFormatVersion) throw LoadError("unsupported checkpoint version");
  Checkpoint ckpt;
  ckpt.config_hash = take<std::uint64_t>(in);
  ckpt.epoch = static_cast<int>(take<std::uint32_t>(in));
  ckpt.optimizer.step = static_cast<std::int64_t>(take<std::uint64_t>(in));
  const auto version = take<std::uint64_t>(in);
  const auto count = take<std::uint32_t>(in);

  std::map<std::string, RawBlock> raw;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = take<std::uint32_t>(in);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw LoadError("checkpoint truncated");
    const auto dtype = static_cast<DType>(take<std::uint8_t>(in));
    RawBlock b;
    b.rows = take<std::uint32_t>(in);
    b.cols = take<std::uint32_t>(in);
    const auto n = static_cast<std::size_t>(b.rows * b.cols);
    if (dtype == DType::text) {
      b.text.resize(n);
      if (!in.read(b.text.data(), static_cast<std::streamsize>(n))) throw LoadError("checkpoint truncated");
    } else if (dtype == DType::f64) {
      b.values.resize(n);
      for (auto& x : b.values) x = take<double>(in);
    } else if (dtype == DType::f32) {
      b.values.resize(n);
      for (auto& x : b.values) x = static_cast<double>(take<float>(in));
    } else {
      throw LoadError("checkpoint block '" + name + "' has unknown dtype");
    }
    raw.emplace(std::move(name), std::move(b));
  }

  auto need = [&](const std::string& name) -> const RawBlock& {
    auto it = raw.find(name);
    if (it == raw.end()) throw LoadError("checkpoint lacks block '" + name + "'");
    return it->second;
  };
  try {
    ckpt.config = TrainConfig::from_json(json::parse(need("config").text));
  } catch (const json::exception& e) {
    throw LoadError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }

  CdmeaModel& model = ckpt.model;
  model.branches = ckpt.config.branches;
  model.version = version;
  model.visual.projection = to_matrix(need("visual.projection"));
  model.graph_encoder.input_projection = to_matrix(need("graph.input_projection"));
  model.graph_encoder.relation_embeddings = to_matrix(need("graph.relations"));
  model.graph_encoder.attention = to_matrix(need("graph.attention")).col(0);
  model.graph_encoder.layer_count = ckpt.config.layer_count;
  model.fused_encoder.input_projection = to_matrix(need("fused.input_projection"));
  model.fused_encoder.relation_embeddings = to_matrix(need("fused.relations"));
  model.fused_encoder.attention = to_matrix(need("fused.attention")).col(0);
  model.fused_encoder.layer_count = ckpt.config.layer_count;
  const auto& logits = need("fusion.logits").values;
  if (logits.size() != kBranchCount) throw LoadError("checkpoint fusion block has wrong size");
  std::copy(logits.begin(), logits.end(), model.fusion.logits.begin());

  for (const auto& b : model.blocks()) {
    auto m = raw.find("adam.m." + b.name);
    auto v = raw.find("adam.v." + b.name);
    if (m == raw.end() || v == raw.end()) {
      ckpt.optimizer.first_moment.clear();
      ckpt.optimizer.second_moment.clear();
      break;
    }
    ckpt.optimizer.first_moment.push_back(to_matrix(m->second));
    ckpt.optimizer.second_moment.push_back(to_matrix(v->second));
  }
  return ckpt;
}

}  // namespace cdmea
