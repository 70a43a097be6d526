#include "cdmea/scoring.hpp"

#include "cdmea/error.hpp"
#include "cdmea/text.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

namespace cdmea {

std::array<double, kBranchCount> FusionParams::weights() const {
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  std::array<double, kBranchCount> w{};
  double total = 0.0;
  for (int k = 0; k < kBranchCount; ++k) {
    w[k] = std::exp(logits[k] - max_logit);
    total += w[k];
  }
  for (auto& x : w) x /= total;
  return w;
}

std::string to_string(DebiasTarget t) { return t == DebiasTarget::visual ? "visual" : "graph"; }

DebiasTarget parse_debias_target(std::string_view text) {
  if (text == "visual") return DebiasTarget::visual;
  if (text == "graph") return DebiasTarget::graph;
  throw ArgumentError("debias target must be 'visual' or 'graph', got '" + std::string(text) + "'");
}

double similarity_score(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ArgumentError("similarity_score: dimension mismatch");
  double dot = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
  return dot;
}

double fuse_scores(const BranchScores& scores, const FusionParams& params, BranchSet blocked) {
  const auto w = params.weights();
  double total = 0.0;
  for (Branch b : {Branch::visual, Branch::graph, Branch::fused}) {
    const double y = blocked.contains(b) ? 0.0 : scores[b];
    total += w[static_cast<int>(b)] * y;
  }
  return total;
}

CausalScores causal_scores(const BranchScores& scores, const FusionParams& params, double beta,
                           DebiasTarget target) {
  if (!(beta >= 0.0 && beta <= 1.0)) {
    throw ArgumentError("beta must lie in [0, 1], got " + format_double(beta));
  }
  const BranchSet keep_only_target = target == DebiasTarget::visual
                                         ? BranchSet{Branch::graph, Branch::fused}
                                         : BranchSet{Branch::visual, Branch::fused};
  CausalScores out;
  out.branch = scores;
  out.beta = beta;
  out.factual = fuse_scores(scores, params);
  out.counterfactual = fuse_scores(scores, params, keep_only_target);
  const double null_world = fuse_scores(scores, params, BranchSet::all());
  out.te = out.factual - null_world;
  out.nde = out.counterfactual - null_world;
  out.tie = out.te - beta * out.nde;
  return out;
}

const Matrix& ModalityEmbeddings::operator[](Branch b) const {
  switch (b) {
    case Branch::visual: return visual;
    case Branch::graph: return graph;
    case Branch::fused: break;
  }
  return fused;
}

Matrix& ModalityEmbeddings::operator[](Branch b) {
  return const_cast<Matrix&>(std::as_const(*this)[b]);
}

BranchScores branch_scores(const ModalityEmbeddings& a, EntityId ia, const ModalityEmbeddings& b, EntityId ib) {
  return {a.visual.row(ia).dot(b.visual.row(ib)), a.graph.row(ia).dot(b.graph.row(ib)),
          a.fused.row(ia).dot(b.fused.row(ib))};
}

std::vector<double> ScoreMatrix::tie_row(std::size_t q) const {
  std::vector<double> row(candidates.size());
  for (std::size_t c = 0; c < candidates.size(); ++c) row[c] = at(q, c).tie;
  return row;
}

int worker_threads() {
  if (const char* env = std::getenv("CDMEA_THREADS")) {
    if (auto v = parse_int(env); v && *v >= 1) return static_cast<int>(*v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

ScoreMatrix score_matrix(const ModalityEmbeddings& from, const ModalityEmbeddings& to,
                         std::span<const EntityId> queries, std::span<const EntityId> candidates,
                         const FusionParams& params, double beta, DebiasTarget target) {
  if (candidates.empty()) throw ArgumentError("score_matrix: empty candidate set");
  if (from.source != to.source || from.version != to.version) {
    throw ArgumentError("score_matrix: embeddings come from different parameter snapshots");
  }
  if (!(beta >= 0.0 && beta <= 1.0)) {
    throw ArgumentError("beta must lie in [0, 1], got " + format_double(beta));
  }
  for (Branch b : {Branch::visual, Branch::graph, Branch::fused}) {
    if (from[b].cols() != to[b].cols()) throw ArgumentError("score_matrix: embedding dimension mismatch");
  }
  ScoreMatrix m;
  m.queries.assign(queries.begin(), queries.end());
  m.candidates.assign(candidates.begin(), candidates.end());
  m.cells.resize(queries.size() * candidates.size());

  auto fill_rows = [&](std::size_t begin, std::size_t end) {
    for (std::size_t q = begin; q < end; ++q) {
      for (std::size_t c = 0; c < candidates.size(); ++c) {
        m.cells[q * candidates.size() + c] =
            causal_scores(branch_scores(from, queries[q], to, candidates[c]), params, beta, target);
      }
    }
  };
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(worker_threads()), std::max<std::size_t>(1, queries.size() / 64));
  if (workers <= 1) {
    fill_rows(0, queries.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (queries.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(queries.size(), begin + chunk);
      if (begin < end) pool.emplace_back(fill_rows, begin, end);
    }
  }
  return m;
}

void write_score_tsv(const ScoreMatrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << "query_id\tcandidate_id\tY_v\tY_g\tY_m\tTE\tNDE\tTIE\n";
  for (std::size_t q = 0; q < m.queries.size(); ++q) {
    for (std::size_t c = 0; c < m.candidates.size(); ++c) {
      const auto& s = m.at(q, c);
      out << m.queries[q] << '\t' << m.candidates[c] << '\t' << format_double(s.branch.visual) << '\t'
          << format_double(s.branch.graph) << '\t' << format_double(s.branch.fused) << '\t'
          << format_double(s.te) << '\t' << format_double(s.nde) << '\t' << format_double(s.tie) << '\n';
    }
  }
}

std::vector<ScoreRecord> read_score_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<ScoreRecord> out;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) {
    throw ParseError(path.filename().string() + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto f = split(line, '\t');
    if (f[0] == "query_id") continue;
    if (f.size() != 8) fail("expected 8 tab-separated fields, got " + std::to_string(f.size()));
    ScoreRecord r;
    auto q = parse_int(f[0]);
    auto c = parse_int(f[1]);
    if (!q || !c || *q < 0 || *c < 0) fail("bad entity id");
    r.query = static_cast<EntityId>(*q);
    r.candidate = static_cast<EntityId>(*c);
    double values[6];
    for (int k = 0; k < 6; ++k) {
      auto v = parse_double(f[2 + k]);
      if (!v || !std::isfinite(*v)) fail("bad score '" + std::string(f[2 + k]) + "'");
      values[k] = *v;
    }
    r.branch = {values[0], values[1], values[2]};
    r.te = values[3];
    r.nde = values[4];
    r.tie = values[5];
    out.push_back(r);
  }
  return out;
}

}  // namespace cdmea
