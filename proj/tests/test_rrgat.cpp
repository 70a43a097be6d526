#include "cdmea/error.hpp"
#include "cdmea/model.hpp"
#include "cdmea/rrgat.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <Eigen/LU>

#include <deque>

using namespace cdmea;

namespace {

Vector random_unit(int d, Rng& rng) {
  Vector v(d);
  for (int k = 0; k < d; ++k) v(k) = rng.normal();
  return v / v.norm();
}

Mmkg chain_graph() {
  Mmkg g;
  g.entity_count = 3;
  g.relation_count = 2;
  g.attribute_count = 3;
  g.triples = {{0, 0, 1}, {1, 1, 2}};
  g.attribute_bags = {{0}, {1}, {2}};
  g.image_features = Matrix::Identity(3, 3);
  g.image_imputed.assign(3, 0);
  return g;
}

RrgatParams chain_params() {
  RrgatParams p;
  p.layer_count = 1;
  p.input_projection.resize(3, 2);
  p.input_projection << 0.5, -0.25, 0.1, 0.8, -0.6, 0.3;
  p.relation_embeddings.resize(5, 2);
  p.relation_embeddings << 1, 0, 1, 1, 0, 1, 1, -2, 3, 1;
  p.renormalize_relations();
  p.attention.resize(2);
  p.attention << 0.7, -0.4;
  return p;
}

Mmkg random_graph(int n, int triples, int relations, std::uint64_t seed) {
  SyntheticSpec s;
  s.entity_count = n;
  s.triple_count = triples;
  s.relation_count = relations;
  s.attribute_count = 10;
  s.attributes_per_entity = 3;
  s.image_dim = 6;
  s.seed = seed;
  return generate_synthetic_pair(s).kg1;
}

std::vector<int> hop_distance(const Mmkg& g, int from) {
  std::vector<int> dist(g.entity_count, -1);
  std::deque<int> queue{from};
  dist[from] = 0;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    for (const auto& t : g.triples) {
      for (auto [a, b] : {std::pair{t.head, t.tail}, std::pair{t.tail, t.head}}) {
        if (a == u && dist[b] < 0) {
          dist[b] = dist[u] + 1;
          queue.push_back(b);
        }
      }
    }
  }
  return dist;
}

}  // namespace

TEST_CASE("reflection of the first axis") {
  Vector e1 = Vector::Zero(3);
  e1(0) = 1.0;
  const Matrix w = reflection_matrix(e1);
  Matrix expected = Matrix::Identity(3, 3);
  expected(0, 0) = -1.0;
  CHECK(w.isApprox(expected, 0.0));
  CHECK((w - expected).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("reflections are orthogonal with determinant -1") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 2 + trial % 5;
    const Vector h = random_unit(d, rng);
    const Matrix w = reflection_matrix(h);
    CHECK((w.transpose() * w - Matrix::Identity(d, d)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(std::abs(w.determinant() + 1.0) < 1e-4);
  }
}

TEST_CASE("reflection through the diagonal maps x to -y") {
  Vector h(2);
  h << 1.0, 1.0;
  h /= h.norm();
  Vector x(2);
  x << 1.0, 0.0;
  const Vector y = reflection_matrix(h) * x;
  CHECK(y(0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(y(1) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(y.norm() == doctest::Approx(x.norm()));
  CHECK((reflect(h, x) - y).norm() < 1e-15);
}

TEST_CASE("reflection isometry for random vectors") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector h = random_unit(16, rng);
    Vector x(16);
    for (int k = 0; k < 16; ++k) x(k) = rng.normal();
    CHECK(std::abs(reflect(h, x).norm() - x.norm()) < 1e-6);
  }
}

TEST_CASE("non-unit relation embedding is rejected") {
  Vector h(3);
  h << 1.0, 1.0, 0.0;
  CHECK_THROWS_AS(reflection_matrix(h), ArgumentError);
}

TEST_CASE("incidences are undirected with self loops") {
  const auto inc = Incidences::build(chain_graph(), 2);
  CHECK(inc.offsets == std::vector<int>{0, 2, 5, 7});
  CHECK(inc.sources == std::vector<int>{0, 1, 1, 0, 2, 2, 1});
  CHECK(inc.relations == std::vector<int>{4, 0, 4, 2, 1, 4, 3});
  CHECK_THROWS_AS(Incidences::build(chain_graph(), 1), ArgumentError);
}

TEST_CASE("isolated entity has a single incidence with weight exactly 1") {
  Mmkg g = chain_graph();
  g.entity_count = 4;
  g.attribute_bags.push_back({});
  const auto inc = Incidences::build(g, 2);
  const auto w = attention_weights(inc, chain_params());
  CHECK(inc.offsets[4] - inc.offsets[3] == 1);
  CHECK(w[inc.offsets[3]] == 1.0);
}

TEST_CASE("attention weights sum to one for any positive scaling of q") {
  const Mmkg g = random_graph(30, 80, 4, 2);
  const auto inc = Incidences::build(g, 4);
  Rng rng(9);
  RrgatParams p = RrgatParams::init(10, 4, 6, 2, rng);
  for (double scale : {0.1, 1.0, 7.5, 40.0}) {
    RrgatParams q = p;
    q.attention *= scale;
    const auto w = attention_weights(inc, q);
    for (int i = 0; i < inc.entity_count; ++i) {
      double total = 0;
      for (int k = inc.offsets[i]; k < inc.offsets[i + 1]; ++k) total += w[k];
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
  const auto w1 = attention_weights(inc, p);
  p.attention *= 5.0;
  CHECK(attention_weights(inc, p) != w1);
}

TEST_CASE("hand-set chain forward pass matches the reference fixture") {
  // Frozen from an explicit-matrix computation done outside this code base.
  const double expected[3][4] = {
      {0.5, -0.25, -0.16733426803793391, 0.19993844636348596},
      {0.1, 0.8, -0.26808987844108834, 0.482088418213069},
      {-0.6, 0.3, 0.47251523982308075, 0.06664196704907842},
  };
  const Mmkg g = chain_graph();
  const auto out = rrgat_forward(Incidences::build(g, 2), g.attribute_matrix(), chain_params());
  REQUIRE(out.rows() == 3);
  REQUIRE(out.cols() == 4);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) CHECK(std::abs(out(i, j) - expected[i][j]) < 1e-6);
  }
}

TEST_CASE("forward pass matches an explicit reflection-matrix computation") {
  const Mmkg g = random_graph(12, 30, 3, 5);
  const auto inc = Incidences::build(g, 3);
  Rng rng(1);
  const RrgatParams p = RrgatParams::init(10, 3, 4, 2, rng);
  const Matrix x = g.attribute_matrix();
  const Matrix out = rrgat_forward(inc, x, p);

  std::vector<Matrix> h{x * p.input_projection};
  const Vector logits = p.relation_embeddings * p.attention;
  for (int l = 0; l < 2; ++l) {
    Matrix next(g.entity_count, 4);
    for (int i = 0; i < g.entity_count; ++i) {
      double denom = 0;
      for (int k = inc.offsets[i]; k < inc.offsets[i + 1]; ++k) denom += std::exp(logits(inc.relations[k]));
      Vector s = Vector::Zero(4);
      for (int k = inc.offsets[i]; k < inc.offsets[i + 1]; ++k) {
        const Matrix w = reflection_matrix(p.relation_embeddings.row(inc.relations[k]).transpose());
        s += std::exp(logits(inc.relations[k])) / denom * (w * h[l].row(inc.sources[k]).transpose());
      }
      next.row(i) = s.array().tanh().matrix().transpose();
    }
    h.push_back(next);
  }
  for (int l = 0; l <= 2; ++l) CHECK((out.middleCols(4 * l, 4) - h[l]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("dimension mismatch is an argument error") {
  const Mmkg g = chain_graph();
  CHECK_THROWS_AS(rrgat_forward(Incidences::build(g, 2), Matrix::Zero(3, 5), chain_params()), ArgumentError);
  CHECK_THROWS_AS(rrgat_forward(Incidences::build(g, 2), Matrix::Zero(2, 3), chain_params()), ArgumentError);
  VisualParams v{Matrix::Zero(4, 2)};
  CHECK_THROWS_AS(encode_visual(g, v), ArgumentError);
}

TEST_CASE("zero attributes give zero graph embeddings") {
  Mmkg g = random_graph(10, 20, 2, 1);
  for (auto& bag : g.attribute_bags) bag.clear();
  Rng rng(2);
  const auto p = RrgatParams::init(10, 2, 5, 2, rng);
  const Matrix z = encode_graph(g, Incidences::build(g, 2), p);
  CHECK(z.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("isomorphic graphs with identical attributes encode identically") {
  const Mmkg g = random_graph(15, 40, 3, 8);
  std::vector<int> perm(15);
  for (int i = 0; i < 15; ++i) perm[i] = (i * 7 + 3) % 15;
  Mmkg h = g;
  for (auto& t : h.triples) {
    t.head = perm[t.head];
    t.tail = perm[t.tail];
  }
  for (int i = 0; i < 15; ++i) {
    h.attribute_bags[perm[i]] = g.attribute_bags[i];
    h.image_features.row(perm[i]) = g.image_features.row(i);
  }
  Rng rng(4);
  const auto p = RrgatParams::init(10, 3, 6, 2, rng);
  const Matrix zg = encode_graph(g, Incidences::build(g, 3), p);
  const Matrix zh = encode_graph(h, Incidences::build(h, 3), p);
  const Matrix mg = encode_fused(g, Incidences::build(g, 3), RrgatParams::init(6, 3, 6, 2, rng));
  for (int i = 0; i < 15; ++i) CHECK((zg.row(i) - zh.row(perm[i])).cwiseAbs().maxCoeff() < 1e-12);
  const Matrix zg_again = encode_graph(g, Incidences::build(g, 3), p);
  CHECK(zg == zg_again);
  // Different inputs, different embeddings.
  CHECK((mg - zg).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("attribute change propagates at most L hops") {
  const Mmkg g = random_graph(20, 22, 2, 13);
  const auto inc = Incidences::build(g, 2);
  Rng rng(6);
  const auto p = RrgatParams::init(10, 2, 4, 2, rng);
  const Matrix before = encode_graph(g, inc, p);
  Mmkg changed = g;
  auto& bag = changed.attribute_bags[0];
  if (std::find(bag.begin(), bag.end(), 9) == bag.end()) {
    bag.push_back(9);
    std::sort(bag.begin(), bag.end());
  } else {
    bag.erase(std::find(bag.begin(), bag.end(), 9));
  }
  const Matrix after = encode_graph(changed, inc, p);
  const auto dist = hop_distance(g, 0);
  bool some_far = false;
  for (int i = 0; i < 20; ++i) {
    const bool moved = (before.row(i) - after.row(i)).cwiseAbs().maxCoeff() > 0.0;
    if (dist[i] < 0 || dist[i] > 2) {
      some_far = true;
      CHECK_FALSE(moved);
    }
  }
  CHECK(some_far);
  CHECK((before.row(0) - after.row(0)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("masking one image propagates at most L hops in the fused branch") {
  const Mmkg g = random_graph(20, 22, 2, 21);
  const auto inc = Incidences::build(g, 2);
  Rng rng(8);
  const auto p = RrgatParams::init(6, 2, 4, 1, rng);
  const Matrix before = encode_fused(g, inc, p);
  Mmkg masked = g;
  masked.image_features.row(5).setZero();
  const Matrix after = encode_fused(masked, inc, p);
  const auto dist = hop_distance(g, 5);
  for (int i = 0; i < 20; ++i) {
    if (dist[i] < 0 || dist[i] > 1) CHECK((before.row(i) - after.row(i)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("visual encoder normalizes projected features") {
  SUBCASE("scale invariance") {
    Mmkg g = chain_graph();
    g.image_features = Matrix::Zero(3, 4);
    g.image_features(0, 0) = 3.5;
    g.image_features(1, 0) = 0.01;
    g.image_features.row(2) = g.image_features.row(1);
    VisualParams v{Matrix::Identity(4, 2)};
    const Matrix z = encode_visual(g, v);
    CHECK(z(0, 0) == doctest::Approx(1.0));
    CHECK(z(0, 1) == 0.0);
    CHECK(z.row(1) == z.row(2));
  }
  SUBCASE("full-size projection gives unit rows") {
    Mmkg g;
    g.entity_count = 20;
    Rng rng(12);
    g.image_features.resize(20, 4096);
    for (int i = 0; i < 20; ++i)
      for (int k = 0; k < 4096; ++k) g.image_features(i, k) = rng.uniform();
    const auto v = VisualParams::init(4096, 100, rng);
    const Matrix z = encode_visual(g, v);
    CHECK(z.cols() == 100);
    for (int i = 0; i < 20; ++i) CHECK(std::abs(z.row(i).norm() - 1.0) < 1e-6);
  }
}

TEST_CASE("both graphs are encoded by the same parameter objects") {
  const auto pair = oracle::tiny_pair();
  ModelShape shape{3, 3, 2, 4, 1, 2};
  const CdmeaModel model = CdmeaModel::init(shape, {}, 1);
  const auto e1 = encode(model, GraphInputs::build(pair.kg1, 2));
  const auto e2 = encode(model, GraphInputs::build(pair.kg2, 2));
  CHECK(e1.source == &model);
  CHECK(e2.source == &model);
  CHECK(e1.version == e2.version);
  for (int i = 0; i < 5; ++i) {
    CHECK(std::abs(e1.graph.row(i).norm() - 1.0) < 1e-6);
    CHECK(std::abs(e2.fused.row(i).norm() - 1.0) < 1e-6);
  }
}

TEST_CASE("rrgat backward matches central finite differences") {
  const auto pair = oracle::tiny_pair();
  const auto inc = Incidences::build(pair.kg1, 2);
  const Matrix x = pair.kg1.image_features;
  Rng rng(21);
  RrgatParams p = RrgatParams::init(3, 2, 4, 2, rng);
  Matrix weights(5, 12);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 12; ++j) weights(i, j) = rng.normal();

  auto loss = [&] { return rrgat_forward(inc, x, p).cwiseProduct(weights).sum(); };
  RrgatCache cache;
  rrgat_forward(inc, x, p, &cache);
  RrgatGrads g = RrgatGrads::zeros_like(p);
  rrgat_backward(inc, x, p, cache, weights, g);

  auto check = [&](double* data, Eigen::Index n, const double* analytic) {
    const auto numeric = oracle::central_differences(data, static_cast<std::size_t>(n), 1e-5, loss);
    CHECK(oracle::relative_error(std::vector<double>(analytic, analytic + n), numeric) < 1e-4);
  };
  check(p.input_projection.data(), p.input_projection.size(), g.input_projection.data());
  check(p.relation_embeddings.data(), p.relation_embeddings.size(), g.relation_embeddings.data());
  check(p.attention.data(), p.attention.size(), g.attention.data());
}
