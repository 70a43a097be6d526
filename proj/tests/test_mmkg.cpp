#include "cdmea/error.hpp"
#include "cdmea/mmkg.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

using namespace cdmea;
using cdmea::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.entity_count = 50;
  s.relation_count = 4;
  s.triple_count = 120;
  s.attribute_count = 16;
  s.image_dim = 8;
  s.edge_dropout = 0.2;
  s.attribute_noise = 0.05;
  s.visual_bias = 0.3;
  s.image_noise_rate = 0.2;
  s.seed = 11;
  return s;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("round trip of a generated pair preserves every field") {
  TempDir dir;
  const MmkgPair original = generate_synthetic_pair(small_spec());
  save_mmkg_pair(original, dir.path());
  const MmkgPair loaded = load_mmkg_pair(dir.path());
  CHECK(loaded.kg1 == original.kg1);
  CHECK(loaded.kg2 == original.kg2);
  CHECK(loaded.alignments == original.alignments);
  CHECK(loaded.provenance == original.provenance);
  CHECK(loaded == original);
}

TEST_CASE("generation and saving are byte-deterministic") {
  TempDir a, b;
  save_mmkg_pair(generate_synthetic_pair(small_spec()), a.path());
  save_mmkg_pair(generate_synthetic_pair(small_spec()), b.path());
  for (const char* name : {"meta.tsv", "triples_1.tsv", "triples_2.tsv", "attrs_1.tsv", "attrs_2.tsv",
                           "img_features_1.tsv", "img_features_2.tsv", "alignments.tsv"}) {
    CHECK_MESSAGE(slurp(a / name) == slurp(b / name), name);
  }
}

TEST_CASE("an entity is flagged imputed iff its feature line is absent") {
  TempDir dir;
  const MmkgPair pair = generate_synthetic_pair(small_spec());
  save_mmkg_pair(pair, dir.path());
  std::set<int> present;
  std::istringstream lines(slurp(dir / "img_features_2.tsv"));
  std::string line;
  while (std::getline(lines, line)) present.insert(std::stoi(line.substr(0, line.find('\t'))));
  const MmkgPair loaded = load_mmkg_pair(dir.path());
  int flagged = 0;
  for (int e = 0; e < loaded.kg2.entity_count; ++e) {
    CHECK((loaded.kg2.image_imputed[e] != 0) == (present.count(e) == 0));
    flagged += loaded.kg2.image_imputed[e];
  }
  CHECK(flagged == 10);  // 20% of 50
}

TEST_CASE("loader errors") {
  TempDir dir;
  save_mmkg_pair(generate_synthetic_pair(small_spec()), dir.path());

  SUBCASE("zero triples") {
    write_file(dir / "triples_1.tsv", "");
    CHECK_THROWS_WITH_AS(load_mmkg_pair(dir.path()), "graph 1 has no triples", ValidationError);
  }
  SUBCASE("missing file is named") {
    std::filesystem::remove(dir / "attrs_2.tsv");
    const auto msg = error_of([&] { load_mmkg_pair(dir.path()); });
    CHECK(msg.find("attrs_2.tsv") != std::string::npos);
    CHECK_THROWS_AS(load_mmkg_pair(dir.path()), LoadError);
  }
  SUBCASE("id out of range reports the line") {
    write_file(dir / "triples_2.tsv", "0\t0\t1\n1\t0\t2\n3\t0\t999\n");
    const auto msg = error_of([&] { load_mmkg_pair(dir.path()); });
    CHECK(msg.find("triples_2.tsv:3") != std::string::npos);
    CHECK_THROWS_AS(load_mmkg_pair(dir.path()), ValidationError);
  }
  SUBCASE("non-finite feature") {
    std::string dims;
    for (int k = 0; k < 8; ++k) dims += (k ? " " : "") + std::string(k == 3 ? "nan" : "0.5");
    write_file(dir / "img_features_1.tsv", "0\t" + dims + "\n");
    CHECK_THROWS_AS(load_mmkg_pair(dir.path()), ValidationError);
  }
  SUBCASE("wrong feature width") {
    write_file(dir / "img_features_1.tsv", "0\t1 2 3\n");
    CHECK_THROWS_AS(load_mmkg_pair(dir.path()), ValidationError);
  }
  SUBCASE("entity in two alignment pairs") {
    write_file(dir / "alignments.tsv", "0\t0\n0\t1\n");
    CHECK_THROWS_AS(load_mmkg_pair(dir.path()), ValidationError);
  }
}

TEST_CASE("imputation matches the observed moments") {
  Mmkg g;
  g.entity_count = 4000;
  g.image_features = Matrix::Zero(4000, 2);
  g.image_imputed.assign(4000, 0);
  for (int e = 0; e < 2000; ++e) {
    g.image_features(e, 0) = (e % 2) ? 4.0 : 2.0;  // mean 3, sd 1
    g.image_features(e, 1) = (e % 2) ? -1.0 : -1.0;  // mean -1, sd 0
  }
  for (int e = 2000; e < 4000; ++e) g.image_imputed[e] = 1;
  impute_missing_images(g, 5, 1);
  const auto imputed = g.image_features.bottomRows(2000);
  const double mean0 = imputed.col(0).mean();
  const double sd0 = std::sqrt((imputed.col(0).array() - mean0).square().mean());
  CHECK(mean0 == doctest::Approx(3.0).epsilon(0.05));
  CHECK(sd0 == doctest::Approx(1.0).epsilon(0.05));
  CHECK((imputed.col(1).array() == -1.0).all());
}

TEST_CASE("split_seed_alignments") {
  std::vector<EntityPair> ten;
  for (int i = 0; i < 10; ++i) ten.emplace_back(i, i);

  SUBCASE("exact counts") {
    const auto s = split_seed_alignments(ten, 0.2, 7);
    CHECK(s.train_pairs.size() == 2);
    CHECK(s.test_pairs.size() == 8);
  }
  SUBCASE("deterministic") {
    const auto a = split_seed_alignments(ten, 0.2, 7);
    const auto b = split_seed_alignments(ten, 0.2, 7);
    CHECK(a.train_pairs == b.train_pairs);
    CHECK(a.test_pairs == b.test_pairs);
  }
  SUBCASE("different seeds differ but keep the invariants") {
    std::vector<EntityPair> hundred;
    for (int i = 0; i < 100; ++i) hundred.emplace_back(i, 99 - i);
    const auto a = split_seed_alignments(hundred, 0.5, 1);
    const auto b = split_seed_alignments(hundred, 0.5, 2);
    CHECK(a.train_pairs != b.train_pairs);
    for (const auto& s : {a, b}) {
      std::set<int> left, right;
      for (const auto& v : {s.train_pairs, s.test_pairs}) {
        for (auto [x, y] : v) {
          CHECK(left.insert(x).second);
          CHECK(right.insert(y).second);
        }
      }
      CHECK(left.size() == 100);
      const double ratio = static_cast<double>(s.train_pairs.size()) / 100.0;
      CHECK(std::abs(ratio - 0.5) <= 1.0 / 100.0);
    }
  }
  SUBCASE("ratio outside (0, 1)") {
    CHECK_THROWS_AS(split_seed_alignments(ten, 0.0, 1), ArgumentError);
    CHECK_THROWS_AS(split_seed_alignments(ten, 1.0, 1), ArgumentError);
    CHECK_THROWS_AS(split_seed_alignments({}, 0.5, 1), ArgumentError);
  }
}

TEST_CASE("generator with no perturbation produces identical twins") {
  SyntheticSpec s;
  s.seed = 3;
  const auto pair = generate_synthetic_pair(s);
  CHECK(pair.kg1 == pair.kg2);
  for (const auto& [a, b] : pair.alignments) {
    CHECK(a == b);
    CHECK(cosine_similarity(pair.kg1.image_features.row(a).transpose(), pair.kg2.image_features.row(b).transpose()) ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("full visual bias makes every aligned image dissimilar") {
  SyntheticSpec s;
  s.visual_bias = 1.0;
  s.seed = 4;
  const auto pair = generate_synthetic_pair(s);
  for (const auto& [a, b] : pair.alignments) {
    const double cos =
        cosine_similarity(pair.kg1.image_features.row(a).transpose(), pair.kg2.image_features.row(b).transpose());
    CHECK(cos < 0.3);
  }
}

TEST_CASE("edge dropout removes a binomial share of triples") {
  SyntheticSpec s;
  s.entity_count = 100;
  s.triple_count = 300;
  s.edge_dropout = 0.3;
  const double expected = 210.0;
  const double sd = std::sqrt(300 * 0.3 * 0.7);
  double total = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    s.seed = seed;
    const auto pair = generate_synthetic_pair(s);
    pair.kg1.validate("graph 1");
    pair.kg2.validate("graph 2");
    const double kept = static_cast<double>(pair.kg2.triples.size());
    CHECK(std::abs(kept - expected) < 5 * sd);
    total += kept;
  }
  CHECK(std::abs(total / 20 - expected) < 3 * sd / std::sqrt(20.0));
}

TEST_CASE("generator argument errors") {
  SyntheticSpec s;
  s.entity_count = 1;
  CHECK_THROWS_AS(generate_synthetic_pair(s), ArgumentError);
  s = {};
  s.triple_count = 0;
  CHECK_THROWS_AS(generate_synthetic_pair(s), ArgumentError);
  s = {};
  s.visual_bias = 1.5;
  CHECK_THROWS_AS(generate_synthetic_pair(s), ArgumentError);
  s = {};
  s.edge_dropout = 1.0;
  CHECK_THROWS_AS(generate_synthetic_pair(s), ArgumentError);
}

TEST_CASE("generator spec survives the provenance round trip") {
  const auto s = small_spec();
  const auto back = SyntheticSpec::from_provenance(s.to_provenance());
  CHECK(back.entity_count == s.entity_count);
  CHECK(back.visual_bias == s.visual_bias);
  CHECK(back.image_noise_rate == s.image_noise_rate);
  CHECK(back.seed == s.seed);
  CHECK_THROWS_AS(SyntheticSpec::from_provenance({}), ArgumentError);
}

TEST_CASE("self check reports published benchmark pair counts") {
  MmkgPair p;
  p.provenance["dataset"] = "FB-DB15K";
  p.alignments.resize(128486);
  auto r = self_check(p);
  CHECK(r.passed);
  CHECK(r.expected_pair_count == std::optional<std::size_t>(128486));

  p.provenance["dataset"] = "FB-YG15K";
  p.alignments.resize(11199);
  CHECK(self_check(p).passed);

  p.alignments.resize(11000);
  CHECK_FALSE(self_check(p).passed);

  p.provenance.clear();
  r = self_check(p);
  CHECK(r.passed);
  CHECK(r.pair_count == 11000);
}
