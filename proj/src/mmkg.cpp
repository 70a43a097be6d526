#include "cdmea/mmkg.hpp"

#include "cdmea/error.hpp"
#include "cdmea/random.hpp"
#include "cdmea/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace cdmea {

namespace fs = std::filesystem;

Vector normalize_rows(Matrix& m) {
  Vector norms(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    norms(i) = n;
    if (n < kZeroNormThreshold) {
      m.row(i).setZero();
    } else {
      m.row(i) /= n;
    }
  }
  return norms;
}

double cosine_similarity(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  if (a.size() != b.size()) throw ArgumentError("cosine_similarity: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na < kZeroNormThreshold || nb < kZeroNormThreshold) return 0.0;
  return a.dot(b) / (na * nb);
}

Matrix Mmkg::attribute_matrix() const {
  Matrix m = Matrix::Zero(entity_count, attribute_count);
  for (int e = 0; e < entity_count && e < static_cast<int>(attribute_bags.size()); ++e) {
    for (int a : attribute_bags[e]) m(e, a) = 1.0;
  }
  return m;
}

void Mmkg::validate(std::string_view label) const {
  const std::string name(label);
  if (entity_count < 0 || relation_count < 0 || attribute_count < 0) {
    throw ValidationError(name + ": negative count");
  }
  if (triples.empty()) throw ValidationError(name + " has no triples");
  for (std::size_t i = 0; i < triples.size(); ++i) {
    const auto& t = triples[i];
    if (t.head < 0 || t.head >= entity_count || t.tail < 0 || t.tail >= entity_count) {
      throw ValidationError(name + ": triple " + std::to_string(i) + " has entity id out of range");
    }
    if (t.relation < 0 || t.relation >= relation_count) {
      throw ValidationError(name + ": triple " + std::to_string(i) +
                            " has relation id out of range");
    }
  }
  if (static_cast<int>(attribute_bags.size()) != entity_count) {
    throw ValidationError(name + ": attribute bag count differs from entity count");
  }
  for (const auto& bag : attribute_bags) {
    for (std::size_t k = 0; k < bag.size(); ++k) {
      if (bag[k] < 0 || bag[k] >= attribute_count) {
        throw ValidationError(name + ": attribute id out of range");
      }
      if (k > 0 && bag[k] <= bag[k - 1]) {
        throw ValidationError(name + ": attribute bag not sorted/unique");
      }
    }
  }
  if (image_features.rows() != entity_count) {
    throw ValidationError(name + ": image feature rows differ from entity count");
  }
  if (!image_features.allFinite()) throw ValidationError(name + ": non-finite image feature");
  if (static_cast<int>(image_imputed.size()) != entity_count) {
    throw ValidationError(name + ": imputation flags differ from entity count");
  }
}

bool Mmkg::operator==(const Mmkg& o) const {
  return entity_count == o.entity_count && relation_count == o.relation_count &&
         attribute_count == o.attribute_count && triples == o.triples &&
         attribute_bags == o.attribute_bags && image_imputed == o.image_imputed &&
         image_features.rows() == o.image_features.rows() &&
         image_features.cols() == o.image_features.cols() && image_features == o.image_features;
}

int MmkgPair::relation_space() const { return std::max(kg1.relation_count, kg2.relation_count); }

void impute_missing_images(Mmkg& graph, std::uint64_t seed, int graph_index) {
  const auto dim = graph.image_features.cols();
  Vector mean = Vector::Zero(dim);
  Vector stddev = Vector::Ones(dim);
  Eigen::Index observed = 0;
  for (Eigen::Index e = 0; e < graph.image_features.rows(); ++e) {
    if (!graph.image_imputed[e]) {
      mean += graph.image_features.row(e).transpose();
      ++observed;
    }
  }
  // With nothing observed, fall back to a standard normal.
  if (observed > 0) {
    mean /= static_cast<double>(observed);
    Vector var = Vector::Zero(dim);
    for (Eigen::Index e = 0; e < graph.image_features.rows(); ++e) {
      if (!graph.image_imputed[e]) {
        var += (graph.image_features.row(e).transpose() - mean).array().square().matrix();
      }
    }
    stddev = (var / static_cast<double>(observed)).array().sqrt().matrix();
  }
  for (Eigen::Index e = 0; e < graph.image_features.rows(); ++e) {
    if (!graph.image_imputed[e]) continue;
    Rng rng(seed, Stream::imputation,
            (static_cast<std::uint64_t>(graph_index) << 32) | static_cast<std::uint64_t>(e));
    for (Eigen::Index k = 0; k < dim; ++k) {
      graph.image_features(e, k) = mean(k) + stddev(k) * rng.normal();
    }
  }
}

namespace {

class LineReader {
 public:
  explicit LineReader(const fs::path& path) : path_(path), name_(path.filename().string()) {
    in_.open(path);
    if (!in_) throw LoadError("cannot open " + name_);
  }

  // Next non-empty line; false at EOF.
  bool next(std::string& line) {
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ValidationError(name_ + ":" + std::to_string(line_no_) + ": " + what);
  }

  int parse_id(std::string_view field, int limit, const char* what) const {
    auto v = parse_int(field);
    if (!v) fail(std::string("bad ") + what + " '" + std::string(field) + "'");
    if (*v < 0 || *v >= limit) {
      fail(std::string(what) + " " + std::to_string(*v) + " out of range [0, " +
           std::to_string(limit) + ")");
    }
    return static_cast<int>(*v);
  }

 private:
  fs::path path_;
  std::string name_;
  std::ifstream in_;
  int line_no_ = 0;
};

fs::path require_file(const fs::path& dir, const std::string& name) {
  fs::path p = dir / name;
  if (!fs::is_regular_file(p)) throw LoadError("missing file " + name + " in " + dir.string());
  return p;
}

std::vector<Triple> read_triples(const fs::path& path, int entities, int relations) {
  LineReader reader(path);
  std::vector<Triple> out;
  std::string line;
  while (reader.next(line)) {
    auto f = split(line, '\t');
    if (f.size() != 3) reader.fail("expected 3 tab-separated fields");
    out.push_back({reader.parse_id(f[0], entities, "head id"),
                   reader.parse_id(f[1], relations, "relation id"),
                   reader.parse_id(f[2], entities, "tail id")});
  }
  return out;
}

std::vector<std::vector<int>> read_attributes(const fs::path& path, int entities, int attributes) {
  LineReader reader(path);
  std::vector<std::vector<int>> bags(entities);
  std::vector<bool> seen(entities, false);
  std::string line;
  while (reader.next(line)) {
    auto f = split(line, '\t');
    if (f.size() != 2) reader.fail("expected 2 tab-separated fields");
    const int e = reader.parse_id(f[0], entities, "entity id");
    if (seen[e]) reader.fail("duplicate entity " + std::to_string(e));
    seen[e] = true;
    if (f[1].empty()) continue;
    for (auto item : split(f[1], ',')) bags[e].push_back(reader.parse_id(item, attributes, "attribute id"));
    std::sort(bags[e].begin(), bags[e].end());
    bags[e].erase(std::unique(bags[e].begin(), bags[e].end()), bags[e].end());
  }
  return bags;
}

void read_images(const fs::path& path, Mmkg& graph, int dim) {
  LineReader reader(path);
  graph.image_features = Matrix::Zero(graph.entity_count, dim);
  graph.image_imputed.assign(graph.entity_count, 1);
  std::string line;
  while (reader.next(line)) {
    auto f = split(line, '\t');
    if (f.size() != 2) reader.fail("expected 2 tab-separated fields");
    const int e = reader.parse_id(f[0], graph.entity_count, "entity id");
    if (!graph.image_imputed[e]) reader.fail("duplicate entity " + std::to_string(e));
    int k = 0;
    for (auto item : split(f[1], ' ')) {
      if (item.empty()) continue;
      auto v = parse_double(item);
      if (!v) reader.fail("bad feature value '" + std::string(item) + "'");
      if (!std::isfinite(*v)) reader.fail("non-finite feature value");
      if (k >= dim) reader.fail("more than " + std::to_string(dim) + " feature values");
      graph.image_features(e, k++) = *v;
    }
    if (k != dim) {
      reader.fail("expected " + std::to_string(dim) + " feature values, got " + std::to_string(k));
    }
    graph.image_imputed[e] = 0;
  }
}

std::vector<EntityPair> read_alignments(const fs::path& path, int entities1, int entities2) {
  LineReader reader(path);
  std::vector<EntityPair> out;
  std::set<int> used1, used2;
  std::string line;
  while (reader.next(line)) {
    auto f = split(line, '\t');
    if (f.size() != 2) reader.fail("expected 2 tab-separated fields");
    const int a = reader.parse_id(f[0], entities1, "kg1 entity id");
    const int b = reader.parse_id(f[1], entities2, "kg2 entity id");
    if (!used1.insert(a).second || !used2.insert(b).second) reader.fail("entity appears in more than one pair");
    out.emplace_back(a, b);
  }
  return out;
}

const char* const kRequiredMetaKeys[] = {"entities_1", "relations_1", "entities_2",
                                         "relations_2", "attributes", "image_dim"};

void write_graph_files(const Mmkg& g, const fs::path& dir, int index) {
  const std::string suffix = "_" + std::to_string(index) + ".tsv";
  {
    std::ofstream out(dir / ("triples" + suffix), std::ios::binary);
    for (const auto& t : g.triples) out << t.head << '\t' << t.relation << '\t' << t.tail << '\n';
  }
  {
    std::ofstream out(dir / ("attrs" + suffix), std::ios::binary);
    for (int e = 0; e < g.entity_count; ++e) {
      const auto& bag = g.attribute_bags[e];
      if (bag.empty()) continue;
      out << e << '\t';
      for (std::size_t k = 0; k < bag.size(); ++k) out << (k ? "," : "") << bag[k];
      out << '\n';
    }
  }
  {
    std::ofstream out(dir / ("img_features" + suffix), std::ios::binary);
    for (int e = 0; e < g.entity_count; ++e) {
      if (g.image_imputed[e]) continue;
      out << e << '\t';
      for (Eigen::Index k = 0; k < g.image_features.cols(); ++k) {
        out << (k ? " " : "") << format_double(g.image_features(e, k));
      }
      out << '\n';
    }
  }
}

}  // namespace

MmkgPair load_mmkg_pair(const fs::path& data_dir) {
  if (!fs::is_directory(data_dir)) throw LoadError("not a directory: " + data_dir.string());

  std::map<std::string, std::string> meta;
  {
    LineReader reader(require_file(data_dir, "meta.tsv"));
    std::string line;
    while (reader.next(line)) {
      auto f = split(line, '\t');
      if (f.size() != 2) reader.fail("expected key<TAB>value");
      meta[std::string(f[0])] = std::string(f[1]);
    }
  }
  auto count = [&](const char* key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw ValidationError(std::string("meta.tsv: missing key ") + key);
    auto v = parse_int(it->second);
    if (!v || *v < 0) throw ValidationError(std::string("meta.tsv: bad value for ") + key);
    return static_cast<int>(*v);
  };

  MmkgPair pair;
  const int attributes = count("attributes");
  const int image_dim = count("image_dim");
  Mmkg* graphs[2] = {&pair.kg1, &pair.kg2};
  for (int gi = 0; gi < 2; ++gi) {
    Mmkg& g = *graphs[gi];
    const std::string idx = std::to_string(gi + 1);
    g.entity_count = count(("entities_" + idx).c_str());
    g.relation_count = count(("relations_" + idx).c_str());
    g.attribute_count = attributes;
    g.triples = read_triples(require_file(data_dir, "triples_" + idx + ".tsv"), g.entity_count,
                             g.relation_count);
    if (g.triples.empty()) throw ValidationError("graph " + idx + " has no triples");
    g.attribute_bags =
        read_attributes(require_file(data_dir, "attrs_" + idx + ".tsv"), g.entity_count, attributes);
    read_images(require_file(data_dir, "img_features_" + idx + ".tsv"), g, image_dim);
  }
  pair.alignments = read_alignments(require_file(data_dir, "alignments.tsv"),
                                    pair.kg1.entity_count, pair.kg2.entity_count);

  if (auto it = meta.find("imputation_seed"); it != meta.end()) {
    auto v = parse_int(it->second);
    if (!v || *v < 0) throw ValidationError("meta.tsv: bad value for imputation_seed");
    pair.imputation_seed = static_cast<std::uint64_t>(*v);
  }
  for (const auto& [k, v] : meta) {
    if (k == "imputation_seed" || std::find(std::begin(kRequiredMetaKeys), std::end(kRequiredMetaKeys),
                                            k) != std::end(kRequiredMetaKeys)) {
      continue;
    }
    pair.provenance[k] = v;
  }

  impute_missing_images(pair.kg1, pair.imputation_seed, 1);
  impute_missing_images(pair.kg2, pair.imputation_seed, 2);
  pair.kg1.validate("graph 1");
  pair.kg2.validate("graph 2");
  return pair;
}

void save_mmkg_pair(const MmkgPair& pair, const fs::path& data_dir) {
  fs::create_directories(data_dir);
  {
    std::ofstream out(data_dir / "meta.tsv", std::ios::binary);
    out << "entities_1\t" << pair.kg1.entity_count << '\n'
        << "relations_1\t" << pair.kg1.relation_count << '\n'
        << "entities_2\t" << pair.kg2.entity_count << '\n'
        << "relations_2\t" << pair.kg2.relation_count << '\n'
        << "attributes\t" << pair.kg1.attribute_count << '\n'
        << "image_dim\t" << pair.kg1.image_dim() << '\n'
        << "imputation_seed\t" << pair.imputation_seed << '\n';
    for (const auto& [k, v] : pair.provenance) out << k << '\t' << v << '\n';
  }
  write_graph_files(pair.kg1, data_dir, 1);
  write_graph_files(pair.kg2, data_dir, 2);
  std::ofstream out(data_dir / "alignments.tsv", std::ios::binary);
  for (const auto& [a, b] : pair.alignments) out << a << '\t' << b << '\n';
}

std::vector<EntityPair> read_entity_pairs(const fs::path& path) {
  constexpr int unbounded = std::numeric_limits<int>::max();
  return read_alignments(path, unbounded, unbounded);
}

void write_entity_pairs(std::span<const EntityPair> pairs, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write " + path.string());
  for (const auto& [a, b] : pairs) out << a << '\t' << b << '\n';
}

SeedAlignments split_seed_alignments(const std::vector<EntityPair>& all_pairs, double seed_ratio,
                                     std::uint64_t rng_seed) {
  if (!(seed_ratio > 0.0 && seed_ratio < 1.0)) {
    throw ArgumentError("seed ratio must lie in (0, 1), got " + format_double(seed_ratio));
  }
  if (all_pairs.empty()) throw ArgumentError("no alignment pairs to split");
  std::set<EntityId> left, right;
  for (const auto& [a, b] : all_pairs) {
    if (!left.insert(a).second || !right.insert(b).second) {
      throw ArgumentError("entity appears in more than one alignment pair");
    }
  }
  std::vector<EntityPair> shuffled = all_pairs;
  Rng rng(rng_seed, Stream::split);
  rng.shuffle(shuffled);
  const auto n_train = static_cast<std::size_t>(std::llround(seed_ratio * static_cast<double>(shuffled.size())));
  SeedAlignments out;
  out.seed_ratio = seed_ratio;
  out.train_pairs.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.test_pairs.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_train), shuffled.end());
  return out;
}

void SyntheticSpec::validate() const {
  if (entity_count < 2) throw ArgumentError("synthetic spec: entity_count must be >= 2");
  if (triple_count < 1) throw ArgumentError("synthetic spec: triple_count must be >= 1");
  if (relation_count < 1) throw ArgumentError("synthetic spec: relation_count must be >= 1");
  if (attribute_count < 1) throw ArgumentError("synthetic spec: attribute_count must be >= 1");
  if (attributes_per_entity < 0) throw ArgumentError("synthetic spec: attributes_per_entity < 0");
  if (image_dim < 2) throw ArgumentError("synthetic spec: image_dim must be >= 2");
  auto half_open = [](double v, const char* what) {
    if (!(v >= 0.0 && v < 1.0)) throw ArgumentError(std::string("synthetic spec: ") + what + " must lie in [0, 1)");
  };
  auto closed = [](double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError(std::string("synthetic spec: ") + what + " must lie in [0, 1]");
  };
  half_open(edge_dropout, "edge_dropout");
  half_open(attribute_noise, "attribute_noise");
  closed(visual_bias, "visual_bias");
  closed(image_noise_rate, "image_noise_rate");
  const double max_triples = static_cast<double>(entity_count) * (entity_count - 1) * relation_count;
  if (triple_count > max_triples) throw ArgumentError("synthetic spec: more triples than distinct (h, r, t) slots");
}

std::map<std::string, std::string> SyntheticSpec::to_provenance() const {
  return {
      {"gen.entities", std::to_string(entity_count)},
      {"gen.relations", std::to_string(relation_count)},
      {"gen.triples", std::to_string(triple_count)},
      {"gen.attributes", std::to_string(attribute_count)},
      {"gen.attributes_per_entity", std::to_string(attributes_per_entity)},
      {"gen.image_dim", std::to_string(image_dim)},
      {"gen.edge_dropout", format_double(edge_dropout)},
      {"gen.attribute_noise", format_double(attribute_noise)},
      {"gen.visual_bias", format_double(visual_bias)},
      {"gen.image_noise", format_double(image_noise_rate)},
      {"gen.seed", std::to_string(seed)},
  };
}

SyntheticSpec SyntheticSpec::from_provenance(const std::map<std::string, std::string>& meta) {
  auto get = [&](const char* key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw ArgumentError(std::string("dataset has no generator key ") + key);
    return it->second;
  };
  auto get_int = [&](const char* key) {
    auto v = parse_int(get(key));
    if (!v) throw ArgumentError(std::string("bad generator value for ") + key);
    return *v;
  };
  auto get_double = [&](const char* key) {
    auto v = parse_double(get(key));
    if (!v) throw ArgumentError(std::string("bad generator value for ") + key);
    return *v;
  };
  SyntheticSpec s;
  s.entity_count = static_cast<int>(get_int("gen.entities"));
  s.relation_count = static_cast<int>(get_int("gen.relations"));
  s.triple_count = static_cast<int>(get_int("gen.triples"));
  s.attribute_count = static_cast<int>(get_int("gen.attributes"));
  s.attributes_per_entity = static_cast<int>(get_int("gen.attributes_per_entity"));
  s.image_dim = static_cast<int>(get_int("gen.image_dim"));
  s.edge_dropout = get_double("gen.edge_dropout");
  s.attribute_noise = get_double("gen.attribute_noise");
  s.visual_bias = get_double("gen.visual_bias");
  s.image_noise_rate = get_double("gen.image_noise");
  s.seed = static_cast<std::uint64_t>(get_int("gen.seed"));
  return s;
}

namespace {

// Unit vector orthogonal to `unit`, drawn at random.
Vector random_orthogonal_unit(const Vector& unit, Rng& rng) {
  while (true) {
    Vector r(unit.size());
    for (Eigen::Index k = 0; k < r.size(); ++k) r(k) = rng.normal();
    r -= r.dot(unit) * unit;
    const double n = r.norm();
    if (n > 1e-6) return r / n;
  }
}

std::vector<int> pick_fraction(int count, double fraction, Rng& rng) {
  std::vector<int> ids(count);
  for (int i = 0; i < count; ++i) ids[i] = i;
  rng.shuffle(ids);
  ids.resize(static_cast<std::size_t>(std::llround(fraction * count)));
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

MmkgPair generate_synthetic_pair(const SyntheticSpec& spec) {
  spec.validate();
  const int n = spec.entity_count;

  MmkgPair pair;
  pair.imputation_seed = spec.seed;
  pair.provenance = spec.to_provenance();

  Mmkg& kg1 = pair.kg1;
  kg1.entity_count = n;
  kg1.relation_count = spec.relation_count;
  kg1.attribute_count = spec.attribute_count;
  {
    Rng rng(spec.seed, Stream::generator_graph);
    std::set<Triple> triples;
    while (static_cast<int>(triples.size()) < spec.triple_count) {
      Triple t;
      t.head = static_cast<int>(rng.below(n));
      t.relation = static_cast<int>(rng.below(spec.relation_count));
      t.tail = static_cast<int>(rng.below(n - 1));
      if (t.tail >= t.head) ++t.tail;
      triples.insert(t);
    }
    kg1.triples.assign(triples.begin(), triples.end());

    const int per_entity = std::min(spec.attributes_per_entity, spec.attribute_count);
    kg1.attribute_bags.resize(n);
    for (int e = 0; e < n; ++e) {
      std::set<int> bag;
      while (static_cast<int>(bag.size()) < per_entity) bag.insert(static_cast<int>(rng.below(spec.attribute_count)));
      kg1.attribute_bags[e].assign(bag.begin(), bag.end());
    }
  }
  {
    Rng rng(spec.seed, Stream::generator_visual);
    kg1.image_features.resize(n, spec.image_dim);
    for (int e = 0; e < n; ++e) {
      for (int k = 0; k < spec.image_dim; ++k) kg1.image_features(e, k) = rng.normal();
    }
  }
  kg1.image_imputed.assign(n, 0);

  Mmkg& kg2 = pair.kg2;
  kg2 = kg1;
  {
    Rng rng(spec.seed, Stream::generator_perturb);
    if (spec.edge_dropout > 0.0) {
      std::vector<Triple> kept;
      for (const auto& t : kg1.triples) {
        if (!rng.bernoulli(spec.edge_dropout)) kept.push_back(t);
      }
      kg2.triples = std::move(kept);
    }
    if (spec.attribute_noise > 0.0) {
      for (int e = 0; e < n; ++e) {
        std::vector<bool> bits(spec.attribute_count, false);
        for (int a : kg1.attribute_bags[e]) bits[a] = true;
        for (int a = 0; a < spec.attribute_count; ++a) {
          if (rng.bernoulli(spec.attribute_noise)) bits[a] = !bits[a];
        }
        kg2.attribute_bags[e].clear();
        for (int a = 0; a < spec.attribute_count; ++a) {
          if (bits[a]) kg2.attribute_bags[e].push_back(a);
        }
      }
    }
  }
  {
    Rng rng(spec.seed, Stream::generator_visual, 2);
    const double residual = kAdversarialCosine;
    const double orthogonal = std::sqrt(1.0 - residual * residual);
    for (int e : pick_fraction(n, spec.visual_bias, rng)) {
      const Vector v1 = kg1.image_features.row(e).transpose();
      const double scale = v1.norm();
      const Vector unit = v1 / scale;
      const Vector ortho = random_orthogonal_unit(unit, rng);
      kg2.image_features.row(e) = (scale * (residual * unit + orthogonal * ortho)).transpose();
    }
  }
  Mmkg* graphs[2] = {&kg1, &kg2};
  for (int gi = 0; gi < 2; ++gi) {
    Rng rng(spec.seed, Stream::generator_noise, static_cast<std::uint64_t>(gi + 1));
    auto noised = pick_fraction(n, spec.image_noise_rate, rng);
    for (int e : noised) graphs[gi]->image_imputed[e] = 1;
    if (!noised.empty()) impute_missing_images(*graphs[gi], pair.imputation_seed, gi + 1);
  }

  pair.alignments.reserve(n);
  for (int e = 0; e < n; ++e) pair.alignments.emplace_back(e, e);
  return pair;
}

std::optional<std::size_t> published_pair_count(std::string_view dataset_name) {
  if (dataset_name == "FB-DB15K") return 128486;
  if (dataset_name == "FB-YG15K") return 11199;
  return std::nullopt;
}

SelfCheckReport self_check(const MmkgPair& pair) {
  SelfCheckReport report;
  report.pair_count = pair.alignments.size();
  if (auto it = pair.provenance.find("dataset"); it != pair.provenance.end()) {
    report.dataset_name = it->second;
    report.expected_pair_count = published_pair_count(it->second);
  }
  std::ostringstream msg;
  msg << (report.dataset_name.empty() ? "dataset" : report.dataset_name) << ": "
      << report.pair_count << " labeled pairs";
  if (report.expected_pair_count) {
    report.passed = report.pair_count == *report.expected_pair_count;
    msg << " (expected " << *report.expected_pair_count << ")";
  }
  report.message = msg.str();
  return report;
}

}  // namespace cdmea
