#include "cdmea/error.hpp"
#include "cdmea/evaluation.hpp"
#include "cdmea/mmkg.hpp"
#include "cdmea/rrgat.hpp"
#include "cdmea/scoring.hpp"
#include "cdmea/training.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace cdmea;

namespace {

TrainConfig config_from(const py::dict& d) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : d) {
    const auto key = py::cast<std::string>(k);
    if (py::isinstance<py::bool_>(v)) {
      j[key] = v.cast<bool>();
    } else if (py::isinstance<py::int_>(v)) {
      j[key] = v.cast<std::int64_t>();
    } else {
      j[key] = v.cast<double>();
    }
  }
  return TrainConfig::from_json(j);
}

py::dict to_dict(const Metrics& m) {
  py::dict d;
  d["h_at_1"] = m.h_at_1;
  d["h_at_10"] = m.h_at_10;
  d["mrr"] = m.mrr;
  d["pair_count"] = m.pair_count;
  d["direction"] = to_string(m.direction);
  return d;
}

py::array_t<int> triples_array(const Mmkg& g) {
  py::array_t<int> out({static_cast<py::ssize_t>(g.triples.size()), py::ssize_t{3}});
  auto a = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < g.triples.size(); ++i) {
    a(i, 0) = g.triples[i].head;
    a(i, 1) = g.triples[i].relation;
    a(i, 2) = g.triples[i].tail;
  }
  return out;
}

EvalOptions eval_options(double beta, const std::string& target, const std::string& candidates, bool average) {
  EvalOptions o;
  o.beta = beta;
  o.target = parse_debias_target(target);
  o.candidates = parse_candidate_set(candidates);
  o.average_directions = average;
  return o;
}

}  // namespace

PYBIND11_MODULE(_cdmea, m) {
  m.doc() = "Multi-modal entity alignment with counterfactual debiasing";
  m.attr("__version__") = CDMEA_VERSION;

  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<LoadError>(m, "LoadError", PyExc_OSError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

  py::class_<Mmkg>(m, "Graph")
      .def_readonly("entity_count", &Mmkg::entity_count)
      .def_readonly("relation_count", &Mmkg::relation_count)
      .def_readonly("attribute_count", &Mmkg::attribute_count)
      .def_readonly("attribute_bags", &Mmkg::attribute_bags)
      .def_property_readonly("triples", &triples_array)
      .def_property_readonly("image_features", [](const Mmkg& g) -> Matrix { return g.image_features; })
      .def_property_readonly("image_imputed", [](const Mmkg& g) {
        return std::vector<bool>(g.image_imputed.begin(), g.image_imputed.end());
      });

  py::class_<MmkgPair>(m, "GraphPair")
      .def_readonly("kg1", &MmkgPair::kg1)
      .def_readonly("kg2", &MmkgPair::kg2)
      .def_readonly("alignments", &MmkgPair::alignments)
      .def_readonly("provenance", &MmkgPair::provenance)
      .def("save", [](const MmkgPair& p, const std::filesystem::path& dir) { save_mmkg_pair(p, dir); })
      .def("__eq__", [](const MmkgPair& a, const MmkgPair& b) { return a == b; });

  m.def("load_dataset", &load_mmkg_pair, py::arg("path"));
  m.def(
      "generate",
      [](int entities, int relations, int triples, int attributes, int attributes_per_entity, int image_dim,
         double edge_dropout, double attribute_noise, double visual_bias, double image_noise_rate,
         std::uint64_t seed) {
        SyntheticSpec s;
        s.entity_count = entities;
        s.relation_count = relations;
        s.triple_count = triples;
        s.attribute_count = attributes;
        s.attributes_per_entity = attributes_per_entity;
        s.image_dim = image_dim;
        s.edge_dropout = edge_dropout;
        s.attribute_noise = attribute_noise;
        s.visual_bias = visual_bias;
        s.image_noise_rate = image_noise_rate;
        s.seed = seed;
        return generate_synthetic_pair(s);
      },
      py::arg("entities") = 100, py::arg("relations") = 8, py::arg("triples") = 300, py::arg("attributes") = 64,
      py::arg("attributes_per_entity") = 4, py::arg("image_dim") = 64, py::arg("edge_dropout") = 0.0,
      py::arg("attribute_noise") = 0.0, py::arg("visual_bias") = 0.0, py::arg("image_noise_rate") = 0.0,
      py::arg("seed") = 0);
  m.def(
      "split_seeds",
      [](const std::vector<EntityPair>& pairs, double ratio, std::uint64_t seed) {
        const auto s = split_seed_alignments(pairs, ratio, seed);
        return py::make_tuple(s.train_pairs, s.test_pairs);
      },
      py::arg("pairs"), py::arg("seed_ratio"), py::arg("seed"));

  m.def("reflection_matrix", [](const Vector& h) { return reflection_matrix(h); }, py::arg("relation"));

  m.def(
      "causal_scores",
      [](double y_v, double y_g, double y_m, std::array<double, 3> phi, double beta, const std::string& target) {
        FusionParams f;
        f.logits = phi;
        const auto s = causal_scores({y_v, y_g, y_m}, f, beta, parse_debias_target(target));
        py::dict d;
        d["factual"] = s.factual;
        d["counterfactual"] = s.counterfactual;
        d["te"] = s.te;
        d["nde"] = s.nde;
        d["tie"] = s.tie;
        return d;
      },
      py::arg("y_v"), py::arg("y_g"), py::arg("y_m"), py::arg("phi") = std::array<double, 3>{0, 0, 0},
      py::arg("beta") = 0.2, py::arg("target") = "visual");
  m.def(
      "debias_scores",
      [](const Matrix& y_v, const Matrix& y_g, const Matrix& y_m, std::array<double, 3> phi, double beta,
         const std::string& target) {
        if (y_v.rows() != y_g.rows() || y_v.rows() != y_m.rows() || y_v.cols() != y_g.cols() ||
            y_v.cols() != y_m.cols()) {
          throw ArgumentError("debias_scores: branch score matrices differ in shape");
        }
        FusionParams f;
        f.logits = phi;
        const DebiasTarget t = parse_debias_target(target);
        Matrix te(y_v.rows(), y_v.cols()), nde(y_v.rows(), y_v.cols()), tie(y_v.rows(), y_v.cols());
        for (Eigen::Index i = 0; i < y_v.rows(); ++i) {
          for (Eigen::Index j = 0; j < y_v.cols(); ++j) {
            const auto s = causal_scores({y_v(i, j), y_g(i, j), y_m(i, j)}, f, beta, t);
            te(i, j) = s.te;
            nde(i, j) = s.nde;
            tie(i, j) = s.tie;
          }
        }
        return py::make_tuple(te, nde, tie);
      },
      "Element-wise TE, NDE and TIE for externally produced per-branch score matrices.", py::arg("y_v"),
      py::arg("y_g"), py::arg("y_m"), py::arg("phi") = std::array<double, 3>{0, 0, 0}, py::arg("beta") = 0.2,
      py::arg("target") = "visual");

  m.def(
      "rank",
      [](const std::vector<double>& scores, const std::vector<EntityId>& ids, EntityId truth) {
        return rank_candidates(scores, ids, truth);
      },
      py::arg("scores"), py::arg("candidate_ids"), py::arg("truth"));
  m.def(
      "metrics", [](const std::vector<int>& ranks) { return to_dict(compute_metrics(ranks)); }, py::arg("ranks"));
  m.def(
      "infonce_loss",
      [](const std::vector<double>& scores, std::size_t positive, double temperature, bool exclude_positive) {
        return infonce_loss(scores, positive, temperature, {}, exclude_positive);
      },
      py::arg("scores"), py::arg("positive"), py::arg("temperature") = 0.1, py::arg("exclude_positive") = false);

  m.def("default_config", [] { return py::module_::import("json").attr("loads")(TrainConfig{}.to_json().dump()); });

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_readonly("epoch", &Checkpoint::epoch)
      .def_readonly("config_hash", &Checkpoint::config_hash)
      .def_property_readonly("config",
                             [](const Checkpoint& c) {
                               return py::module_::import("json").attr("loads")(c.config.to_json().dump());
                             })
      .def_property_readonly("fusion_weights", [](const Checkpoint& c) { return c.model.fusion.weights(); })
      .def("save", [](const Checkpoint& c, const std::filesystem::path& p) { save_checkpoint(c, p); })
      .def(
          "evaluate",
          [](const Checkpoint& c, const MmkgPair& data, const std::vector<EntityPair>& test_pairs,
             std::optional<double> beta, const std::string& target, const std::string& candidates, bool average) {
            const auto enc = encode_pair(c.model, data);
            const auto o = eval_options(beta.value_or(c.config.beta), target, candidates, average);
            return to_dict(evaluate_alignment(enc.kg1, enc.kg2, c.model.fusion, test_pairs, test_pairs, o));
          },
          py::arg("data"), py::arg("test_pairs"), py::arg("beta") = py::none(), py::arg("target") = "visual",
          py::arg("candidates") = "test", py::arg("average_directions") = false);
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  m.def(
      "train",
      [](const MmkgPair& data, const std::vector<EntityPair>& train_pairs, const py::dict& config,
         const std::function<void(int, double, double)>& on_epoch) {
        SeedAlignments seeds;
        seeds.train_pairs = train_pairs;
        const TrainConfig c = config_from(config);
        std::function<void(const EpochRecord&)> hook;
        if (on_epoch) hook = [&](const EpochRecord& r) { on_epoch(r.epoch, r.loss, r.val_h1); };
        TrainResult result;
        if (hook) {
          result = train(data, seeds, c, hook);
        } else {
          py::gil_scoped_release release;
          result = train(data, seeds, c);
        }
        py::list trace;
        for (const auto& r : result.trace) trace.append(py::make_tuple(r.epoch, r.loss, r.val_h1));
        return py::make_tuple(result.checkpoint, trace);
      },
      "Trains on `train_pairs`; `config` holds TrainConfig keys. Returns (checkpoint, trace).", py::arg("data"),
      py::arg("train_pairs"), py::arg("config") = py::dict(), py::arg("on_epoch") = nullptr);
}
