#include "cdmea/evaluation.hpp"

#include "cdmea/error.hpp"
#include "cdmea/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace cdmea {

EncodedPair encode_pair(const CdmeaModel& model, const MmkgPair& data) {
  const int relation_space = data.relation_space();
  const auto in1 = GraphInputs::build(data.kg1, relation_space);
  const auto in2 = GraphInputs::build(data.kg2, relation_space);
  return {encode(model, in1), encode(model, in2)};
}

std::vector<EntityPair> pairs_with_imputed_images(const MmkgPair& data, std::span<const EntityPair> pairs) {
  std::vector<EntityPair> out;
  for (const auto& p : pairs) {
    if (data.kg1.image_imputed[p.first] || data.kg2.image_imputed[p.second]) out.push_back(p);
  }
  return out;
}

std::vector<double> default_bucket_edges() { return {-1.0, 0.3, 0.5, 1.0}; }

BucketReport bucket_report(std::span<const EntityPair> test_pairs, const Mmkg& kg1, const Mmkg& kg2,
                           const std::function<Metrics(std::span<const EntityPair>)>& metrics_fn,
                           std::span<const double> edges) {
  std::vector<double> e = edges.empty() ? default_bucket_edges() : std::vector<double>(edges.begin(), edges.end());
  if (e.size() < 2 || e.front() != -1.0 || e.back() != 1.0 || !std::is_sorted(e.begin(), e.end()) ||
      std::adjacent_find(e.begin(), e.end()) != e.end()) {
    throw ArgumentError("bucket edges must increase strictly from -1 to 1");
  }
  const std::size_t count = e.size() - 1;
  std::vector<std::vector<EntityPair>> members(count);
  std::vector<std::size_t> imputed(count, 0);
  for (const auto& p : test_pairs) {
    double sim = cosine_similarity(kg1.image_features.row(p.first).transpose(),
                                   kg2.image_features.row(p.second).transpose());
    sim = std::clamp(sim, -1.0, 1.0);
    std::size_t b = static_cast<std::size_t>(std::upper_bound(e.begin(), e.end(), sim) - e.begin());
    b = std::min(std::max<std::size_t>(b, 1), count) - 1;
    members[b].push_back(p);
    if (kg1.image_imputed[p.first] || kg2.image_imputed[p.second]) ++imputed[b];
  }
  BucketReport report;
  for (std::size_t b = 0; b < count; ++b) {
    Bucket bucket;
    bucket.lower = e[b];
    bucket.upper = e[b + 1];
    bucket.pair_count = members[b].size();
    bucket.imputed_count = imputed[b];
    if (!members[b].empty()) bucket.metrics = metrics_fn(members[b]);
    report.buckets.push_back(bucket);
  }
  return report;
}

std::vector<BetaSweepRow> beta_sweep(const EncodedPair& embeddings, const FusionParams& fusion,
                                     std::span<const EntityPair> test_pairs, std::span<const double> betas,
                                     const EvalOptions& options) {
  for (double beta : betas) {
    if (!(beta >= 0.0 && beta < 1.0)) throw ArgumentError("beta sweep values must lie in [0, 1)");
  }
  std::vector<BetaSweepRow> rows;
  for (double beta : betas) {
    EvalOptions o = options;
    o.beta = beta;
    rows.push_back({beta, evaluate_alignment(embeddings.kg1, embeddings.kg2, fusion, test_pairs, test_pairs, o)});
  }
  return rows;
}

std::vector<BetaSweepRow> beta_sweep(const Checkpoint& checkpoint, const MmkgPair& data,
                                     std::span<const EntityPair> test_pairs, std::span<const double> betas,
                                     const EvalOptions& options) {
  return beta_sweep(encode_pair(checkpoint.model, data), checkpoint.model.fusion, test_pairs, betas, options);
}

DebiasComparison compare_debiasing(const EncodedPair& embeddings, const FusionParams& fusion, const MmkgPair& data,
                                   std::span<const EntityPair> test_pairs, const EvalOptions& options) {
  EvalOptions te_options = options;
  te_options.beta = 0.0;
  DebiasComparison out;
  out.te = evaluate_alignment(embeddings.kg1, embeddings.kg2, fusion, test_pairs, test_pairs, te_options);
  out.tie = evaluate_alignment(embeddings.kg1, embeddings.kg2, fusion, test_pairs, test_pairs, options);
  const auto noised = pairs_with_imputed_images(data, test_pairs);
  if (!noised.empty()) {
    out.te_noised = evaluate_alignment(embeddings.kg1, embeddings.kg2, fusion, noised, test_pairs, te_options);
    out.tie_noised = evaluate_alignment(embeddings.kg1, embeddings.kg2, fusion, noised, test_pairs, options);
  }
  return out;
}

std::vector<NoiseSweepRow> noise_sweep(const SyntheticSpec& spec_template, std::span<const double> rates,
                                       const TrainConfig& config, const EvalOptions& options) {
  for (double rate : rates) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw ArgumentError("noise rates must lie in [0, 1]");
  }
  std::vector<NoiseSweepRow> rows;
  for (double rate : rates) {
    SyntheticSpec spec = spec_template;
    spec.image_noise_rate = rate;
    const MmkgPair data = generate_synthetic_pair(spec);
    const auto seeds = split_seed_alignments(data.alignments, config.seed_ratio, config.seed);
    const auto trained = train(data, seeds, config);
    const auto& model = trained.checkpoint.model;
    rows.push_back({rate, compare_debiasing(encode_pair(model, data), model.fusion, data, seeds.test_pairs, options)});
  }
  return rows;
}

std::vector<LowResourceRow> low_resource_sweep(const MmkgPair& data, std::span<const double> seed_ratios,
                                               const TrainConfig& config, const EvalOptions& options) {
  std::vector<LowResourceRow> rows;
  for (double ratio : seed_ratios) {
    TrainConfig c = config;
    c.seed_ratio = ratio;
    const auto seeds = split_seed_alignments(data.alignments, ratio, c.seed);
    const auto trained = train(data, seeds, c);
    const auto& model = trained.checkpoint.model;
    rows.push_back({ratio, compare_debiasing(encode_pair(model, data), model.fusion, data, seeds.test_pairs, options)});
  }
  return rows;
}

void write_metrics_tsv(const Metrics& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << "h_at_1\t" << format_double(m.h_at_1) << '\n'
      << "h_at_10\t" << format_double(m.h_at_10) << '\n'
      << "mrr\t" << format_double(m.mrr) << '\n'
      << "pair_count\t" << m.pair_count << '\n'
      << "direction\t" << to_string(m.direction) << '\n';
}

std::string format_metrics_table(const Metrics& m) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);
  out << "direction  " << to_string(m.direction) << "\n"
      << "pairs      " << m.pair_count << "\n"
      << "H@1        " << m.h_at_1 << "\n"
      << "H@10       " << m.h_at_10 << "\n"
      << "MRR        " << m.mrr << "\n";
  return out.str();
}

namespace {

std::string metric_cells(const std::optional<Metrics>& m) {
  if (!m) return "nan\tnan\tnan";
  return format_double(m->h_at_1) + "\t" + format_double(m->h_at_10) + "\t" + format_double(m->mrr);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write " + path.string());
  return out;
}

}  // namespace

void write_bucket_tsv(const BucketReport& report, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "lower\tupper\tpair_count\timputed_count\th_at_1\th_at_10\tmrr\n";
  for (const auto& b : report.buckets) {
    out << format_double(b.lower) << '\t' << format_double(b.upper) << '\t' << b.pair_count << '\t'
        << b.imputed_count << '\t' << metric_cells(b.metrics) << '\n';
  }
}

void write_beta_sweep_tsv(std::span<const BetaSweepRow> rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "beta\th_at_1\th_at_10\tmrr\n";
  for (const auto& r : rows) out << format_double(r.beta) << '\t' << metric_cells(r.metrics) << '\n';
}

void write_noise_sweep_tsv(std::span<const NoiseSweepRow> rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "rate\tte_h_at_1\tte_h_at_10\tte_mrr\ttie_h_at_1\ttie_h_at_10\ttie_mrr"
         "\tnoised_te_h_at_1\tnoised_te_h_at_10\tnoised_te_mrr\tnoised_tie_h_at_1\tnoised_tie_h_at_10\tnoised_tie_mrr\n";
  for (const auto& r : rows) {
    out << format_double(r.rate) << '\t' << metric_cells(r.result.te) << '\t' << metric_cells(r.result.tie) << '\t'
        << metric_cells(r.result.te_noised) << '\t' << metric_cells(r.result.tie_noised) << '\n';
  }
}

void write_low_resource_tsv(std::span<const LowResourceRow> rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "seed_ratio\tte_h_at_1\tte_h_at_10\tte_mrr\ttie_h_at_1\ttie_h_at_10\ttie_mrr\n";
  for (const auto& r : rows) {
    out << format_double(r.seed_ratio) << '\t' << metric_cells(r.result.te) << '\t' << metric_cells(r.result.tie)
        << '\n';
  }
}

void write_line_chart_svg(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                          std::span<const ChartSeries> series) {
  constexpr double width = 480, height = 320, left = 56, right = 16, top = 32, bottom = 48;
  double x_min = INFINITY, x_max = -INFINITY;
  for (const auto& s : series) {
    for (double x : s.x) {
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
    }
  }
  if (!std::isfinite(x_min)) x_min = 0, x_max = 1;
  if (x_max == x_min) x_max = x_min + 1;
  auto px = [&](double x) { return left + (x - x_min) / (x_max - x_min) * (width - left - right); };
  auto py = [&](double y) { return top + (1.0 - std::clamp(y, 0.0, 1.0)) * (height - top - bottom); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"};

  auto out = open_out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n"
      << "<line x1=\"" << left << "\" y1=\"" << py(0) << "\" x2=\"" << width - right << "\" y2=\"" << py(0)
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << left << "\" y1=\"" << py(0) << "\" x2=\"" << left << "\" y2=\"" << py(1)
      << "\" stroke=\"black\"/>\n";
  for (double tick : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    out << "<text x=\"" << left - 6 << "\" y=\"" << py(tick) + 4 << "\" text-anchor=\"end\" font-size=\"10\">"
        << tick << "</text>\n";
  }
  out << "<text x=\"" << left << "\" y=\"" << height - 28 << "\" font-size=\"10\">" << format_double(x_min)
      << "</text>\n<text x=\"" << width - right << "\" y=\"" << height - 28
      << "\" text-anchor=\"end\" font-size=\"10\">" << format_double(x_max) << "</text>\n"
      << "<text x=\"" << width / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\" font-size=\"12\">"
      << x_label << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = colors[k % 5];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) out << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    out << "\"/>\n<text x=\"" << width - right - 4 << "\" y=\"" << top + 14 * (k + 1)
        << "\" text-anchor=\"end\" font-size=\"10\" fill=\"" << color << "\">" << s.label << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace cdmea
