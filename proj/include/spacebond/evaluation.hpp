#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spacebond/fused.hpp"

namespace spacebond::eval {

struct RetrievalTask {
  Matrix queries;
  Matrix gallery;
  std::vector<std::vector<std::size_t>> relevant;  // per query, indices into gallery
  std::vector<std::size_t> ks = {1, 5};

  /// Ground truth by id equality: query i matches the gallery row with its id.
  static RetrievalTask by_id(const EmbeddingMatrix& q, const EmbeddingMatrix& g, std::vector<std::size_t> ks = {1, 5}) {
    RetrievalTask t{q.data(), g.data(), {}, std::move(ks)};
    t.relevant.resize(q.n());
    for (std::size_t i = 0; i < q.n(); ++i) {
      if (auto r = g.find(q.ids()[i])) t.relevant[i].push_back(*r);
    }
    return t;
  }

  /// Ground truth from (query id, gallery id) pairs.
  static RetrievalTask from_pairs(const EmbeddingMatrix& q, const EmbeddingMatrix& g,
                                  const std::vector<std::pair<std::string, std::string>>& pairs,
                                  std::vector<std::size_t> ks = {1, 5}) {
    RetrievalTask t{q.data(), g.data(), {}, std::move(ks)};
    t.relevant.resize(q.n());
    for (const auto& [qid, gid] : pairs) {
      auto qi = q.find(qid);
      auto gi = g.find(gid);
      if (!qi || !gi) continue;
      auto& rel = t.relevant[*qi];
      if (std::find(rel.begin(), rel.end(), *gi) == rel.end()) rel.push_back(*gi);
    }
    return t;
  }
};

/// Single-label tasks fill `labels`; multi-label tasks fill `label_sets`.
struct ClassificationTask {
  Matrix samples;
  Matrix prototypes;  // one row per class
  std::vector<std::size_t> labels;
  std::vector<std::vector<std::size_t>> label_sets;

  bool multi_label() const { return !label_sets.empty(); }
};

namespace detail {

/// Position of gallery item g in the descending ranking of `scores`, ties
/// broken by lower index first.
inline std::size_t rank_of(std::span<const float> scores, std::size_t g) {
  std::size_t r = 0;
  const float s = scores[g];
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > s || (scores[j] == s && j < g)) ++r;
  }
  return r;
}

inline std::size_t argmax_lowest(std::span<const float> scores) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < scores.size(); ++j) {
    if (scores[j] > scores[best]) best = j;
  }
  return best;
}

}  // namespace detail

inline std::map<std::size_t, double> recall_at_k(const RetrievalTask& task) {
  if (task.gallery.rows() == 0) throw SpaceBondError("recall_at_k: empty gallery");
  if (task.relevant.size() != task.queries.rows()) throw SpaceBondError("recall_at_k: ground truth size mismatch");
  for (std::size_t k : task.ks) {
    if (k == 0) throw SpaceBondError("recall_at_k: k must be positive");
  }
  const Matrix sim = cosine_similarity(task.queries, task.gallery);
  std::map<std::size_t, std::size_t> hits;
  for (std::size_t k : task.ks) hits[k] = 0;
  for (std::size_t i = 0; i < sim.rows(); ++i) {
    if (task.relevant[i].empty()) throw SpaceBondError("recall_at_k: query " + std::to_string(i) + " has no match");
    std::size_t best = sim.cols();
    for (std::size_t g : task.relevant[i]) best = std::min(best, detail::rank_of(sim.row(i), g));
    for (auto& [k, h] : hits) h += best < k ? 1 : 0;
  }
  std::map<std::size_t, double> out;
  for (const auto& [k, h] : hits) out[k] = static_cast<double>(h) / static_cast<double>(sim.rows());
  return out;
}

inline std::vector<std::size_t> predict(const ClassificationTask& task) {
  const Matrix sim = cosine_similarity(task.samples, task.prototypes);
  std::vector<std::size_t> pred(sim.rows());
  for (std::size_t i = 0; i < sim.rows(); ++i) pred[i] = detail::argmax_lowest(sim.row(i));
  return pred;
}

inline double zero_shot_accuracy(const ClassificationTask& task) {
  if (task.multi_label()) throw SpaceBondError("zero_shot_accuracy: multi-label task");
  if (task.prototypes.rows() < 2) throw SpaceBondError("classification needs at least two classes");
  if (task.labels.size() != task.samples.rows()) throw SpaceBondError("zero_shot_accuracy: label count mismatch");
  if (task.samples.rows() == 0) throw SpaceBondError("zero_shot_accuracy: no samples");
  const auto pred = predict(task);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (task.labels[i] >= task.prototypes.rows()) throw SpaceBondError("label index out of range");
    correct += pred[i] == task.labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

/// Mean over classes (with at least one positive) of non-interpolated AP.
inline double mean_average_precision(const ClassificationTask& task) {
  if (!task.multi_label()) throw SpaceBondError("mean_average_precision: single-label task");
  if (task.prototypes.rows() < 2) throw SpaceBondError("classification needs at least two classes");
  if (task.label_sets.size() != task.samples.rows()) throw SpaceBondError("mean_average_precision: label count mismatch");
  const std::size_t n = task.samples.rows();
  const std::size_t c = task.prototypes.rows();
  const Matrix sim = cosine_similarity(task.samples, task.prototypes);

  std::vector<std::vector<bool>> positive(c, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l : task.label_sets[i]) {
      if (l >= c) throw SpaceBondError("label index out of range");
      positive[l][i] = true;
    }
  }
  double sum = 0.0;
  std::size_t classes = 0;
  std::vector<std::size_t> order(n);
  for (std::size_t k = 0; k < c; ++k) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sim(a, k) > sim(b, k); });
    std::size_t seen = 0;
    double ap = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      if (positive[k][order[r]]) {
        ++seen;
        ap += static_cast<double>(seen) / static_cast<double>(r + 1);
      }
    }
    if (seen == 0) continue;
    sum += ap / static_cast<double>(seen);
    ++classes;
  }
  if (classes == 0) throw SpaceBondError("mean_average_precision: no class has a positive");
  return sum / static_cast<double>(classes);
}

// ---------------------------------------------------------------------------
// Composite evaluation.

/// task name → metric name → value.
struct MetricReport {
  std::map<std::string, std::map<std::string, double>> tasks;

  double at(const std::string& task, const std::string& metric) const {
    auto t = tasks.find(task);
    if (t == tasks.end()) throw SpaceBondError("report has no task '" + task + "'");
    auto m = t->second.find(metric);
    if (m == t->second.end()) throw SpaceBondError("task '" + task + "' has no metric '" + metric + "'");
    return m->second;
  }

  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

/// A classification task over fused embeddings: samples of one modality
/// against text prototypes of the class items.
struct ClassSpec {
  std::string name;
  Modality sample_modality = Modality::audio;
  std::vector<std::string> sample_ids;
  std::vector<std::string> class_ids;  // items whose text embedding names each class
  std::vector<std::size_t> labels;
  std::vector<std::vector<std::size_t>> label_sets;
};

/// Test-split embeddings of every source space, aligned by id per modality,
/// plus optional explicit ground truth per retrieval direction.
struct EvalInputs {
  std::map<std::string, SpaceBundle> sources;
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> ground_truth;  // "audio->text" → pairs
  std::vector<ClassSpec> classification;
  std::vector<std::size_t> ks = {1, 5};
};

inline std::string direction_name(Modality q, Modality g) {
  return std::string(to_string(q)) + "->" + std::string(to_string(g));
}

inline std::string pair_name(Modality a, Modality b) {
  return std::string(to_string(a)) + "-" + std::string(to_string(b));
}

inline const std::vector<std::pair<Modality, Modality>>& retrieval_pairs() {
  static const std::vector<std::pair<Modality, Modality>> pairs = {
      {Modality::audio, Modality::text}, {Modality::audio, Modality::image}, {Modality::image, Modality::text}};
  return pairs;
}

/// Fused embeddings of one modality for the items of the unified source.
inline EmbeddingMatrix encode_modality(const CompositeSpace& space, Modality m, const EvalInputs& inputs,
                                       const CombiningFactors& f, EncodeOptions opts = {}) {
  auto uit = inputs.sources.find(space.unified);
  if (uit == inputs.sources.end()) throw SpaceBondError("evaluation inputs lack unified space '" + space.unified + "'");
  const auto& ids = uit->second.at(m).ids();
  ChannelInputs ci;
  for (const auto& ch : space.channels(m)) {
    auto sit = inputs.sources.find(ch.source);
    if (sit == inputs.sources.end()) throw SpaceBondError("evaluation inputs lack source '" + ch.source + "'");
    const auto& mat = sit->second.at(m);
    if (mat.ids() != ids) throw SpaceBondError("source '" + ch.source + "' is not aligned with the unified space");
    ci.emplace(ch.source, mat.data());
  }
  return EmbeddingMatrix(ids, encode(space, m, ci, f, opts));
}

inline MetricReport evaluate_composite(const CompositeSpace& space, const CombiningFactors& f,
                                       const EvalInputs& inputs, EncodeOptions opts = {}) {
  std::map<Modality, EmbeddingMatrix> fused;
  for (Modality m : kAllModalities) fused.emplace(m, encode_modality(space, m, inputs, f, opts));

  MetricReport report;
  auto metric_name = [](std::size_t k) { return "R@" + std::to_string(k); };
  for (const auto& [a, b] : retrieval_pairs()) {
    double r1_sum = 0.0;
    for (const auto& [q, g] : {std::pair{a, b}, std::pair{b, a}}) {
      const auto dir = direction_name(q, g);
      auto gt = inputs.ground_truth.find(dir);
      const auto task = gt == inputs.ground_truth.end()
                            ? RetrievalTask::by_id(fused.at(q), fused.at(g), inputs.ks)
                            : RetrievalTask::from_pairs(fused.at(q), fused.at(g), gt->second, inputs.ks);
      const auto recall = recall_at_k(task);
      auto& row = report.tasks["retrieval/" + dir];
      for (const auto& [k, v] : recall) row[metric_name(k)] = v;
      r1_sum += recall.count(1) ? recall.at(1) : 0.0;
    }
    report.tasks["retrieval/" + pair_name(a, b)]["R@1"] = r1_sum / 2.0;
  }

  for (const auto& spec : inputs.classification) {
    ClassificationTask task;
    task.samples = fused.at(spec.sample_modality).select(spec.sample_ids).data();
    task.prototypes = fused.at(Modality::text).select(spec.class_ids).data();
    task.labels = spec.labels;
    task.label_sets = spec.label_sets;
    if (task.multi_label()) report.tasks["classification/" + spec.name]["mAP"] = mean_average_precision(task);
    else report.tasks["classification/" + spec.name]["acc"] = zero_shot_accuracy(task);
  }
  return report;
}

/// Retrieval report of a raw space over whichever modality pairs it holds.
inline MetricReport evaluate_space(const SpaceBundle& space, const std::vector<std::size_t>& ks = {1, 5}) {
  MetricReport report;
  for (const auto& [a, b] : retrieval_pairs()) {
    if (!space.has(a) || !space.has(b)) continue;
    double r1_sum = 0.0;
    for (const auto& [q, g] : {std::pair{a, b}, std::pair{b, a}}) {
      const auto recall = recall_at_k(RetrievalTask::by_id(space.at(q), space.at(g), ks));
      auto& row = report.tasks["retrieval/" + direction_name(q, g)];
      for (const auto& [k, v] : recall) row["R@" + std::to_string(k)] = v;
      r1_sum += recall.count(1) ? recall.at(1) : 0.0;
    }
    report.tasks["retrieval/" + pair_name(a, b)]["R@1"] = r1_sum / 2.0;
  }
  return report;
}

/// Mean of the six directional R@1 values.
inline double mean_directional_r1(const MetricReport& r) {
  double s = 0.0;
  for (const auto& [a, b] : retrieval_pairs()) {
    s += r.at("retrieval/" + direction_name(a, b), "R@1") + r.at("retrieval/" + direction_name(b, a), "R@1");
  }
  return s / 6.0;
}

inline nlohmann::ordered_json report_json(const MetricReport& r) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [task, metrics] : r.tasks) {
    for (const auto& [metric, value] : metrics) j[task][metric] = value;
  }
  return j;
}

inline std::string report_csv(const MetricReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "task,metric,value\n";
  for (const auto& [task, metrics] : r.tasks) {
    for (const auto& [metric, value] : metrics) os << task << ',' << metric << ',' << value << '\n';
  }
  return os.str();
}

inline MetricReport report_from_json(const nlohmann::json& j) {
  MetricReport r;
  for (const auto& [task, metrics] : j.items()) {
    for (const auto& [metric, value] : metrics.items()) r.tasks[task][metric] = value.get<double>();
  }
  return r;
}

/// Reads a two-column (query_id, gallery_id) CSV; a header line starting
/// with "query" is skipped.
inline std::vector<std::pair<std::string, std::string>> load_ground_truth(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("query", 0) == 0) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw SpaceBondError(path.string() + ": line " + std::to_string(lineno) + " is not two columns");
    }
    pairs.emplace_back(line.substr(0, comma), line.substr(comma + 1));
  }
  return pairs;
}

}  // namespace spacebond::eval
