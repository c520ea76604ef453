#pragma once

// RunReport: every metric for one (model variant, dataset) pair, and its
// versioned JSON form.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bootstrap.hpp"
#include "core.hpp"
#include "isotropy.hpp"
#include "overlap.hpp"

namespace embedeval {

inline constexpr int kSchemaVersion = 1;

struct RunConfig {
  std::size_t top_k = kDefaultTopK;
  std::size_t bootstraps = kDefaultBootstraps;
  std::size_t sample_size = 0;  // resolved l (defaults to Q)
  std::uint64_t seed = 0;
  std::vector<double> psi_grid = default_psi_grid();
  std::optional<double> psi;  // overlap percentile; resolved to the chosen threshold psi when absent
  std::uint64_t rand_seed = 0;
  std::size_t density_bins = kDefaultDensityBins;
  std::optional<std::size_t> pca_components;
  std::vector<TransformKind> transforms = all_transforms();

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

struct InputDigest {
  std::string role;  // documents | questions | doc_embeddings | question_embeddings
  std::string path;
  std::string sha256;

  friend bool operator==(const InputDigest&, const InputDigest&) = default;
};

struct RunReport {
  std::string model_label;
  std::string dataset_label;
  RunConfig config;
  std::vector<InputDigest> inputs;
  std::size_t num_documents = 0;
  std::size_t num_questions = 0;
  std::size_t dim = 0;
  MetricSummary accuracy;
  MetricSummary ndcg;
  double full_data_accuracy = 0.0;
  double full_data_ndcg = 0.0;
  std::optional<ThresholdReport> threshold;
  std::optional<OverlapReport> overlap;
  std::vector<IsotropyReport> isotropy;
  Warnings warnings;
  std::optional<std::string> started_at;
  std::optional<std::string> finished_at;

  const InputDigest* input(const std::string& role) const {
    for (const auto& d : inputs)
      if (d.role == role) return &d;
    return nullptr;
  }

  const IsotropyReport* isotropy_for(TransformKind kind) const {
    for (const auto& r : isotropy)
      if (r.transform == kind) return &r;
    return nullptr;
  }

  friend bool operator==(const RunReport&, const RunReport&) = default;
};

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

using ojson = nlohmann::ordered_json;

namespace detail {

inline ojson optional_json(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

template <class T>
T required(const ojson& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError(std::string("run report: missing key '") + key + "'");
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("run report: bad value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline ojson to_json(const MetricSummary& s) {
  return ojson{{"mean", s.mean},
               {"ci_lower", s.ci_lower},
               {"ci_upper", s.ci_upper},
               {"ci_width", s.ci_width},
               {"per_bootstrap", s.per_bootstrap}};
}

inline MetricSummary metric_summary_from_json(const ojson& j) {
  MetricSummary s;
  s.mean = detail::required<double>(j, "mean");
  s.ci_lower = detail::required<double>(j, "ci_lower");
  s.ci_upper = detail::required<double>(j, "ci_upper");
  s.ci_width = detail::required<double>(j, "ci_width");
  s.per_bootstrap = detail::required<std::vector<double>>(j, "per_bootstrap");
  return s;
}

inline ojson to_json(const ThresholdReport& t) {
  ojson levels = ojson::array();
  for (const auto& l : t.levels)
    levels.push_back({{"psi", l.psi}, {"tau", l.tau}, {"accepted", l.accepted}, {"accuracy", to_json(l.accuracy)}});
  ojson chosen = nullptr;
  if (t.chosen) chosen = ojson{{"index", *t.chosen}, {"psi", t.levels[*t.chosen].psi}, {"tau", t.levels[*t.chosen].tau}};
  return ojson{{"acceptance_rule", t.acceptance_rule}, {"gamma", t.gamma}, {"levels", levels}, {"chosen", chosen}};
}

inline ThresholdReport threshold_from_json(const ojson& j) {
  ThresholdReport t;
  t.acceptance_rule = detail::required<std::string>(j, "acceptance_rule");
  t.gamma = detail::required<std::vector<double>>(j, "gamma");
  for (const auto& l : detail::required<ojson>(j, "levels"))
    t.levels.push_back({detail::required<double>(l, "psi"), detail::required<double>(l, "tau"),
                        metric_summary_from_json(detail::required<ojson>(l, "accuracy")),
                        detail::required<bool>(l, "accepted")});
  const auto chosen = detail::required<ojson>(j, "chosen");
  if (!chosen.is_null()) {
    t.chosen = detail::required<std::size_t>(chosen, "index");
    if (*t.chosen >= t.levels.size()) throw ValidationError("run report: chosen threshold index out of range");
  }
  return t;
}

inline ojson to_json(const OverlapReport& o) {
  return ojson{{"psi", o.psi}, {"theta", o.theta}, {"coe", to_json(o.coe)}, {"roe", to_json(o.roe)}};
}

inline OverlapReport overlap_from_json(const ojson& j) {
  return {detail::required<double>(j, "psi"), detail::required<std::vector<double>>(j, "theta"),
          metric_summary_from_json(detail::required<ojson>(j, "coe")),
          metric_summary_from_json(detail::required<ojson>(j, "roe"))};
}

inline ojson to_json(const IsotropyReport& r) {
  return ojson{{"transform", to_string(r.transform)},
               {"i_a", r.i_a},
               {"i_b", r.i_b},
               {"accuracy", to_json(r.accuracy)},
               {"warnings", r.warnings}};
}

inline IsotropyReport isotropy_from_json(const ojson& j) {
  IsotropyReport r;
  try {
    r.transform = parse_transform(detail::required<std::string>(j, "transform"));
  } catch (const UsageError& e) {
    throw ValidationError(std::string("run report: ") + e.what());
  }
  r.i_a = detail::required<double>(j, "i_a");
  r.i_b = detail::required<double>(j, "i_b");
  r.accuracy = metric_summary_from_json(detail::required<ojson>(j, "accuracy"));
  r.warnings = detail::required<Warnings>(j, "warnings");
  return r;
}

inline ojson to_json(const RunConfig& c) {
  ojson transforms = ojson::array();
  for (auto t : c.transforms) transforms.push_back(to_string(t));
  return ojson{{"top_k", c.top_k},
               {"bootstraps", c.bootstraps},
               {"sample_size", c.sample_size},
               {"seed", c.seed},
               {"psi_grid", c.psi_grid},
               {"psi", detail::optional_json(c.psi)},
               {"rand_seed", c.rand_seed},
               {"density_bins", c.density_bins},
               {"pca_components", c.pca_components ? ojson(*c.pca_components) : ojson(nullptr)},
               {"transforms", transforms}};
}

inline RunConfig run_config_from_json(const ojson& j) {
  RunConfig c;
  c.top_k = detail::required<std::size_t>(j, "top_k");
  c.bootstraps = detail::required<std::size_t>(j, "bootstraps");
  c.sample_size = detail::required<std::size_t>(j, "sample_size");
  c.seed = detail::required<std::uint64_t>(j, "seed");
  c.psi_grid = detail::required<std::vector<double>>(j, "psi_grid");
  const auto psi = detail::required<ojson>(j, "psi");
  if (!psi.is_null()) c.psi = psi.get<double>();
  c.rand_seed = detail::required<std::uint64_t>(j, "rand_seed");
  c.density_bins = detail::required<std::size_t>(j, "density_bins");
  const auto pca = detail::required<ojson>(j, "pca_components");
  if (!pca.is_null()) c.pca_components = pca.get<std::size_t>();
  c.transforms.clear();
  for (const auto& t : detail::required<std::vector<std::string>>(j, "transforms")) c.transforms.push_back(parse_transform(t));
  return c;
}

/// Stable key order; `include_timestamps=false` yields the reproducible core.
inline ojson to_json(const RunReport& r, bool include_timestamps = true) {
  ojson inputs = ojson::array();
  for (const auto& d : r.inputs) inputs.push_back({{"role", d.role}, {"path", d.path}, {"sha256", d.sha256}});
  ojson iso = ojson::array();
  for (const auto& x : r.isotropy) iso.push_back(to_json(x));
  ojson j{{"schema_version", kSchemaVersion},
          {"model_label", r.model_label},
          {"dataset_label", r.dataset_label},
          {"config", to_json(r.config)},
          {"inputs", inputs},
          {"counts", {{"documents", r.num_documents}, {"questions", r.num_questions}, {"dim", r.dim}}},
          {"accuracy", to_json(r.accuracy)},
          {"ndcg", to_json(r.ndcg)},
          {"full_data_accuracy", r.full_data_accuracy},
          {"full_data_ndcg", r.full_data_ndcg},
          {"threshold", r.threshold ? to_json(*r.threshold) : ojson(nullptr)},
          {"overlap", r.overlap ? to_json(*r.overlap) : ojson(nullptr)},
          {"isotropy", iso},
          {"warnings", r.warnings}};
  if (include_timestamps) {
    j["timestamps"] = {{"started", r.started_at ? ojson(*r.started_at) : ojson(nullptr)},
                       {"finished", r.finished_at ? ojson(*r.finished_at) : ojson(nullptr)}};
  }
  return j;
}

inline RunReport run_report_from_json(const ojson& j) {
  const int version = detail::required<int>(j, "schema_version");
  if (version != kSchemaVersion)
    throw ValidationError("run report schema_version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kSchemaVersion) + ")");
  RunReport r;
  r.model_label = detail::required<std::string>(j, "model_label");
  r.dataset_label = detail::required<std::string>(j, "dataset_label");
  r.config = run_config_from_json(detail::required<ojson>(j, "config"));
  for (const auto& d : detail::required<ojson>(j, "inputs"))
    r.inputs.push_back({detail::required<std::string>(d, "role"), detail::required<std::string>(d, "path"),
                        detail::required<std::string>(d, "sha256")});
  const auto counts = detail::required<ojson>(j, "counts");
  r.num_documents = detail::required<std::size_t>(counts, "documents");
  r.num_questions = detail::required<std::size_t>(counts, "questions");
  r.dim = detail::required<std::size_t>(counts, "dim");
  r.accuracy = metric_summary_from_json(detail::required<ojson>(j, "accuracy"));
  r.ndcg = metric_summary_from_json(detail::required<ojson>(j, "ndcg"));
  r.full_data_accuracy = detail::required<double>(j, "full_data_accuracy");
  r.full_data_ndcg = detail::required<double>(j, "full_data_ndcg");
  if (const auto t = detail::required<ojson>(j, "threshold"); !t.is_null()) r.threshold = threshold_from_json(t);
  if (const auto o = detail::required<ojson>(j, "overlap"); !o.is_null()) r.overlap = overlap_from_json(o);
  for (const auto& x : detail::required<ojson>(j, "isotropy")) r.isotropy.push_back(isotropy_from_json(x));
  r.warnings = detail::required<Warnings>(j, "warnings");
  if (auto ts = j.find("timestamps"); ts != j.end() && ts->is_object()) {
    if (auto s = ts->find("started"); s != ts->end() && s->is_string()) r.started_at = s->get<std::string>();
    if (auto f = ts->find("finished"); f != ts->end() && f->is_string()) r.finished_at = f->get<std::string>();
  }
  return r;
}

inline std::string serialize_report(const RunReport& r, bool include_timestamps = true) {
  return to_json(r, include_timestamps).dump(2) + "\n";
}

inline RunReport parse_report(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("run report is not valid JSON: ") + e.what());
  }
  return run_report_from_json(j);
}

// ---------------------------------------------------------------------------
// Named metric lookup
// ---------------------------------------------------------------------------

/// Scalar metrics by name: accuracy, ndcg, full_accuracy, full_ndcg, coe,
/// roe, tau, psi, acc_at_tau, i_a, i_b (baseline). Per-transform values use
/// "i_a:<transform>", "i_b:<transform>", "accuracy:<transform>".
inline double metric_value(const RunReport& r, const std::string& name) {
  auto missing = [&](const std::string& what) {
    return ValidationError("report '" + r.model_label + "' has no " + what + " (metric '" + name + "')");
  };
  const auto colon = name.find(':');
  if (colon != std::string::npos) {
    const std::string base = name.substr(0, colon);
    TransformKind kind;
    try {
      kind = parse_transform(name.substr(colon + 1));
    } catch (const UsageError&) {
      throw UsageError("unknown metric '" + name + "'");
    }
    const auto* iso = r.isotropy_for(kind);
    if (!iso) throw missing(std::string("isotropy result for ") + to_string(kind));
    if (base == "i_a") return iso->i_a;
    if (base == "i_b") return iso->i_b;
    if (base == "accuracy") return iso->accuracy.mean;
    throw UsageError("unknown metric '" + name + "'");
  }
  if (name == "accuracy") return r.accuracy.mean;
  if (name == "ndcg") return r.ndcg.mean;
  if (name == "full_accuracy") return r.full_data_accuracy;
  if (name == "full_ndcg") return r.full_data_ndcg;
  if (name == "coe" || name == "roe") {
    if (!r.overlap) throw missing("overlap report");
    return name == "coe" ? r.overlap->coe.mean : r.overlap->roe.mean;
  }
  if (name == "tau" || name == "psi" || name == "acc_at_tau") {
    if (!r.threshold || !r.threshold->chosen) throw missing("chosen threshold");
    const auto* level = r.threshold->chosen_level();
    return name == "tau" ? level->tau : name == "psi" ? level->psi : level->accuracy.mean;
  }
  if (name == "i_a") return metric_value(r, "i_a:baseline");
  if (name == "i_b") return metric_value(r, "i_b:baseline");
  throw UsageError("unknown metric '" + name + "'");
}

}  // namespace embedeval
