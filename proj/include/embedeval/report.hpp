#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "analysis.hpp"
#include "bootstrap.hpp"
#include "core.hpp"
#include "ingest.hpp"
#include "isotropy.hpp"
#include "overlap.hpp"
#include "retrieval.hpp"
#include "run_report.hpp"

namespace embedeval {

// ---------------------------------------------------------------------------
// Digests and file output
// ---------------------------------------------------------------------------

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

inline std::string sha256_file(const std::string& path) { return sha256_hex(detail::read_file_bytes(path)); }

/// Writes through a sibling temporary file so a failed run never leaves a
/// partial output behind.
inline void write_file_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  detail::write_file_bytes(tmp, bytes);
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw ValidationError("cannot move output into place at '" + path + "': " + ec.message());
  }
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct PipelineInputs {
  std::string documents;
  std::string questions;
  std::string doc_embeddings;
  std::string question_embeddings;
  EmbeddingFormat format = EmbeddingFormat::automatic;
};

struct PipelineOptions {
  std::string model_label = "model";
  std::string dataset_label = "dataset";
  std::size_t top_k = kDefaultTopK;
  std::size_t bootstraps = kDefaultBootstraps;
  std::optional<std::size_t> sample_size;  // defaults to |Q|
  std::uint64_t seed = 0;
  std::vector<double> psi_grid = default_psi_grid();
  std::optional<double> psi;
  std::optional<std::uint64_t> rand_seed;  // defaults to seed
  std::size_t density_bins = kDefaultDensityBins;
  std::optional<std::size_t> pca_components;
  std::vector<TransformKind> transforms = all_transforms();
  bool run_threshold = true;
  bool run_overlap = true;
  bool run_isotropy = true;
  unsigned threads = 0;
  bool timestamps = true;
};

inline constexpr double kFallbackOverlapPsi = 50.0;

struct LoadedInputs {
  QACorpus corpus;
  EmbeddingMatrix questions;  // aligned + normalized
  EmbeddingMatrix documents;
  Warnings warnings;
};

namespace detail {

/// Runs one pipeline stage, prefixing any error with the stage name.
template <class Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    const std::string msg = std::string("[") + name + "] " + e.what();
    switch (e.kind()) {
      case ErrorKind::usage: throw UsageError(msg);
      case ErrorKind::validation: throw ValidationError(msg);
      case ErrorKind::remote: throw RemoteError(msg);
    }
    throw;
  } catch (const std::filesystem::filesystem_error& e) {
    throw ValidationError(std::string("[") + name + "] " + e.what());
  }
}

inline EmbeddingMatrix prepare_embeddings(const EmbeddingMatrix& raw, const std::vector<std::string>& ids,
                                          const std::string& what, Warnings& warnings) {
  auto aligned = align(raw, ids);
  if (!aligned.dropped.empty())
    warnings.push_back(what + ": dropped " + std::to_string(aligned.dropped.size()) +
                       " embedding(s) with ids not in the corpus");
  if (aligned.matrix.normalized()) return std::move(aligned.matrix);
  return normalize(aligned.matrix);
}

}  // namespace detail

inline LoadedInputs load_inputs(const PipelineInputs& in) {
  LoadedInputs out;
  out.corpus = detail::stage("ingest", [&] { return load_corpus(in.documents, in.questions); });
  const auto raw_docs = detail::stage("ingest", [&] { return load_embeddings(in.doc_embeddings, in.format); });
  const auto raw_q = detail::stage("ingest", [&] { return load_embeddings(in.question_embeddings, in.format); });
  out.documents = detail::stage("ingest", [&] {
    return detail::prepare_embeddings(raw_docs, out.corpus.document_ids(), "document embeddings", out.warnings);
  });
  out.questions = detail::stage("ingest", [&] {
    return detail::prepare_embeddings(raw_q, out.corpus.question_ids(), "question embeddings", out.warnings);
  });
  if (out.documents.dim() != out.questions.dim())
    throw ValidationError("[ingest] document and question embeddings differ in dimension");
  return out;
}

/// Evaluates already-loaded, aligned, normalized inputs. Every bootstrap
/// quantity shares one plan.
inline RunReport evaluate(const LoadedInputs& data, const PipelineOptions& opt) {
  RunReport report;
  if (opt.timestamps) report.started_at = utc_timestamp();
  report.model_label = opt.model_label;
  report.dataset_label = opt.dataset_label;
  report.num_documents = data.corpus.num_documents();
  report.num_questions = data.corpus.num_questions();
  report.dim = data.documents.dim();
  report.warnings = data.warnings;

  auto& cfg = report.config;
  cfg.top_k = opt.top_k;
  cfg.bootstraps = opt.bootstraps;
  cfg.sample_size = opt.sample_size.value_or(data.corpus.num_questions());
  cfg.seed = opt.seed;
  cfg.psi_grid = detail::stage("bootstrap", [&] { return checked_psi_grid(opt.psi_grid); });
  cfg.psi = opt.psi;
  cfg.rand_seed = opt.rand_seed.value_or(opt.seed);
  cfg.density_bins = opt.density_bins;
  cfg.pca_components = opt.pca_components;
  cfg.transforms = opt.run_isotropy ? opt.transforms : std::vector<TransformKind>{};

  const auto plan = detail::stage("bootstrap", [&] {
    return BootstrapPlan::generate(cfg.seed, cfg.bootstraps, cfg.sample_size, data.corpus.num_questions());
  });
  const auto table = detail::stage("retrieval", [&] {
    return build_retrieval_table(data.corpus, data.questions, data.documents, cfg.top_k, opt.threads);
  });
  detail::stage("bootstrap", [&] {
    report.accuracy = bootstrap_metric(table, plan, Metric::accuracy, opt.threads);
    report.ndcg = bootstrap_metric(table, plan, Metric::ndcg, opt.threads);
    report.full_data_accuracy = full_data_metric(table, Metric::accuracy);
    report.full_data_ndcg = full_data_metric(table, Metric::ndcg);
    return 0;
  });
  if (opt.run_threshold)
    report.threshold = detail::stage("threshold", [&] {
      return threshold_search(table, plan, report.accuracy, cfg.psi_grid, opt.threads);
    });
  if (opt.run_overlap) {
    report.overlap = detail::stage("overlap", [&] {
      double psi = kFallbackOverlapPsi;
      if (opt.psi) {
        psi = *opt.psi;
      } else if (report.threshold && report.threshold->chosen) {
        psi = *report.threshold->chosen_psi();
      } else {
        report.warnings.push_back("overlap: no accepted threshold; using psi = 50");
      }
      const auto sets = build_similarity_sets(table, data.questions, data.documents, cfg.rand_seed);
      return overlap_metrics(sets, plan, psi, opt.threads);
    });
  }
  if (opt.run_isotropy) {
    for (auto kind : cfg.transforms)
      report.isotropy.push_back(detail::stage("isotropy", [&] {
        return transform_and_eval(data.corpus, data.questions, data.documents, kind, plan, cfg.top_k,
                                  cfg.pca_components, opt.threads);
      }));
  }
  if (opt.timestamps) report.finished_at = utc_timestamp();
  return report;
}

/// ingest -> retrieval -> bootstrap -> threshold -> overlap -> isotropy.
inline RunReport run_pipeline(const PipelineInputs& in, const PipelineOptions& opt) {
  const auto data = load_inputs(in);
  RunReport report = evaluate(data, opt);
  report.inputs = {{"documents", in.documents, sha256_file(in.documents)},
                   {"questions", in.questions, sha256_file(in.questions)},
                   {"doc_embeddings", in.doc_embeddings, sha256_file(in.doc_embeddings)},
                   {"question_embeddings", in.question_embeddings, sha256_file(in.question_embeddings)}};
  return report;
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string percent2(double fraction) { return fixed2(fraction * 100.0); }

inline std::string format_psi(double psi) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", psi);
  return buf;
}

namespace detail {

inline std::vector<const RunReport*> sorted_by_label(const std::vector<RunReport>& reports) {
  std::vector<const RunReport*> out;
  for (const auto& r : reports) out.push_back(&r);
  std::stable_sort(out.begin(), out.end(),
                   [](const RunReport* a, const RunReport* b) { return a->model_label < b->model_label; });
  return out;
}

}  // namespace detail

/// One row per model: bootstrapped Acc, Acc-CI, NDCG, NDCG-CI, COE, ROE,
/// (tau, psi), Acc@tau, then full-data Acc and NDCG. Percentages x100.
inline Table performance_table(const std::vector<RunReport>& reports) {
  Table t{{"Embedding Model", "Acc", "Acc-CI", "NDCG", "NDCG-CI", "COE", "ROE", "(tau, psi)", "Acc @ tau",
           "Full Acc", "Full NDCG"},
          {}};
  for (const auto* r : detail::sorted_by_label(reports)) {
    std::vector<std::string> row{r->model_label,         percent2(r->accuracy.mean), percent2(r->accuracy.ci_width),
                                 percent2(r->ndcg.mean), percent2(r->ndcg.ci_width)};
    row.push_back(r->overlap ? percent2(r->overlap->coe.mean) : "-");
    row.push_back(r->overlap ? percent2(r->overlap->roe.mean) : "-");
    const ThresholdLevel* level = r->threshold ? r->threshold->chosen_level() : nullptr;
    row.push_back(level ? fixed2(level->tau) + " (" + format_psi(level->psi) + ")" : "-");
    row.push_back(level ? percent2(level->accuracy.mean) : "-");
    row.push_back(percent2(r->full_data_accuracy));
    row.push_back(percent2(r->full_data_ndcg));
    t.rows.push_back(std::move(row));
  }
  return t;
}

/// Accuracy, I_A and I_B per transform (x100).
inline Table transformation_table(const std::vector<RunReport>& reports) {
  Table t;
  t.header.push_back("Embedding Model");
  const char* names[] = {"Baseline", "Standardized", "Whitened", "PCA"};
  for (std::size_t i = 0; i < all_transforms().size(); ++i)
    for (const char* col : {" Acc", " I_A", " I_B"}) t.header.push_back(std::string(names[i]) + col);
  for (const auto* r : detail::sorted_by_label(reports)) {
    std::vector<std::string> row{r->model_label};
    for (auto kind : all_transforms()) {
      const auto* iso = r->isotropy_for(kind);
      row.push_back(iso ? percent2(iso->accuracy.mean) : "-");
      row.push_back(iso ? percent2(iso->i_a) : "-");
      row.push_back(iso ? percent2(iso->i_b) : "-");
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline std::string correlation_label(const std::string& metric) {
  if (metric == "accuracy") return "Acc";
  if (metric == "ndcg") return "NDCG";
  if (metric == "coe") return "COE";
  if (metric == "roe") return "ROE";
  if (metric == "tau") return "Thresh";
  if (metric == "i_a") return "I_A";
  if (metric == "i_b") return "I_B";
  return metric;
}

inline Table correlation_table(const CorrelationTable& c) {
  Table t{{"Corr"}, {{c.dataset_label}}};
  for (const auto& row : c.rows) {
    t.header.push_back(correlation_label(row.metric_x) + " v. " + correlation_label(row.metric_y));
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", row.r);
    t.rows[0].push_back(buf);
  }
  return t;
}

inline std::string csv_escape(const std::string& cell) {
  if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string render_csv(const Table& t) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + csv_escape(cells[i]);
    out += "\n";
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
  return out;
}

inline std::string render_text(const Table& t) {
  std::vector<std::size_t> width(t.header.size(), 0);
  auto measure = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size() && i < width.size(); ++i) width[i] = std::max(width[i], cells[i].size());
  };
  measure(t.header);
  for (const auto& r : t.rows) measure(r);
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    std::string l;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) l += "  ";
      l += cells[i];
      if (i + 1 < cells.size()) l.append(width[i] - cells[i].size(), ' ');
    }
    out += l + "\n";
  };
  line(t.header);
  std::string rule;
  for (std::size_t i = 0; i < width.size(); ++i) rule += std::string(width[i], '-') + (i + 1 < width.size() ? "  " : "");
  out += rule + "\n";
  for (const auto& r : t.rows) line(r);
  return out;
}

enum class TableFormat { csv, text };

/// Performance table followed by the transformation table.
inline std::string render_tables(const std::vector<RunReport>& reports, TableFormat format) {
  if (reports.empty()) throw UsageError("no reports to render");
  auto render = [&](const Table& t) { return format == TableFormat::csv ? render_csv(t) : render_text(t); };
  std::string out = render(performance_table(reports));
  bool any_isotropy = false;
  for (const auto& r : reports) any_isotropy = any_isotropy || !r.isotropy.empty();
  if (any_isotropy) out += "\n" + render(transformation_table(reports));
  return out;
}

// ---------------------------------------------------------------------------
// Density plot output
// ---------------------------------------------------------------------------

inline std::string density_csv(const DensityPlot& plot) {
  if (plot.series.empty() || plot.bin_centers.empty()) throw UsageError("density plot is empty");
  std::ostringstream out;
  out << std::setprecision(10);
  out << "bin_center";
  for (const auto& s : plot.series) out << "," << s.name << "_hist";
  for (const auto& s : plot.series) out << "," << s.name << "_kde";
  out << "\n";
  for (std::size_t b = 0; b < plot.bin_centers.size(); ++b) {
    out << plot.bin_centers[b];
    for (const auto& s : plot.series) out << "," << s.histogram[b];
    for (const auto& s : plot.series) out << "," << s.kde[b];
    out << "\n";
  }
  return out.str();
}

inline std::string xml_escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string series_color(const std::string& name) {
  if (name == "random") return "#d62728";
  if (name == "correct") return "#2ca02c";
  if (name == "topk") return "#1f77b4";
  return "#555555";
}

inline std::string series_legend(const std::string& name) {
  if (name == "random") return "S_rand";
  if (name == "correct") return "S_corr";
  if (name == "topk") return "S_topK";
  return name;
}

/// Overlaid kernel-density curves with a legend. Output bytes depend only on
/// the input values.
inline std::string render_density_svg(const DensityPlot& plot, const std::string& title = "") {
  if (plot.series.empty() || plot.bin_centers.empty()) throw UsageError("density plot is empty");
  constexpr double W = 640, H = 400, left = 50, right = 20, top = 30, bottom = 40;
  double ymax = 0.0;
  for (const auto& s : plot.series)
    for (double v : s.kde) ymax = std::max(ymax, v);
  if (!(ymax > 0)) ymax = 1.0;
  auto px = [&](double x) { return left + (x + 1.0) / 2.0 * (W - left - right); };
  auto py = [&](double y) { return H - bottom - y / ymax * (H - top - bottom); };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
  svg += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  if (!title.empty()) svg += "<text x=\"320\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" + xml_escape(title) + "</text>\n";
  svg += "<line x1=\"" + num(left) + "\" y1=\"" + num(H - bottom) + "\" x2=\"" + num(W - right) + "\" y2=\"" +
         num(H - bottom) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + num(left) + "\" y1=\"" + num(top) + "\" x2=\"" + num(left) + "\" y2=\"" + num(H - bottom) +
         "\" stroke=\"black\"/>\n";
  for (double tick : {-1.0, -0.5, 0.0, 0.5, 1.0})
    svg += "<text x=\"" + num(px(tick)) + "\" y=\"" + num(H - bottom + 16) +
           "\" text-anchor=\"middle\" font-size=\"11\">" + num(tick) + "</text>\n";
  svg += "<text x=\"" + num((left + W - right) / 2) + "\" y=\"" + num(H - 6) +
         "\" text-anchor=\"middle\" font-size=\"12\">cosine similarity</text>\n";
  for (const auto& s : plot.series) {
    svg += "<polyline class=\"curve\" data-series=\"" + s.name + "\" fill=\"none\" stroke=\"" + series_color(s.name) +
           "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t b = 0; b < plot.bin_centers.size(); ++b)
      svg += (b ? " " : "") + num(px(plot.bin_centers[b])) + "," + num(py(s.kde[b]));
    svg += "\"/>\n";
  }
  svg += "<g class=\"legend\">\n";
  for (std::size_t i = 0; i < plot.series.size(); ++i) {
    const double y = top + 10 + 18.0 * static_cast<double>(i);
    svg += "<line x1=\"" + num(W - right - 110) + "\" y1=\"" + num(y) + "\" x2=\"" + num(W - right - 90) + "\" y2=\"" +
           num(y) + "\" stroke=\"" + series_color(plot.series[i].name) + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + num(W - right - 84) + "\" y=\"" + num(y + 4) + "\" font-size=\"12\">" +
           series_legend(plot.series[i].name) + "</text>\n";
  }
  svg += "</g>\n</svg>\n";
  return svg;
}

}  // namespace embedeval
