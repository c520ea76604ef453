// embedeval command-line interface.
//
// Exit codes: 0 success, 2 usage, 3 data validation, 4 remote endpoint.

#include <filesystem>
#include <iostream>
#include <regex>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "embedeval/embedeval.hpp"

namespace fs = std::filesystem;
using namespace embedeval;

namespace {

struct GlobalFlags {
  std::uint64_t seed = 0;
  std::size_t top_k = kDefaultTopK;
  std::size_t bootstraps = kDefaultBootstraps;
  std::size_t sample_size = 0;  // 0 = |Q|
  std::string psi_grid;
  std::optional<double> psi;
  std::string out;
  std::string format = "auto";
  unsigned threads = 0;
};

struct InputFlags {
  std::string docs, questions, doc_emb, question_emb;
  std::string model_label = "model";
  std::string dataset_label = "dataset";
  std::optional<std::uint64_t> rand_seed;
  std::size_t bins = kDefaultDensityBins;
  std::optional<std::size_t> pca_components;
  std::vector<std::string> transforms;
  bool no_timestamps = false;
};

/// "5,10,15" or "start:stop:step" (inclusive).
std::vector<double> parse_psi_grid(const std::string& text) {
  if (text.empty()) return default_psi_grid();
  std::vector<double> grid;
  try {
    if (text.find(':') != std::string::npos) {
      std::vector<double> parts;
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ':')) parts.push_back(std::stod(item));
      if (parts.size() != 3 || !(parts[2] > 0)) throw UsageError("psi grid range must be start:stop:step with step > 0");
      for (double p = parts[0]; p <= parts[1] + 1e-9; p += parts[2]) grid.push_back(p);
    } else {
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) grid.push_back(std::stod(item));
    }
  } catch (const std::logic_error&) {
    throw UsageError("cannot parse psi grid '" + text + "'");
  }
  return checked_psi_grid(grid);
}

void emit(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-") std::cout << text;
  else write_file_atomic(out, text);
}

void add_input_flags(CLI::App* cmd, InputFlags& f, bool isotropy_flags) {
  cmd->add_option("--docs", f.docs, "Document JSONL file")->required();
  cmd->add_option("--questions", f.questions, "Question JSONL file")->required();
  cmd->add_option("--doc-emb", f.doc_emb, "Document embeddings (EMB1 or JSONL)")->required();
  cmd->add_option("--question-emb", f.question_emb, "Question embeddings (EMB1 or JSONL)")->required();
  cmd->add_option("--model-label", f.model_label, "Model variant label");
  cmd->add_option("--dataset-label", f.dataset_label, "Dataset label");
  cmd->add_option("--rand-seed", f.rand_seed, "Seed for random-document draws (defaults to --seed)");
  cmd->add_flag("--no-timestamps", f.no_timestamps, "Omit timestamps from the report");
  if (isotropy_flags) {
    cmd->add_option("--pca-components", f.pca_components, "Principal components removed by the PCA transform");
    cmd->add_option("--transforms", f.transforms, "Subset of baseline,standardized,whitened,pca")->delimiter(',');
  }
}

PipelineInputs to_inputs(const InputFlags& f, const GlobalFlags& g) {
  return {f.docs, f.questions, f.doc_emb, f.question_emb, parse_embedding_format(g.format)};
}

PipelineOptions to_options(const InputFlags& f, const GlobalFlags& g) {
  PipelineOptions o;
  o.model_label = f.model_label;
  o.dataset_label = f.dataset_label;
  o.top_k = g.top_k;
  o.bootstraps = g.bootstraps;
  if (g.sample_size > 0) o.sample_size = g.sample_size;
  o.seed = g.seed;
  o.psi_grid = parse_psi_grid(g.psi_grid);
  o.psi = g.psi;
  o.rand_seed = f.rand_seed;
  o.density_bins = f.bins;
  o.pca_components = f.pca_components;
  if (!f.transforms.empty()) {
    o.transforms.clear();
    for (const auto& t : f.transforms) o.transforms.push_back(parse_transform(t));
  }
  o.threads = g.threads;
  o.timestamps = !f.no_timestamps;
  return o;
}

std::vector<std::string> expand_paths(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  for (const auto& a : args) {
    if (a.find_first_of("*?") == std::string::npos) {
      out.push_back(a);
      continue;
    }
    const fs::path p(a);
    const fs::path dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
    std::string pattern;
    for (char c : p.filename().string()) {
      if (c == '*') pattern += ".*";
      else if (c == '?') pattern += '.';
      else if (std::string("\\^$.|+()[]{}").find(c) != std::string::npos) pattern += std::string("\\") + c;
      else pattern += c;
    }
    const std::regex re(pattern);
    std::vector<std::string> matched;
    if (fs::is_directory(dir))
      for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && std::regex_match(e.path().filename().string(), re)) matched.push_back(e.path().string());
    std::sort(matched.begin(), matched.end());
    if (matched.empty()) throw UsageError("no files match '" + a + "'");
    out.insert(out.end(), matched.begin(), matched.end());
  }
  return out;
}

std::vector<RunReport> load_reports(const std::vector<std::string>& paths) {
  std::vector<RunReport> reports;
  for (const auto& p : expand_paths(paths)) {
    try {
      reports.push_back(parse_report(detail::read_file_bytes(p)));
    } catch (const ValidationError& e) {
      throw ValidationError(p + ": " + e.what());
    }
  }
  return reports;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bootstrapped evaluation of sentence-embedding retrieval"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--seed", g.seed, "Seed for bootstrap plans and synthetic data");
  app.add_option("--top-k", g.top_k, "Documents retrieved per question (K)");
  app.add_option("--bootstraps", g.bootstraps, "Number of bootstrap samples (m)");
  app.add_option("--sample-size", g.sample_size, "Questions per bootstrap sample (l); 0 means all");
  app.add_option("--psi-grid", g.psi_grid, "Threshold percentiles, e.g. 5,10,15 or 5:95:5");
  app.add_option("--psi", g.psi, "Percentile used by the overlap metrics");
  app.add_option("--out", g.out, "Output path (stdout when omitted)");
  app.add_option("--format", g.format, "Embedding file format")->check(CLI::IsMember({"auto", "jsonl", "emb1"}));
  app.add_option("--threads", g.threads, "Worker threads (0 = hardware concurrency)");

  // embed
  auto* embed = app.add_subcommand("embed", "Fetch embeddings for a corpus or question file over HTTP");
  std::string embed_input;
  EmbedEndpointConfig endpoint;
  bool embed_normalize = false;
  embed->add_option("--input", embed_input, "JSONL file with id/text records")->required();
  embed->add_option("--base-url", endpoint.base_url, "Endpoint base URL, e.g. https://host/v1")->required();
  embed->add_option("--model", endpoint.model_name, "Model name sent with each request")->required();
  embed->add_option("--batch-size", endpoint.batch_size, "Texts per request");
  embed->add_option("--max-in-flight", endpoint.max_in_flight, "Concurrent requests");
  embed->add_option("--max-attempts", endpoint.retry.max_attempts, "Attempts per batch");
  embed->add_option("--backoff-ms", endpoint.retry.initial_backoff_ms, "Initial retry backoff in milliseconds");
  embed->add_option("--timeout", endpoint.timeout_seconds, "Per-request timeout in seconds");
  embed->add_flag("--normalize", embed_normalize, "Scale rows to unit L2 norm before saving");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic QA corpus with planted similarities");
  SynthSpec spec;
  std::vector<double> axis_weights;
  synth->add_option("--n-docs", spec.n_docs);
  synth->add_option("--n-questions", spec.n_questions);
  synth->add_option("--dim", spec.dim);
  synth->add_option("--gold-mean", spec.gold_similarity_mean);
  synth->add_option("--gold-std", spec.gold_similarity_std);
  synth->add_option("--distractor-mean", spec.distractor_similarity_mean);
  synth->add_option("--distractor-std", spec.distractor_similarity_std);
  synth->add_option("--axis-weights", axis_weights, "Comma-separated per-dimension weights")->delimiter(',');

  // eval / threshold / overlap
  InputFlags eval_flags, threshold_flags, overlap_flags, isotropy_flags;
  auto* eval = app.add_subcommand("eval", "Run the full evaluation and write a run report");
  add_input_flags(eval, eval_flags, true);
  auto* threshold = app.add_subcommand("threshold", "Bootstrapped accuracy and similarity-threshold search");
  add_input_flags(threshold, threshold_flags, false);
  auto* overlap = app.add_subcommand("overlap", "COE/ROE overlap metrics and similarity density plots");
  add_input_flags(overlap, overlap_flags, false);
  std::string density_csv_path, density_svg_path;
  overlap->add_option("--bins", overlap_flags.bins, "Histogram bins over [-1, 1]");
  overlap->add_option("--csv", density_csv_path, "Write density data as CSV");
  overlap->add_option("--svg", density_svg_path, "Write density plot as SVG");

  // isotropy
  auto* isotropy = app.add_subcommand("isotropy", "Isotropy scores, optionally with accuracy per transform");
  std::string iso_emb;
  isotropy->add_option("--emb", iso_emb, "Score a single embedding file");
  isotropy->add_option("--docs", isotropy_flags.docs);
  isotropy->add_option("--questions", isotropy_flags.questions);
  isotropy->add_option("--doc-emb", isotropy_flags.doc_emb);
  isotropy->add_option("--question-emb", isotropy_flags.question_emb);
  isotropy->add_option("--model-label", isotropy_flags.model_label);
  isotropy->add_option("--dataset-label", isotropy_flags.dataset_label);
  isotropy->add_option("--pca-components", isotropy_flags.pca_components);
  isotropy->add_option("--transforms", isotropy_flags.transforms)->delimiter(',');
  isotropy->add_flag("--no-timestamps", isotropy_flags.no_timestamps);

  // transform
  auto* transform = app.add_subcommand("transform", "Apply standardize/whiten/pca to an embedding file");
  std::string tf_in, tf_fit_on, tf_kind;
  std::optional<std::size_t> tf_components;
  bool tf_normalize = false;
  transform->add_option("--in", tf_in, "Embeddings to transform")->required();
  transform->add_option("--kind", tf_kind, "standardized|whitened|pca")->required();
  transform->add_option("--fit-on", tf_fit_on, "Fit the transform on this file instead (e.g. documents)");
  transform->add_option("--pca-components", tf_components);
  transform->add_flag("--normalize", tf_normalize, "Re-normalize rows after transforming");

  // separation
  auto* sep = app.add_subcommand("separation", "Domain-separation minima for a base and an adapted model");
  std::string base_domain, base_agnostic, adapted_domain, adapted_agnostic, minima_csv;
  sep->add_option("--base-domain", base_domain)->required();
  sep->add_option("--base-agnostic", base_agnostic)->required();
  sep->add_option("--adapted-domain", adapted_domain)->required();
  sep->add_option("--adapted-agnostic", adapted_agnostic)->required();
  sep->add_option("--csv", minima_csv, "Write per-item minima as CSV");

  // correlate / report
  auto* corr = app.add_subcommand("correlate", "Correlation table across run reports");
  std::vector<std::string> corr_paths, corr_pairs;
  corr->add_option("reports", corr_paths, "Run report files (globs allowed)")->required();
  corr->add_option("--pair", corr_pairs, "Metric pair x,y (repeatable); defaults to the standard five")
      ->expected(1)
      ->allow_extra_args(false)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  auto* report = app.add_subcommand("report", "Render performance and transformation tables");
  std::vector<std::string> report_paths;
  std::string table_format = "text";
  report->add_option("reports", report_paths, "Run report files (globs allowed)")->required();
  report->add_option("--table-format", table_format)->check(CLI::IsMember({"csv", "text"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const auto fmt = parse_embedding_format(g.format);

    if (embed->parsed()) {
      endpoint.api_key = api_key_from_env();
      endpoint.log = [](const std::string& m) { std::cerr << m << "\n"; };
      std::vector<std::string> ids, texts;
      detail::for_each_json_line(embed_input, [&](const nlohmann::json& obj, std::size_t line) {
        const auto where = embed_input + ":" + std::to_string(line);
        ids.push_back(detail::string_field(obj, "id", where));
        texts.push_back(detail::string_field(obj, "text", where));
      });
      EmbedStats stats;
      auto m = embed_records(endpoint, ids, texts, &stats);
      if (embed_normalize) m = normalize(m);
      if (g.out.empty()) throw UsageError("embed requires --out");
      save_embeddings(m, g.out, fmt);
      std::cerr << "embedded " << m.rows() << " texts (dim " << m.dim() << ") in " << stats.total_requests
                << " request(s)\n";
    } else if (synth->parsed()) {
      if (g.out.empty()) throw UsageError("synth requires --out <directory>");
      spec.seed = g.seed;
      spec.anisotropy_axis_weights = axis_weights;
      const auto data = generate(spec);
      save_synth(data, g.out, fmt == EmbeddingFormat::jsonl ? EmbeddingFormat::jsonl : EmbeddingFormat::emb1);
      std::cerr << "wrote " << data.corpus.num_documents() << " documents and " << data.corpus.num_questions()
                << " questions to " << g.out << "\n";
    } else if (eval->parsed()) {
      const auto r = run_pipeline(to_inputs(eval_flags, g), to_options(eval_flags, g));
      emit(g.out, serialize_report(r, !eval_flags.no_timestamps));
    } else if (threshold->parsed()) {
      auto opt = to_options(threshold_flags, g);
      opt.run_overlap = false;
      opt.run_isotropy = false;
      const auto r = run_pipeline(to_inputs(threshold_flags, g), opt);
      emit(g.out, serialize_report(r, !threshold_flags.no_timestamps));
    } else if (overlap->parsed()) {
      auto opt = to_options(overlap_flags, g);
      opt.run_isotropy = false;
      const auto in = to_inputs(overlap_flags, g);
      const auto r = run_pipeline(in, opt);
      if (!density_csv_path.empty() || !density_svg_path.empty()) {
        const auto data = load_inputs(in);
        const auto table = build_retrieval_table(data.corpus, data.questions, data.documents, g.top_k, g.threads);
        const auto sets = build_similarity_sets(table, data.questions, data.documents, r.config.rand_seed);
        const auto plot = density_export(sets, overlap_flags.bins);
        if (!density_csv_path.empty()) write_file_atomic(density_csv_path, density_csv(plot));
        if (!density_svg_path.empty()) write_file_atomic(density_svg_path, render_density_svg(plot, overlap_flags.model_label));
      }
      emit(g.out, serialize_report(r, !overlap_flags.no_timestamps));
    } else if (isotropy->parsed()) {
      if (!iso_emb.empty()) {
        const auto m = load_embeddings(iso_emb, fmt);
        ojson out = ojson::array();
        std::vector<TransformKind> kinds = all_transforms();
        if (!isotropy_flags.transforms.empty()) {
          kinds.clear();
          for (const auto& t : isotropy_flags.transforms) kinds.push_back(parse_transform(t));
        }
        for (auto kind : kinds) {
          Warnings w;
          const auto x = fit_transform(kind, to_eigen(m), isotropy_flags.pca_components);
          w = x.warnings;
          const auto y = x.apply(to_eigen(m));
          const double ia = isotropy_partition(y, &w);
          out.push_back({{"transform", to_string(kind)}, {"i_a", ia}, {"i_b", isoscore(y)}, {"warnings", w}});
        }
        emit(g.out, out.dump(2) + "\n");
      } else {
        if (isotropy_flags.docs.empty() || isotropy_flags.questions.empty() || isotropy_flags.doc_emb.empty() ||
            isotropy_flags.question_emb.empty())
          throw UsageError("isotropy needs --emb, or all of --docs --questions --doc-emb --question-emb");
        auto opt = to_options(isotropy_flags, g);
        opt.run_threshold = false;
        opt.run_overlap = false;
        const auto r = run_pipeline(to_inputs(isotropy_flags, g), opt);
        emit(g.out, serialize_report(r, !isotropy_flags.no_timestamps));
      }
    } else if (transform->parsed()) {
      if (g.out.empty()) throw UsageError("transform requires --out");
      const auto kind = parse_transform(tf_kind);
      if (kind == TransformKind::baseline) throw UsageError("transform --kind must be standardized, whitened or pca");
      const auto input = load_embeddings(tf_in, fmt);
      const auto fit_source = tf_fit_on.empty() ? input : load_embeddings(tf_fit_on, fmt);
      const auto fitted = fit_transform(kind, to_eigen(fit_source), tf_components);
      for (const auto& w : fitted.warnings) std::cerr << "warning: " << w << "\n";
      auto out = fitted.apply(input);
      if (tf_normalize) out = normalize(out);
      save_embeddings(out, g.out, fmt);
    } else if (sep->parsed()) {
      auto load_norm = [&](const std::string& p) {
        auto m = load_embeddings(p, fmt);
        return m.normalized() ? m : normalize(m);
      };
      auto base = separation(load_norm(base_domain), load_norm(base_agnostic), g.threads);
      auto adapted = separation(load_norm(adapted_domain), load_norm(adapted_agnostic), g.threads);
      const auto rep = compare_separation(std::move(base), std::move(adapted));
      if (!minima_csv.empty()) {
        std::ostringstream csv;
        csv << std::setprecision(17) << "model,index,min_distance\n";
        for (std::size_t i = 0; i < rep.base_minima.size(); ++i) csv << "base," << i << "," << rep.base_minima[i] << "\n";
        for (std::size_t i = 0; i < rep.adapted_minima.size(); ++i)
          csv << "adapted," << i << "," << rep.adapted_minima[i] << "\n";
        write_file_atomic(minima_csv, csv.str());
      }
      emit(g.out, to_json(rep).dump(2) + "\n");
    } else if (corr->parsed()) {
      auto pairs = default_correlation_pairs();
      if (!corr_pairs.empty()) {
        pairs.clear();
        for (const auto& p : corr_pairs) {
          const auto comma = p.find(',');
          if (comma == std::string::npos) throw UsageError("--pair expects x,y");
          pairs.emplace_back(p.substr(0, comma), p.substr(comma + 1));
        }
      }
      const auto table = correlate(load_reports(corr_paths), pairs);
      emit(g.out, render_csv(correlation_table(table)));
    } else if (report->parsed()) {
      emit(g.out, render_tables(load_reports(report_paths), table_format == "csv" ? TableFormat::csv : TableFormat::text));
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
