#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "ingest.hpp"
#include "retrieval.hpp"

namespace embedeval {

struct SynthSpec {
  std::size_t n_docs = 200;
  std::size_t n_questions = 100;
  std::size_t dim = 32;
  double gold_similarity_mean = 0.8;
  double gold_similarity_std = 0.05;
  double distractor_similarity_mean = 0.2;
  double distractor_similarity_std = 0.05;
  std::vector<double> anisotropy_axis_weights;  // empty means all ones
  std::uint64_t seed = 0;
};

struct SynthExpectation {
  std::string question_id;
  std::string gold_id;
  double gold_similarity = 0.0;  // realized cos(q, gold), exactly as retrieval computes it
  std::size_t rank_lower = 1;    // 1 + #docs scoring strictly above the gold doc
  std::size_t rank_upper = 1;    // 1 + #other docs scoring at least as high
};

struct SynthData {
  QACorpus corpus;
  EmbeddingMatrix documents;
  EmbeddingMatrix questions;
  std::vector<SynthExpectation> expected;
};

inline void validate(const SynthSpec& s) {
  if (s.dim < 2) throw UsageError("synth: dim must be >= 2");
  if (s.n_docs == 0 || s.n_questions == 0) throw UsageError("synth: need at least one document and one question");
  if (!(s.gold_similarity_mean >= -1.0 && s.gold_similarity_mean <= 1.0))
    throw UsageError("synth: gold similarity mean must lie in [-1, 1]");
  if (!(s.distractor_similarity_mean >= 0.0 && s.distractor_similarity_mean < 1.0))
    throw UsageError("synth: distractor similarity mean must lie in [0, 1)");
  if (!(s.gold_similarity_std >= 0.0) || !(s.distractor_similarity_std >= 0.0))
    throw UsageError("synth: standard deviations must be non-negative");
  if (!s.anisotropy_axis_weights.empty()) {
    if (s.anisotropy_axis_weights.size() != s.dim) throw UsageError("synth: need one axis weight per dimension");
    double total = 0.0;
    for (double w : s.anisotropy_axis_weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw UsageError("synth: axis weights must be finite and non-negative");
      total += w;
    }
    if (total == 0.0) throw UsageError("synth: axis weights are all zero");
  }
}

/// Documents: normalize(alpha_i * u + w (.) g_i) with u the unit direction of
/// the axis weights w and g_i standard normal; alpha_i is set so that the
/// expected pairwise cosine is a per-document draw around the distractor
/// mean. Questions: c * gold + sqrt(1 - c^2) * v with v a unit vector
/// orthogonal to the gold row, so cos(q, gold) = c up to float rounding.
inline SynthData generate(const SynthSpec& spec) {
  validate(spec);
  const std::size_t d = spec.dim;
  std::vector<double> w = spec.anisotropy_axis_weights.empty() ? std::vector<double>(d, 1.0) : spec.anisotropy_axis_weights;
  double w_sq = 0.0;
  for (double x : w) w_sq += x * x;
  const double w_norm = std::sqrt(w_sq);

  SeededRng doc_rng(spec.seed, 0);
  std::vector<float> doc_values;
  doc_values.reserve(spec.n_docs * d);
  std::vector<double> raw(d);
  for (std::size_t i = 0; i < spec.n_docs; ++i) {
    const double share = std::clamp(spec.distractor_similarity_mean + spec.distractor_similarity_std * doc_rng.normal(),
                                    0.0, 0.999);
    const double alpha = std::sqrt(share * w_sq / (1.0 - share));
    double norm = 0.0;
    do {
      norm = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        raw[k] = alpha * w[k] / w_norm + w[k] * doc_rng.normal();
        norm += raw[k] * raw[k];
      }
      norm = std::sqrt(norm);
    } while (norm == 0.0);
    for (std::size_t k = 0; k < d; ++k) doc_values.push_back(static_cast<float>(raw[k] / norm));
  }

  std::vector<Document> docs;
  std::vector<std::string> doc_ids;
  for (std::size_t i = 0; i < spec.n_docs; ++i) {
    doc_ids.push_back("d" + std::to_string(i));
    docs.push_back({doc_ids.back(), "synthetic document " + std::to_string(i)});
  }
  EmbeddingMatrix doc_emb(doc_ids, d, std::move(doc_values), true);

  SeededRng q_rng(spec.seed, 1);
  std::vector<Question> questions;
  std::vector<std::string> q_ids;
  std::vector<float> q_values;
  q_values.reserve(spec.n_questions * d);
  std::vector<double> v(d), gold(d), q(d);
  for (std::size_t j = 0; j < spec.n_questions; ++j) {
    const std::size_t g = static_cast<std::size_t>(q_rng.uniform_index(spec.n_docs));
    const double c = std::clamp(spec.gold_similarity_mean + spec.gold_similarity_std * q_rng.normal(), -1.0, 1.0);
    auto grow = doc_emb.row(g);
    double gg = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      gold[k] = grow[k];
      gg += gold[k] * gold[k];
    }
    double vnorm = 0.0;
    do {
      double proj = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        v[k] = q_rng.normal();
        proj += v[k] * gold[k];
      }
      vnorm = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        v[k] -= proj / gg * gold[k];
        vnorm += v[k] * v[k];
      }
      vnorm = std::sqrt(vnorm);
    } while (vnorm < 1e-12);
    const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
    for (std::size_t k = 0; k < d; ++k) q_values.push_back(static_cast<float>(c * gold[k] + s * v[k] / vnorm));
    q_ids.push_back("q" + std::to_string(j));
    questions.push_back({q_ids.back(), "synthetic question " + std::to_string(j), doc_ids[g]});
  }
  EmbeddingMatrix q_emb(q_ids, d, std::move(q_values), true);

  SynthData out{QACorpus(std::move(docs), std::move(questions)), std::move(doc_emb), std::move(q_emb), {}};
  out.expected.reserve(spec.n_questions);
  std::vector<double> row(spec.n_docs);
  for (std::size_t j = 0; j < spec.n_questions; ++j) {
    similarity_row(out.questions.row(j), out.documents, row);
    const std::size_t g = out.corpus.gold_index(j);
    SynthExpectation e{q_ids[j], out.corpus.questions()[j].gold_id, row[g], 1, 1};
    for (std::size_t i = 0; i < spec.n_docs; ++i) {
      if (i == g) continue;
      if (row[i] > row[g]) ++e.rank_lower;
      if (row[i] >= row[g]) ++e.rank_upper;
    }
    out.expected.push_back(std::move(e));
  }
  return out;
}

/// Writes docs.jsonl, questions.jsonl, docs.emb, questions.emb and
/// expected.json into `dir` (created if needed).
inline void save_synth(const SynthData& data, const std::string& dir,
                       EmbeddingFormat format = EmbeddingFormat::emb1) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path root(dir);
  save_corpus(data.corpus, (root / "docs.jsonl").string(), (root / "questions.jsonl").string());
  const char* ext = format == EmbeddingFormat::jsonl ? ".emb.jsonl" : ".emb";
  const auto fmt = format == EmbeddingFormat::jsonl ? EmbeddingFormat::jsonl : EmbeddingFormat::emb1;
  save_embeddings(data.documents, (root / (std::string("docs") + ext)).string(), fmt);
  save_embeddings(data.questions, (root / (std::string("questions") + ext)).string(), fmt);
  nlohmann::ordered_json expected = nlohmann::ordered_json::array();
  for (const auto& e : data.expected)
    expected.push_back({{"question_id", e.question_id},
                        {"gold_id", e.gold_id},
                        {"gold_similarity", e.gold_similarity},
                        {"rank_lower", e.rank_lower},
                        {"rank_upper", e.rank_upper}});
  detail::write_file_bytes((root / "expected.json").string(), expected.dump(2) + "\n");
}

}  // namespace embedeval
