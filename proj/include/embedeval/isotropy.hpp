#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bootstrap.hpp"
#include "core.hpp"
#include "ingest.hpp"
#include "retrieval.hpp"

namespace embedeval {

using Warnings = std::vector<std::string>;

namespace detail {

inline void warn(Warnings* sink, std::string msg) {
  if (sink) sink->push_back(std::move(msg));
}

}  // namespace detail

inline Eigen::MatrixXd to_eigen(const EmbeddingMatrix& m) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.dim()));
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    for (std::size_t k = 0; k < m.dim(); ++k) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = row[k];
  }
  return out;
}

inline EmbeddingMatrix from_eigen(const Eigen::MatrixXd& x, std::vector<std::string> ids) {
  std::vector<float> values(static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index k = 0; k < x.cols(); ++k)
      values[static_cast<std::size_t>(i * x.cols() + k)] = static_cast<float>(x(i, k));
  return EmbeddingMatrix(std::move(ids), static_cast<std::size_t>(x.cols()), std::move(values), false);
}

/// Symmetric eigendecomposition, eigenvalues descending, each eigenvector
/// signed so its largest-magnitude component (first on ties) is positive.
struct SortedEigen {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;  // columns
};

inline SortedEigen sorted_eigen(const Eigen::MatrixXd& symmetric, Warnings* warnings = nullptr) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(symmetric);
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
  if (solver.info() == Eigen::Success) {
    values = solver.eigenvalues();
    vectors = solver.eigenvectors();
  } else {
    detail::warn(warnings, "self-adjoint eigensolver did not converge; falling back to SVD");
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(symmetric, Eigen::ComputeFullU);
    values = svd.singularValues();
    vectors = svd.matrixU();
  }
  const Eigen::Index n = values.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values(a) > values(b); });

  SortedEigen out{Eigen::VectorXd(n), Eigen::MatrixXd(vectors.rows(), n)};
  for (Eigen::Index c = 0; c < n; ++c) {
    const Eigen::Index src = order[static_cast<std::size_t>(c)];
    Eigen::VectorXd v = vectors.col(src);
    Eigen::Index arg = 0;
    for (Eigen::Index r = 1; r < v.size(); ++r)
      if (std::abs(v(r)) > std::abs(v(arg))) arg = r;
    if (v(arg) < 0) v = -v;
    out.values(c) = values(src);
    out.vectors.col(c) = v;
  }
  return out;
}

inline Eigen::RowVectorXd column_mean(const Eigen::MatrixXd& x) { return x.colwise().mean(); }

/// Population (1/n) covariance.
inline Eigen::MatrixXd covariance(const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd centered = x.rowwise() - column_mean(x);
  return centered.transpose() * centered / static_cast<double>(x.rows());
}

// ---------------------------------------------------------------------------
// Isotropy scores
// ---------------------------------------------------------------------------

/// Partition-function isotropy: Z(c) = sum_rows exp(<c, row>) over the unit
/// eigenvectors of W^T W taken with both signs; returns min Z / max Z.
inline double isotropy_partition(const Eigen::MatrixXd& w, Warnings* warnings = nullptr) {
  if (w.rows() < 2) throw UsageError("isotropy_partition needs at least two rows");
  if (!w.allFinite()) throw ValidationError("isotropy_partition: non-finite entries");
  const SortedEigen eig = sorted_eigen(w.transpose() * w, warnings);
  const Eigen::MatrixXd proj = w * eig.vectors;  // rows x probes

  auto log_z = [&](Eigen::Index col, double sign) {
    double hi = -std::numeric_limits<double>::infinity();
    for (Eigen::Index r = 0; r < proj.rows(); ++r) hi = std::max(hi, sign * proj(r, col));
    double acc = 0.0;
    for (Eigen::Index r = 0; r < proj.rows(); ++r) acc += std::exp(sign * proj(r, col) - hi);
    return hi + std::log(acc);
  };
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  for (Eigen::Index c = 0; c < proj.cols(); ++c) {
    if (!eig.vectors.col(c).allFinite()) continue;
    for (double sign : {1.0, -1.0}) {
      const double z = log_z(c, sign);
      lo = std::min(lo, z);
      hi = std::max(hi, z);
    }
    ++used;
  }
  if (used == 0) throw ValidationError("isotropy_partition: no usable eigenvectors");
  if (used < static_cast<std::size_t>(proj.cols()))
    detail::warn(warnings, "isotropy_partition: " + std::to_string(proj.cols() - static_cast<Eigen::Index>(used)) +
                               " eigenvector(s) discarded");
  return std::exp(lo - hi);
}

inline double isotropy_partition(const EmbeddingMatrix& m, Warnings* warnings = nullptr) {
  return isotropy_partition(to_eigen(m), warnings);
}

/// IsoScore from the variances along principal axes.
inline double isoscore_from_variances(std::span<const double> variances) {
  const auto n = static_cast<double>(variances.size());
  if (variances.size() < 2) throw UsageError("isoscore needs dimension >= 2");
  double norm = 0.0;
  for (double v : variances) norm += std::max(v, 0.0) * std::max(v, 0.0);
  norm = std::sqrt(norm);
  if (!(norm > 0.0)) throw ValidationError("isoscore: zero total variance");
  const double root_n = std::sqrt(n);
  double defect_sq = 0.0;
  for (double v : variances) {
    const double scaled = root_n * std::max(v, 0.0) / norm;
    defect_sq += (scaled - 1.0) * (scaled - 1.0);
  }
  const double delta_sq = defect_sq / (2.0 * (n - root_n));
  const double phi = std::pow(n - delta_sq * (n - root_n), 2) / (n * n);
  return std::clamp((n * phi - 1.0) / (n - 1.0), 0.0, 1.0);
}

inline double isoscore(const Eigen::MatrixXd& x) {
  if (x.rows() < 2) throw UsageError("isoscore needs at least two rows");
  if (x.cols() < 2) throw UsageError("isoscore needs dimension >= 2");
  // Variances of the PCA-reoriented data are the covariance eigenvalues.
  const SortedEigen eig = sorted_eigen(covariance(x));
  std::vector<double> variances(eig.values.data(), eig.values.data() + eig.values.size());
  return isoscore_from_variances(variances);
}

inline double isoscore(const EmbeddingMatrix& m) { return isoscore(to_eigen(m)); }

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

enum class TransformKind { baseline, standardized, whitened, pca };

inline const char* to_string(TransformKind k) {
  switch (k) {
    case TransformKind::baseline: return "baseline";
    case TransformKind::standardized: return "standardized";
    case TransformKind::whitened: return "whitened";
    case TransformKind::pca: return "pca";
  }
  return "?";
}

inline TransformKind parse_transform(const std::string& s) {
  if (s == "baseline") return TransformKind::baseline;
  if (s == "standardized" || s == "standardize") return TransformKind::standardized;
  if (s == "whitened" || s == "whiten") return TransformKind::whitened;
  if (s == "pca") return TransformKind::pca;
  throw UsageError("unknown transform '" + s + "' (expected baseline|standardized|whitened|pca)");
}

inline const std::vector<TransformKind>& all_transforms() {
  static const std::vector<TransformKind> kinds{TransformKind::baseline, TransformKind::standardized,
                                                TransformKind::whitened, TransformKind::pca};
  return kinds;
}

inline constexpr double kWhitenEigenFloor = 1e-10;

inline std::size_t default_pca_components(std::size_t dim) { return std::max<std::size_t>(1, dim / 100); }

/// y = (x - mean) * projection, fitted on one matrix and applicable to others.
struct FittedTransform {
  TransformKind kind = TransformKind::baseline;
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd projection;
  Warnings warnings;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    if (x.cols() != projection.rows()) throw ValidationError("transform applied to matrix of different dimension");
    return (x.rowwise() - mean) * projection;
  }

  EmbeddingMatrix apply(const EmbeddingMatrix& m) const { return from_eigen(apply(to_eigen(m)), m.ids()); }
};

inline FittedTransform fit_identity(const Eigen::MatrixXd& x) {
  return {TransformKind::baseline, Eigen::RowVectorXd::Zero(x.cols()), Eigen::MatrixXd::Identity(x.cols(), x.cols()), {}};
}

/// Per-dimension mean 0 and population standard deviation 1; zero-variance
/// dimensions map to 0.
inline FittedTransform fit_standardize(const Eigen::MatrixXd& x) {
  if (x.rows() < 1) throw UsageError("standardize needs at least one row");
  FittedTransform t{TransformKind::standardized, column_mean(x), Eigen::MatrixXd::Zero(x.cols(), x.cols()), {}};
  const Eigen::MatrixXd centered = x.rowwise() - t.mean;
  std::size_t constant = 0;
  for (Eigen::Index k = 0; k < x.cols(); ++k) {
    const double sd = std::sqrt(centered.col(k).squaredNorm() / static_cast<double>(x.rows()));
    if (sd > 0.0) t.projection(k, k) = 1.0 / sd;
    else ++constant;
  }
  if (constant > 0)
    t.warnings.push_back("standardize: " + std::to_string(constant) + " zero-variance dimension(s) left at 0");
  return t;
}

/// PCA whitening: centre, rotate onto principal axes, scale each axis by
/// 1/sqrt(eigenvalue). Axes with eigenvalue below 1e-10 are zeroed.
inline FittedTransform fit_whiten(const Eigen::MatrixXd& x) {
  if (x.rows() < 2) throw UsageError("whiten needs at least two rows");
  FittedTransform t{TransformKind::whitened, column_mean(x), {}, {}};
  const SortedEigen eig = sorted_eigen(covariance(x), &t.warnings);
  Eigen::VectorXd scale(eig.values.size());
  std::size_t clamped = 0;
  for (Eigen::Index i = 0; i < scale.size(); ++i) {
    if (eig.values(i) < kWhitenEigenFloor) {
      scale(i) = 0.0;
      ++clamped;
    } else {
      scale(i) = 1.0 / std::sqrt(eig.values(i));
    }
  }
  if (clamped > 0)
    t.warnings.push_back("whiten: " + std::to_string(clamped) + " axis(es) with eigenvalue < 1e-10 clamped");
  t.projection = eig.vectors * scale.asDiagonal();
  return t;
}

/// Centring plus removal of the top `components` principal directions.
inline FittedTransform fit_pca_remove(const Eigen::MatrixXd& x, std::size_t components) {
  if (components >= static_cast<std::size_t>(x.cols()))
    throw UsageError("pca_remove: D=" + std::to_string(components) + " must be below dimension " +
                     std::to_string(x.cols()));
  if (x.rows() < 1) throw UsageError("pca_remove needs at least one row");
  FittedTransform t{TransformKind::pca, column_mean(x), Eigen::MatrixXd::Identity(x.cols(), x.cols()), {}};
  if (components == 0) return t;
  const SortedEigen eig = sorted_eigen(covariance(x), &t.warnings);
  const Eigen::MatrixXd top = eig.vectors.leftCols(static_cast<Eigen::Index>(components));
  t.projection -= top * top.transpose();
  return t;
}

inline FittedTransform fit_transform(TransformKind kind, const Eigen::MatrixXd& x,
                                     std::optional<std::size_t> pca_components = std::nullopt) {
  switch (kind) {
    case TransformKind::baseline: return fit_identity(x);
    case TransformKind::standardized: return fit_standardize(x);
    case TransformKind::whitened: return fit_whiten(x);
    case TransformKind::pca:
      return fit_pca_remove(x, pca_components.value_or(default_pca_components(static_cast<std::size_t>(x.cols()))));
  }
  throw UsageError("unknown transform");
}

namespace detail {

inline EmbeddingMatrix fit_apply(const FittedTransform& t, const EmbeddingMatrix& m, Warnings* warnings) {
  if (warnings) warnings->insert(warnings->end(), t.warnings.begin(), t.warnings.end());
  return t.apply(m);
}

}  // namespace detail

inline EmbeddingMatrix standardize(const EmbeddingMatrix& m, Warnings* warnings = nullptr) {
  const auto x = to_eigen(m);
  return detail::fit_apply(fit_standardize(x), m, warnings);
}

inline EmbeddingMatrix whiten(const EmbeddingMatrix& m, Warnings* warnings = nullptr) {
  return detail::fit_apply(fit_whiten(to_eigen(m)), m, warnings);
}

inline EmbeddingMatrix pca_remove(const EmbeddingMatrix& m, std::size_t components, Warnings* warnings = nullptr) {
  return detail::fit_apply(fit_pca_remove(to_eigen(m), components), m, warnings);
}

// ---------------------------------------------------------------------------
// Transform + re-evaluation
// ---------------------------------------------------------------------------

struct IsotropyReport {
  TransformKind transform = TransformKind::baseline;
  double i_a = 0.0;
  double i_b = 0.0;
  MetricSummary accuracy;
  Warnings warnings;

  friend bool operator==(const IsotropyReport&, const IsotropyReport&) = default;
};

struct TransformedPair {
  EmbeddingMatrix documents;  // transformed, not normalized
  EmbeddingMatrix questions;
  Warnings warnings;
};

/// Fits on the documents and applies the same map to documents and questions.
inline TransformedPair transform_pair(TransformKind kind, const EmbeddingMatrix& d_emb, const EmbeddingMatrix& q_emb,
                                      std::optional<std::size_t> pca_components = std::nullopt) {
  if (kind == TransformKind::baseline) return {d_emb, q_emb, {}};
  const FittedTransform t = fit_transform(kind, to_eigen(d_emb), pca_components);
  return {t.apply(d_emb), t.apply(q_emb), t.warnings};
}

/// I_A and I_B on the transformed documents; accuracy re-bootstrapped after
/// re-normalizing both sides. The baseline skips the transform entirely.
inline IsotropyReport transform_and_eval(const QACorpus& corpus, const EmbeddingMatrix& q_emb,
                                         const EmbeddingMatrix& d_emb, TransformKind kind, const BootstrapPlan& plan,
                                         std::size_t k, std::optional<std::size_t> pca_components = std::nullopt,
                                         unsigned threads = 1) {
  IsotropyReport report;
  report.transform = kind;
  auto pair = transform_pair(kind, d_emb, q_emb, pca_components);
  report.warnings = std::move(pair.warnings);
  const auto docs = to_eigen(pair.documents);
  report.i_a = isotropy_partition(docs, &report.warnings);
  report.i_b = isoscore(docs);
  if (kind == TransformKind::baseline) {
    report.accuracy = bootstrap_metric(build_retrieval_table(corpus, q_emb, d_emb, k, threads), plan,
                                       Metric::accuracy, threads);
  } else {
    const auto nd = normalize(pair.documents);
    const auto nq = normalize(pair.questions);
    report.accuracy =
        bootstrap_metric(build_retrieval_table(corpus, nq, nd, k, threads), plan, Metric::accuracy, threads);
  }
  return report;
}

}  // namespace embedeval
