#pragma once

// Corpus and embedding file formats.
//
// Corpus/question files: one JSON object per line, {"id", "text"} and
// {"id", "text", "gold_id"} respectively. Blank lines are ignored.
//
// EMB1 binary (all integers little-endian):
//   "EMB1" | u32 version=1 | u32 count | u32 dim | u8 normalized
//   | count*dim f32 row-major | count * (u16 byte length, UTF-8 id bytes)
//
// Embedding JSONL: one {"id", "vector": [...]} object per line.

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "core.hpp"

namespace embedeval {

enum class EmbeddingFormat { automatic, jsonl, emb1 };

inline EmbeddingFormat parse_embedding_format(const std::string& s) {
  if (s == "auto") return EmbeddingFormat::automatic;
  if (s == "jsonl") return EmbeddingFormat::jsonl;
  if (s == "emb1") return EmbeddingFormat::emb1;
  throw UsageError("unknown embedding format '" + s + "' (expected auto|jsonl|emb1)");
}

namespace detail {

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("write to '" + path + "' failed");
}

template <class Fn>
void for_each_json_line(const std::string& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw ValidationError(path + ":" + std::to_string(line_no) + ": expected a JSON object");
    try {
      fn(obj, line_no);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline std::string string_field(const nlohmann::json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) throw ValidationError(where + ": missing string field '" + key + "'");
  return it->get<std::string>();
}

template <class T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<std::conditional_t<std::is_floating_point_v<T>, std::uint32_t, T>>;
  U bits;
  if constexpr (std::is_floating_point_v<T>) bits = std::bit_cast<std::uint32_t>(value);
  else bits = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

template <class U>
U get_le(const std::string& in, std::size_t offset) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

inline std::vector<Document> load_documents(const std::string& path) {
  std::vector<Document> docs;
  detail::for_each_json_line(path, [&](const nlohmann::json& obj, std::size_t line) {
    const auto where = path + ":" + std::to_string(line);
    docs.push_back({detail::string_field(obj, "id", where), detail::string_field(obj, "text", where)});
  });
  return docs;
}

inline std::vector<Question> load_questions(const std::string& path) {
  std::vector<Question> questions;
  detail::for_each_json_line(path, [&](const nlohmann::json& obj, std::size_t line) {
    const auto where = path + ":" + std::to_string(line);
    questions.push_back({detail::string_field(obj, "id", where), detail::string_field(obj, "text", where),
                         detail::string_field(obj, "gold_id", where)});
  });
  return questions;
}

/// Loads and joins the two files; throws ValidationError on malformed lines,
/// duplicate ids or dangling gold ids.
inline QACorpus load_corpus(const std::string& doc_path, const std::string& question_path) {
  return QACorpus(load_documents(doc_path), load_questions(question_path));
}

inline void save_corpus(const QACorpus& corpus, const std::string& doc_path, const std::string& question_path) {
  std::string docs, questions;
  for (const auto& d : corpus.documents())
    docs += nlohmann::ordered_json{{"id", d.id}, {"text", d.text}}.dump() + "\n";
  for (const auto& q : corpus.questions())
    questions += nlohmann::ordered_json{{"id", q.id}, {"text", q.text}, {"gold_id", q.gold_id}}.dump() + "\n";
  detail::write_file_bytes(doc_path, docs);
  detail::write_file_bytes(question_path, questions);
}

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 4> kEmb1Magic{'E', 'M', 'B', '1'};
inline constexpr std::uint32_t kEmb1Version = 1;
inline constexpr std::size_t kEmb1HeaderSize = 4 + 4 + 4 + 4 + 1;

inline std::string encode_emb1(const EmbeddingMatrix& m) {
  std::string out(kEmb1Magic.begin(), kEmb1Magic.end());
  detail::put_le<std::uint32_t>(out, kEmb1Version);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.dim()));
  out.push_back(m.normalized() ? 1 : 0);
  out.reserve(out.size() + m.values().size() * 4);
  for (float v : m.values()) detail::put_le<float>(out, v);
  for (const auto& id : m.ids()) {
    if (id.size() > 0xFFFF) throw ValidationError("id longer than 65535 bytes cannot be stored in EMB1");
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(id.size()));
    out += id;
  }
  return out;
}

inline EmbeddingMatrix decode_emb1(const std::string& bytes, const std::string& where = "<memory>") {
  if (bytes.size() < kEmb1HeaderSize || !std::equal(kEmb1Magic.begin(), kEmb1Magic.end(), bytes.begin()))
    throw ValidationError(where + ": not an EMB1 file (magic mismatch)");
  const auto version = detail::get_le<std::uint32_t>(bytes, 4);
  if (version != kEmb1Version)
    throw ValidationError(where + ": unsupported EMB1 version " + std::to_string(version));
  const auto count = detail::get_le<std::uint32_t>(bytes, 8);
  const auto dim = detail::get_le<std::uint32_t>(bytes, 12);
  const auto flag = static_cast<unsigned char>(bytes[16]);
  if (dim == 0) throw ValidationError(where + ": dimension is 0");
  if (flag > 1) throw ValidationError(where + ": normalized flag must be 0 or 1");

  const std::size_t payload = static_cast<std::size_t>(count) * dim * 4;
  if (bytes.size() < kEmb1HeaderSize + payload)
    throw ValidationError(where + ": length mismatch (payload truncated)");
  std::vector<float> values(static_cast<std::size_t>(count) * dim);
  std::size_t off = kEmb1HeaderSize;
  for (auto& v : values) {
    v = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, off));
    off += 4;
  }
  std::vector<std::string> ids;
  ids.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    if (off + 2 > bytes.size()) throw ValidationError(where + ": length mismatch (id table truncated)");
    const auto len = detail::get_le<std::uint16_t>(bytes, off);
    off += 2;
    if (off + len > bytes.size()) throw ValidationError(where + ": length mismatch (id table truncated)");
    ids.emplace_back(bytes.substr(off, len));
    off += len;
  }
  if (off != bytes.size()) throw ValidationError(where + ": length mismatch (trailing bytes)");
  return EmbeddingMatrix(std::move(ids), dim, std::move(values), flag == 1);
}

inline EmbeddingMatrix load_embeddings_jsonl(const std::string& path) {
  std::vector<std::string> ids;
  std::vector<float> values;
  std::size_t dim = 0;
  detail::for_each_json_line(path, [&](const nlohmann::json& obj, std::size_t line) {
    const auto where = path + ":" + std::to_string(line);
    ids.push_back(detail::string_field(obj, "id", where));
    auto it = obj.find("vector");
    if (it == obj.end() || !it->is_array()) throw ValidationError(where + ": missing array field 'vector'");
    if (ids.size() == 1) dim = it->size();
    if (it->size() != dim)
      throw ValidationError(where + ": dimension " + std::to_string(it->size()) + " differs from " +
                            std::to_string(dim));
    for (const auto& x : *it) {
      if (!x.is_number()) throw ValidationError(where + ": non-numeric vector entry");
      values.push_back(static_cast<float>(x.get<double>()));
    }
  });
  if (ids.empty()) throw ValidationError(path + ": no embeddings");
  // Flag is inferred, the data itself is never rescaled here.
  bool unit = true;
  for (std::size_t i = 0; i < ids.size() && unit; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) s += double(values[i * dim + k]) * double(values[i * dim + k]);
    unit = std::abs(std::sqrt(s) - 1.0) <= kUnitNormTolerance;
  }
  return EmbeddingMatrix(std::move(ids), dim, std::move(values), unit);
}

inline std::string encode_embeddings_jsonl(const EmbeddingMatrix& m) {
  std::string out;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    nlohmann::ordered_json row{{"id", m.ids()[i]}, {"vector", nlohmann::json::array()}};
    for (float v : m.row(i)) row["vector"].push_back(static_cast<double>(v));
    out += row.dump() + "\n";
  }
  return out;
}

/// Loads EMB1 or JSONL; `automatic` sniffs the magic bytes.
inline EmbeddingMatrix load_embeddings(const std::string& path,
                                       EmbeddingFormat format = EmbeddingFormat::automatic) {
  if (format == EmbeddingFormat::jsonl) return load_embeddings_jsonl(path);
  const std::string bytes = detail::read_file_bytes(path);
  if (format == EmbeddingFormat::emb1 ||
      (bytes.size() >= 4 && std::equal(kEmb1Magic.begin(), kEmb1Magic.end(), bytes.begin())))
    return decode_emb1(bytes, path);
  return load_embeddings_jsonl(path);
}

/// `automatic` picks JSONL for *.jsonl / *.json paths and EMB1 otherwise.
inline void save_embeddings(const EmbeddingMatrix& m, const std::string& path,
                            EmbeddingFormat format = EmbeddingFormat::automatic) {
  if (format == EmbeddingFormat::automatic) {
    const bool json_ext = path.ends_with(".jsonl") || path.ends_with(".json");
    format = json_ext ? EmbeddingFormat::jsonl : EmbeddingFormat::emb1;
  }
  detail::write_file_bytes(path, format == EmbeddingFormat::emb1 ? encode_emb1(m) : encode_embeddings_jsonl(m));
}

/// Scales every row to unit L2 norm (computed in double).
inline EmbeddingMatrix normalize(const EmbeddingMatrix& m) {
  std::vector<float> values(m.values().size());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double norm = m.row_norm(i);
    if (norm == 0.0) throw ValidationError("cannot normalize zero-norm row '" + m.ids()[i] + "'");
    auto row = m.row(i);
    for (std::size_t k = 0; k < m.dim(); ++k)
      values[i * m.dim() + k] = static_cast<float>(static_cast<double>(row[k]) / norm);
  }
  return EmbeddingMatrix(m.ids(), m.dim(), std::move(values), true);
}

struct AlignResult {
  EmbeddingMatrix matrix;
  std::vector<std::string> dropped;  // ids present in the matrix but not requested
};

/// Reorders rows to `ids` order. Missing ids are an error; extras are dropped
/// and listed.
inline AlignResult align(const EmbeddingMatrix& m, const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::size_t> index;
  index.reserve(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) index.emplace(m.ids()[i], i);

  std::vector<std::string> missing;
  std::vector<float> values;
  values.reserve(ids.size() * m.dim());
  std::vector<bool> used(m.rows(), false);
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) {
      missing.push_back(id);
      continue;
    }
    used[it->second] = true;
    auto row = m.row(it->second);
    values.insert(values.end(), row.begin(), row.end());
  }
  if (!missing.empty()) {
    std::string msg = "embeddings missing for " + std::to_string(missing.size()) + " id(s):";
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) msg += " '" + missing[i] + "'";
    if (missing.size() > 10) msg += " ...";
    throw ValidationError(msg);
  }
  AlignResult result{EmbeddingMatrix(ids, m.dim(), std::move(values), m.normalized()), {}};
  for (std::size_t i = 0; i < m.rows(); ++i)
    if (!used[i]) result.dropped.push_back(m.ids()[i]);
  return result;
}

}  // namespace embedeval
