#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <random>

#include "embedeval/ingest.hpp"
#include "fixtures.hpp"

using namespace embedeval;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

EmbeddingMatrix random_matrix(std::mt19937_64& gen, std::size_t rows, std::size_t dim) {
  std::uniform_real_distribution<float> u(-3.0f, 3.0f);
  std::vector<std::string> ids;
  std::vector<float> values;
  for (std::size_t i = 0; i < rows; ++i) {
    ids.push_back("row-" + std::to_string(i) + (i % 3 == 0 ? "-\xc3\xa9" : ""));
    for (std::size_t k = 0; k < dim; ++k) values.push_back(u(gen));
  }
  return EmbeddingMatrix(ids, dim, values, false);
}

bool bit_identical(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
  return a.ids() == b.ids() && a.dim() == b.dim() && a.normalized() == b.normalized() &&
         a.values().size() == b.values().size() &&
         std::memcmp(a.values().data(), b.values().data(), a.values().size() * sizeof(float)) == 0;
}

}  // namespace

TEST(Corpus, LoadsAndValidates) {
  fixtures::TempDir dir;
  write_text(dir.file("d.jsonl"), R"({"id":"a","text":"alpha"}
{"id":"b","text":"beta"}

{"id":"c","text":"gamma"}
)");
  write_text(dir.file("q.jsonl"), R"({"id":"q1","text":"?","gold_id":"a"}
{"id":"q2","text":"?","gold_id":"b"}
{"id":"q3","text":"?","gold_id":"c"}
)");
  const auto c = load_corpus(dir.file("d.jsonl"), dir.file("q.jsonl"));
  EXPECT_EQ(c.num_documents(), 3u);
  EXPECT_EQ(c.num_questions(), 3u);
  EXPECT_EQ(c.gold_index(2), 2u);

  write_text(dir.file("bad.jsonl"), R"({"id":"q1","text":"?","gold_id":"x9"})" "\n");
  EXPECT_THROW(load_corpus(dir.file("d.jsonl"), dir.file("bad.jsonl")), ValidationError);
}

TEST(Corpus, MalformedLineNamesLine) {
  fixtures::TempDir dir;
  write_text(dir.file("d.jsonl"), "{\"id\":\"a\",\"text\":\"alpha\"}\n{not json\n");
  try {
    load_documents(dir.file("d.jsonl"));
    FAIL() << "expected an error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
  }
  write_text(dir.file("e.jsonl"), "{\"id\":\"a\"}\n");
  EXPECT_THROW(load_documents(dir.file("e.jsonl")), ValidationError);
}

TEST(Corpus, SaveLoadRoundTrip) {
  fixtures::TempDir dir;
  const auto toy = fixtures::toy();
  save_corpus(toy.corpus, dir.file("d.jsonl"), dir.file("q.jsonl"));
  const auto back = load_corpus(dir.file("d.jsonl"), dir.file("q.jsonl"));
  EXPECT_EQ(back.document_ids(), toy.corpus.document_ids());
  EXPECT_EQ(back.question_ids(), toy.corpus.question_ids());
  for (std::size_t q = 0; q < 3; ++q) EXPECT_EQ(back.gold_index(q), toy.corpus.gold_index(q));
}

TEST(Emb1, RoundTripBitExactProperty) {
  std::mt19937_64 gen(2024);
  fixtures::TempDir dir;
  for (int t = 0; t < 50; ++t) {
    const auto m = random_matrix(gen, 1 + t % 13, 1 + t % 7);
    EXPECT_TRUE(bit_identical(decode_emb1(encode_emb1(m)), m));
    save_embeddings(m, dir.file("m.emb"));
    EXPECT_TRUE(bit_identical(load_embeddings(dir.file("m.emb")), m));
  }
}

TEST(Emb1, HeaderLayout) {
  const EmbeddingMatrix m({"x"}, 2, {1.0f, -2.0f}, false);
  const auto bytes = encode_emb1(m);
  ASSERT_EQ(bytes.size(), 17u + 8u + 2u + 1u);
  EXPECT_EQ(bytes.substr(0, 4), "EMB1");
  const unsigned char* b = reinterpret_cast<const unsigned char*>(bytes.data());
  EXPECT_EQ(b[4], 1);   // version
  EXPECT_EQ(b[8], 1);   // count
  EXPECT_EQ(b[12], 2);  // dim
  EXPECT_EQ(b[16], 0);  // normalized
  // 1.0f little-endian = 00 00 80 3f
  EXPECT_EQ(b[17], 0x00);
  EXPECT_EQ(b[19], 0x80);
  EXPECT_EQ(b[20], 0x3f);
  EXPECT_EQ(b[25], 1);  // id length
  EXPECT_EQ(bytes[27], 'x');
}

TEST(Emb1, RejectsCorruptInput) {
  const EmbeddingMatrix m({"a", "b"}, 3, {1, 2, 3, 4, 5, 6}, false);
  const auto bytes = encode_emb1(m);
  EXPECT_THROW(decode_emb1(bytes.substr(0, bytes.size() - 9)), ValidationError);
  EXPECT_THROW(decode_emb1(bytes + "x"), ValidationError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_emb1(bad_magic), ValidationError);
  auto zero_dim = bytes;
  zero_dim[12] = 0;
  EXPECT_THROW(decode_emb1(zero_dim), ValidationError);
  auto nan_value = bytes;
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(&nan_value[17], &nan, 4);
  EXPECT_THROW(decode_emb1(nan_value), ValidationError);
}

TEST(Jsonl, RoundTripAndRagged) {
  fixtures::TempDir dir;
  std::mt19937_64 gen(1);
  const auto m = random_matrix(gen, 5, 4);
  save_embeddings(m, dir.file("m.jsonl"));
  EXPECT_TRUE(bit_identical(load_embeddings(dir.file("m.jsonl")), m));

  write_text(dir.file("r.jsonl"), R"({"id":"a","vector":[1,2,3]}
{"id":"b","vector":[1,2]}
)");
  EXPECT_THROW(load_embeddings(dir.file("r.jsonl")), ValidationError);
  write_text(dir.file("n.jsonl"), R"({"id":"a","vector":[0.6,0.8]})" "\n");
  EXPECT_TRUE(load_embeddings(dir.file("n.jsonl")).normalized());
}

TEST(Formats, ExplicitFormatOverridesSniffing) {
  fixtures::TempDir dir;
  const EmbeddingMatrix m({"a"}, 2, {1, 2}, false);
  save_embeddings(m, dir.file("m.bin"), EmbeddingFormat::jsonl);
  EXPECT_THROW(load_embeddings(dir.file("m.bin"), EmbeddingFormat::emb1), ValidationError);
  EXPECT_TRUE(bit_identical(load_embeddings(dir.file("m.bin"), EmbeddingFormat::jsonl), m));
  EXPECT_EQ(parse_embedding_format("auto"), EmbeddingFormat::automatic);
  EXPECT_THROW(parse_embedding_format("xml"), UsageError);
}

TEST(Normalize, Examples) {
  const auto n = normalize(EmbeddingMatrix({"a"}, 2, {3, 4}, false));
  EXPECT_TRUE(n.normalized());
  EXPECT_NEAR(n.values()[0], 0.6f, 1e-7);
  EXPECT_NEAR(n.values()[1], 0.8f, 1e-7);
  const auto unit = normalize(EmbeddingMatrix({"a"}, 2, {0.6f, 0.8f}, true));
  EXPECT_NEAR(unit.values()[0], 0.6f, 1e-7);
  EXPECT_NEAR(unit.values()[1], 0.8f, 1e-7);
  try {
    normalize(EmbeddingMatrix({"a", "zero-row"}, 2, {1, 0, 0, 0}, false));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("zero-row"), std::string::npos);
  }
}

TEST(Normalize, IdempotentThroughFiles) {
  fixtures::TempDir dir;
  std::mt19937_64 gen(77);
  const auto x = normalize(random_matrix(gen, 20, 6));
  save_embeddings(x, dir.file("x.emb"));
  const auto y = normalize(load_embeddings(dir.file("x.emb")));
  for (std::size_t i = 0; i < x.values().size(); ++i) EXPECT_NEAR(y.values()[i], x.values()[i], 1e-7);
}

TEST(Align, ReordersAndReports) {
  const EmbeddingMatrix m({"c", "a", "extra", "b"}, 1, {3, 1, 9, 2}, false);
  const auto r = align(m, {"a", "b", "c"});
  EXPECT_EQ(r.matrix.ids(), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(r.matrix.values(), (std::vector<float>{1, 2, 3}));
  EXPECT_EQ(r.dropped, (std::vector<std::string>{"extra"}));
  EXPECT_THROW(align(m, {"a", "zz"}), ValidationError);
}
