#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <set>
#include <sstream>

#include "qsbias/corpus.hpp"
#include "qsbias/embed.hpp"
#include "qsbias/error.hpp"
#include "qsbias/preprocess.hpp"
#include "qsbias/util.hpp"

using namespace qsbias;

namespace {

const std::string kMini = std::string(QSBIAS_TEST_DATA) + "/mini/";

std::string le_float(float f) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
  std::string out(4, '\0');
  for (int i = 0; i < 4; ++i) out[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  return out;
}

EmbeddingStore random_store(std::size_t rows, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> tokens;
  std::vector<std::vector<double>> values;
  for (std::size_t r = 0; r < rows; ++r) {
    tokens.push_back("tok" + std::to_string(r) + (r % 7 == 0 ? "ü" : ""));
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal() * 3.0;
    values.push_back(v);
  }
  return EmbeddingStore(dim, tokens, values);
}

}  // namespace

TEST(TextFormat, MinimalFixture) {
  const auto store = parse_embedding_text("2 3\na 1 0 0\nb 0 1 0\n");
  EXPECT_EQ(store.dimension(), 3u);
  EXPECT_EQ(store.size(), 2u);
  const auto b = store.find("b");
  ASSERT_TRUE(b);
  EXPECT_EQ((*b)[1], 1.0);
  EXPECT_FALSE(store.find("c"));
}

TEST(TextFormat, RowCountMismatch) {
  try {
    parse_embedding_text("3 3\na 1 0 0\nb 0 1 0\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("row count mismatch"), std::string::npos);
  }
  EXPECT_THROW(parse_embedding_text("1 3\na 1 0 0\nb 0 1 0\n"), ParseError);
}

TEST(TextFormat, ArityAndValueErrors) {
  try {
    parse_embedding_text("2 3\na 1 0 0\nb 0 1\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(parse_embedding_text("1 2\na 1 x\n"), ParseError);
  EXPECT_THROW(parse_embedding_text("1 2\na 1 nan\n"), Error);
  EXPECT_THROW(parse_embedding_text("x y\n"), ParseError);
  EXPECT_THROW(parse_embedding_text(""), ParseError);
}

TEST(TextFormat, LargeRoundTrip) {
  const auto store = random_store(500, 50, 3);
  const auto back = parse_embedding_text(write_embedding_text(store));
  ASSERT_EQ(back.tokens(), store.tokens());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto a = store.row(i);
    const auto b = back.row(i);
    for (std::size_t d = 0; d < store.dimension(); ++d) EXPECT_NEAR(a[d], b[d], 1e-6);
  }
}

TEST(TextFormat, DuplicatesLastWins) {
  const auto store = parse_embedding_text("3 1\na 1\nb 2\na 3\n");
  EXPECT_EQ(store.size(), 2u);
  EXPECT_EQ((*store.find("a"))[0], 3.0);
  EXPECT_EQ(store.duplicates_replaced(), 1u);
}

TEST(BinaryFormat, HandBuiltRecord) {
  const std::string bytes = "1 2\na " + le_float(1.0f) + le_float(2.0f) + "\n";
  const auto store = parse_embedding_binary(bytes);
  EXPECT_EQ(store.dimension(), 2u);
  const auto a = store.find("a");
  ASSERT_TRUE(a);
  EXPECT_EQ((*a)[0], 1.0);
  EXPECT_EQ((*a)[1], 2.0);
}

TEST(BinaryFormat, TruncatedPayload) {
  const std::string bytes = "1 2\na " + le_float(1.0f) + "\x00\x00";
  try {
    parse_embedding_binary(bytes);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated float payload"), std::string::npos);
    EXPECT_GT(e.byte_offset(), 0u);
  }
}

TEST(BinaryFormat, CrossFormatAgreement) {
  const auto store = random_store(200, 16, 4);
  const auto from_binary = parse_embedding_binary(write_embedding_binary(store));
  const auto from_text = parse_embedding_text(write_embedding_text(store));
  ASSERT_EQ(from_binary.tokens(), from_text.tokens());
  for (std::size_t i = 0; i < store.size(); ++i) {
    for (std::size_t d = 0; d < store.dimension(); ++d) {
      const double t = from_text.row(i)[d];
      EXPECT_EQ(from_binary.row(i)[d], static_cast<double>(static_cast<float>(t)));
    }
  }
}

TEST(AutoDetect, PicksFormat) {
  const auto store = random_store(20, 4, 5);
  EXPECT_EQ(parse_embedding_auto(write_embedding_text(store)).tokens(), store.tokens());
  EXPECT_EQ(parse_embedding_auto(write_embedding_binary(store)).tokens(), store.tokens());
}

TEST(Lookup, CoverageCountsMissing) {
  const auto store = parse_embedding_text("2 2\na 1 0\nb 0 1\n");
  const std::vector<std::string> tokens = {"a", "b", "c", "a"};
  const auto e = embed_tokens(tokens, store, false);
  EXPECT_EQ(e.rows.tokens, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(e.rows.vectors.rows(), 2);
  EXPECT_EQ(e.coverage.requested, 3u);
  EXPECT_EQ(e.coverage.found, 2u);
  EXPECT_EQ(e.coverage.missing_tokens, std::vector<std::string>{"c"});
}

TEST(Lookup, NormalizeScalesToUnitLength) {
  const auto store = parse_embedding_text("2 2\na 3 4\nz 0 0\n");
  const std::vector<std::string> tokens = {"a", "z"};
  const auto e = embed_tokens(tokens, store, true);
  EXPECT_DOUBLE_EQ(e.rows.vectors(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(e.rows.vectors(0, 1), 0.8);
  EXPECT_EQ(e.rows.vectors(1, 0), 0.0);
  EXPECT_EQ(e.coverage.zero_vectors, 1u);
}

TEST(Lookup, EmptyStoreIsContractError) {
  const std::vector<std::string> tokens = {"a"};
  try {
    embed_tokens(tokens, EmbeddingStore(), true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::contract);
  }
}

TEST(Lookup, FixtureCoverageMatchesSetIntersection) {
  const auto registry = parse_subject_registry(read_file(kMini + "subjects.csv"));
  PreprocessTables tables;
  tables.lemmas = parse_lemma_table(read_file(kMini + "lemmas.tsv"));
  tables.gazetteer = parse_gazetteer(read_file(kMini + "gazetteer.tsv"));
  tables.stopwords = parse_stopwords(read_file(kMini + "stopwords.txt"));
  const auto corpus = preprocess_corpus(load_snapshots(kMini + "snapshots.jsonl").snapshots, registry, tables);
  std::vector<std::string> words;
  std::set<std::string> requested;
  for (const auto& t : corpus.tokens) {
    words.push_back(t.token);
    requested.insert(t.token);
  }

  // Oracle: first field of every line after the header.
  std::set<std::string> vocabulary;
  std::istringstream in(read_file(kMini + "embeddings.txt"));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) vocabulary.insert(line.substr(0, line.find(' ')));
  std::size_t common = 0;
  for (const auto& w : requested) common += vocabulary.contains(w);

  const auto e = embed_tokens(words, parse_embedding_auto(read_file(kMini + "embeddings.txt")), true);
  EXPECT_EQ(e.coverage.requested, requested.size());
  EXPECT_EQ(e.coverage.found, common);
  EXPECT_EQ(e.coverage.ratio(), static_cast<double>(common) / static_cast<double>(requested.size()));
  EXPECT_LT(e.coverage.ratio(), 1.0);
}

TEST(Store, RejectsBadRows) {
  EXPECT_THROW(EmbeddingStore(2, {"a"}, {{1.0}}), Error);
  EXPECT_THROW(EmbeddingStore(1, {"a"}, {{std::numeric_limits<double>::infinity()}}), Error);
  EXPECT_THROW(EmbeddingStore(0, {}, {}), Error);
}
