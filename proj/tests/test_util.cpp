#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "qsbias/error.hpp"
#include "qsbias/util.hpp"

using namespace qsbias;

TEST(Text, LowercasesGermanLetters) {
  EXPECT_EQ(utf8_lower("ÄÖÜ Straße GRÜNE"), "äöü straße grüne");
  EXPECT_EQ(utf8_lower("ΑΒΓ Москва"), "αβγ москва");
  EXPECT_EQ(utf8_lower("ŁÓDŹ"), "łódź");
}

TEST(Text, SplitsOnNonWordCodePoints) {
  EXPECT_EQ(split_words("Volker Beck (Köln)"), (std::vector<std::string>{"Volker", "Beck", "Köln"}));
  EXPECT_EQ(split_words("a-b_c,d.e!f"), (std::vector<std::string>{"a", "b", "c", "d", "e", "f"}));
  EXPECT_EQ(split_words("  "), std::vector<std::string>{});
  EXPECT_EQ(split_words("mp3 2021"), (std::vector<std::string>{"mp3", "2021"}));
}

TEST(Text, DigitsAndWhitespace) {
  EXPECT_TRUE(is_digits_only("2021"));
  EXPECT_FALSE(is_digits_only("g20"));
  EXPECT_FALSE(is_digits_only(""));
  EXPECT_TRUE(has_whitespace("a b"));
  EXPECT_FALSE(has_whitespace("ab"));
  EXPECT_EQ(trim("  x y \n"), "x y");
}

TEST(Csv, QuotedFieldsAndLines) {
  const auto rows = parse_csv("\xEF\xBB\xBF" "a,b\r\n\"x,1\",\"he said \"\"hi\"\"\"\n\"multi\nline\",z\n");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].fields, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(rows[1].fields, (std::vector<std::string>{"x,1", "he said \"hi\""}));
  EXPECT_EQ(rows[2].line, 3u);
  EXPECT_EQ(rows[2].fields[0], "multi\nline");
}

TEST(Csv, UnterminatedQuoteReportsLine) {
  try {
    parse_csv("a,b\nc,\"open\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_EQ(e.kind(), ErrorKind::parse);
  }
}

TEST(Csv, EscapeRoundTrips) {
  for (std::string s : {"plain", "with,comma", "with \"quote\"", "line\nbreak", ""}) {
    const auto rows = parse_csv(csv_escape(s) + ",end\n");
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].fields[0], s);
  }
}

TEST(Tsv, SkipsCommentsAndBlanks) {
  const auto rows = parse_tsv("# header\n\na\tb\r\nc\td\te\n");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].line, 3u);
  EXPECT_EQ(rows[1].fields.size(), 3u);
}

TEST(Numbers, FormatDoubleRoundTrips) {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const double v = (rng.uniform() - 0.5) * std::pow(10.0, static_cast<double>(rng.below(20)) - 10);
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.0), "0");
  EXPECT_EQ(format_double(0.5), "0.5");
}

TEST(Numbers, FormatFixed) {
  EXPECT_EQ(format_fixed(-0.2, 2), "-0.20");
  EXPECT_EQ(format_fixed(-0.001, 2), "0.00");
  EXPECT_EQ(format_fixed(2.236, 2), "2.24");
}

TEST(Time, Rfc3339RoundTrip) {
  const auto t = parse_rfc3339("2021-03-04T05:06:07.250Z");
  ASSERT_TRUE(t);
  EXPECT_EQ(format_rfc3339(*t), "2021-03-04T05:06:07.250Z");
  EXPECT_EQ(format_rfc3339(*parse_rfc3339("2021-03-04T05:06:07Z")), "2021-03-04T05:06:07Z");
  EXPECT_EQ(*parse_rfc3339("2021-03-04T07:06:07+02:00"), *parse_rfc3339("2021-03-04T05:06:07Z"));
  EXPECT_EQ(year_of(*t), 2021);
}

TEST(Time, RejectsMalformed) {
  EXPECT_FALSE(parse_rfc3339("2021-03-04 05:06:07Z"));
  EXPECT_FALSE(parse_rfc3339("2021-02-30T05:06:07Z"));
  EXPECT_FALSE(parse_rfc3339("2021-03-04T05:06:07"));
  EXPECT_FALSE(parse_rfc3339("2021-03-04T05:06:07Zjunk"));
}

TEST(Digest, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Files, MissingFileIsStorageError) {
  try {
    read_file("/nonexistent/qsbias/file");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::storage);
    EXPECT_EQ(exit_code_for(e.kind()), 5);
  }
}

TEST(Seeds, SubstreamsAreDistinctAndStable) {
  EXPECT_EQ(substream_seed(42, "cluster"), substream_seed(42, "cluster"));
  EXPECT_NE(substream_seed(42, "cluster"), substream_seed(42, "synth"));
  EXPECT_NE(substream_seed(42, "cluster"), substream_seed(43, "cluster"));
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(substream_seed(7, i));
  EXPECT_EQ(seen.size(), 1000u);
}

TEST(RngTest, UniformAndBelowRanges) {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(rng.below(7), 7u);
  }
}

TEST(RngTest, NormalMoments) {
  Rng rng(2);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(RngTest, WeightedFollowsWeightsAndSkipsZeros) {
  Rng rng(3);
  std::vector<int> hits(3);
  for (int i = 0; i < 30000; ++i) ++hits[rng.weighted({1.0, 0.0, 3.0})];
  EXPECT_EQ(hits[1], 0);
  EXPECT_NEAR(hits[2] / 30000.0, 0.75, 0.01);
}

TEST(Errors, ExitCodes) {
  EXPECT_EQ(exit_code_for(ErrorKind::configuration), 2);
  EXPECT_EQ(exit_code_for(ErrorKind::spec), 2);
  EXPECT_EQ(exit_code_for(ErrorKind::validation), 3);
  EXPECT_EQ(exit_code_for(ErrorKind::insufficient_data), 4);
  EXPECT_EQ(exit_code_for(ErrorKind::empty_design), 4);
  EXPECT_EQ(exit_code_for(ErrorKind::storage), 5);
  EXPECT_EQ(exit_code_for(ErrorKind::fetch), 5);
}

TEST(Errors, StageErrorPrefixesStage) {
  const StageError e("stats", Error(ErrorKind::insufficient_data, "no rows"));
  EXPECT_EQ(std::string(e.what()), "stats: no rows");
  EXPECT_EQ(e.kind(), ErrorKind::insufficient_data);
}
