#pragma once

// Small shared helpers: UTF-8 word handling, CSV/TSV reading, number
// formatting, RFC 3339 timestamps, digests and seeded randomness.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace qsbias {

// ---- text ----------------------------------------------------------------

// Lowercases ASCII, Latin-1, Latin Extended-A, Greek and Cyrillic letters.
// Other code points pass through; malformed bytes become U+FFFD.
std::string utf8_lower(std::string_view text);

// Splits on every code point that is not a letter or digit. Umlauts and
// other non-ASCII letters are word characters.
std::vector<std::string> split_words(std::string_view text);

bool is_digits_only(std::string_view word);
bool has_whitespace(std::string_view word);
std::string_view trim(std::string_view text);

// ---- delimited files -----------------------------------------------------

struct CsvRow {
  std::size_t line = 0;  // 1-based line on which the record starts
  std::vector<std::string> fields;
};

// RFC 4180 reader: quoted fields, doubled quotes, CRLF, leading BOM.
// Throws ParseError with a line number on malformed quoting.
std::vector<CsvRow> parse_csv(std::string_view text);

std::string csv_escape(std::string_view field);

// Tab-separated lines; blank lines and lines starting with '#' are skipped.
std::vector<CsvRow> parse_tsv(std::string_view text);

// ---- numbers -------------------------------------------------------------

// Shortest decimal that round-trips to the same double.
std::string format_double(double value);
// Fixed number of digits after the point.
std::string format_fixed(double value, int decimals);

// ---- time ----------------------------------------------------------------

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

// "2021-03-04T05:06:07Z", with ".sss" only when milliseconds are nonzero.
std::string format_rfc3339(Timestamp ts);
// Accepts 'Z' or a numeric offset; fractional seconds down to milliseconds.
std::optional<Timestamp> parse_rfc3339(std::string_view text);
int year_of(Timestamp ts);
int current_utc_year();

// ---- files ---------------------------------------------------------------

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

std::string sha256_hex(std::string_view data);

// ---- randomness ----------------------------------------------------------

// Derives an independent seed for a named stream ("cluster", "synth", ...).
std::uint64_t substream_seed(std::uint64_t seed, std::string_view name);
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index);

// mt19937_64 with distribution code kept here, so draws are identical
// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  // Index drawn proportionally to nonnegative weights (not all zero).
  std::size_t weighted(const std::vector<double>& weights);

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_normal_;
};

}  // namespace qsbias
