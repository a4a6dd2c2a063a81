#pragma once

// Subjects (searched persons with meta-attributes), ranked suggestion
// snapshots, live autocomplete fetching and line-delimited snapshot storage.

#include <chrono>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qsbias/util.hpp"

namespace qsbias {

inline constexpr int kMaxRank = 10;

enum class Gender { male, female, unknown };
enum class Engine { google, duckduckgo, bing, custom };

const char* to_string(Gender g);
const char* to_string(Engine e);
std::optional<Gender> parse_gender(std::string_view text);
std::optional<Engine> parse_engine(std::string_view text);

struct Subject {
  std::string term_id;
  std::string display_name;
  Gender gender = Gender::unknown;
  std::optional<int> birth_year;
  std::optional<std::string> party;
  std::optional<std::string> federated_state;
};

struct Vocabularies {
  std::set<std::string> parties;
  std::set<std::string> states;
};

// Immutable collection of subjects. Construction enforces unique ids,
// nonempty names, birth years in [1900, current_year] and that every
// party/state value is in the declared vocabularies.
class SubjectRegistry {
 public:
  SubjectRegistry() = default;
  SubjectRegistry(std::vector<Subject> subjects, Vocabularies vocabularies, int current_year);

  const std::vector<Subject>& subjects() const noexcept { return subjects_; }
  const Vocabularies& vocabularies() const noexcept { return vocabularies_; }
  const Subject* find(std::string_view term_id) const;
  std::size_t size() const noexcept { return subjects_.size(); }
  bool empty() const noexcept { return subjects_.empty(); }

 private:
  std::vector<Subject> subjects_;
  Vocabularies vocabularies_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// CSV with header term_id,display_name,gender,birth_year,party,state.
// Vocabularies are the values observed in the file. `current_year`
// bounds birth_year; nullopt means the current UTC year.
SubjectRegistry parse_subject_registry(std::string_view csv,
                                       std::optional<int> current_year = std::nullopt);
std::string write_subject_registry(const SubjectRegistry& registry);

struct Suggestion {
  int rank = 0;
  std::string text;

  bool operator==(const Suggestion&) const = default;
};

struct SuggestionSnapshot {
  std::string term_id;
  Engine engine = Engine::google;
  Timestamp timestamp{};
  std::string language;
  std::vector<Suggestion> suggestions;

  bool operator==(const SuggestionSnapshot&) const = default;
};

// Empty when valid, otherwise a short reason such as "rank gap".
std::optional<std::string> snapshot_violation(const SuggestionSnapshot& snapshot);
void validate_snapshot(const SuggestionSnapshot& snapshot);

// Builds ranks 1..n from texts, skipping blank entries and keeping at most
// kMaxRank.
std::vector<Suggestion> rank_suggestions(std::span<const std::string> texts);

// ---- fetching ------------------------------------------------------------

enum class ResponseShape {
  array_pair,   // ["query", ["s1", "s2", ...], ...]   (OpenSearch form)
  object_list,  // [{"phrase": "s1"}, {"phrase": "s2"}]
};

const char* to_string(ResponseShape s);
std::optional<ResponseShape> parse_response_shape(std::string_view text);

struct EndpointConfig {
  // Placeholders: {query} (percent-encoded term) and {lang} (BCP-47 tag).
  std::string url_template;
  ResponseShape response_shape = ResponseShape::array_pair;
  int min_delay_ms = 1000;
  int jitter_ms = 250;
  int timeout_ms = 10000;
};

using EndpointTable = std::map<Engine, EndpointConfig>;

EndpointTable default_endpoints();
// JSON object keyed by engine name; each value has url_template,
// response_shape and min_delay_ms (jitter_ms, timeout_ms optional).
EndpointTable parse_endpoint_config(std::string_view json_text);

std::string percent_encode(std::string_view text);
std::string expand_url_template(const EndpointConfig& config, std::string_view query,
                                std::string_view language);

// Body -> ordered suggestion texts. Throws ProtocolError on bad shape.
std::vector<std::string> parse_suggestion_body(std::string_view body, ResponseShape shape);

// Enforces a per-engine minimum delay between request starts, plus jitter.
// Safe to share between threads.
class RateLimiter {
 public:
  explicit RateLimiter(std::uint64_t seed = 0) : rng_(seed) {}

  // Blocks until a request to `engine` may start.
  void acquire(Engine engine, const EndpointConfig& config);

 private:
  std::mutex mutex_;
  Rng rng_;
  std::map<Engine, std::chrono::steady_clock::time_point> next_allowed_;
};

// Sends only the query and language. Preserves server order, truncates to
// kMaxRank and stamps the time of receipt.
SuggestionSnapshot fetch_suggestions(Engine engine, const std::string& term_id,
                                     std::string_view query, std::string_view language,
                                     const EndpointConfig& config,
                                     RateLimiter* limiter = nullptr);

// ---- storage -------------------------------------------------------------

std::string snapshot_to_json_line(const SuggestionSnapshot& snapshot);
SuggestionSnapshot snapshot_from_json_line(std::string_view line);

// Appends one JSON object per snapshot. An empty list leaves the file
// untouched. Returns the number of lines written.
std::size_t append_snapshots(const std::filesystem::path& path,
                             std::span<const SuggestionSnapshot> snapshots);

struct SnapshotFilter {
  std::optional<Engine> engine;
  std::optional<Timestamp> from;  // inclusive
  std::optional<Timestamp> to;    // inclusive
  std::optional<std::set<std::string>> term_ids;

  bool matches(const SuggestionSnapshot& s) const;
};

struct LineIssue {
  std::size_t line = 0;
  std::string message;
};

struct SnapshotLoad {
  std::vector<SuggestionSnapshot> snapshots;
  std::vector<LineIssue> issues;
};

// Invalid lines are collected into `issues`; in strict mode the first one
// throws instead.
SnapshotLoad load_snapshots(const std::filesystem::path& path, const SnapshotFilter& filter = {},
                            bool strict = false);
SnapshotLoad parse_snapshot_lines(std::string_view text, const SnapshotFilter& filter = {},
                                  bool strict = false);

}  // namespace qsbias
