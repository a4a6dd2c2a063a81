#pragma once

// Pre-trained word vectors in the word2vec text and binary formats.

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace qsbias {

// Immutable token -> vector table. All vectors share one dimension and are
// finite. Values are held in double precision regardless of the file.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  // Rows in `values` align with `tokens`. Later duplicates replace earlier
  // ones and are counted in duplicates_replaced().
  EmbeddingStore(std::size_t dimension, std::vector<std::string> tokens,
                 std::vector<std::vector<double>> values);

  std::size_t dimension() const noexcept { return dimension_; }
  std::size_t size() const noexcept { return tokens_.size(); }
  bool empty() const noexcept { return tokens_.empty(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  std::span<const double> row(std::size_t i) const;
  std::optional<std::span<const double>> find(std::string_view token) const;
  std::size_t duplicates_replaced() const noexcept { return duplicates_; }

 private:
  std::size_t dimension_ = 0;
  std::vector<std::string> tokens_;
  std::vector<double> data_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t duplicates_ = 0;
};

// "V D\n" then V lines "token f1 ... fD".
EmbeddingStore parse_embedding_text(std::string_view bytes);
// "V D\n" then V records: token, ' ', D little-endian float32, optional '\n'.
EmbeddingStore parse_embedding_binary(std::string_view bytes);
// Decimal output round-trips every double exactly.
std::string write_embedding_text(const EmbeddingStore& store);
std::string write_embedding_binary(const EmbeddingStore& store);
// Picks the parser from the content: binary if any record has non-text bytes.
EmbeddingStore parse_embedding_auto(std::string_view bytes);

// Rows of `vectors` align with `tokens`.
struct TokenVectors {
  std::vector<std::string> tokens;
  Eigen::MatrixXd vectors;
};

struct EmbeddingCoverage {
  std::size_t requested = 0;  // unique tokens asked for
  std::size_t found = 0;
  std::vector<std::string> missing_tokens;
  std::size_t zero_vectors = 0;  // found rows that could not be normalized

  double ratio() const { return requested == 0 ? 0.0 : double(found) / double(requested); }
};

struct EmbeddedTokens {
  TokenVectors rows;
  EmbeddingCoverage coverage;
};

// One row per unique found token in order of first occurrence. With
// `normalize`, rows are scaled to unit Euclidean norm; zero rows stay zero.
EmbeddedTokens embed_tokens(std::span<const std::string> tokens, const EmbeddingStore& store,
                            bool normalize);

}  // namespace qsbias
