#include "qsbias/embed.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "qsbias/error.hpp"
#include "qsbias/util.hpp"

namespace qsbias {

EmbeddingStore::EmbeddingStore(std::size_t dimension, std::vector<std::string> tokens,
                               std::vector<std::vector<double>> values)
    : dimension_(dimension) {
  if (dimension == 0) throw Error(ErrorKind::validation, "embedding dimension must be positive");
  if (tokens.size() != values.size()) {
    throw Error(ErrorKind::contract, "token and vector counts differ");
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (values[i].size() != dimension) {
      throw Error(ErrorKind::validation, "vector for '" + tokens[i] + "' has wrong dimension");
    }
    for (double v : values[i]) {
      if (!std::isfinite(v)) {
        throw Error(ErrorKind::validation, "non-finite component in vector for '" + tokens[i] + "'");
      }
    }
    if (auto it = index_.find(tokens[i]); it != index_.end()) {
      std::copy(values[i].begin(), values[i].end(), data_.begin() + it->second * dimension);
      ++duplicates_;
      continue;
    }
    index_.emplace(tokens[i], tokens_.size());
    tokens_.push_back(std::move(tokens[i]));
    data_.insert(data_.end(), values[i].begin(), values[i].end());
  }
}

std::span<const double> EmbeddingStore::row(std::size_t i) const {
  return {data_.data() + i * dimension_, dimension_};
}

std::optional<std::span<const double>> EmbeddingStore::find(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return row(it->second);
}

namespace {

struct Header {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::size_t end = 0;  // offset just past the header newline
};

Header parse_header(std::string_view bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw ParseError("missing header line", 1);
  const auto line = trim(bytes.substr(0, nl));
  const auto sp = line.find(' ');
  if (sp == std::string_view::npos) throw ParseError("header must be 'V D'", 1);
  Header h;
  const auto a = trim(line.substr(0, sp));
  const auto b = trim(line.substr(sp + 1));
  const auto r1 = std::from_chars(a.data(), a.data() + a.size(), h.rows);
  const auto r2 = std::from_chars(b.data(), b.data() + b.size(), h.dim);
  if (r1.ec != std::errc{} || r1.ptr != a.data() + a.size() || r2.ec != std::errc{} ||
      r2.ptr != b.data() + b.size()) {
    throw ParseError("header must be 'V D'", 1);
  }
  if (h.dim == 0) throw ParseError("dimension must be positive", 1);
  h.end = nl + 1;
  return h;
}

}  // namespace

EmbeddingStore parse_embedding_text(std::string_view bytes) {
  const Header h = parse_header(bytes);
  std::vector<std::string> tokens;
  std::vector<std::vector<double>> values;
  tokens.reserve(h.rows);
  values.reserve(h.rows);
  std::size_t pos = h.end;
  std::size_t line_no = 1;
  while (pos < bytes.size()) {
    auto end = bytes.find('\n', pos);
    if (end == std::string_view::npos) end = bytes.size();
    std::string_view line = bytes.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    line = trim(line);
    if (line.empty()) continue;
    if (tokens.size() == h.rows) throw ParseError("row count mismatch: more rows than header", line_no);

    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (start < line.size()) {
      auto sp = line.find(' ', start);
      if (sp == std::string_view::npos) sp = line.size();
      if (sp > start) fields.push_back(line.substr(start, sp - start));
      start = sp + 1;
    }
    if (fields.size() != h.dim + 1) {
      throw ParseError("expected " + std::to_string(h.dim + 1) + " fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    }
    std::vector<double> v(h.dim);
    for (std::size_t k = 0; k < h.dim; ++k) {
      const auto f = fields[k + 1];
      const auto res = std::from_chars(f.data(), f.data() + f.size(), v[k]);
      if (res.ec == std::errc::result_out_of_range) {
        throw Error(ErrorKind::validation, "line " + std::to_string(line_no) + ": value out of range");
      }
      if (res.ec != std::errc{} || res.ptr != f.data() + f.size()) {
        throw ParseError("bad number '" + std::string(f) + "'", line_no);
      }
      if (!std::isfinite(v[k])) {
        throw Error(ErrorKind::validation, "line " + std::to_string(line_no) + ": non-finite value");
      }
    }
    tokens.emplace_back(fields[0]);
    values.push_back(std::move(v));
  }
  if (tokens.size() != h.rows) {
    throw ParseError("row count mismatch: header says " + std::to_string(h.rows) + ", found " +
                         std::to_string(tokens.size()),
                     line_no);
  }
  return EmbeddingStore(h.dim, std::move(tokens), std::move(values));
}

EmbeddingStore parse_embedding_binary(std::string_view bytes) {
  const Header h = parse_header(bytes);
  std::vector<std::string> tokens;
  std::vector<std::vector<double>> values;
  std::size_t pos = h.end;
  for (std::size_t r = 0; r < h.rows; ++r) {
    while (pos < bytes.size() && bytes[pos] == '\n') ++pos;
    const auto sp = bytes.find(' ', pos);
    if (sp == std::string_view::npos) {
      throw ParseError("truncated record " + std::to_string(r) + ": no token terminator", 0,
                       pos == 0 ? 1 : pos);
    }
    if (sp == pos) throw ParseError("empty token", 0, pos);
    tokens.emplace_back(bytes.substr(pos, sp - pos));
    pos = sp + 1;
    if (bytes.size() - pos < 4 * h.dim) {
      throw ParseError("truncated float payload in record " + std::to_string(r), 0, pos);
    }
    std::vector<double> v(h.dim);
    for (std::size_t k = 0; k < h.dim; ++k) {
      std::uint32_t bits;
      std::memcpy(&bits, bytes.data() + pos + 4 * k, 4);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      const float f = std::bit_cast<float>(bits);
      if (!std::isfinite(f)) {
        throw Error(ErrorKind::validation, "byte " + std::to_string(pos + 4 * k) + ": non-finite value");
      }
      v[k] = static_cast<double>(f);
    }
    pos += 4 * h.dim;
    values.push_back(std::move(v));
  }
  return EmbeddingStore(h.dim, std::move(tokens), std::move(values));
}

std::string write_embedding_text(const EmbeddingStore& store) {
  std::string out = std::to_string(store.size()) + ' ' + std::to_string(store.dimension()) + '\n';
  for (std::size_t i = 0; i < store.size(); ++i) {
    out += store.tokens()[i];
    for (double v : store.row(i)) {
      out += ' ';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

std::string write_embedding_binary(const EmbeddingStore& store) {
  std::string out = std::to_string(store.size()) + ' ' + std::to_string(store.dimension()) + '\n';
  for (std::size_t i = 0; i < store.size(); ++i) {
    out += store.tokens()[i];
    out += ' ';
    for (double v : store.row(i)) {
      auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      char buf[4];
      std::memcpy(buf, &bits, 4);
      out.append(buf, 4);
    }
    out += '\n';
  }
  return out;
}

EmbeddingStore parse_embedding_auto(std::string_view bytes) {
  const Header h = parse_header(bytes);
  const auto body = bytes.substr(h.end, std::min<std::size_t>(bytes.size() - h.end, 4096));
  for (unsigned char c : body) {
    if (c < 0x20 && c != '\n' && c != '\r' && c != '\t') return parse_embedding_binary(bytes);
  }
  try {
    return parse_embedding_text(bytes);
  } catch (const ParseError&) {
    return parse_embedding_binary(bytes);
  }
}

EmbeddedTokens embed_tokens(std::span<const std::string> tokens, const EmbeddingStore& store,
                            bool normalize) {
  if (store.empty()) throw Error(ErrorKind::contract, "embedding store is empty");
  EmbeddedTokens out;
  std::unordered_set<std::string> seen;
  std::vector<std::span<const double>> found_rows;
  for (const auto& t : tokens) {
    if (!seen.insert(t).second) continue;
    ++out.coverage.requested;
    if (auto row = store.find(t)) {
      out.rows.tokens.push_back(t);
      found_rows.push_back(*row);
    } else {
      out.coverage.missing_tokens.push_back(t);
    }
  }
  out.coverage.found = found_rows.size();
  const auto d = static_cast<Eigen::Index>(store.dimension());
  out.rows.vectors.resize(static_cast<Eigen::Index>(found_rows.size()), d);
  for (std::size_t i = 0; i < found_rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (Eigen::Index k = 0; k < d; ++k) out.rows.vectors(r, k) = found_rows[i][k];
    if (normalize) {
      const double norm = out.rows.vectors.row(r).norm();
      if (norm > 0.0) {
        out.rows.vectors.row(r) /= norm;
      } else {
        ++out.coverage.zero_vectors;
      }
    }
  }
  return out;
}

}  // namespace qsbias
