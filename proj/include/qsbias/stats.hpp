#pragma once

// Dummy-coded design matrices over subject meta-attributes, ordinary least
// squares with coefficient and overall significance tests, and the
// distribution functions those tests need.

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qsbias/corpus.hpp"
#include "qsbias/error.hpp"
#include "qsbias/metrics.hpp"

namespace qsbias {

// ---- special functions -----------------------------------------------------

double log_gamma(double x);
double log_beta(double a, double b);
// I_x(a, b), accurate to about 1e-14 absolute.
double regularized_incomplete_beta(double x, double a, double b);
double student_t_cdf(double t, double df);
// 2 * (1 - CDF_t(|t|, df)).
double t_two_sided_p(double t, double df);
// Upper tail 1 - CDF_F(f; d1, d2).
double f_p(double f, double d1, double d2);

// ---- design ----------------------------------------------------------------

enum class Attribute { gender, age, party, state };
const char* to_string(Attribute a);
std::optional<Attribute> parse_attribute(std::string_view text);

struct DesignOptions {
  std::string base_gender = "male";
  std::string base_party = "CDU";
  std::string base_state = "Baden-Württemberg";
  int age_bin_width = 10;
  int reference_year = 0;  // required; age = reference_year - birth_year
  std::vector<Attribute> attributes = {Attribute::gender, Attribute::age, Attribute::party,
                                       Attribute::state};
  // Optional relabeling of parties before coding, e.g. small parties to
  // "other parties".
  std::map<std::string, std::string> party_merge;
};

struct DesignMatrix {
  Eigen::MatrixXd x;                              // rows x columns
  std::vector<std::string> column_names;          // "(constant)" first
  std::map<std::string, std::string> base_categories;
  std::vector<std::string> row_term_ids;
  std::vector<ExcludedTerm> dropped;              // listwise deletions
  bool has_intercept = true;
};

// Columns: (constant), gender dummy, age_decades, party=<level> for each
// non-base party (sorted), state=<level> for each non-base state (sorted).
// Levels are those present among usable rows.
DesignMatrix encode_design(const SubjectRegistry& registry,
                           std::span<const std::string> included_terms,
                           const DesignOptions& options);

// ---- regression ------------------------------------------------------------

struct Coefficient {
  std::string name;
  double estimate = 0.0;
  double std_error = 0.0;
  double t = 0.0;
  double p = 1.0;
};

struct RegressionResult {
  std::vector<Coefficient> coefficients;
  std::vector<double> fitted;
  std::vector<double> residuals;
  int n = 0;
  int p_params = 0;
  int df_resid = 0;
  double r2 = 0.0;
  double adjusted_r2 = 0.0;
  // NaN for an intercept-only model.
  double f_statistic = 0.0;
  double f_p = 1.0;

  const Coefficient* find(std::string_view name) const;
};

// Relative pivot threshold below which the design counts as rank deficient.
inline constexpr double kRankThreshold = 1e-10;

// Column-pivoted Householder QR. Throws CollinearityError naming the
// dependent columns, insufficient_data when n - p < 1.
RegressionResult ols_fit(const DesignMatrix& design, std::span<const double> y);
RegressionResult ols_fit(const Eigen::MatrixXd& x, std::span<const std::string> names,
                         std::span<const double> y, bool has_intercept = true);

enum class MetricKind { ndcg, dcg, total_percentage };
const char* to_string(MetricKind k);
std::optional<MetricKind> parse_metric_kind(std::string_view text);
double metric_value(const TopicAffiliationProfile& row, MetricKind kind);

struct ModelCell {
  MetricKind kind = MetricKind::dcg;
  int cluster = 0;
  std::optional<RegressionResult> result;
  // Set when the fit failed; the other cells are still computed.
  std::optional<ErrorKind> error_kind;
  std::string error;
};

// One fit per (kind, cluster), in the order given by `kinds` then cluster.
// Throws a contract error if a design row has no metrics row.
std::vector<ModelCell> regress_all(const MetricsTable& metrics, const DesignMatrix& design,
                                   std::span<const MetricKind> kinds);

// metric_kind,cluster_index,column_name,B,SE,t,P,significant,adjusted_r2,F,F_p
// with one "Model" summary row after each model's coefficients. Failed
// models are omitted.
std::string write_regression_csv(std::span<const ModelCell> cells, double alpha);

}  // namespace qsbias
