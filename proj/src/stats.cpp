#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "qsbias/stats.hpp"
#include "qsbias/util.hpp"

namespace qsbias {

const char* to_string(Attribute a) {
  switch (a) {
    case Attribute::gender: return "gender";
    case Attribute::age: return "age";
    case Attribute::party: return "party";
    case Attribute::state: return "state";
  }
  return "gender";
}

std::optional<Attribute> parse_attribute(std::string_view text) {
  if (text == "gender") return Attribute::gender;
  if (text == "age") return Attribute::age;
  if (text == "party") return Attribute::party;
  if (text == "state") return Attribute::state;
  return std::nullopt;
}

namespace {

int floor_div(int a, int b) {
  int q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

bool uses(const DesignOptions& o, Attribute a) {
  return std::find(o.attributes.begin(), o.attributes.end(), a) != o.attributes.end();
}

std::string merged_party(const DesignOptions& o, const std::string& party) {
  const auto it = o.party_merge.find(party);
  return it == o.party_merge.end() ? party : it->second;
}

}  // namespace

DesignMatrix encode_design(const SubjectRegistry& registry,
                           std::span<const std::string> included_terms,
                           const DesignOptions& options) {
  const bool use_gender = uses(options, Attribute::gender);
  const bool use_age = uses(options, Attribute::age);
  const bool use_party = uses(options, Attribute::party);
  const bool use_state = uses(options, Attribute::state);

  DesignMatrix design;
  if (use_gender) {
    if (options.base_gender != "male" && options.base_gender != "female") {
      throw Error(ErrorKind::configuration, "base gender must be male or female");
    }
    design.base_categories["gender"] = options.base_gender;
  }
  if (use_age) {
    if (options.age_bin_width < 1) throw Error(ErrorKind::configuration, "age_bin_width must be >= 1");
    if (options.reference_year <= 0) throw Error(ErrorKind::configuration, "reference_year not set");
  }
  if (use_party) {
    std::set<std::string> merged;
    for (const auto& p : registry.vocabularies().parties) merged.insert(merged_party(options, p));
    if (!merged.contains(options.base_party)) {
      throw Error(ErrorKind::configuration, "base party '" + options.base_party + "' not in registry");
    }
    design.base_categories["party"] = options.base_party;
  }
  if (use_state) {
    if (!registry.vocabularies().states.contains(options.base_state)) {
      throw Error(ErrorKind::configuration, "base state '" + options.base_state + "' not in registry");
    }
    design.base_categories["state"] = options.base_state;
  }

  struct Usable {
    const Subject* subject;
    std::string party;
  };
  std::vector<Usable> usable;
  std::set<std::string> parties, states;
  for (const auto& term : included_terms) {
    const Subject* s = registry.find(term);
    if (!s) {
      design.dropped.push_back({term, "not_in_registry"});
      continue;
    }
    if (use_gender && s->gender == Gender::unknown) {
      design.dropped.push_back({term, "missing_gender"});
      continue;
    }
    if (use_age && !s->birth_year) {
      design.dropped.push_back({term, "missing_age"});
      continue;
    }
    if (use_party && !s->party) {
      design.dropped.push_back({term, "missing_party"});
      continue;
    }
    if (use_state && !s->federated_state) {
      design.dropped.push_back({term, "missing_state"});
      continue;
    }
    Usable u{s, s->party ? merged_party(options, *s->party) : std::string()};
    if (use_party) parties.insert(u.party);
    if (use_state) states.insert(*s->federated_state);
    usable.push_back(std::move(u));
  }
  if (usable.empty()) {
    throw Error(ErrorKind::empty_design, "no subject has all required attributes");
  }

  design.column_names.push_back("(constant)");
  const std::string gender_level = options.base_gender == "male" ? "female" : "male";
  if (use_gender) design.column_names.push_back(gender_level);
  if (use_age) design.column_names.push_back("age_decades");
  std::vector<std::string> party_levels, state_levels;
  for (const auto& p : parties) {
    if (p != options.base_party) party_levels.push_back(p);
  }
  for (const auto& s : states) {
    if (s != options.base_state) state_levels.push_back(s);
  }
  for (const auto& p : party_levels) design.column_names.push_back("party=" + p);
  for (const auto& s : state_levels) design.column_names.push_back("state=" + s);

  const auto rows = static_cast<Eigen::Index>(usable.size());
  const auto cols = static_cast<Eigen::Index>(design.column_names.size());
  design.x = Eigen::MatrixXd::Zero(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Subject& s = *usable[r].subject;
    design.row_term_ids.push_back(s.term_id);
    Eigen::Index c = 0;
    design.x(r, c++) = 1.0;
    if (use_gender) design.x(r, c++) = (std::string(to_string(s.gender)) == gender_level) ? 1.0 : 0.0;
    if (use_age) {
      design.x(r, c++) = floor_div(options.reference_year - *s.birth_year, options.age_bin_width);
    }
    for (const auto& p : party_levels) design.x(r, c++) = usable[r].party == p ? 1.0 : 0.0;
    for (const auto& st : state_levels) design.x(r, c++) = *s.federated_state == st ? 1.0 : 0.0;
  }
  return design;
}

const Coefficient* RegressionResult::find(std::string_view name) const {
  for (const auto& c : coefficients) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

RegressionResult ols_fit(const DesignMatrix& design, std::span<const double> y) {
  return ols_fit(design.x, design.column_names, y, design.has_intercept);
}

RegressionResult ols_fit(const Eigen::MatrixXd& x, std::span<const std::string> names,
                         std::span<const double> y, bool has_intercept) {
  const auto n = x.rows();
  const auto p = x.cols();
  if (static_cast<std::size_t>(n) != y.size()) {
    throw Error(ErrorKind::contract, "response has " + std::to_string(y.size()) + " rows, design " +
                                         std::to_string(n));
  }
  if (names.size() != static_cast<std::size_t>(p)) {
    throw Error(ErrorKind::contract, "column names do not match design width");
  }
  if (p < 1 || n - p < 1) {
    throw Error(ErrorKind::insufficient_data, "need more observations than parameters (n=" +
                                                  std::to_string(n) + ", p=" + std::to_string(p) + ")");
  }
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);
  if (!x.allFinite() || !yv.allFinite()) throw Error(ErrorKind::validation, "non-finite regression input");

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
  qr.setThreshold(kRankThreshold);
  qr.compute(x);
  if (qr.rank() < p) {
    std::vector<std::string> offending;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index i = qr.rank(); i < p; ++i) offending.push_back(names[perm(i)]);
    std::sort(offending.begin(), offending.end());
    throw CollinearityError(std::move(offending));
  }

  const Eigen::VectorXd beta = qr.solve(yv);
  const Eigen::VectorXd fitted = x * beta;
  const Eigen::VectorXd resid = yv - fitted;
  const double sse = resid.squaredNorm();
  const int df = static_cast<int>(n - p);
  const double sigma2 = sse / df;

  const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd r_inv =
      r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd cov_permuted = r_inv * r_inv.transpose();
  const auto& perm = qr.colsPermutation();
  const Eigen::MatrixXd cov = perm * cov_permuted * perm.transpose();

  RegressionResult out;
  out.n = static_cast<int>(n);
  out.p_params = static_cast<int>(p);
  out.df_resid = df;
  out.fitted.assign(fitted.data(), fitted.data() + n);
  out.residuals.assign(resid.data(), resid.data() + n);
  for (Eigen::Index j = 0; j < p; ++j) {
    Coefficient c;
    c.name = names[j];
    c.estimate = beta(j);
    c.std_error = std::sqrt(sigma2 * cov(j, j));
    if (c.std_error > 0.0) {
      c.t = c.estimate / c.std_error;
    } else {
      c.t = c.estimate == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), c.estimate);
    }
    c.p = t_two_sided_p(c.t, df);
    out.coefficients.push_back(std::move(c));
  }

  double sst = 0.0;
  if (has_intercept) {
    const double mean = yv.mean();
    sst = (yv.array() - mean).square().sum();
  } else {
    sst = yv.squaredNorm();
  }
  out.r2 = sst > 0.0 ? std::clamp(1.0 - sse / sst, 0.0, 1.0) : 0.0;
  out.adjusted_r2 = 1.0 - (1.0 - out.r2) * double(n - 1) / double(n - p);

  const int slopes = static_cast<int>(p) - (has_intercept ? 1 : 0);
  if (slopes < 1) {
    out.f_statistic = std::numeric_limits<double>::quiet_NaN();
    out.f_p = std::numeric_limits<double>::quiet_NaN();
  } else {
    const double ssr = std::max(sst - sse, 0.0);
    if (sse > 0.0) {
      out.f_statistic = (ssr / slopes) / (sse / df);
    } else {
      out.f_statistic = ssr > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    }
    out.f_p = f_p(out.f_statistic, slopes, df);
  }
  return out;
}

const char* to_string(MetricKind k) {
  switch (k) {
    case MetricKind::ndcg: return "ndcg";
    case MetricKind::dcg: return "dcg";
    case MetricKind::total_percentage: return "total_percentage";
  }
  return "dcg";
}

std::optional<MetricKind> parse_metric_kind(std::string_view text) {
  if (text == "ndcg") return MetricKind::ndcg;
  if (text == "dcg") return MetricKind::dcg;
  if (text == "total_percentage") return MetricKind::total_percentage;
  return std::nullopt;
}

double metric_value(const TopicAffiliationProfile& row, MetricKind kind) {
  switch (kind) {
    case MetricKind::ndcg: return row.ndcg;
    case MetricKind::dcg: return row.dcg;
    case MetricKind::total_percentage: return row.total_percentage;
  }
  return row.dcg;
}

std::vector<ModelCell> regress_all(const MetricsTable& metrics, const DesignMatrix& design,
                                   std::span<const MetricKind> kinds) {
  for (const auto& term : design.row_term_ids) {
    for (int c = 0; c < metrics.k; ++c) {
      if (!metrics.find(term, c)) {
        throw Error(ErrorKind::contract, "no metrics for term '" + term + "' cluster " + std::to_string(c));
      }
    }
  }
  std::vector<ModelCell> cells;
  for (const MetricKind kind : kinds) {
    for (int c = 0; c < metrics.k; ++c) {
      ModelCell cell;
      cell.kind = kind;
      cell.cluster = c;
      std::vector<double> y;
      y.reserve(design.row_term_ids.size());
      for (const auto& term : design.row_term_ids) y.push_back(metric_value(*metrics.find(term, c), kind));
      try {
        cell.result = ols_fit(design, y);
      } catch (const Error& e) {
        cell.error_kind = e.kind();
        cell.error = e.what();
      }
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

std::string write_regression_csv(std::span<const ModelCell> cells, double alpha) {
  std::string out = "metric_kind,cluster_index,column_name,B,SE,t,P,significant,adjusted_r2,F,F_p\n";
  for (const auto& cell : cells) {
    if (!cell.result) continue;
    const std::string prefix = std::string(to_string(cell.kind)) + ',' + std::to_string(cell.cluster) + ',';
    for (const auto& c : cell.result->coefficients) {
      out += prefix + csv_escape(c.name) + ',' + format_double(c.estimate) + ',' +
             format_double(c.std_error) + ',' + format_double(c.t) + ',' + format_double(c.p) + ',' +
             (c.p < alpha ? "true" : "false") + ",,,\n";
    }
    const auto& r = *cell.result;
    out += prefix + "Model,,,,," + (r.f_p < alpha ? "true" : "false") + ',' +
           format_double(r.adjusted_r2) + ',' + format_double(r.f_statistic) + ',' +
           format_double(r.f_p) + '\n';
  }
  return out;
}

}  // namespace qsbias
