#include <algorithm>
#include <json.hpp>
#include <set>

#include "qsbias/pipeline.hpp"
#include "qsbias/util.hpp"

namespace qsbias {

namespace {

std::optional<std::string> group_of(const Subject& s, Attribute attribute, const GroupBins& bins) {
  switch (attribute) {
    case Attribute::gender:
      if (s.gender == Gender::unknown) return std::nullopt;
      return std::string(to_string(s.gender));
    case Attribute::age:
      if (!s.birth_year) return std::nullopt;
      return bins.reference_year - *s.birth_year < bins.age_split ? "<" + std::to_string(bins.age_split)
                                                                  : ">=" + std::to_string(bins.age_split);
    case Attribute::party: return s.party;
    case Attribute::state: return s.federated_state;
  }
  return std::nullopt;
}

std::string model_label(MetricKind kind, int cluster) {
  const char* prefix = kind == MetricKind::ndcg ? "nDCG" : kind == MetricKind::dcg ? "DCG" : "TP";
  return std::string(prefix) + "_" + std::to_string(cluster + 1);
}

std::string pad(std::string text, std::size_t width) {
  // Width counts code points so umlauts line up.
  std::size_t cps = 0;
  for (unsigned char c : text) cps += (c & 0xC0) != 0x80;
  if (cps < width) text.append(width - cps, ' ');
  return text;
}

std::string rstrip(std::string text) {
  while (!text.empty() && text.back() == ' ') text.pop_back();
  return text;
}

std::string format_p(double p) { return p < 0.0001 ? "<0.0001" : format_fixed(p, 4); }

}  // namespace

GroupSummary summarize_groups(const MetricsTable& metrics, const SubjectRegistry& registry,
                              Attribute attribute, const GroupBins& bins) {
  struct Acc {
    std::size_t n = 0;
    double dcg = 0, ndcg = 0, tp = 0;
  };
  std::map<std::pair<std::string, int>, Acc> acc;
  for (const auto& row : metrics.rows) {
    const Subject* s = registry.find(row.term_id);
    if (s == nullptr) continue;
    const auto group = group_of(*s, attribute, bins);
    if (!group) continue;
    Acc& a = acc[{*group, row.cluster}];
    ++a.n;
    a.dcg += row.dcg;
    a.ndcg += row.ndcg;
    a.tp += row.total_percentage;
  }
  GroupSummary out;
  out.attribute = attribute;
  for (const auto& [key, a] : acc) {
    GroupRow r;
    r.group = key.first;
    r.cluster = key.second;
    r.n = a.n;
    r.mean_dcg = a.dcg / double(a.n);
    r.mean_ndcg = a.ndcg / double(a.n);
    r.mean_total_percentage = a.tp / double(a.n);
    out.rows.push_back(std::move(r));
  }
  return out;
}

GroupSummary summarize_groups(const MetricsTable& metrics, const SubjectRegistry& registry,
                              std::string_view attribute, const GroupBins& bins) {
  const auto a = parse_attribute(attribute);
  if (!a) throw Error(ErrorKind::configuration, "unknown attribute '" + std::string(attribute) + "'");
  return summarize_groups(metrics, registry, *a, bins);
}

std::string write_group_summary_csv(std::span<const GroupSummary> summaries) {
  std::string out = "attribute,group,cluster_index,n,mean_dcg,mean_ndcg,mean_total_percentage\n";
  for (const auto& s : summaries) {
    for (const auto& r : s.rows) {
      out += std::string(to_string(s.attribute)) + "," + csv_escape(r.group) + "," + std::to_string(r.cluster) +
             "," + std::to_string(r.n) + "," + format_double(r.mean_dcg) + "," + format_double(r.mean_ndcg) +
             "," + format_double(r.mean_total_percentage) + "\n";
    }
  }
  return out;
}

std::string write_plot_data_json(std::span<const GroupSummary> summaries, int k,
                                 const std::map<int, std::string>& labels) {
  using nlohmann::ordered_json;
  ordered_json root;
  ordered_json clusters = ordered_json::array();
  for (int c = 0; c < k; ++c) {
    const auto it = labels.find(c);
    clusters.push_back({{"cluster_index", c}, {"label", it != labels.end() ? it->second : "cluster " + std::to_string(c + 1)}});
  }
  root["clusters"] = clusters;
  root["panels"] = ordered_json::array();
  for (const auto& s : summaries) {
    std::set<std::string> groups;
    for (const auto& r : s.rows) groups.insert(r.group);
    for (const char* metric : {"dcg", "ndcg", "total_percentage"}) {
      ordered_json panel;
      panel["attribute"] = to_string(s.attribute);
      panel["metric"] = metric;
      panel["series"] = ordered_json::array();
      for (const auto& g : groups) {
        ordered_json values = ordered_json::array();
        std::size_t n = 0;
        for (int c = 0; c < k; ++c) {
          const auto it = std::find_if(s.rows.begin(), s.rows.end(),
                                       [&](const GroupRow& r) { return r.group == g && r.cluster == c; });
          if (it == s.rows.end()) {
            values.push_back(nullptr);
            continue;
          }
          n = std::max(n, it->n);
          const double v = std::string_view(metric) == "dcg"    ? it->mean_dcg
                           : std::string_view(metric) == "ndcg" ? it->mean_ndcg
                                                                : it->mean_total_percentage;
          values.push_back(v);
        }
        panel["series"].push_back({{"group", g}, {"n", n}, {"values", values}});
      }
      root["panels"].push_back(panel);
    }
  }
  return root.dump(2) + "\n";
}

std::string write_summary_text(std::span<const ModelCell> cells, int k, double alpha,
                               const std::map<int, std::string>& labels) {
  std::vector<const ModelCell*> fitted;
  std::vector<std::string> columns;
  for (const auto& cell : cells) {
    if (!cell.result) continue;
    fitted.push_back(&cell);
    for (const auto& c : cell.result->coefficients) {
      if (std::find(columns.begin(), columns.end(), c.name) == columns.end()) columns.push_back(c.name);
    }
  }
  const std::size_t name_width = 28;
  const std::size_t cell_width = 18;
  std::string out = "Regression coefficients B and P per model; * marks P < " + format_double(alpha) + "\n";
  out += "Clusters (k = " + std::to_string(k) + "):";
  for (int c = 0; c < k; ++c) {
    const auto it = labels.find(c);
    out += " " + std::to_string(c + 1) + "=" + (it != labels.end() ? it->second : "unlabeled");
  }
  out += "\n\n";
  if (fitted.empty()) {
    out += "No models were fitted.\n";
  } else {
    std::string header = pad("", name_width);
    std::string sub = pad("", name_width);
    for (const auto* cell : fitted) {
      header += pad(model_label(cell->kind, cell->cluster), cell_width);
      sub += pad("B", 9) + pad("P", cell_width - 9);
    }
    out += rstrip(header) + "\n" + rstrip(sub) + "\n";
    for (const auto& col : columns) {
      std::string line = pad(col, name_width);
      for (const auto* cell : fitted) {
        const Coefficient* c = cell->result->find(col);
        if (c == nullptr) {
          line += pad("", cell_width);
          continue;
        }
        std::string p = format_fixed(c->p, 2) + (c->p < alpha ? "*" : "");
        line += pad(format_fixed(c->estimate, 2), 9) + pad(p, cell_width - 9);
      }
      out += rstrip(line) + "\n";
    }
    std::string adj = pad("Model: adjusted R2", name_width);
    std::string f = pad("Model: F (P)", name_width);
    for (const auto* cell : fitted) {
      const auto& r = *cell->result;
      adj += pad(format_fixed(r.adjusted_r2, 2), cell_width);
      if (std::isnan(r.f_statistic)) {
        f += pad("-", cell_width);
      } else {
        f += pad(format_fixed(r.f_statistic, 2), 9) +
             pad(format_fixed(r.f_p, 2) + (r.f_p < alpha ? "*" : ""), cell_width - 9);
      }
    }
    out += rstrip(adj) + "\n" + rstrip(f) + "\n";
  }

  out += "\nSignificant findings (P < " + format_double(alpha) + "):\n";
  std::size_t findings = 0;
  for (const auto* cell : fitted) {
    for (const auto& c : cell->result->coefficients) {
      if (c.name == "(constant)" || !(c.p < alpha)) continue;
      const auto it = labels.find(cell->cluster);
      out += "  " + c.name + " on " + model_label(cell->kind, cell->cluster);
      if (it != labels.end()) out += " (" + it->second + ")";
      out += ": " + std::string(c.estimate < 0 ? "negative" : "positive") + ", B = " + format_fixed(c.estimate, 4) +
             ", P = " + format_p(c.p) + "\n";
      ++findings;
    }
  }
  if (findings == 0) out += "  none\n";
  bool any_failed = false;
  for (const auto& cell : cells) {
    if (cell.result) continue;
    if (!any_failed) out += "\nModels not fitted:\n";
    any_failed = true;
    out += "  " + model_label(cell.kind, cell.cluster) + ": " + cell.error + "\n";
  }
  return out;
}

std::map<std::string, std::string> emit_report(std::span<const ModelCell> cells,
                                               std::span<const GroupSummary> summaries, int k,
                                               const PipelineConfig& config,
                                               const std::map<int, std::string>& labels) {
  std::map<std::string, std::string> files;
  files["regression.csv"] = write_regression_csv(cells, config.alpha);
  files["group_summary.csv"] = write_group_summary_csv(summaries);
  files["plot_data.json"] = write_plot_data_json(summaries, k, labels);
  files["summary.txt"] = write_summary_text(cells, k, config.alpha, labels);
  return files;
}

}  // namespace qsbias
