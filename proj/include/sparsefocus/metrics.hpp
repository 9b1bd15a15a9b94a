#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "sparsefocus/errors.hpp"
#include "sparsefocus/optics.hpp"

namespace sf {

struct EvalPair {
  double pred_um = 0.0;
  double truth_um = 0.0;
  Sparsity sparsity = Sparsity::dense;
  std::size_t scene_id = 0;
};

struct MaeStats {
  double mean = 0.0;
  double std = 0.0;  // population std of |error|
};

inline MaeStats mae(const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) throw UsageError("mae: no pairs");
  double s = 0.0;
  for (const auto& p : pairs) s += std::abs(p.pred_um - p.truth_um);
  const double mean = s / static_cast<double>(pairs.size());
  double v = 0.0;
  for (const auto& p : pairs) {
    const double e = std::abs(p.pred_um - p.truth_um) - mean;
    v += e * e;
  }
  return {mean, std::sqrt(v / static_cast<double>(pairs.size()))};
}

/// Percentage of pairs with |error| <= dof / n.
inline double dof_accuracy(const std::vector<EvalPair>& pairs, double dof_um, int n) {
  if (!(dof_um > 0.0)) throw ConfigError("dof_accuracy: dof must be positive");
  if (n < 1) throw ConfigError("dof_accuracy: n must be at least 1");
  if (pairs.empty()) return 0.0;
  const double bound = dof_um / n;
  std::size_t inside = 0;
  for (const auto& p : pairs) inside += std::abs(p.pred_um - p.truth_um) <= bound ? 1 : 0;
  return 100.0 * static_cast<double>(inside) / static_cast<double>(pairs.size());
}

inline bool direction_correct(double pred_um, double truth_um) { return pred_um * truth_um >= 0.0; }

/// Percentage of pairs whose predicted direction agrees; a zero on either side counts as agreeing.
inline double dss(const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) throw UsageError("dss: no pairs");
  std::size_t ok = 0;
  for (const auto& p : pairs) ok += direction_correct(p.pred_um, p.truth_um) ? 1 : 0;
  return 100.0 * static_cast<double>(ok) / static_cast<double>(pairs.size());
}

struct BinRow {
  double lo = 0.0, hi = 0.0;
  double mae = std::numeric_limits<double>::quiet_NaN();  // NaN for empty bins
  std::size_t count = 0;
};

/// MAE per |d*| bin [edge_i, edge_i+1); the last bin also takes |d*| == last edge.
/// Pairs outside the edges are not counted.
inline std::vector<BinRow> binned_mae(const std::vector<EvalPair>& pairs, const std::vector<double>& edges) {
  if (edges.size() < 2) throw ConfigError("binned_mae: need at least two edges");
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    if (!(edges[i] < edges[i + 1])) throw ConfigError("binned_mae: edges must be strictly increasing");
  }
  const std::size_t nb = edges.size() - 1;
  std::vector<BinRow> rows(nb);
  std::vector<double> sums(nb, 0.0);
  for (std::size_t b = 0; b < nb; ++b) {
    rows[b].lo = edges[b];
    rows[b].hi = edges[b + 1];
  }
  for (const auto& p : pairs) {
    const double a = std::abs(p.truth_um);
    for (std::size_t b = 0; b < nb; ++b) {
      const bool last = b + 1 == nb;
      if (a >= edges[b] && (a < edges[b + 1] || (last && a == edges[b + 1]))) {
        sums[b] += std::abs(p.pred_um - p.truth_um);
        ++rows[b].count;
        break;
      }
    }
  }
  for (std::size_t b = 0; b < nb; ++b) {
    if (rows[b].count > 0) rows[b].mae = sums[b] / static_cast<double>(rows[b].count);
  }
  return rows;
}

struct RegressionRow {
  double truth_um = 0.0;
  double pred_um = 0.0;
  bool inside_dof = false;
  bool direction_ok = false;
};

inline std::vector<RegressionRow> export_regression_data(const std::vector<EvalPair>& pairs, double dof_um) {
  std::vector<RegressionRow> rows;
  rows.reserve(pairs.size());
  for (const auto& p : pairs) {
    rows.push_back({p.truth_um, p.pred_um, std::abs(p.pred_um - p.truth_um) <= dof_um,
                    direction_correct(p.pred_um, p.truth_um)});
  }
  return rows;
}

struct MetricsReport {
  std::string method;
  std::string sparsity;
  std::size_t samples = 0;
  MaeStats mae;
  double dof_acc[3] = {0, 0, 0};
  double dss_pct = 0.0;
  double mean_exposures = 1.0;
};

inline MetricsReport make_report(const std::string& method, const std::string& sparsity,
                                 const std::vector<EvalPair>& pairs, double dof_um, double mean_exposures = 1.0) {
  MetricsReport r;
  r.method = method;
  r.sparsity = sparsity;
  r.samples = pairs.size();
  r.mae = mae(pairs);
  for (int n = 1; n <= 3; ++n) r.dof_acc[n - 1] = dof_accuracy(pairs, dof_um, n);
  r.dss_pct = dss(pairs);
  r.mean_exposures = mean_exposures;
  return r;
}

namespace detail {

inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace detail

inline constexpr const char* kMetricsCsvHeader =
    "method,class,n_samples,mae_mean_um,mae_std_um,dofacc_1,dofacc_2,dofacc_3,dss_pct,mean_exposures";

inline std::string metrics_csv(const std::vector<MetricsReport>& reports) {
  std::ostringstream os;
  os << kMetricsCsvHeader << '\n';
  for (const auto& r : reports) {
    os << r.method << ',' << r.sparsity << ',' << r.samples << ',' << detail::fmt(r.mae.mean) << ','
       << detail::fmt(r.mae.std) << ',' << detail::fmt(r.dof_acc[0]) << ',' << detail::fmt(r.dof_acc[1]) << ','
       << detail::fmt(r.dof_acc[2]) << ',' << detail::fmt(r.dss_pct) << ',' << detail::fmt(r.mean_exposures)
       << '\n';
  }
  return os.str();
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsReport>& reports) {
  detail::write_text(path, metrics_csv(reports));
}

struct TaggedPairs {
  std::string method;
  std::vector<EvalPair> pairs;
};

inline void write_regression_csv(const std::filesystem::path& path, const std::vector<TaggedPairs>& sets,
                                 double dof_um) {
  std::ostringstream os;
  os << "method,class,scene_id,d_true_um,d_pred_um,inside_dof,direction_ok\n";
  for (const auto& s : sets) {
    const auto rows = export_regression_data(s.pairs, dof_um);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      os << s.method << ',' << to_string(s.pairs[i].sparsity) << ',' << s.pairs[i].scene_id << ','
         << detail::fmt(rows[i].truth_um) << ',' << detail::fmt(rows[i].pred_um) << ',' << rows[i].inside_dof << ','
         << rows[i].direction_ok << '\n';
    }
  }
  detail::write_text(path, os.str());
}

inline void write_binned_csv(const std::filesystem::path& path, const std::vector<TaggedPairs>& sets,
                             const std::vector<double>& edges) {
  std::ostringstream os;
  os << "method,class,bin_lo_um,bin_hi_um,mae_um,count\n";
  for (const auto& s : sets) {
    for (Sparsity cls : kAllSparsities) {
      std::vector<EvalPair> sub;
      for (const auto& p : s.pairs)
        if (p.sparsity == cls) sub.push_back(p);
      if (sub.empty()) continue;
      for (const auto& row : binned_mae(sub, edges)) {
        os << s.method << ',' << to_string(cls) << ',' << detail::fmt(row.lo) << ',' << detail::fmt(row.hi) << ','
           << detail::fmt(row.mae) << ',' << row.count << '\n';
      }
    }
  }
  detail::write_text(path, os.str());
}

}  // namespace sf
