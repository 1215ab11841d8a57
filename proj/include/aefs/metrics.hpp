#pragma once

// Ranking and calibration metrics, Welch's t-test, and run reports.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "aefs/errors.hpp"
#include "aefs/predictors.hpp"
#include "aefs/rational.hpp"

namespace aefs {

struct Metrics {
  double auc = 0.0;
  double logloss = 0.0;
  std::size_t n = 0;
  double activated_params_avg = 0.0;
  double lookups_avg = 0.0;

  bool operator==(const Metrics&) const = default;
};

// Mann-Whitney statistic from average ranks; tied scores share credit.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc: scores and labels differ in length");
  std::size_t pos = 0;
  for (const int y : labels) {
    if (y != 0 && y != 1) throw DataError("auc: labels must be 0 or 1");
    pos += static_cast<std::size_t>(y);
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetricError("auc: needs at least one positive and one negative");
  for (const double s : scores) {
    if (std::isnan(s)) throw NumericError("auc: NaN score");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Rank sums are doubled so tied groups stay integral.
  long double twice_rank_sum = 0.0L;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const long double twice_avg = static_cast<long double>(i + 1 + j + 1);
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] == 1) twice_rank_sum += twice_avg;
    }
    i = j + 1;
  }
  const long double p = static_cast<long double>(pos);
  const long double u = twice_rank_sum / 2.0L - p * (p + 1.0L) / 2.0L;
  return static_cast<double>(u / (p * static_cast<long double>(neg)));
}

inline double logloss(std::span<const double> scores, std::span<const int> labels) {
  return bce_mean(scores, labels);
}

// ---------------------------------------------------------------------------
// Welch's t-test

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw NumericError("incomplete beta: continued fraction did not converge");
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw NumericError("regularized_incomplete_beta: a and b must be positive");
  if (x < 0.0 || x > 1.0 || std::isnan(x)) throw NumericError("regularized_incomplete_beta: x outside [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

// Two-sided tail probability of Student's t with df degrees of freedom.
inline double student_t_two_sided(double t, double df) {
  if (!(df > 0.0)) throw NumericError("student_t_two_sided: df must be positive");
  if (std::isinf(t)) return 0.0;
  return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

inline WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw UndefinedMetricError("welch_t_test: each sample needs at least 2 values");
  auto moments = [](std::span<const double> s) {
    const double mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
    double ss = 0.0;
    for (const double v : s) ss += (v - mean) * (v - mean);
    return std::pair{mean, ss / static_cast<double>(s.size() - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double sa = va / static_cast<double>(a.size());
  const double sb = vb / static_cast<double>(b.size());
  if (!(sa + sb > 0.0)) throw UndefinedMetricError("welch_t_test: both samples have zero variance");
  WelchResult r;
  r.t = (ma - mb) / std::sqrt(sa + sb);
  r.df = (sa + sb) * (sa + sb) /
         (sa * sa / static_cast<double>(a.size() - 1) + sb * sb / static_cast<double>(b.size() - 1));
  r.p = student_t_two_sided(r.t, r.df);
  return r;
}

// ---------------------------------------------------------------------------
// Reports

struct ReportRow {
  std::string method;
  std::size_t runs = 1;
  double auc = 0.0;
  double logloss = 0.0;
  std::size_t n = 0;
  double activated_params_avg = 0.0;
  double lookups_avg = 0.0;
  Rational delta_pae;

  bool operator==(const ReportRow&) const = default;
};

inline nlohmann::ordered_json to_json(const ReportRow& r) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["runs"] = r.runs;
  j["auc"] = r.auc;
  j["logloss"] = r.logloss;
  j["n"] = r.n;
  j["activated_params_avg"] = r.activated_params_avg;
  j["lookups_avg"] = r.lookups_avg;
  j["delta_pae"] = r.delta_pae.to_string();
  return j;
}

inline ReportRow row_from_json(const nlohmann::json& j) {
  try {
    ReportRow r;
    r.method = j.at("method").get<std::string>();
    r.runs = j.at("runs").get<std::size_t>();
    r.auc = j.at("auc").get<double>();
    r.logloss = j.at("logloss").get<double>();
    r.n = j.at("n").get<std::size_t>();
    r.activated_params_avg = j.at("activated_params_avg").get<double>();
    r.lookups_avg = j.at("lookups_avg").get<double>();
    r.delta_pae = Rational::parse(j.at("delta_pae").get<std::string>());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("report row: ") + e.what());
  }
}

inline void write_jsonl(std::ostream& out, std::span<const ReportRow> rows) {
  for (const auto& r : rows) out << to_json(r).dump() << '\n';
}

inline std::vector<ReportRow> parse_jsonl(std::istream& in) {
  std::vector<ReportRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("report line: ") + e.what());
    }
    rows.push_back(row_from_json(j));
  }
  return rows;
}

inline std::string fixed(double v, int places) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(places) << v;
  return s.str();
}

// Aligned text table, rows by descending AUC (method name breaks ties).
inline void write_table(std::ostream& out, std::span<const ReportRow> rows) {
  std::vector<const ReportRow*> sorted;
  for (const auto& r : rows) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](const ReportRow* a, const ReportRow* b) {
    return a->auc != b->auc ? a->auc > b->auc : a->method < b->method;
  });
  std::vector<std::vector<std::string>> cells{{"method", "AUC", "Logloss", "dPaE"}};
  for (const auto* r : sorted) {
    cells.push_back({r->method, fixed(r->auc, 4), fixed(r->logloss, 4), r->delta_pae.to_percent(2)});
  }
  std::vector<std::size_t> width(4, 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) {
        out << std::left << std::setw(static_cast<int>(width[c])) << row[c];
      } else {
        out << "  " << std::right << std::setw(static_cast<int>(width[c])) << row[c];
      }
    }
    out << '\n';
  }
}

inline void emit_report(std::span<const ReportRow> rows, std::ostream& jsonl, std::ostream& table) {
  if (rows.empty()) throw DataError("emit_report: no rows");
  write_jsonl(jsonl, rows);
  write_table(table, rows);
  if (!jsonl || !table) throw DataError("emit_report: write failed");
}

// Pairwise Welch p-values over per-run AUCs; "-" where a test is undefined.
inline void write_pvalue_matrix(std::ostream& out, std::span<const std::string> methods,
                                std::span<const std::vector<double>> samples) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"p(AUC)"};
  for (const auto& m : methods) header.push_back(m);
  cells.push_back(header);
  for (std::size_t i = 0; i < methods.size(); ++i) {
    std::vector<std::string> row{methods[i]};
    for (std::size_t j = 0; j < methods.size(); ++j) {
      try {
        row.push_back(fixed(welch_t_test(samples[i], samples[j]).p, 4));
      } catch (const UndefinedMetricError&) {
        row.push_back("-");
      }
    }
    cells.push_back(row);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) {
        out << std::left << std::setw(static_cast<int>(width[c])) << row[c];
      } else {
        out << "  " << std::right << std::setw(static_cast<int>(width[c])) << row[c];
      }
    }
    out << '\n';
  }
}

}  // namespace aefs
