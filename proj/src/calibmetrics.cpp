#include "liftuq/calibmetrics.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <fstream>
#include <limits>

#include "liftuq/text.hpp"

namespace liftuq {

namespace {

void require_same_shape(const Field& a, const Field& b, const char* what) {
  if (!a.same_shape(b)) throw ConfigError(std::string(what) + ": field shapes differ");
}

// Smallest k covering point n: max over channels of |r|/sigma, with 0/0 = 0
// and r/0 = inf.
double point_ratio(const Field& r, const Field& s, std::size_t n) {
  double worst = 0.0;
  for (int c = 0; c < r.channels(); ++c) {
    const double a = std::abs(r.at(n, c));
    const double sg = s.at(n, c);
    if (a == 0.0) continue;
    if (sg <= 0.0) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, a / sg);
  }
  return worst;
}

double pooled_coverage(std::span<const Field> residuals, std::span<const Field> sigmas, double k,
                       std::size_t total) {
  std::size_t covered = 0;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    const auto ind = coverage_indicator(residuals[i], band_from_sigma(sigmas[i], k));
    covered += static_cast<std::size_t>(std::count(ind.begin(), ind.end(), 1));
  }
  return static_cast<double>(covered) / static_cast<double>(total);
}

}  // namespace

CalibrationResult fit_calibration_scale(std::span<const Field> residuals,
                                        std::span<const Field> sigmas, double target) {
  if (!(target > 0.0 && target <= 1.0)) throw ConfigError("target coverage must lie in (0, 1]");
  if (residuals.empty() || residuals.size() != sigmas.size()) {
    throw ConfigError("calibration needs matching, nonempty residual and sigma lists");
  }
  std::vector<double> ratios;
  CalibrationResult res;
  res.target_coverage = target;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    require_same_shape(residuals[i], sigmas[i], "fit_calibration_scale");
    for (std::size_t n = 0; n < residuals[i].points(); ++n) {
      const double q = point_ratio(residuals[i], sigmas[i], n);
      if (std::isinf(q)) ++res.never_covered;
      ratios.push_back(q);
    }
  }
  res.points = ratios.size();
  bool all_sigma_zero = true, any_residual = false;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    for (double v : sigmas[i].values()) all_sigma_zero = all_sigma_zero && v == 0.0;
    for (double v : residuals[i].values()) any_residual = any_residual || v != 0.0;
  }
  if ((all_sigma_zero && any_residual) || res.never_covered == res.points) {
    throw NumericalError("uncalibratable: every sigma is zero and " + std::to_string(res.never_covered) +
                         " of " + std::to_string(res.points) + " calibration points have nonzero residuals");
  }
  std::sort(ratios.begin(), ratios.end());
  // Points that no finite k covers cap the attainable coverage; aim for the
  // cap when it falls short of the target.
  const double attainable = static_cast<double>(res.points - res.never_covered) / static_cast<double>(res.points);
  const double goal = std::min(target, attainable);
  const auto rank = static_cast<std::size_t>(std::ceil(goal * static_cast<double>(ratios.size())));
  std::size_t idx = std::clamp<std::size_t>(rank, 1, ratios.size()) - 1;
  // r/sigma can round just below the k that satisfies |r| <= k sigma, so the
  // candidate is stepped up by a few ulps, then to the next ratio, until the
  // pooled coverage, evaluated exactly as at test time, reaches the goal.
  double k = 0.0;
  double achieved = 0.0;
  for (;; ++idx) {
    if (idx >= ratios.size() || std::isinf(ratios[idx])) {
      throw NumericalError("calibration search failed to reach coverage " + format_double(goal));
    }
    k = ratios[idx] == 0.0 ? std::numeric_limits<double>::denorm_min() : ratios[idx];
    achieved = pooled_coverage(residuals, sigmas, k, res.points);
    for (int step = 0; step < 4 && achieved < goal; ++step) {
      k = std::nextafter(k, std::numeric_limits<double>::infinity());
      achieved = pooled_coverage(residuals, sigmas, k, res.points);
    }
    if (achieved >= goal) break;
  }
  // Coverage is monotone in k and positive doubles order like their bit
  // patterns, so bisecting on the bits finds the exact smallest feasible k.
  std::uint64_t lo = std::bit_cast<std::uint64_t>(std::numeric_limits<double>::denorm_min());
  std::uint64_t hi = std::bit_cast<std::uint64_t>(k);
  if (pooled_coverage(residuals, sigmas, std::numeric_limits<double>::denorm_min(), res.points) >= goal) hi = lo;
  while (hi - lo > 1) {
    const std::uint64_t mid = lo + (hi - lo) / 2;
    const double c = pooled_coverage(residuals, sigmas, std::bit_cast<double>(mid), res.points);
    if (c >= goal) {
      hi = mid;
      achieved = c;
    } else {
      lo = mid;
    }
  }
  k = std::bit_cast<double>(hi);
  res.k = k;
  res.achieved_on_cal = achieved;
  return res;
}

Field band_from_sigma(const Field& sigma, double k) {
  if (!(k > 0.0) || !std::isfinite(k)) throw ConfigError("calibration scale must be positive");
  Field band = sigma;
  for (double& v : band.values()) v *= k;
  return band;
}

std::vector<char> coverage_indicator(const Field& residual, const Field& band) {
  require_same_shape(residual, band, "coverage");
  std::vector<char> ind(residual.points(), 1);
  for (std::size_t n = 0; n < residual.points(); ++n) {
    for (int c = 0; c < residual.channels(); ++c) {
      if (!(std::abs(residual.at(n, c)) <= band.at(n, c))) {
        ind[n] = 0;
        break;
      }
    }
  }
  return ind;
}

double case_coverage(const Field& residual, const Field& band) {
  const auto ind = coverage_indicator(residual, band);
  return static_cast<double>(std::count(ind.begin(), ind.end(), 1)) /
         static_cast<double>(ind.size());
}

CoverageAggregate aggregate_coverage(std::span<const double> coverages,
                                     std::span<const std::size_t> counts) {
  if (coverages.empty() || coverages.size() != counts.size()) {
    throw ConfigError("aggregate_coverage needs matching, nonempty lists");
  }
  CoverageAggregate agg;
  double weighted = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < coverages.size(); ++i) {
    agg.avg_cr += coverages[i];
    weighted += coverages[i] * static_cast<double>(counts[i]);
    total += static_cast<double>(counts[i]);
  }
  agg.avg_cr /= static_cast<double>(coverages.size());
  agg.total_cr = weighted / total;
  return agg;
}

MetricsReport bandwidth_report(std::span<const Field> residuals, std::span<const Field> bands,
                               std::span<const double> normalization) {
  if (residuals.empty() || residuals.size() != bands.size()) {
    throw ConfigError("metrics need matching, nonempty residual and band lists");
  }
  const int d = residuals[0].channels();
  if (normalization.size() != 1 && normalization.size() != static_cast<std::size_t>(d)) {
    throw ConfigError("normalization needs one value or one per channel");
  }
  for (double v : normalization) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("normalization must be positive");
  }
  auto norm = [&](int c) { return normalization.size() == 1 ? normalization[0] : normalization[c]; };

  MetricsReport rep;
  rep.normalization.assign(normalization.begin(), normalization.end());
  std::vector<std::size_t> counts;
  double sum_cov = 0.0, sum_miss = 0.0;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    require_same_shape(residuals[i], bands[i], "bandwidth_report");
    if (residuals[i].channels() != d) throw ConfigError("bandwidth_report: channel counts differ");
    const auto ind = coverage_indicator(residuals[i], bands[i]);
    std::size_t cov = 0;
    for (std::size_t n = 0; n < ind.size(); ++n) {
      double w = 0.0;
      for (int c = 0; c < d; ++c) w += bands[i].at(n, c) / norm(c);
      w /= d;
      if (ind[n]) {
        ++cov;
        sum_cov += w;
      } else {
        sum_miss += w;
      }
    }
    rep.n_covered += cov;
    rep.n_missed += ind.size() - cov;
    rep.per_case_cr.push_back(static_cast<double>(cov) / static_cast<double>(ind.size()));
    counts.push_back(ind.size());
  }
  const auto agg = aggregate_coverage(rep.per_case_cr, counts);
  rep.avg_cr = agg.avg_cr;
  rep.total_cr = agg.total_cr;
  const double n_all = static_cast<double>(rep.n_covered + rep.n_missed);
  rep.avg_bw_all = (sum_cov + sum_miss) / n_all;
  if (rep.n_covered > 0) rep.avg_bw_covered = sum_cov / static_cast<double>(rep.n_covered);
  if (rep.n_missed > 0) rep.avg_bw_missed = sum_miss / static_cast<double>(rep.n_missed);
  return rep;
}

std::vector<double> normalization_constants(std::span<const Field> truths) {
  if (truths.empty()) throw ConfigError("normalization needs at least one truth field");
  const int d = truths[0].channels();
  std::vector<double> sum(static_cast<std::size_t>(d), 0.0);
  std::size_t count = 0;
  for (const auto& u : truths) {
    if (u.channels() != d) throw ConfigError("normalization: channel counts differ");
    for (std::size_t n = 0; n < u.points(); ++n) {
      for (int c = 0; c < d; ++c) sum[c] += std::abs(u.at(n, c));
    }
    count += u.points();
  }
  for (double& s : sum) {
    s /= static_cast<double>(count);
    if (!(s > 0.0)) throw NumericalError("normalization constant is zero (all-zero truth fields)");
  }
  return sum;
}

std::string metrics_csv_fields(const MetricsRow& row) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("NA"); };
  std::string norm;
  for (std::size_t i = 0; i < row.report.normalization.size(); ++i) {
    if (i) norm += ';';
    norm += format_double(row.report.normalization[i]);
  }
  const auto& r = row.report;
  return row.method + ',' + row.site + ',' + format_double(row.p) + ',' + std::to_string(row.T) +
         ',' + format_double(row.k) + ',' + format_double(row.target) + ',' +
         format_double(r.avg_cr) + ',' + format_double(r.total_cr) + ',' +
         format_double(r.avg_bw_all) + ',' + opt(r.avg_bw_covered) + ',' + opt(r.avg_bw_missed) +
         ',' + norm;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << kMetricsHeader << '\n';
  for (const auto& row : rows) out << metrics_csv_fields(row) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace liftuq
