#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "liftuq/tensor_field.hpp"

namespace liftuq {

struct CalibrationResult {
  double k = 1.0;
  double target_coverage = 0.95;
  double achieved_on_cal = 0.0;
  std::size_t points = 0;
  /// Points with sigma = 0 in some channel where the residual is nonzero:
  /// no finite k covers them.
  std::size_t never_covered = 0;
};

/// Smallest k with pooled coverage >= target, where a point is covered when
/// |r_c| <= k sigma_c in every channel. Residuals are pred - truth. When
/// never-covered points make the target unreachable, k is the smallest scale
/// reaching the best attainable coverage and achieved_on_cal < target.
/// Throws NumericalError("uncalibratable ...") if no point can be covered
/// or every sigma is zero while some residual is not.
CalibrationResult fit_calibration_scale(std::span<const Field> residuals,
                                        std::span<const Field> sigmas, double target);

Field band_from_sigma(const Field& sigma, double k);

/// Per-point indicator (1 covered, 0 missed) under the all-channels rule;
/// ties count as covered.
std::vector<char> coverage_indicator(const Field& residual, const Field& band);

double case_coverage(const Field& residual, const Field& band);

struct CoverageAggregate {
  double avg_cr = 0.0;
  double total_cr = 0.0;
};

/// avg_cr: unweighted mean; total_cr: weighted by point counts.
CoverageAggregate aggregate_coverage(std::span<const double> coverages,
                                     std::span<const std::size_t> counts);

struct MetricsReport {
  double avg_cr = 0.0;
  double total_cr = 0.0;
  double avg_bw_all = 0.0;
  /// Empty when no point falls in the class.
  std::optional<double> avg_bw_covered;
  std::optional<double> avg_bw_missed;
  std::size_t n_covered = 0;
  std::size_t n_missed = 0;
  std::vector<double> per_case_cr;
  std::vector<double> normalization;
};

/// Half-bandwidths averaged per point, then over points pooled across
/// cases, each channel divided by its normalization constant (one value per
/// channel, or a single value for all). Multiply by the grid size for
/// case-wise totals.
MetricsReport bandwidth_report(std::span<const Field> residuals, std::span<const Field> bands,
                               std::span<const double> normalization);

/// Coverage and bandwidth metrics together (alias of bandwidth_report, which
/// fills every field).
inline MetricsReport evaluate_metrics(std::span<const Field> residuals,
                                      std::span<const Field> bands,
                                      std::span<const double> normalization) {
  return bandwidth_report(residuals, bands, normalization);
}

/// Per-channel mean |u| over the given truth fields.
std::vector<double> normalization_constants(std::span<const Field> truths);

struct MetricsRow {
  std::string method;
  std::string site;
  double p = 0.0;
  int T = 0;
  double k = 0.0;
  double target = 0.0;
  MetricsReport report;
};

inline constexpr const char* kMetricsHeader =
    "method,site,p,T,k,target,avg_cr,total_cr,bw_all,bw_covered,bw_missed,norm";

/// CSV fields of one row in header order; undefined bandwidths are "NA" and
/// multi-channel normalizations are joined with ';'.
std::string metrics_csv_fields(const MetricsRow& row);
void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows);

}  // namespace liftuq
