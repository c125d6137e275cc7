#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace joulemark {

/// Runs x metrics. Absent values are NaN and are dropped listwise by each
/// analysis over the columns it uses.
struct Dataset {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::string target;

  /// Throws InvalidParams for ragged rows or an unknown column.
  void validate() const;
  [[nodiscard]] std::size_t index_of(std::string_view name) const;
  [[nodiscard]] std::vector<double> column(std::string_view name) const;
};

/// Sample Pearson correlation. Throws LengthMismatch, TooFewPoints (n < 3),
/// ZeroVariance.
double pearson(std::span<const double> x, std::span<const double> y);

/// 1-based ranks; tied values share the mean of the ranks they span.
std::vector<double> average_ranks(std::span<const double> x);

/// Pearson correlation of average ranks.
double spearman(std::span<const double> x, std::span<const double> y);

struct CorrelationResult {
  std::string metric;
  std::optional<double> pearson_r;
  std::optional<double> spearman_rho;
  std::size_t n = 0;
  std::size_t dropped = 0;
  std::string skip_reason;  // set when the column was skipped
};

/// One result per column, the target itself first (its row is exactly 1).
/// Columns that cannot be correlated are reported with a skip reason.
std::vector<CorrelationResult> correlate_against_energy(const Dataset& data);

/// Wide table: one row per metric, one spearman column per configuration.
std::string correlation_table_csv(const std::vector<std::pair<std::string, std::vector<CorrelationResult>>>& configs);
/// Long table with both coefficients, counts and skip reasons.
std::string correlation_detail_csv(const std::vector<std::pair<std::string, std::vector<CorrelationResult>>>& configs);

// ---------------------------------------------------------------------------
// Lasso

struct LassoOptions {
  double lambda = 0.0;
  double tol = 1e-12;
  int max_iter = 100'000;
};

struct LassoResult {
  double lambda = 0.0;
  std::vector<std::string> features;  // after dropping zero-variance ones
  std::vector<double> coefficients;   // standardized scale
  double intercept = 0.0;             // mean of the (training) target
  std::vector<double> feature_means;
  std::vector<double> feature_scales;  // population standard deviations
  /// Nonzero coefficients only, by descending share; shares sum to 1.
  std::vector<std::pair<std::string, double>> importances;
  std::vector<std::string> dropped_features;
  std::vector<std::string> flags;
  std::vector<double> objective_history;  // after each full sweep
  int iterations = 0;
  bool converged = false;
  std::size_t rows_used = 0;
  std::size_t rows_dropped = 0;

  // Populated by feature_selection_report.
  double train_fraction = 1.0;
  double test_fraction = 0.0;
  std::optional<double> test_r2;
  std::uint64_t split_seed = 0;
  std::size_t lambda_grid_size = 0;
  std::vector<std::pair<std::string, std::string>> collinear_pairs;

  [[nodiscard]] std::optional<double> coefficient(std::string_view feature) const;
  /// Prediction on the original feature scale.
  [[nodiscard]] double predict(std::span<const double> features_in_order) const;
};

inline constexpr std::string_view kFlagNotConverged = "NOT_CONVERGED";
inline constexpr std::string_view kFlagFewRows = "FEWER_ROWS_THAN_FEATURES";

/// Coordinate descent on (1/2n)||y - Xb||^2 + lambda ||b||_1 with the
/// non-target columns standardized and the target centered. Throws
/// DegenerateDesign when fewer than two usable features remain,
/// InvalidParams for a negative lambda, TooFewRows with no rows.
LassoResult lasso_fit(const Dataset& data, LassoOptions options);

/// max_j |x_j . y| / n on the standardized design; any lambda at or above
/// it gives an all-zero fit.
double lasso_null_lambda(const Dataset& data);

/// 50 values, log-spaced from `lambda_max` down four decades.
std::vector<double> default_lambda_grid(double lambda_max, std::size_t count = 50, double decades = 4.0);

struct FeatureSelectionOptions {
  std::vector<double> lambda_grid;  // empty: default grid on the training split
  std::uint64_t split_seed = 42;
  double train_fraction = 0.8;
  double tol = 1e-10;
  int max_iter = 100'000;
  double collinear_threshold = 0.999;
};

/// Seeded train/test split, one fit per lambda, best test R^2 wins (ties
/// go to the larger lambda). Throws TooFewRows (< 10 complete rows).
LassoResult feature_selection_report(const Dataset& data, const FeatureSelectionOptions& options = {});

nlohmann::ordered_json to_json(const LassoResult& result);

}  // namespace joulemark
