#include "joulemark/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "joulemark/error.hpp"
#include "joulemark/format.hpp"

namespace joulemark {

void Dataset::validate() const {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != columns.size()) {
      throw Error(ErrorCode::InvalidParams, "dataset row " + std::to_string(i) + " has " +
                                                std::to_string(rows[i].size()) + " values, expected " +
                                                std::to_string(columns.size()));
    }
  }
  (void)index_of(target);
}

std::size_t Dataset::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return i;
  }
  throw Error(ErrorCode::InvalidParams, "dataset has no column '" + std::string(name) + "'");
}

std::vector<double> Dataset::column(std::string_view name) const {
  const auto idx = index_of(name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r[idx]);
  return out;
}

// ---------------------------------------------------------------------------
// Correlation

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::LengthMismatch, "vectors differ in length");
  const std::size_t n = x.size();
  if (n < 3) throw Error(ErrorCode::TooFewPoints, "correlation needs at least 3 points");
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::ZeroVariance, "a vector has zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    // Positions i..j (0-based) hold ranks i+1..j+1.
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::LengthMismatch, "vectors differ in length");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

std::vector<CorrelationResult> correlate_against_energy(const Dataset& data) {
  data.validate();
  const auto target_idx = data.index_of(data.target);
  std::vector<std::size_t> order{target_idx};
  for (std::size_t c = 0; c < data.columns.size(); ++c) {
    if (c != target_idx) order.push_back(c);
  }

  std::vector<CorrelationResult> out;
  for (const auto c : order) {
    CorrelationResult r;
    r.metric = data.columns[c];
    std::vector<double> x, y;
    for (const auto& row : data.rows) {
      if (std::isnan(row[c]) || std::isnan(row[target_idx])) {
        ++r.dropped;
        continue;
      }
      x.push_back(row[c]);
      y.push_back(row[target_idx]);
    }
    r.n = x.size();
    try {
      r.pearson_r = pearson(x, y);
      r.spearman_rho = spearman(x, y);
    } catch (const Error& e) {
      r.pearson_r.reset();
      r.spearman_rho.reset();
      r.skip_reason = std::string(to_string(e.code()));
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string correlation_table_csv(const std::vector<std::pair<std::string, std::vector<CorrelationResult>>>& configs) {
  std::vector<std::string> metrics;
  for (const auto& [_, results] : configs) {
    for (const auto& r : results) {
      if (std::find(metrics.begin(), metrics.end(), r.metric) == metrics.end()) metrics.push_back(r.metric);
    }
  }
  std::string out = "metric";
  for (const auto& [name, _] : configs) out += "," + name;
  out += "\n";
  for (const auto& m : metrics) {
    out += m;
    for (const auto& [_, results] : configs) {
      out += ",";
      for (const auto& r : results) {
        if (r.metric == m) out += fmtutil::format_optional(r.spearman_rho);
      }
    }
    out += "\n";
  }
  return out;
}

std::string correlation_detail_csv(const std::vector<std::pair<std::string, std::vector<CorrelationResult>>>& configs) {
  std::string out = "config,metric,pearson_r,spearman_rho,n,dropped,skip_reason\n";
  for (const auto& [name, results] : configs) {
    for (const auto& r : results) {
      out += name + "," + r.metric + "," + fmtutil::format_optional(r.pearson_r) + "," +
             fmtutil::format_optional(r.spearman_rho) + "," + std::to_string(r.n) + "," + std::to_string(r.dropped) +
             "," + r.skip_reason + "\n";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lasso

namespace {

struct Design {
  std::vector<std::string> features;
  std::vector<std::vector<double>> x;  // column-major, standardized
  std::vector<double> y;               // centered
  std::vector<double> means, scales;
  double y_mean = 0.0;
  std::vector<std::string> dropped;
  std::size_t rows_dropped = 0;
};

Design build_design(const Dataset& data) {
  data.validate();
  const auto t = data.index_of(data.target);
  Design d;
  std::vector<const std::vector<double>*> complete;
  for (const auto& row : data.rows) {
    if (std::any_of(row.begin(), row.end(), [](double v) { return std::isnan(v); })) {
      ++d.rows_dropped;
      continue;
    }
    complete.push_back(&row);
  }
  const std::size_t n = complete.size();
  if (n == 0) throw Error(ErrorCode::TooFewRows, "no complete rows");

  for (const auto* row : complete) d.y.push_back((*row)[t]);
  d.y_mean = std::accumulate(d.y.begin(), d.y.end(), 0.0) / static_cast<double>(n);
  for (auto& v : d.y) v -= d.y_mean;

  for (std::size_t c = 0; c < data.columns.size(); ++c) {
    if (c == t) continue;
    std::vector<double> col;
    col.reserve(n);
    for (const auto* row : complete) col.push_back((*row)[c]);
    const double mean = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : col) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    if (!(sd > 0.0)) {
      spdlog::warn("lasso: dropping zero-variance feature '{}'", data.columns[c]);
      d.dropped.push_back(data.columns[c]);
      continue;
    }
    for (auto& v : col) v = (v - mean) / sd;
    d.features.push_back(data.columns[c]);
    d.x.push_back(std::move(col));
    d.means.push_back(mean);
    d.scales.push_back(sd);
  }
  if (d.features.size() < 2) {
    throw Error(ErrorCode::DegenerateDesign, "lasso needs at least two features with nonzero variance");
  }
  return d;
}

double soft_threshold(double z, double gamma) {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

double objective(const Design& d, const std::vector<double>& beta, double lambda) {
  const std::size_t n = d.y.size();
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double fit = 0.0;
    for (std::size_t j = 0; j < beta.size(); ++j) fit += d.x[j][i] * beta[j];
    const double r = d.y[i] - fit;
    rss += r * r;
  }
  double l1 = 0.0;
  for (double b : beta) l1 += std::abs(b);
  return rss / (2.0 * static_cast<double>(n)) + lambda * l1;
}

LassoResult fit_design(const Design& d, const LassoOptions& opt) {
  if (!(opt.lambda >= 0.0)) throw Error(ErrorCode::InvalidParams, "lambda must be >= 0");
  const std::size_t n = d.y.size();
  const std::size_t p = d.features.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  std::vector<double> z(p);
  for (std::size_t j = 0; j < p; ++j) {
    double s = 0.0;
    for (double v : d.x[j]) s += v * v;
    z[j] = s * inv_n;
  }

  LassoResult res;
  res.lambda = opt.lambda;
  res.features = d.features;
  res.feature_means = d.means;
  res.feature_scales = d.scales;
  res.intercept = d.y_mean;
  res.dropped_features = d.dropped;
  res.rows_used = n;
  res.rows_dropped = d.rows_dropped;
  if (n < p) res.flags.emplace_back(kFlagFewRows);
  if (!d.dropped.empty()) res.flags.emplace_back("DEGENERATE_DESIGN");

  std::vector<double> beta(p, 0.0);
  std::vector<double> r = d.y;
  double prev_obj = objective(d, beta, opt.lambda);
  for (int it = 1; it <= opt.max_iter; ++it) {
    double max_delta = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      const auto& xj = d.x[j];
      double rho = 0.0;
      for (std::size_t i = 0; i < n; ++i) rho += xj[i] * r[i];
      rho = rho * inv_n + z[j] * beta[j];
      const double updated = soft_threshold(rho, opt.lambda) / z[j];
      const double delta = updated - beta[j];
      if (delta != 0.0) {
        for (std::size_t i = 0; i < n; ++i) r[i] -= xj[i] * delta;
        beta[j] = updated;
      }
      max_delta = std::max(max_delta, std::abs(delta));
    }
    const double obj = objective(d, beta, opt.lambda);
    res.objective_history.push_back(obj);
    if (obj > prev_obj + 1e-12 * std::max(1.0, std::abs(prev_obj))) {
      if (std::find(res.flags.begin(), res.flags.end(), "OBJECTIVE_INCREASED") == res.flags.end()) {
        res.flags.emplace_back("OBJECTIVE_INCREASED");
      }
    }
    prev_obj = obj;
    res.iterations = it;
    if (max_delta < opt.tol) {
      res.converged = true;
      break;
    }
  }
  if (!res.converged) res.flags.emplace_back(kFlagNotConverged);

  res.coefficients = beta;
  double total = 0.0;
  for (double b : beta) total += std::abs(b);
  if (total > 0.0) {
    for (std::size_t j = 0; j < p; ++j) {
      if (beta[j] != 0.0) res.importances.emplace_back(d.features[j], std::abs(beta[j]) / total);
    }
    std::stable_sort(res.importances.begin(), res.importances.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
  }
  return res;
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& idx) {
  Dataset out{data.columns, {}, data.target};
  for (auto i : idx) out.rows.push_back(data.rows[i]);
  return out;
}

}  // namespace

std::optional<double> LassoResult::coefficient(std::string_view feature) const {
  for (std::size_t j = 0; j < features.size(); ++j) {
    if (features[j] == feature) return coefficients[j];
  }
  return std::nullopt;
}

double LassoResult::predict(std::span<const double> x) const {
  double y = intercept;
  for (std::size_t j = 0; j < coefficients.size(); ++j) {
    y += coefficients[j] * (x[j] - feature_means[j]) / feature_scales[j];
  }
  return y;
}

LassoResult lasso_fit(const Dataset& data, LassoOptions options) { return fit_design(build_design(data), options); }

double lasso_null_lambda(const Dataset& data) {
  const auto d = build_design(data);
  const double inv_n = 1.0 / static_cast<double>(d.y.size());
  double best = 0.0;
  for (const auto& xj : d.x) {
    double dot = 0.0;
    for (std::size_t i = 0; i < xj.size(); ++i) dot += xj[i] * d.y[i];
    best = std::max(best, std::abs(dot * inv_n));
  }
  return best;
}

std::vector<double> default_lambda_grid(double lambda_max, std::size_t count, double decades) {
  std::vector<double> grid;
  if (count == 0) return grid;
  if (count == 1) return {lambda_max};
  for (std::size_t k = 0; k < count; ++k) {
    grid.push_back(lambda_max * std::pow(10.0, -decades * static_cast<double>(k) / static_cast<double>(count - 1)));
  }
  return grid;
}

LassoResult feature_selection_report(const Dataset& data, const FeatureSelectionOptions& options) {
  data.validate();
  std::vector<std::size_t> complete;
  for (std::size_t i = 0; i < data.rows.size(); ++i) {
    const auto& row = data.rows[i];
    if (std::none_of(row.begin(), row.end(), [](double v) { return std::isnan(v); })) complete.push_back(i);
  }
  if (complete.size() < 10) {
    throw Error(ErrorCode::TooFewRows, "feature selection needs at least 10 complete rows, got " +
                                           std::to_string(complete.size()));
  }

  // Fisher-Yates on raw engine output.
  std::mt19937_64 rng(options.split_seed);
  for (std::size_t i = complete.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(complete[i], complete[j]);
  }
  const auto n_train = static_cast<std::size_t>(std::llround(options.train_fraction * static_cast<double>(complete.size())));
  std::vector<std::size_t> train_idx(complete.begin(), complete.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test_idx(complete.begin() + static_cast<std::ptrdiff_t>(n_train), complete.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  const Dataset train = subset(data, train_idx);
  const Dataset test = subset(data, test_idx);

  const Design design = build_design(train);
  std::vector<double> grid = options.lambda_grid;
  if (grid.empty()) {
    double lmax = 0.0;
    const double inv_n = 1.0 / static_cast<double>(design.y.size());
    for (const auto& xj : design.x) {
      double dot = 0.0;
      for (std::size_t i = 0; i < xj.size(); ++i) dot += xj[i] * design.y[i];
      lmax = std::max(lmax, std::abs(dot * inv_n));
    }
    grid = default_lambda_grid(lmax);
  }
  std::sort(grid.begin(), grid.end(), std::greater<>());

  const auto t = data.index_of(data.target);
  std::vector<std::size_t> feature_cols;
  for (const auto& f : design.features) feature_cols.push_back(data.index_of(f));

  auto test_r2 = [&](const LassoResult& fit) -> std::optional<double> {
    if (test.rows.empty()) return std::nullopt;
    double mean = 0.0;
    for (const auto& row : test.rows) mean += row[t];
    mean /= static_cast<double>(test.rows.size());
    double ss_res = 0.0, ss_tot = 0.0;
    std::vector<double> x(feature_cols.size());
    for (const auto& row : test.rows) {
      for (std::size_t j = 0; j < feature_cols.size(); ++j) x[j] = row[feature_cols[j]];
      const double e = row[t] - fit.predict(x);
      ss_res += e * e;
      ss_tot += (row[t] - mean) * (row[t] - mean);
    }
    if (ss_tot == 0.0) return std::nullopt;
    return 1.0 - ss_res / ss_tot;
  };

  std::optional<LassoResult> best;
  for (double lambda : grid) {
    auto fit = fit_design(design, LassoOptions{lambda, options.tol, options.max_iter});
    fit.test_r2 = test_r2(fit);
    const bool better = !best || (fit.test_r2 && (!best->test_r2 || *fit.test_r2 > *best->test_r2));
    if (better) best = std::move(fit);
  }

  LassoResult out = std::move(*best);
  out.train_fraction = static_cast<double>(train_idx.size()) / static_cast<double>(complete.size());
  out.test_fraction = static_cast<double>(test_idx.size()) / static_cast<double>(complete.size());
  out.split_seed = options.split_seed;
  out.lambda_grid_size = grid.size();
  out.rows_dropped = data.rows.size() - complete.size();
  for (std::size_t a = 0; a < design.features.size(); ++a) {
    for (std::size_t b = a + 1; b < design.features.size(); ++b) {
      const double r = pearson(design.x[a], design.x[b]);
      if (std::abs(r) >= options.collinear_threshold) {
        out.collinear_pairs.emplace_back(design.features[a], design.features[b]);
      }
    }
  }
  return out;
}

nlohmann::ordered_json to_json(const LassoResult& r) {
  nlohmann::ordered_json coefs = nlohmann::ordered_json::object();
  for (std::size_t j = 0; j < r.features.size(); ++j) coefs[r.features[j]] = r.coefficients[j];
  nlohmann::ordered_json transform = nlohmann::ordered_json::object();
  for (std::size_t j = 0; j < r.features.size(); ++j) {
    transform[r.features[j]] = {{"mean", r.feature_means[j]}, {"scale", r.feature_scales[j]}};
  }
  nlohmann::ordered_json importances = nlohmann::ordered_json::array();
  double cumulative = 0.0;
  for (const auto& [name, share] : r.importances) {
    cumulative += share;
    importances.push_back({{"feature", name}, {"share", share}, {"cumulative", cumulative}});
  }
  nlohmann::ordered_json pairs = nlohmann::ordered_json::array();
  for (const auto& [a, b] : r.collinear_pairs) pairs.push_back({a, b});
  nlohmann::ordered_json j{{"lambda", r.lambda},
                           {"intercept", r.intercept},
                           {"coefficients", coefs},
                           {"standardization", transform},
                           {"importances", importances},
                           {"dropped_features", r.dropped_features},
                           {"collinear_pairs", pairs},
                           {"train_fraction", r.train_fraction},
                           {"test_fraction", r.test_fraction},
                           {"split_seed", r.split_seed},
                           {"lambda_grid_size", r.lambda_grid_size},
                           {"rows_used", r.rows_used},
                           {"rows_dropped", r.rows_dropped},
                           {"iterations", r.iterations},
                           {"converged", r.converged},
                           {"flags", r.flags}};
  j["test_r2"] = r.test_r2 ? nlohmann::ordered_json(*r.test_r2) : nlohmann::ordered_json(nullptr);
  return j;
}

}  // namespace joulemark
