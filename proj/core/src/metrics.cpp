#include "joulemark/metrics.hpp"

#include <cmath>

#include "joulemark/error.hpp"
#include "joulemark/format.hpp"
#include "joulemark/session.hpp"

namespace joulemark {

void RunStats::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidParams, "run stats: " + why); };
  if (!(duration_s > 0.0)) fail("duration_s must be positive");
  if (samples_processed < 0) fail("samples_processed must be >= 0");
  for (const auto& u : {avg_utilisation, gpu_utilisation, accuracy}) {
    if (u && !(*u >= 0.0 && *u <= 1.0)) fail("fractions must lie in [0, 1]");
  }
  if (gpu_vram_used_bytes && *gpu_vram_used_bytes < 0) fail("VRAM used must be >= 0");
  if (gpu_vram_used_bytes && gpu_vram_total_bytes && *gpu_vram_used_bytes > *gpu_vram_total_bytes) {
    fail("VRAM used exceeds VRAM total");
  }
}

namespace {

template <typename T>
std::optional<T> config_number(const nlohmann::json& cfg, const char* key) {
  if (!cfg.is_object()) return std::nullopt;
  const auto it = cfg.find(key);
  if (it == cfg.end() || !it->is_number()) return std::nullopt;
  return it->get<T>();
}

}  // namespace

RunStats run_stats_for(const Session& session, const EnergyReport& report) {
  RunStats s;
  s.samples_processed = report.sample_count;
  s.duration_s = report.window.duration_s();

  for (const auto& m : session.markers) {
    if (m.kind != MarkerKind::Epoch || !m.timestamp_ns || *m.timestamp_ns > report.window.t_end_ns) continue;
    if (const auto& acc = std::get<EpochPayload>(m.payload).accuracy) s.accuracy = *acc;
  }
  if (!s.accuracy) s.accuracy = config_number<double>(session.run_config, kCfgAccuracy);

  double util_sum = 0.0;
  int util_n = 0;
  for (const char* key : {kCfgCpuUtilisation, kCfgGpuUtilisation, kCfgDramUtilisation}) {
    if (auto u = config_number<double>(session.run_config, key)) {
      util_sum += *u;
      ++util_n;
    }
  }
  if (util_n > 0) s.avg_utilisation = util_sum / util_n;
  s.gpu_utilisation = config_number<double>(session.run_config, kCfgGpuUtilisation);

  if (s.duration_s > 0.0) {
    s.avg_power_w = report.gross_total_j / s.duration_s;
    double gpu_j = 0.0;
    bool any_gpu = false;
    for (const auto& [d, j] : report.gross_j) {
      if (d.kind == DomainKind::Gpu) {
        gpu_j += j;
        any_gpu = true;
      }
    }
    if (any_gpu) s.gpu_avg_power_w = gpu_j / s.duration_s;
  }
  s.gpu_vram_used_bytes = config_number<std::int64_t>(session.run_config, kCfgVramUsed);
  s.gpu_vram_total_bytes = config_number<std::int64_t>(session.run_config, kCfgVramTotal);
  return s;
}

namespace {

MetricCell absent(std::string_view why) { return MetricCell{std::nullopt, std::string(why)}; }

MetricCell value(double v) {
  if (!std::isfinite(v)) return absent("non-finite result");
  return MetricCell{v, {}};
}

MetricCell ratio(const std::optional<double>& num, const std::optional<double>& den) {
  if (!num || !den) return absent(kAbsentMissing);
  if (*den == 0.0) return absent(kAbsentZeroDenominator);
  return value(*num / *den);
}

std::optional<double> as_double(const std::optional<std::int64_t>& v) {
  return v ? std::optional<double>(static_cast<double>(*v)) : std::nullopt;
}

MetricCell product_ratio(const MetricCell& a, const std::optional<double>& b, const std::optional<double>& den) {
  if (!a.value) return absent(a.absent_reason.empty() ? kAbsentMissing : std::string_view(a.absent_reason));
  if (!b) return absent(kAbsentMissing);
  return ratio(*a.value * *b, den);
}

}  // namespace

const std::vector<std::string>& MetricRow::column_names() {
  static const std::vector<std::string> names{
      "energy_per_sample", "macs_param",          "work_done",           "overall_efficiency",
      "overall_efficiency_gpu", "parameters",     "work_per_unit_power", "energy_scaling_factor",
      "gpu_energy_scaling_factor", "model_size_to_ram", "model_size_to_vram_total"};
  return names;
}

MetricColumns MetricRow::columns() const {
  const MetricCell* cells[] = {&energy_per_sample,     &macs_param,           &work_done,
                               &overall_efficiency,    &overall_efficiency_gpu, &parameters,
                               &work_per_unit_power,   &energy_scaling_factor, &gpu_energy_scaling_factor,
                               &model_size_to_ram,     &model_size_to_vram_total};
  MetricColumns out;
  for (std::size_t i = 0; i < column_names().size(); ++i) out.emplace_back(column_names()[i], *cells[i]);
  return out;
}

const std::vector<std::string>& GenMetricRow::column_names() {
  static const std::vector<std::string> names{"energy_per_sample",  "flops",         "model_size_to_ram",
                                              "model_size_to_vram_total", "parameters", "request_rate",
                                              "cache_hit_rate",     "average_output_token_length"};
  return names;
}

MetricColumns GenMetricRow::columns() const {
  const MetricCell* cells[] = {&energy_per_sample, &flops,          &model_size_to_ram,
                               &model_size_to_vram_total, &parameters, &request_rate,
                               &cache_hit_rate,    &average_output_token_length};
  MetricColumns out;
  for (std::size_t i = 0; i < column_names().size(); ++i) out.emplace_back(column_names()[i], *cells[i]);
  return out;
}

MetricRow discriminative_metrics(const EnergyReport& energy, const std::optional<ModelDescriptor>& model,
                                 const RunStats& stats) {
  MetricRow row;
  std::optional<double> trainable, macs, size;
  if (model) {
    trainable = static_cast<double>(model->trainable_parameters);
    macs = as_double(model->macs);
    size = static_cast<double>(model->model_size_bytes);
  }
  const double samples = static_cast<double>(stats.samples_processed);
  const std::optional<double> power = stats.avg_power_w;

  row.energy_per_sample = ratio(energy.net_j, samples);
  row.macs_param = ratio(macs, trainable);
  row.work_done = trainable ? ratio(*trainable * samples, stats.duration_s) : absent(kAbsentMissing);
  row.overall_efficiency = product_ratio(row.work_done, stats.accuracy, stats.avg_utilisation);
  row.overall_efficiency_gpu = product_ratio(row.work_done, stats.accuracy, stats.gpu_utilisation);
  row.parameters = trainable ? value(*trainable) : absent(kAbsentMissing);
  row.work_per_unit_power = row.work_done.value ? ratio(row.work_done.value, power) : row.work_done;
  row.energy_scaling_factor = ratio(power, trainable);
  row.gpu_energy_scaling_factor = ratio(stats.gpu_avg_power_w, trainable);
  row.model_size_to_ram = ratio(size, as_double(stats.gpu_vram_used_bytes));
  row.model_size_to_vram_total = ratio(size, as_double(stats.gpu_vram_total_bytes));
  return row;
}

GenMetricRow generative_metrics(const EnergyReport& energy, const LoadgenSummary& load,
                                const std::optional<ModelDescriptor>& model,
                                std::optional<std::int64_t> vram_used_bytes,
                                std::optional<std::int64_t> vram_total_bytes) {
  if (load.completed_requests <= 0) throw Error(ErrorCode::NoCompletedRequests, "no completed requests in window");
  const double completed = static_cast<double>(load.completed_requests);
  GenMetricRow row;
  row.energy_per_sample = value(energy.net_j / completed);
  std::optional<double> size;
  if (model) {
    row.flops = model->flops ? value(static_cast<double>(*model->flops)) : absent(kAbsentMissing);
    row.parameters = value(static_cast<double>(model->total_parameters));
    size = static_cast<double>(model->model_size_bytes);
  } else {
    row.flops = absent(kAbsentMissing);
    row.parameters = absent(kAbsentMissing);
  }
  row.model_size_to_ram = ratio(size, as_double(vram_used_bytes));
  row.model_size_to_vram_total = ratio(size, as_double(vram_total_bytes));
  row.request_rate = value(load.offered_rps);
  row.cache_hit_rate = load.cache_hit_rate ? value(*load.cache_hit_rate) : absent(kAbsentMissing);
  row.average_output_token_length = value(static_cast<double>(load.total_output_tokens) / completed);
  return row;
}

double energy_per_output_token(const EnergyReport& energy, const LoadgenSummary& load) {
  if (load.total_output_tokens <= 0) throw Error(ErrorCode::NoTokens, "no output tokens in window");
  return energy.net_j / static_cast<double>(load.total_output_tokens);
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

}  // namespace

std::string metrics_csv(const std::vector<std::string>& key_names,
                        const std::vector<std::pair<std::vector<std::string>, MetricColumns>>& rows) {
  std::string out;
  std::vector<std::string> header = key_names;
  if (!rows.empty()) {
    for (const auto& [name, _] : rows.front().second) header.push_back(name);
  }
  for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + csv_escape(header[i]);
  out += "\n";
  for (const auto& [keys, cols] : rows) {
    if (keys.size() != key_names.size()) throw Error(ErrorCode::InvalidParams, "key column count mismatch");
    std::vector<std::string> cells = keys;
    for (const auto& [_, cell] : cols) cells.push_back(fmtutil::format_optional(cell.value));
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + csv_escape(cells[i]);
    out += "\n";
  }
  return out;
}

std::optional<std::size_t> MetricTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  return std::nullopt;
}

MetricTable parse_metrics_csv(std::string_view text) {
  MetricTable t;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw Error(ErrorCode::ParseError, "metrics CSV line " + std::to_string(line_no) + ": expected " +
                                             std::to_string(t.header.size()) + " cells");
    }
    t.cells.push_back(std::move(cells));
  }
  if (t.header.empty()) throw Error(ErrorCode::ParseError, "metrics CSV has no header");
  return t;
}

}  // namespace joulemark
