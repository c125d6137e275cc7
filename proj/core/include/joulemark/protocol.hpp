#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "joulemark/trace.hpp"

namespace joulemark {

// ---------------------------------------------------------------------------
// Model characteristics

enum class LayerKind { Dense, Conv2d };

/// Declarative layer shape for MAC counting. Dense uses in/out features;
/// Conv2d uses the kernel, channel and output-map fields.
struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  std::int64_t in_features = 0;
  std::int64_t out_features = 0;
  std::int64_t kernel_h = 0;
  std::int64_t kernel_w = 0;
  std::int64_t c_in = 0;
  std::int64_t c_out = 0;
  std::int64_t out_h = 0;
  std::int64_t out_w = 0;
  bool bias = false;

  static LayerSpec dense(std::int64_t in, std::int64_t out, bool bias = false);
  static LayerSpec conv2d(std::int64_t kh, std::int64_t kw, std::int64_t c_in, std::int64_t c_out,
                          std::int64_t out_h, std::int64_t out_w, bool bias = false);

  bool operator==(const LayerSpec&) const = default;
};

/// MACs for one forward pass of one sample, bias adds included.
/// Throws InvalidLayer for non-positive dimensions or overflow.
std::uint64_t compute_macs(std::span<const LayerSpec> layers);

/// FLOPs under the 2 x MACs convention.
constexpr std::uint64_t flops_from_macs(std::uint64_t macs) noexcept { return 2 * macs; }

/// Static model characteristics reported by the workload. Counts are
/// signed so a malformed report can be represented and rejected by
/// validate_descriptor instead of failing at parse time.
struct ModelDescriptor {
  std::string name;
  std::int64_t model_size_bytes = 0;
  std::int64_t total_parameters = 0;
  std::int64_t trainable_parameters = 0;
  std::int64_t buffer_bytes = 0;
  std::optional<std::int64_t> macs;
  std::optional<std::int64_t> flops;
  /// Accept a flops value that is not 2 x macs.
  bool flops_override = false;
  /// Optional layer list; used to derive macs when macs is absent.
  std::vector<LayerSpec> layers;

  bool operator==(const ModelDescriptor&) const = default;
};

struct DescriptorValidation {
  ModelDescriptor descriptor;  // with derived fields filled in
  std::vector<std::string> violations;

  [[nodiscard]] bool ok() const { return violations.empty(); }
};

/// Checks every descriptor invariant and fills macs (from layers) and
/// flops (from macs) when they are absent.
DescriptorValidation validate_descriptor(ModelDescriptor descriptor);

nlohmann::ordered_json descriptor_to_json(const ModelDescriptor& d);
/// Throws ParseError on missing/mistyped fields.
ModelDescriptor descriptor_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Marker protocol

enum class MarkerKind { Hello, PhaseStart, PhaseEnd, Epoch, SampleCount, Goodbye };

std::string_view to_string(MarkerKind kind) noexcept;

struct HelloPayload {
  std::optional<ModelDescriptor> model;
  nlohmann::json run_config;  // null when absent

  bool operator==(const HelloPayload&) const = default;
};

struct PhasePayload {
  /// Required on phase_start; optional on phase_end (then closes the
  /// active phase whatever its name).
  std::optional<PhaseName> name;

  bool operator==(const PhasePayload&) const = default;
};

struct EpochPayload {
  std::int64_t index = 0;
  std::optional<double> loss;
  std::optional<double> accuracy;

  bool operator==(const EpochPayload&) const = default;
};

struct SampleCountPayload {
  std::int64_t n = 0;

  bool operator==(const SampleCountPayload&) const = default;
};

using MarkerPayload = std::variant<std::monostate, HelloPayload, PhasePayload, EpochPayload, SampleCountPayload>;

struct Marker {
  MarkerKind kind = MarkerKind::Hello;
  std::string session_id;
  /// Set by the toolkit when a marker is received; also accepted on input
  /// (`t_ns`) so recorded transcripts can be replayed.
  std::optional<std::int64_t> timestamp_ns;
  MarkerPayload payload;

  bool operator==(const Marker&) const = default;
};

/// Parses one NDJSON record (without or with its trailing LF). Unknown
/// fields are ignored; an unknown kind or a malformed payload throws
/// ParseError.
Marker parse_marker(std::string_view line);

/// One JSON object on a single line, no trailing LF. Keys appear in a
/// fixed order: kind, session_id, t_ns, then the payload fields.
std::string serialize_marker(const Marker& marker);

/// Parses an NDJSON transcript; blank lines are skipped. Errors carry the
/// 1-based line number.
std::vector<Marker> parse_marker_stream(std::string_view text);

/// Per-connection ordering rules: hello first, goodbye last, phase
/// boundaries balanced and non-overlapping, one session id per stream.
class MarkerStreamValidator {
 public:
  /// Throws ProtocolViolation and leaves the state unchanged when `marker`
  /// is not allowed next.
  void accept(const Marker& marker);
  /// Throws ProtocolViolation unless goodbye was seen.
  void finish() const;

  [[nodiscard]] bool greeted() const { return greeted_; }
  [[nodiscard]] bool finished() const { return finished_; }
  [[nodiscard]] const std::optional<PhaseName>& active_phase() const { return active_; }

 private:
  bool greeted_ = false;
  bool finished_ = false;
  std::string session_id_;
  std::optional<PhaseName> active_;
};

/// Runs a whole stream through a fresh validator, including finish().
void validate_stream(std::span<const Marker> markers);

// Toolkit -> workload replies, one NDJSON line each (no trailing LF).
std::string make_ack(std::string_view session_id);
std::string make_reject(std::string_view session_id, std::span<const std::string> violations);
std::string make_error(std::string_view reason);

}  // namespace joulemark
