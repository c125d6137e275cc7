#include "joulemark/protocol.hpp"

#include <limits>

#include "joulemark/error.hpp"

namespace joulemark {

using nlohmann::json;
using nlohmann::ordered_json;

LayerSpec LayerSpec::dense(std::int64_t in, std::int64_t out, bool bias) {
  LayerSpec l;
  l.kind = LayerKind::Dense;
  l.in_features = in;
  l.out_features = out;
  l.bias = bias;
  return l;
}

LayerSpec LayerSpec::conv2d(std::int64_t kh, std::int64_t kw, std::int64_t c_in, std::int64_t c_out,
                            std::int64_t out_h, std::int64_t out_w, bool bias) {
  LayerSpec l;
  l.kind = LayerKind::Conv2d;
  l.kernel_h = kh;
  l.kernel_w = kw;
  l.c_in = c_in;
  l.c_out = c_out;
  l.out_h = out_h;
  l.out_w = out_w;
  l.bias = bias;
  return l;
}

namespace {

std::uint64_t checked_product(std::initializer_list<std::int64_t> factors, std::size_t layer) {
  std::uint64_t acc = 1;
  for (auto f : factors) {
    if (f < 1) throw Error(ErrorCode::InvalidLayer, "layer " + std::to_string(layer) + ": dimensions must be >= 1");
    if (__builtin_mul_overflow(acc, static_cast<std::uint64_t>(f), &acc)) {
      throw Error(ErrorCode::InvalidLayer, "layer " + std::to_string(layer) + ": MAC count overflows");
    }
  }
  return acc;
}

}  // namespace

std::uint64_t compute_macs(std::span<const LayerSpec> layers) {
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    std::uint64_t macs = 0;
    if (l.kind == LayerKind::Dense) {
      macs = checked_product({l.in_features, l.out_features}, i);
      if (l.bias) macs += static_cast<std::uint64_t>(l.out_features);
    } else {
      macs = checked_product({l.kernel_h, l.kernel_w, l.c_in, l.c_out, l.out_h, l.out_w}, i);
      if (l.bias) macs += checked_product({l.c_out, l.out_h, l.out_w}, i);
    }
    if (total > std::numeric_limits<std::uint64_t>::max() - macs) {
      throw Error(ErrorCode::InvalidLayer, "total MAC count overflows");
    }
    total += macs;
  }
  return total;
}

DescriptorValidation validate_descriptor(ModelDescriptor d) {
  DescriptorValidation out;
  auto& v = out.violations;
  auto non_negative = [&](std::int64_t value, const char* field) {
    if (value < 0) v.push_back(std::string(field) + " must be >= 0");
  };
  non_negative(d.model_size_bytes, "model_size_bytes");
  non_negative(d.total_parameters, "total_parameters");
  non_negative(d.trainable_parameters, "trainable_parameters");
  non_negative(d.buffer_bytes, "buffer_bytes");
  if (d.macs) non_negative(*d.macs, "macs");
  if (d.flops) non_negative(*d.flops, "flops");
  if (d.trainable_parameters > d.total_parameters) {
    v.push_back("trainable_parameters (" + std::to_string(d.trainable_parameters) + ") exceeds total_parameters (" +
                std::to_string(d.total_parameters) + ")");
  }

  if (!d.macs && !d.layers.empty()) {
    try {
      auto macs = compute_macs(d.layers);
      if (macs > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
        v.push_back("layers: MAC count overflows");
      } else {
        d.macs = static_cast<std::int64_t>(macs);
      }
    } catch (const Error& e) {
      v.push_back(std::string("layers: ") + e.what());
    }
  }
  if (d.macs && *d.macs >= 0) {
    const std::int64_t derived = *d.macs * 2;
    if (!d.flops) {
      d.flops = derived;
    } else if (*d.flops != derived && !d.flops_override) {
      v.push_back("flops (" + std::to_string(*d.flops) + ") is not 2 x macs (" + std::to_string(derived) +
                  ") and flops_override is not set");
    }
  }
  out.descriptor = std::move(d);
  return out;
}

namespace {

ordered_json layer_to_json(const LayerSpec& l) {
  ordered_json j;
  if (l.kind == LayerKind::Dense) {
    j["kind"] = "dense";
    j["in_features"] = l.in_features;
    j["out_features"] = l.out_features;
  } else {
    j["kind"] = "conv2d";
    j["kernel_h"] = l.kernel_h;
    j["kernel_w"] = l.kernel_w;
    j["c_in"] = l.c_in;
    j["c_out"] = l.c_out;
    j["out_h"] = l.out_h;
    j["out_w"] = l.out_w;
  }
  j["bias"] = l.bias;
  return j;
}

LayerSpec layer_from_json(const json& j) {
  auto kind = j.at("kind").get<std::string>();
  if (kind == "dense") {
    return LayerSpec::dense(j.at("in_features").get<std::int64_t>(), j.at("out_features").get<std::int64_t>(),
                            j.value("bias", false));
  }
  if (kind == "conv2d") {
    return LayerSpec::conv2d(j.at("kernel_h").get<std::int64_t>(), j.at("kernel_w").get<std::int64_t>(),
                             j.at("c_in").get<std::int64_t>(), j.at("c_out").get<std::int64_t>(),
                             j.at("out_h").get<std::int64_t>(), j.at("out_w").get<std::int64_t>(),
                             j.value("bias", false));
  }
  throw Error(ErrorCode::ParseError, "unknown layer kind '" + kind + "'");
}

}  // namespace

ordered_json descriptor_to_json(const ModelDescriptor& d) {
  ordered_json j;
  j["name"] = d.name;
  j["model_size_bytes"] = d.model_size_bytes;
  j["total_parameters"] = d.total_parameters;
  j["trainable_parameters"] = d.trainable_parameters;
  j["buffer_bytes"] = d.buffer_bytes;
  if (d.macs) j["macs"] = *d.macs;
  if (d.flops) j["flops"] = *d.flops;
  if (d.flops_override) j["flops_override"] = true;
  if (!d.layers.empty()) {
    j["layers"] = ordered_json::array();
    for (const auto& l : d.layers) j["layers"].push_back(layer_to_json(l));
  }
  return j;
}

ModelDescriptor descriptor_from_json(const json& j) {
  try {
    if (!j.is_object()) throw Error(ErrorCode::ParseError, "model must be an object");
    ModelDescriptor d;
    d.name = j.value("name", std::string{});
    d.model_size_bytes = j.value("model_size_bytes", std::int64_t{0});
    d.total_parameters = j.value("total_parameters", std::int64_t{0});
    d.trainable_parameters = j.value("trainable_parameters", std::int64_t{0});
    d.buffer_bytes = j.value("buffer_bytes", std::int64_t{0});
    if (j.contains("macs") && !j["macs"].is_null()) d.macs = j["macs"].get<std::int64_t>();
    if (j.contains("flops") && !j["flops"].is_null()) d.flops = j["flops"].get<std::int64_t>();
    d.flops_override = j.value("flops_override", false);
    if (j.contains("layers")) {
      for (const auto& l : j["layers"]) d.layers.push_back(layer_from_json(l));
    }
    return d;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("model descriptor: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

std::string_view to_string(MarkerKind kind) noexcept {
  switch (kind) {
    case MarkerKind::Hello: return "hello";
    case MarkerKind::PhaseStart: return "phase_start";
    case MarkerKind::PhaseEnd: return "phase_end";
    case MarkerKind::Epoch: return "epoch";
    case MarkerKind::SampleCount: return "sample_count";
    case MarkerKind::Goodbye: return "goodbye";
  }
  return "unknown";
}

namespace {

MarkerKind parse_kind(const std::string& text) {
  for (auto k : {MarkerKind::Hello, MarkerKind::PhaseStart, MarkerKind::PhaseEnd, MarkerKind::Epoch,
                 MarkerKind::SampleCount, MarkerKind::Goodbye}) {
    if (to_string(k) == text) return k;
  }
  throw Error(ErrorCode::ParseError, "unknown marker kind '" + text + "'");
}

std::optional<double> optional_number(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  if (!j[key].is_number()) throw Error(ErrorCode::ParseError, std::string(key) + " must be a number");
  return j[key].get<double>();
}

}  // namespace

Marker parse_marker(std::string_view line) {
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.remove_suffix(1);
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::ParseError, "marker must be a JSON object");
  if (!j.contains("kind") || !j["kind"].is_string()) throw Error(ErrorCode::ParseError, "missing string field 'kind'");

  Marker m;
  m.kind = parse_kind(j["kind"].get<std::string>());
  try {
    if (j.contains("session_id")) {
      if (!j["session_id"].is_string()) throw Error(ErrorCode::ParseError, "session_id must be a string");
      m.session_id = j["session_id"].get<std::string>();
    }
    if (j.contains("t_ns") && !j["t_ns"].is_null()) {
      if (!j["t_ns"].is_number_integer()) throw Error(ErrorCode::ParseError, "t_ns must be an integer");
      m.timestamp_ns = j["t_ns"].get<std::int64_t>();
    }

    switch (m.kind) {
      case MarkerKind::Hello: {
        HelloPayload p;
        if (j.contains("model") && !j["model"].is_null()) p.model = descriptor_from_json(j["model"]);
        if (j.contains("run_config")) p.run_config = j["run_config"];
        m.payload = std::move(p);
        break;
      }
      case MarkerKind::PhaseStart:
      case MarkerKind::PhaseEnd: {
        PhasePayload p;
        if (j.contains("name") && !j["name"].is_null()) {
          if (!j["name"].is_string() || j["name"].get<std::string>().empty()) {
            throw Error(ErrorCode::ParseError, "name must be a non-empty string");
          }
          p.name = parse_phase_name(j["name"].get<std::string>());
        } else if (m.kind == MarkerKind::PhaseStart) {
          throw Error(ErrorCode::ParseError, "phase_start requires 'name'");
        }
        m.payload = std::move(p);
        break;
      }
      case MarkerKind::Epoch: {
        EpochPayload p;
        if (!j.contains("index") || !j["index"].is_number_integer()) {
          throw Error(ErrorCode::ParseError, "epoch requires integer 'index'");
        }
        p.index = j["index"].get<std::int64_t>();
        p.loss = optional_number(j, "loss");
        p.accuracy = optional_number(j, "accuracy");
        m.payload = p;
        break;
      }
      case MarkerKind::SampleCount: {
        if (!j.contains("n") || !j["n"].is_number_integer() || j["n"].get<std::int64_t>() < 0) {
          throw Error(ErrorCode::ParseError, "sample_count requires integer 'n' >= 0");
        }
        m.payload = SampleCountPayload{j["n"].get<std::int64_t>()};
        break;
      }
      case MarkerKind::Goodbye:
        break;
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  return m;
}

std::string serialize_marker(const Marker& m) {
  ordered_json j;
  j["kind"] = std::string(to_string(m.kind));
  j["session_id"] = m.session_id;
  if (m.timestamp_ns) j["t_ns"] = *m.timestamp_ns;

  if (const auto* hello = std::get_if<HelloPayload>(&m.payload)) {
    if (hello->model) j["model"] = descriptor_to_json(*hello->model);
    if (!hello->run_config.is_null()) j["run_config"] = ordered_json::parse(hello->run_config.dump());
  } else if (const auto* phase = std::get_if<PhasePayload>(&m.payload)) {
    if (phase->name) j["name"] = to_string(*phase->name);
  } else if (const auto* epoch = std::get_if<EpochPayload>(&m.payload)) {
    j["index"] = epoch->index;
    if (epoch->loss) j["loss"] = *epoch->loss;
    if (epoch->accuracy) j["accuracy"] = *epoch->accuracy;
  } else if (const auto* count = std::get_if<SampleCountPayload>(&m.payload)) {
    j["n"] = count->n;
  }
  return j.dump();
}

std::vector<Marker> parse_marker_stream(std::string_view text) {
  std::vector<Marker> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    auto line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    pos = eol == std::string_view::npos ? text.size() : eol + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(parse_marker(line));
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void MarkerStreamValidator::accept(const Marker& m) {
  auto violation = [&](const std::string& why) {
    throw Error(ErrorCode::ProtocolViolation, std::string(to_string(m.kind)) + ": " + why);
  };
  if (finished_) violation("marker after goodbye");
  if (!greeted_) {
    if (m.kind != MarkerKind::Hello) violation("first marker must be hello");
    greeted_ = true;
    session_id_ = m.session_id;
    return;
  }
  if (m.session_id != session_id_) violation("session_id '" + m.session_id + "' differs from hello's '" + session_id_ + "'");

  switch (m.kind) {
    case MarkerKind::Hello:
      violation("duplicate hello");
      break;
    case MarkerKind::PhaseStart: {
      if (active_) violation("phase '" + to_string(*active_) + "' is still active");
      active_ = std::get<PhasePayload>(m.payload).name;
      break;
    }
    case MarkerKind::PhaseEnd: {
      if (!active_) violation("no active phase");
      const auto& name = std::get<PhasePayload>(m.payload).name;
      if (name && !(*name == *active_)) {
        violation("ends '" + to_string(*name) + "' but '" + to_string(*active_) + "' is active");
      }
      active_.reset();
      break;
    }
    case MarkerKind::Goodbye:
      if (active_) violation("phase '" + to_string(*active_) + "' was never ended");
      finished_ = true;
      break;
    case MarkerKind::Epoch:
    case MarkerKind::SampleCount:
      break;
  }
}

void MarkerStreamValidator::finish() const {
  if (!greeted_) throw Error(ErrorCode::ProtocolViolation, "stream has no hello");
  if (!finished_) throw Error(ErrorCode::ProtocolViolation, "stream ended without goodbye");
}

void validate_stream(std::span<const Marker> markers) {
  MarkerStreamValidator v;
  for (const auto& m : markers) v.accept(m);
  v.finish();
}

std::string make_ack(std::string_view session_id) {
  ordered_json j;
  j["kind"] = "ack";
  j["session_id"] = std::string(session_id);
  return j.dump();
}

std::string make_reject(std::string_view session_id, std::span<const std::string> violations) {
  ordered_json j;
  j["kind"] = "reject";
  j["session_id"] = std::string(session_id);
  j["violations"] = std::vector<std::string>(violations.begin(), violations.end());
  return j.dump();
}

std::string make_error(std::string_view reason) {
  ordered_json j;
  j["kind"] = "error";
  j["reason"] = std::string(reason);
  return j.dump();
}

}  // namespace joulemark
