#include <doctest.h>

#include <random>

#include "generators.hpp"
#include "joulemark/error.hpp"
#include "joulemark/protocol.hpp"
#include "oracles.hpp"

using namespace joulemark;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::IoError;
}

std::vector<Marker> parse_lines(std::initializer_list<const char*> lines) {
  std::vector<Marker> out;
  for (auto* l : lines) out.push_back(parse_marker(l));
  return out;
}

}  // namespace

TEST_CASE("conv fixture MAC count") {
  const std::vector<LayerSpec> conv{LayerSpec::conv2d(3, 3, 3, 64, 32, 32)};
  CHECK(compute_macs(conv) == 1'769'472);
  CHECK(compute_macs(conv) == testing::triple_loop_conv_macs(3, 3, 3, 64, 32, 32));
  CHECK(flops_from_macs(compute_macs(conv)) == 3'538'944);
}

TEST_CASE("dense layers and bias") {
  const std::vector<LayerSpec> l{LayerSpec::dense(784, 128, true), LayerSpec::dense(128, 10)};
  CHECK(compute_macs(l) == 784 * 128 + 128 + 128 * 10);
  const std::vector<LayerSpec> c{LayerSpec::conv2d(3, 3, 3, 64, 32, 32, true)};
  CHECK(compute_macs(c) == 1'769'472 + 64 * 32 * 32);
}

TEST_CASE("MAC additivity over random layer lists") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<LayerSpec> layers;
    std::uint64_t sum = 0;
    for (int i = 0; i < 1 + static_cast<int>(rng() % 6); ++i) {
      if (rng() % 2) {
        layers.push_back(LayerSpec::dense(1 + rng() % 512, 1 + rng() % 512, rng() % 2));
      } else {
        layers.push_back(LayerSpec::conv2d(1 + rng() % 5, 1 + rng() % 5, 1 + rng() % 16, 1 + rng() % 16,
                                           1 + rng() % 16, 1 + rng() % 16, rng() % 2));
      }
      sum += compute_macs(std::span(&layers.back(), 1));
    }
    CHECK(compute_macs(layers) == sum);
  }
}

TEST_CASE("invalid layers") {
  const std::vector<LayerSpec> zero{LayerSpec::dense(0, 10)};
  CHECK(code_of([&] { compute_macs(zero); }) == ErrorCode::InvalidLayer);
  const std::vector<LayerSpec> huge{LayerSpec::conv2d(1 << 20, 1 << 20, 1 << 20, 1 << 20, 1, 1)};
  CHECK(code_of([&] { compute_macs(huge); }) == ErrorCode::InvalidLayer);
}

TEST_CASE("descriptor validation derives macs and flops") {
  ModelDescriptor d;
  d.total_parameters = 1000;
  d.trainable_parameters = 800;
  d.layers = {LayerSpec::conv2d(3, 3, 3, 64, 32, 32)};
  auto v = validate_descriptor(d);
  REQUIRE(v.ok());
  CHECK(*v.descriptor.macs == 1'769'472);
  CHECK(*v.descriptor.flops == 3'538'944);

  d.flops = 5;
  CHECK(!validate_descriptor(d).ok());
  d.flops_override = true;
  CHECK(validate_descriptor(d).ok());

  ModelDescriptor bad;
  bad.total_parameters = 10;
  bad.trainable_parameters = 20;
  bad.model_size_bytes = -1;
  CHECK(validate_descriptor(bad).violations.size() == 2);
}

TEST_CASE("descriptor json round trip") {
  ModelDescriptor d;
  d.name = "tiny";
  d.model_size_bytes = 400;
  d.total_parameters = 100;
  d.trainable_parameters = 100;
  d.macs = 12;
  d.layers = {LayerSpec::dense(3, 4, true)};
  CHECK(descriptor_from_json(nlohmann::json::parse(descriptor_to_json(d).dump())) == d);
}

TEST_CASE("marker parsing") {
  const auto m = parse_marker(R"({"kind":"epoch","session_id":"x","index":3,"loss":0.5,"t_ns":12})");
  CHECK(m.kind == MarkerKind::Epoch);
  CHECK(m.timestamp_ns == 12);
  CHECK(std::get<EpochPayload>(m.payload).index == 3);
  CHECK(!std::get<EpochPayload>(m.payload).accuracy);

  const auto h = parse_marker(R"({"kind":"hello","run_config":{"lr":0.1}})");
  CHECK(h.session_id.empty());
  CHECK(std::get<HelloPayload>(h.payload).run_config["lr"] == 0.1);

  for (const char* bad : {"not json", R"({"kind":"dance"})", R"({"session_id":"x"})", R"({"kind":"phase_start"})",
                          R"({"kind":"epoch"})", R"({"kind":"sample_count","n":-1})", R"({"kind":"epoch","index":1.5})",
                          R"({"kind":"phase_start","name":""})", R"({"kind":"goodbye","t_ns":"soon"})"}) {
    CAPTURE(bad);
    CHECK(code_of([&] { parse_marker(bad); }) == ErrorCode::ParseError);
  }
}

TEST_CASE("stream parsing reports the line number") {
  try {
    parse_marker_stream("{\"kind\":\"hello\"}\n\n{\"kind\":\"nope\"}\n");
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("random streams round-trip and validate") {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 200; ++i) {
    const auto stream = testing::random_marker_stream(rng, i % 2 == 0);
    std::string text;
    for (const auto& m : stream) text += serialize_marker(m) + "\n";
    CHECK(parse_marker_stream(text) == stream);
    CHECK_NOTHROW(validate_stream(stream));
  }
}

TEST_CASE("ordering violations") {
  auto rejected = [](std::initializer_list<const char*> lines) {
    const auto s = parse_lines(lines);
    try {
      validate_stream(s);
    } catch (const Error& e) {
      return e.code() == ErrorCode::ProtocolViolation;
    }
    return false;
  };
  CHECK(rejected({R"({"kind":"phase_end"})"}));
  CHECK(rejected({R"({"kind":"phase_start","name":"training"})", R"({"kind":"goodbye"})"}));
  CHECK(rejected({R"({"kind":"hello"})", R"({"kind":"phase_end"})", R"({"kind":"goodbye"})"}));
  CHECK(rejected({R"({"kind":"hello"})", R"({"kind":"phase_start","name":"training"})",
                  R"({"kind":"phase_start","name":"inference"})"}));
  CHECK(rejected({R"({"kind":"hello"})", R"({"kind":"phase_start","name":"training"})",
                  R"({"kind":"phase_end","name":"inference"})"}));
  CHECK(rejected({R"({"kind":"hello"})", R"({"kind":"phase_start","name":"training"})", R"({"kind":"goodbye"})"}));
  CHECK(rejected({R"({"kind":"hello"})", R"({"kind":"hello"})"}));
  CHECK(rejected({R"({"kind":"hello"})"}));
  CHECK(rejected({R"({"kind":"hello"})", R"({"kind":"goodbye"})", R"({"kind":"epoch","index":1})"}));
  CHECK(rejected({R"({"kind":"hello","session_id":"a"})", R"({"kind":"goodbye","session_id":"b"})"}));
  CHECK(!rejected({R"({"kind":"hello"})", R"({"kind":"phase_start","name":"training"})", R"({"kind":"phase_end"})",
                   R"({"kind":"goodbye"})"}));
}

TEST_CASE("reply lines") {
  CHECK(make_ack("abc") == R"({"kind":"ack","session_id":"abc"})");
  const std::vector<std::string> v{"x must be >= 0"};
  CHECK(make_reject("abc", v) == R"({"kind":"reject","session_id":"abc","violations":["x must be >= 0"]})");
  CHECK(make_error("bad") == R"({"kind":"error","reason":"bad"})");
}
