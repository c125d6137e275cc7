#include "mock_endpoint.hpp"

#include <httplib.h>

#include <nlohmann/json.hpp>

namespace joulemark::testing {

MockEndpoint::MockEndpoint(MockScript script) : script_(std::move(script)), server_(std::make_unique<httplib::Server>()) {
  auto& svr = *server_;
  svr.new_task_queue = [] { return new httplib::ThreadPool(96); };
  svr.Get("/v1/models", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"object":"list","data":[{"id":"mock"}]})", "application/json");
  });
  svr.Get("/metrics", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content("# TYPE vllm:gpu_prefix_cache_hit_rate gauge\nvllm:gpu_prefix_cache_hit_rate{model_name=\"mock\"} " +
                        std::to_string(script_.cache_hit_rate) + "\n",
                    "text/plain");
  });
  svr.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
    const std::size_t index = count_++;
    std::this_thread::sleep_for(script_.latency(index));
    if (script_.fail_every != 0 && (index + 1) % script_.fail_every == 0) {
      res.status = 500;
      res.set_content(R"({"error":"scripted failure"})", "application/json");
      return;
    }
    const auto body = nlohmann::json::parse(req.body, nullptr, false);
    const int out = script_.completion_tokens(index);
    std::string text;
    for (int i = 0; i < out; ++i) text += i == 0 ? "tok" : " tok";
    nlohmann::json doc = {
        {"id", "cmpl-" + std::to_string(index)},
        {"model", body.is_discarded() ? "" : body.value("model", "")},
        {"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", text}}}}}},
    };
    if (!script_.omit_usage) {
      doc["usage"] = {{"prompt_tokens", script_.prompt_tokens},
                      {"completion_tokens", out},
                      {"total_tokens", script_.prompt_tokens + out}};
    }
    res.set_content(doc.dump(), "application/json");
  });
  port_ = svr.bind_to_any_port("127.0.0.1");
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  svr.wait_until_ready();
}

MockEndpoint::~MockEndpoint() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace joulemark::testing
