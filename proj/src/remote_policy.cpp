#include <cstdlib>
#include <regex>

#include <httplib.h>
#include <json.hpp>

#include "sage/error.hpp"
#include "sage/policy.hpp"

namespace sage {

namespace {

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path;
};

Endpoint split_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw Error(ErrorKind::InvalidArgument, "bad policy url '" + url + "'");
  return {m[1].str(), m[2].matched ? m[2].str() : std::string("/v1/chat/completions")};
}

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

}  // namespace

RemotePolicy::RemotePolicy(Config config) : config_(std::move(config)) {
  if (config_.url.empty()) throw Error(ErrorKind::InvalidArgument, "remote policy needs a url (SAGE_POLICY_URL)");
  split_url(config_.url);
}

RemotePolicy::Config RemotePolicy::config_from_env() {
  Config c;
  c.url = env_or("SAGE_POLICY_URL", "");
  c.model = env_or("SAGE_POLICY_MODEL", "default");
  c.api_key = env_or("SAGE_POLICY_API_KEY", "");
  return c;
}

std::string RemotePolicy::request_body(const PolicyRequest& request) const {
  nlohmann::json body{{"model", config_.model},
                      {"messages",
                       {{{"role", "system"}, {"content", request.system_prompt}},
                        {{"role", "user"}, {"content", request.prompt}}}},
                      {"temperature", config_.temperature},
                      {"top_k", config_.top_k},
                      {"seed", request.seed}};
  return body.dump();
}

std::string RemotePolicy::reply_text(const std::string& response_body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(response_body);
    const auto& msg = j.at("choices").at(0).at("message");
    std::string content = msg.contains("content") && msg.at("content").is_string() ? msg.at("content").get<std::string>() : "";
    if (msg.contains("reasoning_content") && msg.at("reasoning_content").is_string()) {
      content = msg.at("reasoning_content").get<std::string>() + "\n\n" + content;
    }
    return content;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Transport, std::string("unexpected completion response: ") + e.what());
  }
}

std::string RemotePolicy::complete(const PolicyRequest& request) {
  const auto ep = split_url(config_.url);
  httplib::Client client(ep.base);
  client.set_connection_timeout(std::chrono::seconds(10));
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(std::chrono::seconds(60));
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
  auto res = client.Post(ep.path, headers, request_body(request), "application/json");
  if (!res) throw Error(ErrorKind::Transport, "policy request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw Error(ErrorKind::Transport, "policy endpoint returned HTTP " + std::to_string(res->status));
  }
  return reply_text(res->body);
}

}  // namespace sage
