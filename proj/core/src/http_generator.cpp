#include <condition_variable>
#include <cstdlib>

#include <httplib.h>

#include "dbc/generators.hpp"
#include "text_util.hpp"

namespace dbc {

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // prefix + /v1/chat/completions
};

Endpoint split_endpoint(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw std::invalid_argument("endpoint '" + url + "' has no scheme");
  }
  auto path_start = url.find('/', scheme_end + 3);
  Endpoint endpoint;
  endpoint.origin = url.substr(0, path_start);
  std::string prefix = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  endpoint.path = prefix + "/v1/chat/completions";
  return endpoint;
}

}  // namespace

struct HttpGenerator::Shared {
  HttpSettings settings;
  Endpoint endpoint;
  std::mutex mutex;
  std::condition_variable slot_free;
  int in_flight = 0;
};

Json chat_completion_body(const HttpSettings& settings,
                          const GeneratorRequest& request) {
  Json body = Json::object();
  body["model"] = settings.model;
  body["messages"] = Json::array({Json{{"role", "user"}, {"content", request.prompt}}});
  body["temperature"] = settings.temperature.value_or(request.temperature);
  body["max_tokens"] = request.max_tokens;
  if (request.seed) body["seed"] = *request.seed;
  return body;
}

GeneratorResponse parse_chat_completion(std::string_view body) {
  auto malformed = [](const std::string& why) {
    return TransportError(TransportError::Kind::MalformedBody,
                          "malformed chat completion response: " + why);
  };
  Json doc;
  try {
    doc = Json::parse(body.begin(), body.end());
  } catch (const Json::parse_error& e) {
    throw malformed(e.what());
  }
  if (!doc.is_object() || !doc.contains("choices") || !doc["choices"].is_array() ||
      doc["choices"].empty()) {
    throw malformed("no choices");
  }
  const auto& choice = doc["choices"][0];
  if (!choice.is_object() || !choice.contains("message") ||
      !choice["message"].is_object() || !choice["message"].contains("content") ||
      !choice["message"]["content"].is_string()) {
    throw malformed("choices[0].message.content is not a string");
  }
  GeneratorResponse response;
  response.text = choice["message"]["content"].get<std::string>();
  if (doc.contains("usage") && doc["usage"].is_object()) {
    const auto& usage = doc["usage"];
    if (usage.contains("prompt_tokens") && usage["prompt_tokens"].is_number_integer()) {
      response.tokens_in = usage["prompt_tokens"].get<std::int64_t>();
    }
    if (usage.contains("completion_tokens") &&
        usage["completion_tokens"].is_number_integer()) {
      response.tokens_out = usage["completion_tokens"].get<std::int64_t>();
    }
  }
  if (response.tokens_in < 0 || response.tokens_out < 0) throw malformed("negative usage counts");
  return response;
}

HttpGenerator::HttpGenerator(HttpSettings settings)
    : shared_(std::make_shared<Shared>()) {
  shared_->endpoint = split_endpoint(settings.endpoint);
  shared_->settings = std::move(settings);
}

HttpGenerator::HttpGenerator(std::shared_ptr<Shared> shared)
    : shared_(std::move(shared)) {}

HttpGenerator::~HttpGenerator() = default;

std::shared_ptr<Generator> HttpGenerator::fork(std::uint64_t) const {
  return std::shared_ptr<Generator>(new HttpGenerator(shared_));
}

GeneratorResponse HttpGenerator::generate(const GeneratorRequest& request) {
  auto& shared = *shared_;
  {
    std::unique_lock lock(shared.mutex);
    shared.slot_free.wait(lock, [&] { return shared.in_flight < shared.settings.max_in_flight; });
    ++shared.in_flight;
  }
  struct Release {
    Shared& s;
    ~Release() {
      {
        std::lock_guard lock(s.mutex);
        --s.in_flight;
      }
      s.slot_free.notify_one();
    }
  } release{shared};

  const auto& settings = shared.settings;
  httplib::Client client(shared.endpoint.origin);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(settings.timeout);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  httplib::Headers headers;
  if (const char* key = std::getenv(settings.api_key_env.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const auto body = chat_completion_body(settings, request).dump();

  const auto started = std::chrono::steady_clock::now();
  auto result = client.Post(shared.endpoint.path, headers, body, "application/json");
  const Millis elapsed = std::chrono::steady_clock::now() - started;

  if (!result) {
    const auto error = result.error();
    const bool timed_out = error == httplib::Error::ConnectionTimeout ||
                           ((error == httplib::Error::Read || error == httplib::Error::Write) &&
                            elapsed >= settings.timeout * 0.9);
    throw TransportError(timed_out ? TransportError::Kind::Timeout
                                   : TransportError::Kind::Connection,
                         "request to " + settings.endpoint + " failed: " +
                             httplib::to_string(error));
  }
  if (result->status < 200 || result->status >= 300) {
    throw TransportError(TransportError::Kind::Status,
                         "endpoint returned HTTP " + std::to_string(result->status) +
                             ": " + utf8_prefix(result->body, 200),
                         result->status);
  }
  auto response = parse_chat_completion(result->body);
  response.latency = elapsed;
  return response;
}

}  // namespace dbc
