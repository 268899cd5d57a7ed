#pragma once

// The generator boundary: a uniform text-in/text-out interface with a
// scripted mock, a seeded Bernoulli mock and an OpenAI-compatible HTTP client.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dbc/typed_model.hpp"

namespace dbc {

using Millis = std::chrono::duration<double, std::milli>;

struct GeneratorRequest {
  std::string prompt;
  double temperature = 0.0;
  std::optional<std::int64_t> seed;
  int max_tokens = 1024;
};

struct GeneratorResponse {
  std::string text;
  std::int64_t tokens_in = 0;
  std::int64_t tokens_out = 0;
  Millis latency{0};
};

/// Raised by backends when no usable response was obtained. Callers treat it
/// as a failed attempt.
class TransportError : public std::runtime_error {
 public:
  enum class Kind { Connection, Timeout, Status, MalformedBody, Script };

  TransportError(Kind kind, const std::string& message, int status = 0)
      : std::runtime_error(message), kind_(kind), status_(status) {}

  Kind kind() const { return kind_; }
  int status() const { return status_; }

 private:
  Kind kind_;
  int status_;
};

std::string_view to_string(TransportError::Kind kind);

class Generator {
 public:
  virtual ~Generator() = default;

  /// Throws TransportError.
  virtual GeneratorResponse generate(const GeneratorRequest& request) = 0;

  /// Independent handle for one execution. Mocks restart their script or
  /// reseed from `stream`; the HTTP client shares its connection settings.
  virtual std::shared_ptr<Generator> fork(std::uint64_t stream) const = 0;

  virtual std::string_view kind() const = 0;
};

using GeneratorHandle = std::shared_ptr<Generator>;

/// Rough token estimate used by the mocks: one token per four bytes.
std::int64_t approximate_tokens(std::string_view text);

// ---------------------------------------------------------------------------
// Scripted mock

struct ScriptEntry {
  std::optional<std::string> match;  // serve only if the prompt contains it
  std::string response;

  friend bool operator==(const ScriptEntry&, const ScriptEntry&) = default;
};

/// Script files are JSON lists of {"match"?: substring, "response": text}.
std::vector<ScriptEntry> parse_script(const Json& doc);
std::vector<ScriptEntry> replay_script(const std::filesystem::path& path);
Json script_to_json(const std::vector<ScriptEntry>& entries);

/// Serves each call the first unconsumed entry whose match rule accepts the
/// prompt. A call with no acceptable entry fails with TransportError::Script;
/// the entries it skipped stay available.
class ScriptedGenerator final : public Generator {
 public:
  explicit ScriptedGenerator(std::vector<ScriptEntry> entries);

  GeneratorResponse generate(const GeneratorRequest& request) override;
  std::shared_ptr<Generator> fork(std::uint64_t stream) const override;
  std::string_view kind() const override { return "scripted-mock"; }

  std::size_t calls() const;
  std::vector<std::string> prompts() const;

 private:
  std::vector<ScriptEntry> entries_;
  mutable std::mutex mutex_;
  std::vector<bool> consumed_;
  std::vector<std::string> prompts_;
};

// ---------------------------------------------------------------------------
// Bernoulli mock

struct BernoulliFamily {
  std::string name;
  double pass_probability = 1.0;
  /// JSON merge patch applied to the valid output to break this family.
  Json corruption;

  friend bool operator==(const BernoulliFamily&, const BernoulliFamily&) = default;
};

enum class FamilySampling {
  /// Each family passes independently; every failing family is corrupted.
  Independent,
  /// At most one family fails per call: a single uniform draw is partitioned
  /// by the failure probabilities, which must sum to at most 1.
  Exclusive,
};

struct BernoulliSettings {
  Json valid_output = Json::object();
  std::vector<BernoulliFamily> families;
  FamilySampling sampling = FamilySampling::Independent;
  std::uint64_t seed = 0;
  Millis latency{0};
  bool fenced = false;

  friend bool operator==(const BernoulliSettings&, const BernoulliSettings&) = default;
};

/// Each call draws from an RNG seeded by (seed, stream, call index), so a
/// forked handle replays the same sequence regardless of thread scheduling.
class BernoulliGenerator final : public Generator {
 public:
  explicit BernoulliGenerator(BernoulliSettings settings, std::uint64_t stream = 0);

  GeneratorResponse generate(const GeneratorRequest& request) override;
  std::shared_ptr<Generator> fork(std::uint64_t stream) const override;
  std::string_view kind() const override { return "bernoulli-mock"; }

  /// The families corrupted by call `index` on this stream.
  std::vector<std::string> failing_families(std::uint64_t index) const;

 private:
  std::shared_ptr<const BernoulliSettings> settings_;
  std::uint64_t stream_;
  std::atomic<std::uint64_t> next_call_{0};
};

// ---------------------------------------------------------------------------
// HTTP client

struct HttpSettings {
  std::string endpoint;  // scheme://host[:port][/prefix]
  std::string model;
  std::optional<double> temperature;  // overrides the request temperature
  Millis timeout{30000};
  int max_in_flight = 4;
  std::string api_key_env = "CONTRACT_API_KEY";

  friend bool operator==(const HttpSettings&, const HttpSettings&) = default;
};

/// Builds the chat-completions request body for a prompt.
Json chat_completion_body(const HttpSettings& settings,
                          const GeneratorRequest& request);

/// Extracts choices[0].message.content and usage counts. Throws
/// TransportError::MalformedBody.
GeneratorResponse parse_chat_completion(std::string_view body);

/// One POST {endpoint}/v1/chat/completions per call, no internal retries.
class HttpGenerator final : public Generator {
 public:
  explicit HttpGenerator(HttpSettings settings);
  ~HttpGenerator() override;

  GeneratorResponse generate(const GeneratorRequest& request) override;
  std::shared_ptr<Generator> fork(std::uint64_t stream) const override;
  std::string_view kind() const override { return "http"; }

 private:
  struct Shared;
  explicit HttpGenerator(std::shared_ptr<Shared> shared);
  std::shared_ptr<Shared> shared_;
};

// ---------------------------------------------------------------------------
// Configuration

enum class GeneratorKind { ScriptedMock, BernoulliMock, Http };

std::string_view to_string(GeneratorKind kind);
std::optional<GeneratorKind> generator_kind_from_string(std::string_view text);

struct GeneratorConfig {
  GeneratorKind kind = GeneratorKind::ScriptedMock;
  std::string name;
  std::optional<std::filesystem::path> script_path;
  std::vector<ScriptEntry> script;  // loaded from script_path when set
  BernoulliSettings bernoulli;
  HttpSettings http;

  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

/// Empty when the configuration is usable.
std::vector<std::string> check_generator_config(const GeneratorConfig& config);

/// Relative script paths resolve against `base_dir`. Throws
/// std::invalid_argument on malformed documents.
GeneratorConfig generator_config_from_json(const Json& doc,
                                           const std::filesystem::path& base_dir = {});
Json generator_config_to_json(const GeneratorConfig& config);

GeneratorHandle make_generator(const GeneratorConfig& config);

/// One-shot convenience: build the backend and issue a single request.
GeneratorResponse generate(const GeneratorConfig& config,
                           const GeneratorRequest& request);

}  // namespace dbc
