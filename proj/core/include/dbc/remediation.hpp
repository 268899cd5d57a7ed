#pragma once

// Bounded remediation: retry policies with deterministic backoff, the
// append-only error history, corrective prompt construction and the
// whole-object fixing loop.

#include <chrono>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dbc/generators.hpp"
#include "dbc/typed_model.hpp"

namespace dbc {

struct RetryPolicy {
  int max_attempts = 3;  // total tries, including the first
  Millis initial_delay{0};
  double backoff_factor = 2.0;
  Millis max_delay{0};
  bool remediation_enabled = true;

  friend bool operator==(const RetryPolicy&, const RetryPolicy&) = default;
};

std::vector<std::string> check_retry_policy(const RetryPolicy& policy);

/// Delay before `attempt` (2-based): min(initial * factor^(attempt-2), max).
/// Throws std::invalid_argument outside 2..max_attempts.
Millis next_delay(const RetryPolicy& policy, int attempt);

Json retry_policy_to_json(const RetryPolicy& policy);
RetryPolicy retry_policy_from_json(const Json& doc, const RetryPolicy& defaults = {});

enum class Phase { TypeIn, Pre, FixIn, Act, Generate, TypeOut, Post, FixOut, Finalize };

std::string_view to_string(Phase phase);

/// Input-side phases number their attempts independently of output-side ones.
bool is_input_phase(Phase phase);

enum class ErrorSource { TypeValidation, Precondition, Postcondition, Parse, Transport, Act };

std::string_view to_string(ErrorSource source);

inline constexpr std::size_t kRawExcerptChars = 512;

struct ErrorRecord {
  int attempt = 1;
  Phase phase = Phase::TypeOut;
  ErrorSource source = ErrorSource::Parse;
  std::string predicate_or_path;
  std::string message;
  std::string raw_excerpt;

  friend bool operator==(const ErrorRecord&, const ErrorRecord&) = default;
};

/// Append-only log of failed attempts. Attempts increase strictly among the
/// records of one side (input or output).
class ErrorHistory {
 public:
  /// Throws std::logic_error if the record breaks the history invariants.
  void append(ErrorRecord record);

  std::span<const ErrorRecord> records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const ErrorRecord& back() const { return records_.back(); }

  /// Records belonging to input-side or output-side phases, in order.
  ErrorHistory side(bool input_side) const;

  /// Number of records whose message repeats an earlier record's message.
  std::size_t repeated_messages() const;

 private:
  std::vector<ErrorRecord> records_;
};

/// "attempt k failed: <source> <predicate_or_path>: <message>"
std::string failure_line(const ErrorRecord& record);

/// Base prompt, schema rendering, one failure line per record, then the
/// closing instruction. Byte-stable for identical inputs.
std::string build_corrective_prompt(std::string_view base_prompt,
                                    std::string_view schema_prompt,
                                    const ErrorHistory& history);

/// Folds a set of field violations into a single record message.
std::string summarize_violations(const std::vector<Violation>& violations);
std::string violation_paths(const std::vector<Violation>& violations);

/// One fixing round: issue the prompt, parse and validate. On failure the
/// returned record carries everything except `attempt` and `phase`.
struct FixAttemptFailure {
  ErrorRecord record;
};

struct FixAttempt {
  std::variant<FixAttemptFailure, Instance> result;
  std::optional<GeneratorResponse> response;  // absent on transport failure
};

FixAttempt attempt_generation(const SchemaPtr& schema, const std::string& prompt,
                              Generator& generator, GeneratorRequest request);

struct FixOptions {
  std::string base_prompt;  // task context preceding the schema rendering
  GeneratorRequest request_template;
  Phase phase = Phase::FixOut;
  std::function<void(Millis)> sleep;  // defaults to std::this_thread::sleep_for
};

struct Exhausted {
  ErrorHistory history;
};

struct FixResult {
  std::variant<Exhausted, Instance> result;
  int generator_calls = 0;
  std::int64_t tokens_in = 0;
  std::int64_t tokens_out = 0;
  Millis latency{0};
};

/// Candidate to repair: either a value tree or raw generator text.
using FixCandidate = std::variant<Json, std::string>;

/// Up to policy.max_attempts corrective generator calls, each followed by
/// parse and validation. Every failed attempt appends one record to
/// `history`. Requires policy.remediation_enabled.
FixResult fix_instance(const SchemaPtr& target_schema, const FixCandidate& candidate,
                       ErrorHistory& history, Generator& generator,
                       const RetryPolicy& policy, const FixOptions& options = {});

}  // namespace dbc
