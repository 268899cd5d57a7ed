#pragma once

// Contracts over generative components and their execution flow:
// type-in -> pre -> [fix-in] -> act -> generate -> type-out -> post ->
// [fix-out] -> finalize, where finalize always runs exactly once.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "dbc/generators.hpp"
#include "dbc/remediation.hpp"
#include "dbc/typed_model.hpp"

namespace dbc {

/// Result of one predicate evaluation. A failing verdict always carries a
/// non-empty message.
class Verdict {
 public:
  static Verdict pass() { return Verdict(); }
  static Verdict fail(std::string message);

  bool ok() const { return !message_; }
  const std::string& message() const;

 private:
  std::optional<std::string> message_;
};

enum class PredicateTarget { Input, Output, InputOutput };

std::string_view to_string(PredicateTarget target);

/// Evaluators receive the well-typed input and, for postconditions, the
/// well-typed output. Throwing is equivalent to failing with e.what().
using PredicateFn = std::function<Verdict(const Instance& input, const Instance* output)>;

struct Predicate {
  std::string name;
  std::string family;
  PredicateTarget target = PredicateTarget::Output;
  PredicateFn evaluator;
};

struct PredicateFailure {
  std::string name;
  std::string family;
  std::string message;

  friend bool operator==(const PredicateFailure&, const PredicateFailure&) = default;
};

struct PredicateOutcome {
  std::string name;
  std::string family;
  bool passed = false;
  std::string message;
};

/// Intermediate transformation between precondition checking and generation.
struct Act {
  SchemaPtr schema;  // schema of the transformed value
  std::function<Json(const Instance& input)> transform;
};

struct FallbackMode {
  enum class Kind { Strict, GracefulRaw, GracefulDefault };

  Kind kind = Kind::Strict;
  std::optional<Instance> default_instance;  // GracefulDefault only

  static FallbackMode strict() { return {}; }
  static FallbackMode graceful_raw() { return {Kind::GracefulRaw, std::nullopt}; }
  static FallbackMode graceful_default(Instance instance) {
    return {Kind::GracefulDefault, std::move(instance)};
  }
};

std::string_view to_string(FallbackMode::Kind kind);

struct Contract {
  std::string id;
  SchemaPtr input_schema;
  SchemaPtr output_schema;
  std::string prompt;
  std::vector<Predicate> preconditions;
  std::vector<Predicate> postconditions;
  std::optional<Act> act;
  RetryPolicy pre_retry;
  RetryPolicy post_retry;
  FallbackMode fallback;

  /// Family names of all predicates, in first-appearance order
  /// (preconditions first).
  std::vector<std::string> families() const;
};

/// Empty when the contract is internally consistent.
std::vector<std::string> check_contract(const Contract& contract);

struct Hyperparameters {
  double temperature = 0.0;
  std::optional<std::int64_t> seed;
  RetryPolicy default_retry;
  int max_generator_calls = 16;  // per execution
  int max_tokens = 1024;
};

/// ⟨generators, instructions, hyperparameters, schemas, contracts⟩.
struct Agent {
  std::string id;
  std::vector<GeneratorConfig> generators;
  std::vector<std::string> instructions;
  Hyperparameters hyperparameters;
  std::vector<SchemaPtr> schemas;
  std::vector<std::shared_ptr<const Contract>> contracts;
};

std::vector<std::string> check_agent(const Agent& agent);

enum class PhaseResult { Pass, Fail, Error };

std::string_view to_string(PhaseResult result);

struct PhaseEntry {
  Phase phase = Phase::TypeIn;
  int attempt = 1;
  PhaseResult result = PhaseResult::Pass;
  std::string detail;
};

class ContractOutcome {
 public:
  enum class Kind { Validated, DegradedRaw, DegradedDefault, Failed };

  static ContractOutcome validated(Instance instance);
  static ContractOutcome degraded_raw(std::string text);
  static ContractOutcome degraded_default(Instance instance);
  static ContractOutcome failed(std::string summary);

  Kind kind() const { return kind_; }
  bool is_validated() const { return kind_ == Kind::Validated; }
  /// Present for Validated and DegradedDefault.
  const std::optional<Instance>& instance() const { return instance_; }
  /// Raw generator text for DegradedRaw, error summary for Failed.
  const std::string& text() const { return text_; }

 private:
  ContractOutcome(Kind kind, std::optional<Instance> instance, std::string text)
      : kind_(kind), instance_(std::move(instance)), text_(std::move(text)) {}

  Kind kind_;
  std::optional<Instance> instance_;
  std::string text_;
};

std::string_view to_string(ContractOutcome::Kind kind);

struct ExecutionTrace {
  std::string contract_id;
  std::vector<PhaseEntry> phases;
  ErrorHistory error_history;
  int generator_calls = 0;
  Millis latency{0};       // generator-reported latency plus backoff delays
  Millis wall_time{0};     // measured, not part of reproducible output
  std::int64_t tokens_in = 0;
  std::int64_t tokens_out = 0;
  std::optional<ContractOutcome> final;
  std::string failure_summary;
  std::optional<std::string> finalizer_error;
  bool transport_error = false;
  bool cost_cap_reached = false;
  /// Results of the last precondition and postcondition rounds.
  std::vector<PredicateOutcome> last_preconditions;
  std::vector<PredicateOutcome> last_postconditions;
  bool output_well_typed = false;
  /// Input instance the output side ran against, after any input fixing.
  std::optional<Instance> accepted_input;
};

/// Everything finalize needs: the validated output, or why there is none.
struct FinalizeState {
  std::optional<Instance> validated;
  std::optional<std::string> last_generator_text;  // unset if generation never ran
  std::string error_summary;
};

/// User hook invoked exactly once per execution with the validated output,
/// or with nullptr and the error summary.
using Finalizer = std::function<void(const Instance* validated, const std::string& error)>;

struct ExecuteOptions {
  Finalizer finalizer;
  /// Waits between attempts; defaults to real sleeping.
  std::function<void(Millis)> sleep;
  /// Replaces the hyperparameter seed on generator requests.
  std::optional<std::int64_t> request_seed;
};

struct ExecutionResult {
  ContractOutcome outcome;
  ExecutionTrace trace;
};

/// Raised by execute() in strict mode, after finalize has run.
class ContractFailure : public std::runtime_error {
 public:
  explicit ContractFailure(ExecutionResult result);
  const ExecutionResult& result() const { return *result_; }

 private:
  std::shared_ptr<const ExecutionResult> result_;
};

/// Runs the full flow. Never throws; strict-mode failures come back as a
/// Failed outcome.
ExecutionResult execute_nothrow(const Contract& contract, const Agent& agent,
                                Generator& generator, const Json& input,
                                const ExecuteOptions& options = {});

/// Same flow; throws ContractFailure when a strict contract fails.
ExecutionResult execute(const Contract& contract, const Agent& agent,
                        Generator& generator, const Json& input,
                        const ExecuteOptions& options = {});

/// Evaluates every precondition in declaration order.
std::vector<PredicateFailure> check_preconditions(const Contract& contract,
                                                  const Instance& input);
std::vector<PredicateFailure> check_postconditions(const Contract& contract,
                                                   const Instance& input,
                                                   const Instance& output);

/// Full per-predicate results, used for family accounting.
std::vector<PredicateOutcome> evaluate_predicates(const std::vector<Predicate>& predicates,
                                                  const Instance& input,
                                                  const Instance* output);

struct ActFailure {
  std::string message;
};

/// Identity without an act; otherwise the transformed value validated
/// against the act schema.
std::variant<ActFailure, Instance> apply_act(const Contract& contract, const Instance& input);

/// Maps the execution state to an outcome under `mode`, runs the finalizer
/// hook once and appends the finalize entry to the trace.
ContractOutcome finalize(const Contract& contract, const FinalizeState& state,
                         const FallbackMode& mode, const Finalizer& hook,
                         ExecutionTrace& trace);

/// Task context for generation: agent instructions, contract prompt and the
/// serialized input. The output schema rendering is appended after it.
std::string generation_base_prompt(const Contract& contract, const Agent& agent,
                                   const Instance& context);

/// JSON lines: one object per phase entry ({"phase","attempt","outcome"}),
/// then a summary record with the outcome, generator_calls, latency_ms,
/// tokens_in and tokens_out. Fields of `tag` are prepended to every line.
std::string trace_to_jsonl(const ExecutionTrace& trace, const Json& tag = Json::object());

}  // namespace dbc
