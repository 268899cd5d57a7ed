#pragma once

// Random schemas, instances and executions plus independent oracles used by
// the unit, property and acceptance tests.

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dbc/dbc.hpp"

namespace dbc::testing {

using Rng = std::mt19937_64;

/// Schema with at most `max_fields` fields, nested at most two levels.
SchemaPtr random_schema(Rng& rng, int max_fields = 5, const std::string& name = "T",
                        int depth = 0);

/// A value that satisfies every rule of `schema`.
Json random_valid_value(const TypeSchema& schema, Rng& rng);

/// A value that is valid with some probability per field and otherwise
/// missing, mistyped or out of constraint. Occasionally not an object.
Json random_any_value(const TypeSchema& schema, Rng& rng);

/// Brute-force checker: walks every (field, constraint) pair on its own and
/// returns (path, kind) pairs in schema order.
std::vector<std::pair<std::string, ViolationKind>> oracle_violations(const TypeSchema& schema,
                                                                     const Json& value);

/// Code points in UTF-8 text, counted independently of the library.
std::size_t count_code_points(const std::string& text);

/// Empty when the phase log is a valid path through the execution state
/// machine; otherwise a description of the first offending entry.
std::string check_phase_order(const ExecutionTrace& trace);

/// A randomized contract, agent, script and input.
struct FuzzCase {
  std::shared_ptr<Contract> contract;
  Agent agent;
  std::vector<ScriptEntry> script;
  Json input;
  bool finalizer_throws = false;
};

FuzzCase random_case(Rng& rng);

struct FuzzRun {
  ExecutionResult result;
  int finalizer_calls = 0;
  bool threw = false;              // execute() raised ContractFailure
  bool unexpected_exception = false;
};

/// Runs the case through execute() with virtual delays.
FuzzRun run_case(const FuzzCase& c);

/// Termination, phase-order, finalize and fallback checks. Empty when the
/// run satisfies all of them.
std::vector<std::string> check_invariants(const FuzzCase& c, const FuzzRun& run);

/// Independent re-validation of a validated outcome: types and every
/// postcondition. Empty when sound (or when the outcome is not validated).
std::vector<std::string> check_soundness(const FuzzCase& c, const FuzzRun& run);

/// Upper bound on generator calls implied by the retry policies.
int call_bound(const Contract& contract);

}  // namespace dbc::testing
