#pragma once

// Suite files: schemas, generator configurations, an agent and contracts
// whose predicates come from a closed declarative vocabulary.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbc/contract.hpp"

namespace dbc {

/// Any problem with a suite definition: malformed JSON, unresolved
/// references, predicates that do not type-check.
class SuiteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PredicateKind {
  RegexMatch,
  FieldEquals,
  LengthBound,
  NumericRange,
  CrossFieldComparison,
  OutputReferencesInputField,
};

std::string_view to_string(PredicateKind kind);
std::optional<PredicateKind> predicate_kind_from_string(std::string_view text);

enum class Comparison { Less, LessEqual, Equal, NotEqual, GreaterEqual, Greater };

std::string_view to_string(Comparison op);
std::optional<Comparison> comparison_from_string(std::string_view text);

/// Field references are dotted paths rooted at `input` or `output`, e.g.
/// "output.author.name". Which members are used depends on the kind:
///   regex-match                    field, pattern
///   field-equals                   field, value
///   length-bound, numeric-range    field, min, max
///   cross-field-comparison         field (left), op, other (right)
///   output-references-input-field  field (output string), other (input field)
struct PredicateSpec {
  std::string name;
  std::string family;
  PredicateKind kind = PredicateKind::FieldEquals;
  std::string field;
  std::string other;
  std::string pattern;
  Json value;
  std::optional<double> min;
  std::optional<double> max;
  Comparison op = Comparison::Equal;

  friend bool operator==(const PredicateSpec&, const PredicateSpec&) = default;
};

enum class ActOpKind { Lowercase, Uppercase, Trim, Set };

std::string_view to_string(ActOpKind kind);

struct ActOp {
  ActOpKind kind = ActOpKind::Trim;
  std::string field;  // path inside the input value, without the `input.` root
  Json value;         // Set only

  friend bool operator==(const ActOp&, const ActOp&) = default;
};

struct ActSpec {
  std::optional<std::string> schema;  // defaults to the contract input schema
  std::vector<ActOp> ops;

  friend bool operator==(const ActSpec&, const ActSpec&) = default;
};

struct FallbackSpec {
  FallbackMode::Kind kind = FallbackMode::Kind::Strict;
  std::optional<Json> default_value;

  friend bool operator==(const FallbackSpec&, const FallbackSpec&) = default;
};

struct ContractSpec {
  std::string id;
  std::string input;
  std::string output;
  std::string prompt;
  std::vector<PredicateSpec> preconditions;
  std::vector<PredicateSpec> postconditions;
  std::optional<ActSpec> act;
  std::optional<RetryPolicy> pre_retry;   // agent default when unset
  std::optional<RetryPolicy> post_retry;
  FallbackSpec fallback;
  std::optional<double> threshold;        // run threshold when unset
  std::optional<std::string> generator;   // agent generator when unset
  std::vector<Json> inputs;

  friend bool operator==(const ContractSpec&, const ContractSpec&) = default;
};

struct AgentSpec {
  std::string id = "agent";
  std::vector<std::string> instructions;
  double temperature = 0.0;
  std::optional<std::int64_t> seed;
  RetryPolicy retry;
  int max_generator_calls = 16;
  int max_tokens = 1024;
  std::string generator;  // name of the default generator

  friend bool operator==(const AgentSpec&, const AgentSpec&) = default;
};

struct RunSpec {
  std::size_t runs = 100;
  std::uint64_t seed = 0;
  double threshold = kDefaultSuiteThreshold;
  unsigned threads = 0;

  static constexpr double kDefaultSuiteThreshold = 0.95;

  friend bool operator==(const RunSpec&, const RunSpec&) = default;
};

struct OutputSpec {
  std::optional<std::filesystem::path> report;
  std::optional<std::filesystem::path> trace;

  friend bool operator==(const OutputSpec&, const OutputSpec&) = default;
};

struct SuiteSpec {
  std::vector<SchemaPtr> schemas;
  std::vector<GeneratorConfig> generators;
  AgentSpec agent;
  std::vector<ContractSpec> contracts;
  RunSpec run;
  OutputSpec output;

  SchemaPtr find_schema(const std::string& name) const;
  const GeneratorConfig* find_generator(const std::string& name) const;
  const ContractSpec* find_contract(const std::string& id) const;

  /// Schemas compare by value.
  friend bool operator==(const SuiteSpec& a, const SuiteSpec& b);
};

/// Parses and validates a suite document. Relative paths (scripts, outputs)
/// resolve against `base_dir`. Throws SuiteError naming the offending
/// identifier.
SuiteSpec suite_from_json(const Json& doc, const std::filesystem::path& base_dir = {});
SuiteSpec load_suite(const std::filesystem::path& path);
Json suite_to_json(const SuiteSpec& suite);

/// Compiles a predicate spec into an evaluator. The spec must already have
/// passed type-checking against `input` and `output`.
Predicate compile_predicate(const PredicateSpec& spec, const TypeSchema& input,
                            const TypeSchema* output);

/// Runtime contract for one contract spec.
std::shared_ptr<const Contract> build_contract(const SuiteSpec& suite, const ContractSpec& spec);

/// Agent holding every schema, generator and contract of the suite.
Agent build_agent(const SuiteSpec& suite);

/// Resolved generator config for a contract, honouring an optional backend
/// override (the first generator of that kind in the suite).
const GeneratorConfig& contract_generator(const SuiteSpec& suite, const ContractSpec& spec,
                                          std::optional<GeneratorKind> backend = {});

}  // namespace dbc
