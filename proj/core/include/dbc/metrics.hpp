#pragma once

// Empirical success estimation over repeated executions, per-family
// factorization and comparison of agents bound by the same contracts.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dbc/contract.hpp"

namespace dbc {

/// Family standing for type conformance of the final output. It is always
/// part of a run record, after the contract's own families.
inline constexpr std::string_view kTypeFamily = "$type";

struct RunRecord {
  std::size_t run_index = 0;
  bool success = false;
  std::vector<std::pair<std::string, bool>> families;
  int generator_calls = 0;
  Millis latency{0};
  std::int64_t tokens_in = 0;
  std::int64_t tokens_out = 0;
  bool transport_error = false;
};

/// Success is "outcome validated"; family passes come from the last
/// predicate rounds recorded in the trace. A family whose predicates were
/// never evaluated counts as failed.
RunRecord make_run_record(const Contract& contract, std::size_t run_index,
                          const ExecutionTrace& trace);

struct CostSummary {
  double mean_calls = 0;
  int max_calls = 0;
  double mean_latency_ms = 0;
  double max_latency_ms = 0;
  double mean_tokens_in = 0;
  double mean_tokens_out = 0;
  std::int64_t total_tokens = 0;

  friend bool operator==(const CostSummary&, const CostSummary&) = default;
};

struct SuccessReport {
  std::string contract_id;
  std::string agent_id;
  std::uint64_t seed = 0;
  std::size_t runs = 0;
  std::size_t successes = 0;
  double p_succ = 0;
  std::vector<std::pair<std::string, double>> families;
  double product_approx = 0;
  double empirical_joint = 0;
  CostSummary cost;
  std::size_t transport_error_runs = 0;

  friend bool operator==(const SuccessReport&, const SuccessReport&) = default;
};

Json report_to_json(const SuccessReport& report);
SuccessReport report_from_json(const Json& doc);

struct FamilyFactorization {
  std::vector<std::pair<std::string, double>> per_family;
  double product_approx = 0;
  double empirical_joint = 0;
};

/// Throws std::invalid_argument on an empty record set or when records
/// disagree on their family names.
FamilyFactorization factorize_families(std::span<const RunRecord> records);

struct EstimateOptions {
  unsigned threads = 0;   // 0: hardware concurrency
  bool real_delays = false;  // sleep through backoff delays instead of accounting them
  bool keep_traces = false;
};

struct Estimate {
  SuccessReport report;
  std::vector<RunRecord> runs;
  std::vector<ExecutionTrace> traces;  // filled when keep_traces is set
};

/// N executions, inputs cycled round-robin. Run i uses generator.fork(s_i)
/// and request seed s_i, both derived from (seed, i), so the result does not
/// depend on scheduling. Throws std::invalid_argument if N < 1 or the corpus
/// is empty.
Estimate estimate_success_detailed(const Contract& contract, const Agent& agent,
                                   const Generator& generator, std::span<const Json> inputs,
                                   std::size_t runs, std::uint64_t seed,
                                   const EstimateOptions& options = {});

SuccessReport estimate_success(const Contract& contract, const Agent& agent,
                               const Generator& generator, std::span<const Json> inputs,
                               std::size_t runs, std::uint64_t seed,
                               const EstimateOptions& options = {});

SuccessReport summarize_runs(const std::string& contract_id, const std::string& agent_id,
                             std::uint64_t seed, std::span<const RunRecord> runs);

struct AgentReports {
  std::string agent_id;
  std::vector<SuccessReport> reports;
};

enum class Potential { FirstGreater, SecondGreater, Incomparable };

std::string_view to_string(Potential potential);

struct ContractDelta {
  std::string contract_id;
  double delta_p_succ = 0;
  double delta_mean_calls = 0;
};

struct EquivalenceVerdict {
  std::string first;
  std::string second;
  double threshold = 0.95;
  bool equivalent = false;
  double delta_p_succ = 0;      // mean over contracts, first minus second
  double delta_mean_calls = 0;  // mean over contracts, first minus second
  std::vector<ContractDelta> per_contract;
  std::vector<std::string> satisfied_first;
  std::vector<std::string> satisfied_second;
  Potential potential = Potential::Incomparable;
};

inline constexpr double kDefaultEquivalenceThreshold = 0.95;

/// Equivalent iff both agents reach `threshold` on every contract.
/// Potential orders agents by strict inclusion of their satisfied sets.
/// Throws std::invalid_argument when the suites or run counts differ.
EquivalenceVerdict compare_agents(const AgentReports& first, const AgentReports& second,
                                  double threshold = kDefaultEquivalenceThreshold);

Json verdict_to_json(const EquivalenceVerdict& verdict);

}  // namespace dbc
