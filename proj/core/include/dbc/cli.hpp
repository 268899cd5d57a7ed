#pragma once

// Batch front-end over suite files.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "dbc/metrics.hpp"
#include "dbc/suite.hpp"

namespace dbc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitThresholdMiss = 1;
inline constexpr int kExitConfigError = 2;

struct RunOverrides {
  std::optional<std::size_t> runs;
  std::optional<std::uint64_t> seed;
  std::optional<GeneratorKind> backend;
  std::optional<std::filesystem::path> report;
  std::optional<std::filesystem::path> trace;
  std::optional<unsigned> threads;
};

/// Report document for a whole suite: one SuccessReport per contract plus
/// its threshold and verdict. Contains nothing run-dependent beyond the
/// reports themselves.
Json suite_report_json(const SuiteSpec& suite, const std::vector<SuccessReport>& reports,
                       const std::vector<double>& thresholds);

/// Estimates every contract and writes the report and trace files.
/// Returns 0 when every contract meets its threshold, 1 on a miss and 2 on
/// a configuration error (message written to `err`).
int run_suite(const std::filesystem::path& suite_path, const RunOverrides& overrides,
              std::ostream& out, std::ostream& err);

/// Human-readable description of one contract. Throws SuiteError for an
/// unknown id.
std::string explain_text(const SuiteSpec& suite, const std::string& contract_id);

/// Prints explain_text; returns 2 on an unknown id or a bad suite.
int explain_contract(const std::filesystem::path& suite_path, const std::string& contract_id,
                     std::ostream& out, std::ostream& err);

}  // namespace dbc
