#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dbc/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Run and inspect contract suites"};
  app.require_subcommand(1);

  std::string suite;
  std::size_t runs = 0;
  std::uint64_t seed = 0;
  std::string backend, report, trace;
  unsigned threads = 0;

  auto* run = app.add_subcommand("run", "Estimate success probabilities for every contract");
  run->add_option("--suite", suite, "Suite file")->required();
  auto* runs_opt = run->add_option("--runs", runs, "Executions per contract")->check(CLI::PositiveNumber);
  auto* seed_opt = run->add_option("--seed", seed, "Base seed");
  run->add_option("--backend", backend, "Generator backend override")
      ->check(CLI::IsMember({"scripted", "bernoulli", "http"}));
  run->add_option("--report", report, "Report JSON path");
  run->add_option("--trace", trace, "Trace JSON-lines path");
  auto* threads_opt = run->add_option("--threads", threads, "Worker threads (0: all cores)");

  std::string contract;
  auto* explain = app.add_subcommand("explain", "Describe one contract");
  explain->add_option("--suite", suite, "Suite file")->required();
  explain->add_option("--contract", contract, "Contract id")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : dbc::kExitConfigError;
  }

  if (*explain) return dbc::explain_contract(suite, contract, std::cout, std::cerr);

  dbc::RunOverrides overrides;
  if (*runs_opt) overrides.runs = runs;
  if (*seed_opt) overrides.seed = seed;
  if (*threads_opt) overrides.threads = threads;
  if (!backend.empty()) overrides.backend = dbc::generator_kind_from_string(backend);
  if (!report.empty()) overrides.report = report;
  if (!trace.empty()) overrides.trace = trace;
  return dbc::run_suite(suite, overrides, std::cout, std::cerr);
}
