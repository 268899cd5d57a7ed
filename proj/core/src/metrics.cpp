#include "dbc/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <map>
#include <set>
#include <thread>

#include "text_util.hpp"

namespace dbc {

RunRecord make_run_record(const Contract& contract, std::size_t run_index,
                          const ExecutionTrace& trace) {
  RunRecord record;
  record.run_index = run_index;
  record.success = trace.final && trace.final->is_validated();
  record.generator_calls = trace.generator_calls;
  record.latency = trace.latency;
  record.tokens_in = trace.tokens_in;
  record.tokens_out = trace.tokens_out;
  record.transport_error = trace.transport_error;

  for (const auto& family : contract.families()) {
    bool evaluated = false;
    bool passed = true;
    auto scan = [&](const std::vector<Predicate>& declared,
                    const std::vector<PredicateOutcome>& outcomes) {
      for (const auto& p : declared) {
        if (p.family != family) continue;
        auto it = std::find_if(outcomes.begin(), outcomes.end(),
                               [&](const PredicateOutcome& o) { return o.name == p.name; });
        if (it == outcomes.end()) {
          passed = false;
        } else {
          evaluated = true;
          passed = passed && it->passed;
        }
      }
    };
    scan(contract.preconditions, trace.last_preconditions);
    scan(contract.postconditions, trace.last_postconditions);
    record.families.emplace_back(family, evaluated && passed);
  }
  bool typed = trace.output_well_typed;
  const bool all_families = std::all_of(record.families.begin(), record.families.end(),
                                        [](const auto& f) { return f.second; });
  // A run can fail after every predicate passed (act, cap or internal
  // errors); charge it to typing so success stays the conjunction.
  if (!record.success && all_families) typed = false;
  record.families.emplace_back(std::string(kTypeFamily), typed);
  return record;
}

Json report_to_json(const SuccessReport& report) {
  Json doc = Json::object();
  doc["contract"] = report.contract_id;
  doc["agent"] = report.agent_id;
  doc["seed"] = report.seed;
  doc["runs"] = report.runs;
  doc["successes"] = report.successes;
  doc["p_succ"] = report.p_succ;
  Json families = Json::object();
  for (const auto& [name, p] : report.families) families[name] = p;
  doc["families"] = std::move(families);
  doc["product_approx"] = report.product_approx;
  doc["empirical_joint"] = report.empirical_joint;
  Json cost = Json::object();
  cost["mean_calls"] = report.cost.mean_calls;
  cost["max_calls"] = report.cost.max_calls;
  cost["mean_latency_ms"] = report.cost.mean_latency_ms;
  cost["max_latency_ms"] = report.cost.max_latency_ms;
  cost["mean_tokens_in"] = report.cost.mean_tokens_in;
  cost["mean_tokens_out"] = report.cost.mean_tokens_out;
  cost["total_tokens"] = report.cost.total_tokens;
  doc["cost"] = std::move(cost);
  doc["transport_error_runs"] = report.transport_error_runs;
  return doc;
}

SuccessReport report_from_json(const Json& doc) {
  try {
    SuccessReport r;
    r.contract_id = doc.at("contract").get<std::string>();
    r.agent_id = doc.at("agent").get<std::string>();
    r.seed = doc.at("seed").get<std::uint64_t>();
    r.runs = doc.at("runs").get<std::size_t>();
    r.successes = doc.at("successes").get<std::size_t>();
    r.p_succ = doc.at("p_succ").get<double>();
    for (const auto& [name, p] : doc.at("families").items()) {
      r.families.emplace_back(name, p.get<double>());
    }
    r.product_approx = doc.at("product_approx").get<double>();
    r.empirical_joint = doc.at("empirical_joint").get<double>();
    const auto& cost = doc.at("cost");
    r.cost.mean_calls = cost.at("mean_calls").get<double>();
    r.cost.max_calls = cost.at("max_calls").get<int>();
    r.cost.mean_latency_ms = cost.at("mean_latency_ms").get<double>();
    r.cost.max_latency_ms = cost.at("max_latency_ms").get<double>();
    r.cost.mean_tokens_in = cost.at("mean_tokens_in").get<double>();
    r.cost.mean_tokens_out = cost.at("mean_tokens_out").get<double>();
    r.cost.total_tokens = cost.at("total_tokens").get<std::int64_t>();
    r.transport_error_runs = doc.at("transport_error_runs").get<std::size_t>();
    return r;
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("malformed success report: ") + e.what());
  }
}

FamilyFactorization factorize_families(std::span<const RunRecord> records) {
  if (records.empty()) throw std::invalid_argument("factorize_families: no records");
  const auto& reference = records.front().families;
  std::vector<std::size_t> passes(reference.size(), 0);
  std::size_t joint = 0;
  for (const auto& record : records) {
    if (record.families.size() != reference.size()) {
      throw std::invalid_argument("run " + std::to_string(record.run_index) +
                                  " has a different family set");
    }
    bool all = true;
    for (std::size_t i = 0; i < reference.size(); ++i) {
      if (record.families[i].first != reference[i].first) {
        throw std::invalid_argument("run " + std::to_string(record.run_index) +
                                    " has a different family set");
      }
      if (record.families[i].second) {
        ++passes[i];
      } else {
        all = false;
      }
    }
    if (all) ++joint;
  }
  FamilyFactorization out;
  const double n = static_cast<double>(records.size());
  out.product_approx = 1.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double p = static_cast<double>(passes[i]) / n;
    out.per_family.emplace_back(reference[i].first, p);
    out.product_approx *= p;
  }
  out.empirical_joint = static_cast<double>(joint) / n;
  return out;
}

SuccessReport summarize_runs(const std::string& contract_id, const std::string& agent_id,
                             std::uint64_t seed, std::span<const RunRecord> runs) {
  auto factors = factorize_families(runs);
  SuccessReport report;
  report.contract_id = contract_id;
  report.agent_id = agent_id;
  report.seed = seed;
  report.runs = runs.size();
  report.families = factors.per_family;
  report.product_approx = factors.product_approx;
  report.empirical_joint = factors.empirical_joint;
  double calls = 0, latency = 0, tokens_in = 0, tokens_out = 0;
  for (const auto& run : runs) {
    if (run.success) ++report.successes;
    if (run.transport_error) ++report.transport_error_runs;
    calls += run.generator_calls;
    latency += run.latency.count();
    tokens_in += static_cast<double>(run.tokens_in);
    tokens_out += static_cast<double>(run.tokens_out);
    report.cost.max_calls = std::max(report.cost.max_calls, run.generator_calls);
    report.cost.max_latency_ms = std::max(report.cost.max_latency_ms, run.latency.count());
    report.cost.total_tokens += run.tokens_in + run.tokens_out;
  }
  const double n = static_cast<double>(runs.size());
  report.p_succ = static_cast<double>(report.successes) / n;
  report.cost.mean_calls = calls / n;
  report.cost.mean_latency_ms = latency / n;
  report.cost.mean_tokens_in = tokens_in / n;
  report.cost.mean_tokens_out = tokens_out / n;
  return report;
}

Estimate estimate_success_detailed(const Contract& contract, const Agent& agent,
                                   const Generator& generator, std::span<const Json> inputs,
                                   std::size_t runs, std::uint64_t seed,
                                   const EstimateOptions& options) {
  if (runs < 1) throw std::invalid_argument("estimate_success: N must be >= 1");
  if (inputs.empty()) throw std::invalid_argument("estimate_success: input corpus is empty");

  Estimate estimate;
  estimate.runs.resize(runs);
  if (options.keep_traces) estimate.traces.resize(runs);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    ExecuteOptions exec;
    if (!options.real_delays) exec.sleep = [](Millis) {};
    for (std::size_t i = next.fetch_add(1); i < runs; i = next.fetch_add(1)) {
      const auto run_seed = detail::mix_seed(seed, i);
      auto handle = generator.fork(run_seed);
      exec.request_seed = static_cast<std::int64_t>(run_seed >> 1);
      auto result = execute_nothrow(contract, agent, *handle, inputs[i % inputs.size()], exec);
      estimate.runs[i] = make_run_record(contract, i, result.trace);
      if (options.keep_traces) estimate.traces[i] = std::move(result.trace);
    }
  };

  unsigned threads = options.threads ? options.threads : std::thread::hardware_concurrency();
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(runs)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  estimate.report = summarize_runs(contract.id, agent.id, seed, estimate.runs);
  return estimate;
}

SuccessReport estimate_success(const Contract& contract, const Agent& agent,
                               const Generator& generator, std::span<const Json> inputs,
                               std::size_t runs, std::uint64_t seed,
                               const EstimateOptions& options) {
  return estimate_success_detailed(contract, agent, generator, inputs, runs, seed, options).report;
}

std::string_view to_string(Potential potential) {
  switch (potential) {
    case Potential::FirstGreater: return "first>second";
    case Potential::SecondGreater: return "second>first";
    case Potential::Incomparable: return "incomparable";
  }
  return "unknown";
}

EquivalenceVerdict compare_agents(const AgentReports& first, const AgentReports& second,
                                  double threshold) {
  std::map<std::string, const SuccessReport*> a, b;
  for (const auto& r : first.reports) a[r.contract_id] = &r;
  for (const auto& r : second.reports) b[r.contract_id] = &r;
  if (a.size() != first.reports.size() || b.size() != second.reports.size()) {
    throw std::invalid_argument("compare_agents: duplicate contract in a report set");
  }
  if (a.size() != b.size() ||
      !std::equal(a.begin(), a.end(), b.begin(),
                  [](const auto& x, const auto& y) { return x.first == y.first; })) {
    throw std::invalid_argument("compare_agents: agents were evaluated on different suites");
  }

  EquivalenceVerdict verdict;
  verdict.first = first.agent_id;
  verdict.second = second.agent_id;
  verdict.threshold = threshold;
  verdict.equivalent = true;
  // Contracts in declaration order of the first agent's report set.
  for (const auto& report : first.reports) {
    const auto& ra = *a.at(report.contract_id);
    const auto& rb = *b.at(report.contract_id);
    if (ra.runs != rb.runs) {
      throw std::invalid_argument("compare_agents: run counts differ on contract '" +
                                  report.contract_id + "'");
    }
    const bool sa = ra.p_succ >= threshold;
    const bool sb = rb.p_succ >= threshold;
    if (sa) verdict.satisfied_first.push_back(report.contract_id);
    if (sb) verdict.satisfied_second.push_back(report.contract_id);
    verdict.equivalent = verdict.equivalent && sa && sb;
    ContractDelta delta{report.contract_id, ra.p_succ - rb.p_succ,
                        ra.cost.mean_calls - rb.cost.mean_calls};
    verdict.delta_p_succ += delta.delta_p_succ;
    verdict.delta_mean_calls += delta.delta_mean_calls;
    verdict.per_contract.push_back(std::move(delta));
  }
  if (!verdict.per_contract.empty()) {
    const double n = static_cast<double>(verdict.per_contract.size());
    verdict.delta_p_succ /= n;
    verdict.delta_mean_calls /= n;
  }

  std::set<std::string> sa(verdict.satisfied_first.begin(), verdict.satisfied_first.end());
  std::set<std::string> sb(verdict.satisfied_second.begin(), verdict.satisfied_second.end());
  const bool a_covers_b = std::includes(sa.begin(), sa.end(), sb.begin(), sb.end());
  const bool b_covers_a = std::includes(sb.begin(), sb.end(), sa.begin(), sa.end());
  if (a_covers_b && !b_covers_a) {
    verdict.potential = Potential::FirstGreater;
  } else if (b_covers_a && !a_covers_b) {
    verdict.potential = Potential::SecondGreater;
  } else {
    verdict.potential = Potential::Incomparable;
  }
  return verdict;
}

Json verdict_to_json(const EquivalenceVerdict& verdict) {
  Json doc = Json::object();
  doc["first"] = verdict.first;
  doc["second"] = verdict.second;
  doc["threshold"] = verdict.threshold;
  doc["equivalent"] = verdict.equivalent;
  doc["delta_p_succ"] = verdict.delta_p_succ;
  doc["delta_mean_calls"] = verdict.delta_mean_calls;
  Json per = Json::array();
  for (const auto& d : verdict.per_contract) {
    per.push_back(Json{{"contract", d.contract_id},
                       {"delta_p_succ", d.delta_p_succ},
                       {"delta_mean_calls", d.delta_mean_calls}});
  }
  doc["per_contract"] = std::move(per);
  doc["satisfied_first"] = verdict.satisfied_first;
  doc["satisfied_second"] = verdict.satisfied_second;
  doc["potential"] = std::string(to_string(verdict.potential));
  return doc;
}

}  // namespace dbc
