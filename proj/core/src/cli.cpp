#include "dbc/cli.hpp"

#include <fstream>
#include <ostream>
#include <sstream>

#include "text_util.hpp"

namespace dbc {

namespace {

std::string predicate_text(const PredicateSpec& p) {
  std::string body;
  switch (p.kind) {
    case PredicateKind::RegexMatch: body = p.field + " matches /" + p.pattern + "/"; break;
    case PredicateKind::FieldEquals: body = p.field + " == " + p.value.dump(); break;
    case PredicateKind::LengthBound:
    case PredicateKind::NumericRange: {
      const std::string subject =
          p.kind == PredicateKind::LengthBound ? "len(" + p.field + ")" : p.field;
      if (p.min) body += detail::format_number(*p.min) + " <= ";
      body += subject;
      if (p.max) body += " <= " + detail::format_number(*p.max);
      break;
    }
    case PredicateKind::CrossFieldComparison:
      body = p.field + " " + std::string(to_string(p.op)) + " " + p.other;
      break;
    case PredicateKind::OutputReferencesInputField:
      body = p.field + " mentions " + p.other;
      break;
  }
  return p.name + " [family " + p.family + "] " + std::string(to_string(p.kind)) + ": " + body;
}

std::string policy_text(const RetryPolicy& p) {
  return "max_attempts=" + std::to_string(p.max_attempts) +
         " initial_delay_ms=" + detail::format_number(p.initial_delay.count()) +
         " backoff_factor=" + detail::format_number(p.backoff_factor) +
         " max_delay_ms=" + detail::format_number(p.max_delay.count()) +
         " remediation=" + (p.remediation_enabled ? "on" : "off");
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw SuiteError("cannot write " + path.string());
  out << content;
  if (!out) throw SuiteError("cannot write " + path.string());
}

}  // namespace

Json suite_report_json(const SuiteSpec& suite, const std::vector<SuccessReport>& reports,
                       const std::vector<double>& thresholds) {
  Json doc = Json::object();
  doc["agent"] = suite.agent.id;
  Json contracts = Json::array();
  bool all_met = true;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    Json entry = report_to_json(reports[i]);
    const bool met = reports[i].p_succ >= thresholds[i];
    entry["threshold"] = thresholds[i];
    entry["met"] = met;
    all_met = all_met && met;
    contracts.push_back(std::move(entry));
  }
  doc["contracts"] = std::move(contracts);
  doc["all_met"] = all_met;
  return doc;
}

int run_suite(const std::filesystem::path& suite_path, const RunOverrides& overrides,
              std::ostream& out, std::ostream& err) {
  try {
    const auto suite = load_suite(suite_path);
    const auto agent = build_agent(suite);
    const std::size_t runs = overrides.runs.value_or(suite.run.runs);
    const std::uint64_t seed = overrides.seed.value_or(suite.run.seed);
    if (runs < 1) throw SuiteError("--runs must be >= 1");
    const auto report_path = overrides.report ? overrides.report : suite.output.report;
    const auto trace_path = overrides.trace ? overrides.trace : suite.output.trace;

    EstimateOptions options;
    options.threads = overrides.threads.value_or(suite.run.threads);
    options.keep_traces = trace_path.has_value();

    std::vector<SuccessReport> reports;
    std::vector<double> thresholds;
    std::string traces;
    for (std::size_t i = 0; i < suite.contracts.size(); ++i) {
      const auto& spec = suite.contracts[i];
      const auto& config = contract_generator(suite, spec, overrides.backend);
      const auto generator = make_generator(config);
      auto estimate = estimate_success_detailed(*agent.contracts[i], agent, *generator, spec.inputs,
                                                runs, seed, options);
      for (std::size_t r = 0; r < estimate.traces.size(); ++r) {
        traces += trace_to_jsonl(estimate.traces[r], Json{{"contract", spec.id}, {"run", r}});
      }
      const double threshold = spec.threshold.value_or(suite.run.threshold);
      out << spec.id << ": p_succ=" << detail::format_number(estimate.report.p_succ)
          << " threshold=" << detail::format_number(threshold) << " runs=" << runs
          << (estimate.report.p_succ >= threshold ? " ok" : " MISS") << "\n";
      reports.push_back(std::move(estimate.report));
      thresholds.push_back(threshold);
    }

    const auto doc = suite_report_json(suite, reports, thresholds);
    if (report_path) write_file(*report_path, doc.dump(2) + "\n");
    if (trace_path) write_file(*trace_path, traces);
    return doc["all_met"].get<bool>() ? kExitOk : kExitThresholdMiss;
  } catch (const SuiteError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
  }
  return kExitConfigError;
}

std::string explain_text(const SuiteSpec& suite, const std::string& contract_id) {
  const auto* spec = suite.find_contract(contract_id);
  if (!spec) throw SuiteError("unknown contract '" + contract_id + "'");
  const auto output = suite.find_schema(spec->output);

  std::ostringstream o;
  o << "Contract: " << spec->id << "\n";
  o << "Input type: " << spec->input << "\n";
  o << "Output type: " << spec->output << "\n";
  if (!spec->prompt.empty()) o << "Prompt: " << spec->prompt << "\n";
  o << "\nOutput schema prompt:\n" << render_schema_prompt(*output) << "\n";
  o << "\nPreconditions (" << spec->preconditions.size() << "):\n";
  for (const auto& p : spec->preconditions) o << "  - " << predicate_text(p) << "\n";
  o << "Postconditions (" << spec->postconditions.size() << "):\n";
  for (const auto& p : spec->postconditions) o << "  - " << predicate_text(p) << "\n";
  if (spec->act) {
    o << "Act: present (type " << spec->act->schema.value_or(spec->input) << ")\n";
    for (const auto& op : spec->act->ops) {
      o << "  - " << to_string(op.kind) << " " << op.field;
      if (op.kind == ActOpKind::Set) o << " = " << op.value.dump();
      o << "\n";
    }
  } else {
    o << "Act: absent\n";
  }
  o << "Pre-retry: " << policy_text(spec->pre_retry.value_or(suite.agent.retry)) << "\n";
  o << "Post-retry: " << policy_text(spec->post_retry.value_or(suite.agent.retry)) << "\n";
  o << "Fallback: " << to_string(spec->fallback.kind);
  if (spec->fallback.default_value) o << " " << spec->fallback.default_value->dump();
  o << "\n";
  o << "Threshold: " << detail::format_number(spec->threshold.value_or(suite.run.threshold)) << "\n";
  const auto& generator = contract_generator(suite, *spec);
  o << "Generator: " << generator.name << " (" << to_string(generator.kind) << ")\n";
  return o.str();
}

int explain_contract(const std::filesystem::path& suite_path, const std::string& contract_id,
                     std::ostream& out, std::ostream& err) {
  try {
    out << explain_text(load_suite(suite_path), contract_id);
    return kExitOk;
  } catch (const SuiteError& e) {
    err << "error: " << e.what() << "\n";
  }
  return kExitConfigError;
}

}  // namespace dbc
