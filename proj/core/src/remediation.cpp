#include "dbc/remediation.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <thread>

#include "text_util.hpp"

namespace dbc {

std::vector<std::string> check_retry_policy(const RetryPolicy& policy) {
  std::vector<std::string> errors;
  if (policy.max_attempts < 1) errors.push_back("max_attempts must be >= 1");
  if (policy.initial_delay.count() < 0) errors.push_back("initial_delay must be >= 0");
  if (!(policy.backoff_factor >= 1.0)) errors.push_back("backoff_factor must be >= 1");
  if (policy.initial_delay > policy.max_delay) {
    errors.push_back("initial_delay must not exceed max_delay");
  }
  return errors;
}

Millis next_delay(const RetryPolicy& policy, int attempt) {
  if (attempt < 2 || attempt > policy.max_attempts) {
    throw std::invalid_argument("next_delay: attempt " + std::to_string(attempt) +
                                " outside 2.." + std::to_string(policy.max_attempts));
  }
  const double scaled =
      policy.initial_delay.count() * std::pow(policy.backoff_factor, attempt - 2);
  return Millis(std::min(scaled, policy.max_delay.count()));
}

Json retry_policy_to_json(const RetryPolicy& policy) {
  Json doc = Json::object();
  doc["max_attempts"] = policy.max_attempts;
  doc["initial_delay_ms"] = policy.initial_delay.count();
  doc["backoff_factor"] = policy.backoff_factor;
  doc["max_delay_ms"] = policy.max_delay.count();
  doc["remediation"] = policy.remediation_enabled;
  return doc;
}

RetryPolicy retry_policy_from_json(const Json& doc, const RetryPolicy& defaults) {
  if (!doc.is_object()) throw std::invalid_argument("retry policy must be an object");
  RetryPolicy policy = defaults;
  try {
    if (doc.contains("max_attempts")) policy.max_attempts = doc["max_attempts"].get<int>();
    if (doc.contains("initial_delay_ms")) {
      policy.initial_delay = Millis(doc["initial_delay_ms"].get<double>());
    }
    if (doc.contains("backoff_factor")) policy.backoff_factor = doc["backoff_factor"].get<double>();
    if (doc.contains("max_delay_ms")) policy.max_delay = Millis(doc["max_delay_ms"].get<double>());
    if (doc.contains("remediation")) policy.remediation_enabled = doc["remediation"].get<bool>();
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("retry policy: ") + e.what());
  }
  return policy;
}

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::TypeIn: return "type-in";
    case Phase::Pre: return "pre";
    case Phase::FixIn: return "fix-in";
    case Phase::Act: return "act";
    case Phase::Generate: return "generate";
    case Phase::TypeOut: return "type-out";
    case Phase::Post: return "post";
    case Phase::FixOut: return "fix-out";
    case Phase::Finalize: return "finalize";
  }
  return "unknown";
}

bool is_input_phase(Phase phase) {
  return phase == Phase::TypeIn || phase == Phase::Pre || phase == Phase::FixIn ||
         phase == Phase::Act;
}

std::string_view to_string(ErrorSource source) {
  switch (source) {
    case ErrorSource::TypeValidation: return "type-validation";
    case ErrorSource::Precondition: return "precondition";
    case ErrorSource::Postcondition: return "postcondition";
    case ErrorSource::Parse: return "parse";
    case ErrorSource::Transport: return "transport";
    case ErrorSource::Act: return "act";
  }
  return "unknown";
}

void ErrorHistory::append(ErrorRecord record) {
  if (record.message.empty()) throw std::logic_error("error record message is empty");
  const bool input_side = is_input_phase(record.phase);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (is_input_phase(it->phase) != input_side) continue;
    if (record.attempt <= it->attempt) {
      throw std::logic_error("error record attempt " + std::to_string(record.attempt) +
                             " does not follow attempt " + std::to_string(it->attempt));
    }
    break;
  }
  records_.push_back(std::move(record));
}

ErrorHistory ErrorHistory::side(bool input_side) const {
  ErrorHistory out;
  for (const auto& r : records_) {
    if (is_input_phase(r.phase) == input_side) out.records_.push_back(r);
  }
  return out;
}

std::size_t ErrorHistory::repeated_messages() const {
  std::set<std::string_view> seen;
  std::size_t repeats = 0;
  for (const auto& r : records_) {
    if (!seen.insert(r.message).second) ++repeats;
  }
  return repeats;
}

std::string failure_line(const ErrorRecord& record) {
  return "attempt " + std::to_string(record.attempt) + " failed: " +
         std::string(to_string(record.source)) + " " + record.predicate_or_path +
         ": " + record.message;
}

std::string build_corrective_prompt(std::string_view base_prompt,
                                    std::string_view schema_prompt,
                                    const ErrorHistory& history) {
  std::ostringstream out;
  out << base_prompt << "\n\n" << schema_prompt << "\n\n";
  out << "Previous attempts were rejected:\n";
  for (const auto& record : history.records()) {
    out << failure_line(record) << "\n";
    if (!record.raw_excerpt.empty()) {
      out << "  rejected output: " << Json(record.raw_excerpt).dump() << "\n";
    }
  }
  out << "Return a corrected JSON object that resolves every failure listed above.";
  return out.str();
}

std::string summarize_violations(const std::vector<Violation>& violations) {
  if (violations.size() == 1) return violations.front().message;
  std::vector<std::string> parts;
  for (const auto& v : violations) parts.push_back(v.path + ": " + v.message);
  return detail::join(parts, "; ");
}

std::string violation_paths(const std::vector<Violation>& violations) {
  std::vector<std::string> paths;
  for (const auto& v : violations) {
    if (std::find(paths.begin(), paths.end(), v.path) == paths.end()) paths.push_back(v.path);
  }
  return detail::join(paths, ",");
}

FixAttempt attempt_generation(const SchemaPtr& schema, const std::string& prompt,
                              Generator& generator, GeneratorRequest request) {
  request.prompt = prompt;
  FixAttempt attempt;
  GeneratorResponse response;
  try {
    response = generator.generate(request);
  } catch (const TransportError& e) {
    ErrorRecord record;
    record.source = ErrorSource::Transport;
    record.predicate_or_path = std::string(generator.kind());
    record.message = std::string(to_string(e.kind())) + ": " + e.what();
    attempt.result = FixAttemptFailure{std::move(record)};
    return attempt;
  }
  auto parsed = parse_output(response.text, schema);
  if (auto* error = std::get_if<ParseError>(&parsed)) {
    ErrorRecord record;
    record.raw_excerpt = utf8_prefix(response.text, kRawExcerptChars);
    if (error->details.empty()) {
      record.source = ErrorSource::Parse;
      record.predicate_or_path = error->violation.path;
      record.message = error->violation.message;
    } else {
      record.source = ErrorSource::TypeValidation;
      record.predicate_or_path = violation_paths(error->details);
      record.message = summarize_violations(error->details);
    }
    attempt.result = FixAttemptFailure{std::move(record)};
  } else {
    attempt.result = std::get<Instance>(std::move(parsed));
  }
  attempt.response = std::move(response);
  return attempt;
}

FixResult fix_instance(const SchemaPtr& target_schema, const FixCandidate& candidate,
                       ErrorHistory& history, Generator& generator,
                       const RetryPolicy& policy, const FixOptions& options) {
  if (!policy.remediation_enabled) {
    throw std::invalid_argument("fix_instance requires remediation to be enabled");
  }
  const bool input_side = is_input_phase(options.phase);
  int attempt = 0;
  for (const auto& r : history.records()) {
    if (is_input_phase(r.phase) == input_side) attempt = std::max(attempt, r.attempt);
  }

  std::string base = options.base_prompt;
  if (!base.empty()) base += "\n\n";
  base += "Candidate to correct:\n";
  if (const auto* text = std::get_if<std::string>(&candidate)) {
    base += *text;
  } else {
    base += std::get<Json>(candidate).dump();
  }
  const auto schema_prompt = render_schema_prompt(*target_schema);
  std::function<void(Millis)> sleep = options.sleep;
  if (!sleep) sleep = [](Millis d) { std::this_thread::sleep_for(d); };

  FixResult out;
  for (int k = 1; k <= policy.max_attempts; ++k) {
    if (k >= 2) sleep(next_delay(policy, k));
    ++attempt;
    const auto prompt = build_corrective_prompt(base, schema_prompt, history.side(input_side));
    auto result = attempt_generation(target_schema, prompt, generator, options.request_template);
    ++out.generator_calls;
    if (result.response) {
      out.tokens_in += result.response->tokens_in;
      out.tokens_out += result.response->tokens_out;
      out.latency += result.response->latency;
    }
    if (auto* instance = std::get_if<Instance>(&result.result)) {
      out.result = std::move(*instance);
      return out;
    }
    auto record = std::get<FixAttemptFailure>(std::move(result.result)).record;
    record.attempt = attempt;
    record.phase = options.phase;
    history.append(std::move(record));
  }
  out.result = Exhausted{history};
  return out;
}

}  // namespace dbc
