#include "dbc/contract.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <thread>

#include "text_util.hpp"

namespace dbc {

Verdict Verdict::fail(std::string message) {
  Verdict v;
  v.message_ = message.empty() ? std::string("predicate failed") : std::move(message);
  return v;
}

const std::string& Verdict::message() const {
  static const std::string empty;
  return message_ ? *message_ : empty;
}

std::string_view to_string(PredicateTarget target) {
  switch (target) {
    case PredicateTarget::Input: return "input";
    case PredicateTarget::Output: return "output";
    case PredicateTarget::InputOutput: return "input+output";
  }
  return "unknown";
}

std::string_view to_string(FallbackMode::Kind kind) {
  switch (kind) {
    case FallbackMode::Kind::Strict: return "strict";
    case FallbackMode::Kind::GracefulRaw: return "graceful-raw";
    case FallbackMode::Kind::GracefulDefault: return "graceful-default";
  }
  return "unknown";
}

std::string_view to_string(PhaseResult result) {
  switch (result) {
    case PhaseResult::Pass: return "pass";
    case PhaseResult::Fail: return "fail";
    case PhaseResult::Error: return "error";
  }
  return "unknown";
}

std::string_view to_string(ContractOutcome::Kind kind) {
  switch (kind) {
    case ContractOutcome::Kind::Validated: return "validated";
    case ContractOutcome::Kind::DegradedRaw: return "degraded-raw";
    case ContractOutcome::Kind::DegradedDefault: return "degraded-default";
    case ContractOutcome::Kind::Failed: return "failed";
  }
  return "unknown";
}

ContractOutcome ContractOutcome::validated(Instance instance) {
  return {Kind::Validated, std::move(instance), {}};
}
ContractOutcome ContractOutcome::degraded_raw(std::string text) {
  return {Kind::DegradedRaw, std::nullopt, std::move(text)};
}
ContractOutcome ContractOutcome::degraded_default(Instance instance) {
  return {Kind::DegradedDefault, std::move(instance), {}};
}
ContractOutcome ContractOutcome::failed(std::string summary) {
  return {Kind::Failed, std::nullopt, std::move(summary)};
}

ContractFailure::ContractFailure(ExecutionResult result)
    : std::runtime_error("contract '" + result.trace.contract_id +
                         "' failed: " + result.outcome.text()),
      result_(std::make_shared<const ExecutionResult>(std::move(result))) {}

std::vector<std::string> Contract::families() const {
  std::vector<std::string> out;
  auto add = [&](const std::vector<Predicate>& predicates) {
    for (const auto& p : predicates) {
      if (std::find(out.begin(), out.end(), p.family) == out.end()) out.push_back(p.family);
    }
  };
  add(preconditions);
  add(postconditions);
  return out;
}

namespace {

void check_schema_into(const SchemaPtr& schema, const std::string& role,
                       std::vector<std::string>& errors) {
  if (!schema) {
    errors.push_back(role + " schema is missing");
    return;
  }
  for (const auto& e : check_schema(*schema)) {
    errors.push_back(role + " schema '" + schema->name + "': " + e.field + ": " + e.message);
  }
}

bool schema_listed(const std::vector<SchemaPtr>& schemas, const SchemaPtr& schema) {
  return std::any_of(schemas.begin(), schemas.end(), [&](const SchemaPtr& s) {
    return s == schema || (s && schema && *s == *schema);
  });
}

}  // namespace

std::vector<std::string> check_contract(const Contract& contract) {
  std::vector<std::string> errors;
  if (contract.id.empty()) errors.push_back("contract id is empty");
  check_schema_into(contract.input_schema, "input", errors);
  check_schema_into(contract.output_schema, "output", errors);

  std::set<std::string> names;
  auto check_predicates = [&](const std::vector<Predicate>& predicates, bool pre) {
    for (const auto& p : predicates) {
      const std::string label = "predicate '" + p.name + "'";
      if (p.name.empty()) errors.push_back("predicate name is empty");
      if (!names.insert(p.name).second) errors.push_back(label + " is declared twice");
      if (p.family.empty()) errors.push_back(label + " has an empty family");
      if (!p.evaluator) errors.push_back(label + " has no evaluator");
      if (pre && p.target != PredicateTarget::Input) {
        errors.push_back(label + ": preconditions must target the input");
      }
      if (!pre && p.target == PredicateTarget::Input) {
        errors.push_back(label + ": postconditions must target the output");
      }
    }
  };
  check_predicates(contract.preconditions, true);
  check_predicates(contract.postconditions, false);

  if (contract.act) {
    check_schema_into(contract.act->schema, "act", errors);
    if (!contract.act->transform) errors.push_back("act has no transform");
  }
  for (const auto& e : check_retry_policy(contract.pre_retry)) errors.push_back("pre_retry: " + e);
  for (const auto& e : check_retry_policy(contract.post_retry)) errors.push_back("post_retry: " + e);

  if (contract.fallback.kind == FallbackMode::Kind::GracefulDefault) {
    const auto& d = contract.fallback.default_instance;
    if (!d) {
      errors.push_back("graceful-default fallback has no default instance");
    } else if (contract.output_schema && !(d->schema() == *contract.output_schema)) {
      errors.push_back("graceful-default instance is not of the output type");
    }
  }
  return errors;
}

std::vector<std::string> check_agent(const Agent& agent) {
  std::vector<std::string> errors;
  if (agent.generators.empty()) errors.push_back("agent has no generators");
  for (const auto& g : agent.generators) {
    for (const auto& e : check_generator_config(g)) errors.push_back(e);
  }
  const auto& h = agent.hyperparameters;
  if (!(h.temperature >= 0.0)) errors.push_back("temperature must be >= 0");
  if (h.max_generator_calls < 1) errors.push_back("max_generator_calls must be >= 1");
  if (h.max_tokens < 1) errors.push_back("max_tokens must be >= 1");
  for (const auto& e : check_retry_policy(h.default_retry)) {
    errors.push_back("default retry: " + e);
  }
  for (const auto& contract : agent.contracts) {
    if (!contract) continue;
    const std::string label = "contract '" + contract->id + "'";
    for (const auto& e : check_contract(*contract)) errors.push_back(label + ": " + e);
    auto listed = [&](const SchemaPtr& s, const char* role) {
      if (s && !schema_listed(agent.schemas, s)) {
        errors.push_back(label + ": " + role + " schema '" + s->name +
                         "' is not among the agent's types");
      }
    };
    listed(contract->input_schema, "input");
    listed(contract->output_schema, "output");
    if (contract->act) listed(contract->act->schema, "act");
    for (const auto* policy : {&contract->pre_retry, &contract->post_retry}) {
      if (policy->max_attempts > h.max_generator_calls) {
        errors.push_back(label + ": max_attempts exceeds the generator call cap");
      }
    }
  }
  return errors;
}

std::vector<PredicateOutcome> evaluate_predicates(const std::vector<Predicate>& predicates,
                                                  const Instance& input,
                                                  const Instance* output) {
  std::vector<PredicateOutcome> out;
  out.reserve(predicates.size());
  for (const auto& p : predicates) {
    PredicateOutcome outcome{p.name, p.family, false, {}};
    try {
      if (!p.evaluator) {
        outcome.message = "predicate has no evaluator";
      } else {
        auto verdict = p.evaluator(input, output);
        outcome.passed = verdict.ok();
        outcome.message = verdict.message();
      }
    } catch (const std::exception& e) {
      outcome.message = e.what();
    } catch (...) {
      outcome.message = "unknown exception";
    }
    if (!outcome.passed && outcome.message.empty()) {
      outcome.message = "predicate '" + p.name + "' failed";
    }
    out.push_back(std::move(outcome));
  }
  return out;
}

namespace {

std::vector<PredicateFailure> failures_of(const std::vector<PredicateOutcome>& outcomes) {
  std::vector<PredicateFailure> out;
  for (const auto& o : outcomes) {
    if (!o.passed) out.push_back({o.name, o.family, o.message});
  }
  return out;
}

}  // namespace

std::vector<PredicateFailure> check_preconditions(const Contract& contract,
                                                  const Instance& input) {
  return failures_of(evaluate_predicates(contract.preconditions, input, nullptr));
}

std::vector<PredicateFailure> check_postconditions(const Contract& contract,
                                                   const Instance& input,
                                                   const Instance& output) {
  return failures_of(evaluate_predicates(contract.postconditions, input, &output));
}

std::variant<ActFailure, Instance> apply_act(const Contract& contract, const Instance& input) {
  if (!contract.act) return input;
  const auto& act = *contract.act;
  Json value;
  try {
    value = act.transform(input);
  } catch (const std::exception& e) {
    return ActFailure{std::string("act raised: ") + e.what()};
  }
  auto schema = act.schema ? act.schema : input.schema_ptr();
  auto created = Instance::try_create(schema, value);
  if (auto* violations = std::get_if<std::vector<Violation>>(&created)) {
    return ActFailure{"act output does not conform to type '" + schema->name +
                      "': " + summarize_violations(*violations)};
  }
  return std::get<Instance>(std::move(created));
}

ContractOutcome finalize(const Contract& contract, const FinalizeState& state,
                         const FallbackMode& mode, const Finalizer& hook,
                         ExecutionTrace& trace) {
  auto outcome = [&]() -> ContractOutcome {
    if (state.validated) return ContractOutcome::validated(*state.validated);
    switch (mode.kind) {
      case FallbackMode::Kind::GracefulRaw:
        return ContractOutcome::degraded_raw(state.last_generator_text.value_or(""));
      case FallbackMode::Kind::GracefulDefault:
        if (mode.default_instance) {
          return ContractOutcome::degraded_default(*mode.default_instance);
        }
        return ContractOutcome::failed(state.error_summary +
                                       " (graceful-default without a default instance)");
      case FallbackMode::Kind::Strict:
        break;
    }
    return ContractOutcome::failed(state.error_summary);
  }();

  if (hook) {
    try {
      hook(state.validated ? &*state.validated : nullptr, state.error_summary);
    } catch (const std::exception& e) {
      trace.finalizer_error = e.what();
    } catch (...) {
      trace.finalizer_error = "unknown exception";
    }
  }
  trace.contract_id = contract.id;
  trace.failure_summary = state.error_summary;
  trace.phases.push_back({Phase::Finalize, 1,
                          outcome.is_validated() ? PhaseResult::Pass : PhaseResult::Fail,
                          std::string(to_string(outcome.kind()))});
  trace.final = outcome;
  return outcome;
}

std::string generation_base_prompt(const Contract& contract, const Agent& agent,
                                   const Instance& context) {
  std::string out;
  for (const auto& instruction : agent.instructions) out += instruction + "\n";
  if (!contract.prompt.empty()) out += contract.prompt + "\n";
  if (!out.empty()) out += "\n";
  out += "Input (" + context.schema().name + "):\n" + serialize_instance(context);
  return out;
}

namespace {

// Holds the mutable state of one execution.
class Execution {
 public:
  Execution(const Contract& contract, const Agent& agent, Generator& generator,
            const ExecuteOptions& options)
      : contract_(contract), agent_(agent), generator_(generator) {
    sleep_ = options.sleep;
    if (!sleep_) sleep_ = [](Millis d) { std::this_thread::sleep_for(d); };
    const auto& h = agent.hyperparameters;
    request_.temperature = h.temperature;
    request_.seed = options.request_seed ? options.request_seed : h.seed;
    request_.max_tokens = h.max_tokens;
  }

  ExecutionTrace& trace() { return trace_; }
  FinalizeState& state() { return state_; }

  void run(const Json& input) {
    auto accepted = input_side(input);
    if (!accepted) return;
    trace_.accepted_input = *accepted;
    auto context = act_phase(*accepted);
    if (!context) return;
    output_side(*accepted, *context);
  }

 private:
  void log(Phase phase, int attempt, PhaseResult result, std::string detail = {}) {
    trace_.phases.push_back({phase, attempt, result, std::move(detail)});
  }

  void record(ErrorRecord r) {
    state_.error_summary = failure_line(r);
    trace_.error_history.append(std::move(r));
  }

  bool may_call() {
    if (trace_.generator_calls < agent_.hyperparameters.max_generator_calls) return true;
    trace_.cost_cap_reached = true;
    state_.error_summary = "generator call cap of " +
                           std::to_string(agent_.hyperparameters.max_generator_calls) +
                           " reached";
    return false;
  }

  void wait(const RetryPolicy& policy, int attempt) {
    auto delay = next_delay(policy, attempt);
    sleep_(delay);
    trace_.latency += delay;
  }

  FixAttempt call(const SchemaPtr& schema, const std::string& prompt) {
    auto result = attempt_generation(schema, prompt, generator_, request_);
    ++trace_.generator_calls;
    if (result.response) {
      trace_.tokens_in += result.response->tokens_in;
      trace_.tokens_out += result.response->tokens_out;
      trace_.latency += result.response->latency;
    }
    return result;
  }

  static ErrorRecord predicate_record(const std::vector<PredicateFailure>& failures,
                                      ErrorSource source) {
    std::vector<std::string> names, messages;
    for (const auto& f : failures) {
      names.push_back(f.name);
      messages.push_back(f.message);
    }
    ErrorRecord r;
    r.source = source;
    r.predicate_or_path = detail::join(names, ",");
    r.message = detail::join(messages, "; ");
    return r;
  }

  // Type-in and precondition checks for one candidate input. Returns the
  // well-typed instance when every precondition passes.
  std::optional<Instance> check_input(const Json& value, int attempt) {
    auto created = Instance::try_create(contract_.input_schema, value);
    if (auto* violations = std::get_if<std::vector<Violation>>(&created)) {
      log(Phase::TypeIn, attempt, PhaseResult::Fail, summarize_violations(*violations));
      ErrorRecord r;
      r.attempt = attempt;
      r.phase = Phase::TypeIn;
      r.source = ErrorSource::TypeValidation;
      r.predicate_or_path = violation_paths(*violations);
      r.message = summarize_violations(*violations);
      record(std::move(r));
      candidate_ = value;
      return std::nullopt;
    }
    auto instance = std::get<Instance>(std::move(created));
    log(Phase::TypeIn, attempt, PhaseResult::Pass);
    trace_.last_preconditions = evaluate_predicates(contract_.preconditions, instance, nullptr);
    auto failures = failures_of(trace_.last_preconditions);
    if (!failures.empty()) {
      auto r = predicate_record(failures, ErrorSource::Precondition);
      log(Phase::Pre, attempt, PhaseResult::Fail, r.message);
      r.attempt = attempt;
      r.phase = Phase::Pre;
      record(std::move(r));
      candidate_ = instance.value();
      return std::nullopt;
    }
    log(Phase::Pre, attempt, PhaseResult::Pass);
    return instance;
  }

  std::optional<Instance> input_side(const Json& input) {
    auto accepted = check_input(input, 1);
    const auto& policy = contract_.pre_retry;
    const auto schema_prompt = render_schema_prompt(*contract_.input_schema);
    for (int attempt = 2; !accepted && policy.remediation_enabled &&
                          attempt <= policy.max_attempts;
         ++attempt) {
      if (!may_call()) break;
      wait(policy, attempt);
      std::string base;
      for (const auto& instruction : agent_.instructions) base += instruction + "\n";
      if (!contract_.prompt.empty()) base += contract_.prompt + "\n";
      if (!base.empty()) base += "\n";
      base += "The input below was rejected and must be corrected.\nInput:\n" +
              candidate_.dump();
      auto prompt = build_corrective_prompt(base, schema_prompt,
                                            trace_.error_history.side(true));
      auto result = call(contract_.input_schema, prompt);
      if (auto* failure = std::get_if<FixAttemptFailure>(&result.result)) {
        auto& r = failure->record;
        r.attempt = attempt;
        r.raw_excerpt.clear();
        if (r.source == ErrorSource::Transport) {
          trace_.transport_error = true;
          log(Phase::FixIn, attempt, PhaseResult::Error, r.message);
          r.phase = Phase::FixIn;
        } else {
          log(Phase::FixIn, attempt, PhaseResult::Pass);
          log(Phase::TypeIn, attempt, PhaseResult::Fail, r.message);
          r.phase = Phase::TypeIn;
        }
        record(std::move(r));
        continue;
      }
      log(Phase::FixIn, attempt, PhaseResult::Pass);
      accepted = check_input(std::get<Instance>(result.result).value(), attempt);
    }
    return accepted;
  }

  std::optional<Instance> act_phase(const Instance& input) {
    if (!contract_.act) {
      log(Phase::Act, 1, PhaseResult::Pass, "absent");
      return input;
    }
    auto result = apply_act(contract_, input);
    if (auto* failure = std::get_if<ActFailure>(&result)) {
      log(Phase::Act, 1, PhaseResult::Fail, failure->message);
      int attempt = 1;
      const auto input_records = trace_.error_history.side(true);
      for (const auto& r : input_records.records()) {
        attempt = std::max(attempt, r.attempt + 1);
      }
      ErrorRecord r;
      r.attempt = attempt;
      r.phase = Phase::Act;
      r.source = ErrorSource::Act;
      r.predicate_or_path = "act";
      r.message = failure->message;
      record(std::move(r));
      return std::nullopt;
    }
    log(Phase::Act, 1, PhaseResult::Pass);
    return std::get<Instance>(std::move(result));
  }

  void output_side(const Instance& input, const Instance& context) {
    const auto& policy = contract_.post_retry;
    const int max_attempts = policy.remediation_enabled ? policy.max_attempts : 1;
    const auto base = generation_base_prompt(contract_, agent_, context);
    const auto schema_prompt = render_schema_prompt(*contract_.output_schema);

    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
      if (!may_call()) return;
      const Phase call_phase = attempt == 1 ? Phase::Generate : Phase::FixOut;
      std::string prompt;
      if (attempt == 1) {
        prompt = base + "\n\n" + schema_prompt;
      } else {
        wait(policy, attempt);
        prompt = build_corrective_prompt(base, schema_prompt, trace_.error_history.side(false));
      }
      trace_.last_postconditions.clear();
      trace_.output_well_typed = false;
      auto result = call(contract_.output_schema, prompt);
      if (result.response) {
        state_.last_generator_text = result.response->text;
      } else if (!state_.last_generator_text) {
        state_.last_generator_text = std::string();
      }

      if (auto* failure = std::get_if<FixAttemptFailure>(&result.result)) {
        auto& r = failure->record;
        r.attempt = attempt;
        if (r.source == ErrorSource::Transport) {
          trace_.transport_error = true;
          log(call_phase, attempt, PhaseResult::Error, r.message);
          r.phase = call_phase;
        } else {
          log(call_phase, attempt, PhaseResult::Pass);
          log(Phase::TypeOut, attempt, PhaseResult::Fail, r.message);
          r.phase = Phase::TypeOut;
        }
        record(std::move(r));
        continue;
      }
      log(call_phase, attempt, PhaseResult::Pass);
      log(Phase::TypeOut, attempt, PhaseResult::Pass);
      auto output = std::get<Instance>(std::move(result.result));
      trace_.output_well_typed = true;
      trace_.last_postconditions = evaluate_predicates(contract_.postconditions, input, &output);
      auto failures = failures_of(trace_.last_postconditions);
      if (!failures.empty()) {
        auto r = predicate_record(failures, ErrorSource::Postcondition);
        log(Phase::Post, attempt, PhaseResult::Fail, r.message);
        r.attempt = attempt;
        r.phase = Phase::Post;
        r.raw_excerpt = utf8_prefix(*state_.last_generator_text, kRawExcerptChars);
        record(std::move(r));
        continue;
      }
      log(Phase::Post, attempt, PhaseResult::Pass);
      state_.validated = std::move(output);
      state_.error_summary.clear();
      return;
    }
  }

  const Contract& contract_;
  const Agent& agent_;
  Generator& generator_;
  std::function<void(Millis)> sleep_;
  GeneratorRequest request_;
  ExecutionTrace trace_;
  FinalizeState state_;
  Json candidate_;
};

}  // namespace

ExecutionResult execute_nothrow(const Contract& contract, const Agent& agent,
                                Generator& generator, const Json& input,
                                const ExecuteOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  Execution execution(contract, agent, generator, options);
  try {
    execution.run(input);
  } catch (const std::exception& e) {
    execution.state().validated.reset();
    execution.state().error_summary = std::string("internal error: ") + e.what();
  } catch (...) {
    execution.state().validated.reset();
    execution.state().error_summary = "internal error: unknown exception";
  }
  auto& trace = execution.trace();
  auto outcome = finalize(contract, execution.state(), contract.fallback,
                          options.finalizer, trace);
  trace.wall_time = std::chrono::steady_clock::now() - started;
  return ExecutionResult{std::move(outcome), std::move(trace)};
}

ExecutionResult execute(const Contract& contract, const Agent& agent,
                        Generator& generator, const Json& input,
                        const ExecuteOptions& options) {
  auto result = execute_nothrow(contract, agent, generator, input, options);
  if (result.outcome.kind() == ContractOutcome::Kind::Failed) {
    throw ContractFailure(std::move(result));
  }
  return result;
}

std::string trace_to_jsonl(const ExecutionTrace& trace, const Json& tag) {
  std::ostringstream out;
  auto line = [&](Json fields) {
    Json doc = tag.is_object() ? tag : Json::object();
    for (auto& [key, value] : fields.items()) doc[key] = std::move(value);
    out << doc.dump() << "\n";
  };
  for (const auto& entry : trace.phases) {
    Json fields = Json::object();
    fields["phase"] = std::string(to_string(entry.phase));
    fields["attempt"] = entry.attempt;
    fields["outcome"] = std::string(to_string(entry.result));
    if (!entry.detail.empty()) fields["detail"] = entry.detail;
    line(std::move(fields));
  }
  Json summary = Json::object();
  summary["record"] = "summary";
  summary["contract"] = trace.contract_id;
  summary["outcome"] = trace.final ? std::string(to_string(trace.final->kind())) : "none";
  summary["generator_calls"] = trace.generator_calls;
  summary["latency_ms"] = trace.latency.count();
  summary["tokens_in"] = trace.tokens_in;
  summary["tokens_out"] = trace.tokens_out;
  summary["errors"] = trace.error_history.size();
  summary["repeated_messages"] = trace.error_history.repeated_messages();
  if (trace.finalizer_error) summary["finalizer_error"] = *trace.finalizer_error;
  if (!trace.failure_summary.empty()) summary["failure"] = trace.failure_summary;
  line(std::move(summary));
  return out.str();
}

}  // namespace dbc
