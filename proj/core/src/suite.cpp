#include "dbc/suite.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "text_util.hpp"

namespace dbc {

namespace {

[[noreturn]] void fail(const std::string& message) { throw SuiteError(message); }

std::string ticked(const std::string& s) { return "'" + s + "'"; }

template <typename T>
T get_or(const Json& doc, const char* key, T fallback, const std::string& context) {
  if (!doc.contains(key)) return fallback;
  try {
    return doc[key].get<T>();
  } catch (const Json::exception&) {
    fail(context + ": member '" + key + "' has the wrong type");
  }
}

template <typename T>
std::optional<T> get_opt(const Json& doc, const char* key, const std::string& context) {
  if (!doc.contains(key) || doc[key].is_null()) return std::nullopt;
  try {
    return doc[key].get<T>();
  } catch (const Json::exception&) {
    fail(context + ": member '" + key + "' has the wrong type");
  }
}

const Json& require(const Json& doc, const char* key, const std::string& context) {
  if (!doc.contains(key)) fail(context + ": missing '" + key + "'");
  return doc[key];
}

std::string require_string(const Json& doc, const char* key, const std::string& context) {
  const auto& v = require(doc, key, context);
  if (!v.is_string()) fail(context + ": member '" + key + "' must be a string");
  return v.get<std::string>();
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string current;
  for (char c : path) {
    if (c == '.') {
      parts.push_back(current);
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  parts.push_back(current);
  return parts;
}

const FieldSpec* resolve_field(const TypeSchema& schema, const std::vector<std::string>& parts,
                               std::size_t from) {
  const TypeSchema* current = &schema;
  const FieldSpec* field = nullptr;
  for (std::size_t i = from; i < parts.size(); ++i) {
    if (!current) return nullptr;
    field = current->find_field(parts[i]);
    if (!field) return nullptr;
    current = field->base == BaseType::Nested ? field->nested.get() : nullptr;
  }
  return field;
}

const Json* lookup(const Json& root, const std::vector<std::string>& parts, std::size_t from) {
  const Json* node = &root;
  for (std::size_t i = from; i < parts.size(); ++i) {
    if (!node->is_object()) return nullptr;
    auto it = node->find(parts[i]);
    if (it == node->end() || it->is_null()) return nullptr;
    node = &*it;
  }
  return node;
}

bool is_numeric(BaseType b) { return b == BaseType::Integer || b == BaseType::Real; }
bool is_textual(BaseType b) { return b == BaseType::String || b == BaseType::Enum; }

struct FieldRef {
  bool output = false;
  std::vector<std::string> parts;
  const FieldSpec* spec = nullptr;
};

FieldRef resolve_ref(const std::string& path, const TypeSchema& input, const TypeSchema* output,
                     const std::string& context) {
  FieldRef ref;
  ref.parts = split_path(path);
  if (ref.parts.size() < 2 || (ref.parts[0] != "input" && ref.parts[0] != "output")) {
    fail(context + ": field path " + ticked(path) + " must start with 'input.' or 'output.'");
  }
  ref.output = ref.parts[0] == "output";
  if (ref.output && !output) {
    fail(context + ": " + ticked(path) + " refers to the output in a precondition");
  }
  ref.spec = resolve_field(ref.output ? *output : input, ref.parts, 1);
  if (!ref.spec) {
    fail(context + ": unknown field " + ticked(path) + " in schema " +
         ticked(ref.output ? output->name : input.name));
  }
  return ref;
}

const Json* read(const FieldRef& ref, const Instance& input, const Instance* output) {
  return lookup(ref.output ? output->value() : input.value(), ref.parts, 1);
}

bool value_fits(const FieldSpec& field, const Json& value) {
  auto probe = std::make_shared<TypeSchema>();
  probe->name = "Probe";
  FieldSpec copy = field;
  copy.name = "value";
  copy.optional = false;
  probe->fields.push_back(std::move(copy));
  return validate_instance(*probe, Json{{"value", value}}).empty();
}

std::string value_text(const Json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number()) return detail::format_number(v.get<double>());
  return v.dump();
}

std::optional<int> compare_values(const Json& a, const Json& b) {
  if (a.is_number() && b.is_number()) {
    const double x = a.get<double>(), y = b.get<double>();
    return x < y ? -1 : (x > y ? 1 : 0);
  }
  if (a.is_string() && b.is_string()) {
    const int c = a.get<std::string>().compare(b.get<std::string>());
    return c < 0 ? -1 : (c > 0 ? 1 : 0);
  }
  if (a.is_boolean() && b.is_boolean()) return a == b ? 0 : 1;
  return std::nullopt;
}

bool holds(Comparison op, int c) {
  switch (op) {
    case Comparison::Less: return c < 0;
    case Comparison::LessEqual: return c <= 0;
    case Comparison::Equal: return c == 0;
    case Comparison::NotEqual: return c != 0;
    case Comparison::GreaterEqual: return c >= 0;
    case Comparison::Greater: return c > 0;
  }
  return false;
}

void check_bounds(const PredicateSpec& spec, bool integral, const std::string& context) {
  if (!spec.min && !spec.max) fail(context + ": needs 'min' or 'max'");
  if (spec.min && spec.max && *spec.min > *spec.max) fail(context + ": min exceeds max");
  if (integral) {
    for (const auto& bound : {spec.min, spec.max}) {
      if (bound && (*bound < 0 || std::floor(*bound) != *bound)) {
        fail(context + ": length bounds must be non-negative integers");
      }
    }
  }
}

std::string bounds_text(const PredicateSpec& spec, const std::string& subject) {
  std::string out;
  if (spec.min) out += detail::format_number(*spec.min) + " <= ";
  out += subject;
  if (spec.max) out += " <= " + detail::format_number(*spec.max);
  return out;
}

std::string context_of(const std::string& contract, const PredicateSpec& spec) {
  return "contract " + ticked(contract) + ": predicate " + ticked(spec.name);
}

/// Type-checks `spec` and returns the roots it reads.
PredicateTarget check_predicate(const PredicateSpec& spec, const TypeSchema& input,
                                const TypeSchema* output, const std::string& context) {
  if (spec.name.empty()) fail(context + ": predicate without a name");
  const auto ref = resolve_ref(spec.field, input, output, context);
  const auto base = ref.spec->base;
  bool reads_input = !ref.output;
  bool reads_output = ref.output;
  switch (spec.kind) {
    case PredicateKind::RegexMatch:
      if (!is_textual(base)) fail(context + ": regex-match needs a string or enum field");
      try {
        std::regex probe(spec.pattern, std::regex::ECMAScript);
      } catch (const std::regex_error&) {
        fail(context + ": invalid pattern " + ticked(spec.pattern));
      }
      break;
    case PredicateKind::FieldEquals:
      if (!value_fits(*ref.spec, spec.value)) {
        fail(context + ": value " + spec.value.dump() + " does not fit field " +
             ticked(spec.field));
      }
      break;
    case PredicateKind::LengthBound:
      if (base != BaseType::String && base != BaseType::List) {
        fail(context + ": length-bound needs a string or list field");
      }
      check_bounds(spec, true, context);
      break;
    case PredicateKind::NumericRange:
      if (!is_numeric(base)) fail(context + ": numeric-range needs an integer or real field");
      check_bounds(spec, false, context);
      break;
    case PredicateKind::CrossFieldComparison: {
      const auto other = resolve_ref(spec.other, input, output, context);
      reads_input = reads_input || !other.output;
      reads_output = reads_output || other.output;
      const auto ob = other.spec->base;
      const bool ordered = spec.op != Comparison::Equal && spec.op != Comparison::NotEqual;
      const bool ok = (is_numeric(base) && is_numeric(ob)) ||
                      (is_textual(base) && is_textual(ob)) ||
                      (!ordered && base == BaseType::Boolean && ob == BaseType::Boolean);
      if (!ok) {
        fail(context + ": fields " + ticked(spec.field) + " and " + ticked(spec.other) +
             " are not comparable with " + std::string(to_string(spec.op)));
      }
      break;
    }
    case PredicateKind::OutputReferencesInputField: {
      if (!ref.output || base != BaseType::String) {
        fail(context + ": 'field' must be an output string field");
      }
      const auto other = resolve_ref(spec.other, input, output, context);
      if (other.output) fail(context + ": 'other' must be an input field");
      const auto ob = other.spec->base;
      if (!is_textual(ob) && !is_numeric(ob)) {
        fail(context + ": input field " + ticked(spec.other) + " must be a scalar");
      }
      reads_input = true;
      break;
    }
  }
  if (reads_input && reads_output) return PredicateTarget::InputOutput;
  return reads_output ? PredicateTarget::Output : PredicateTarget::Input;
}

PredicateSpec predicate_from_json(const Json& doc, const std::string& contract) {
  const std::string ctx = "contract " + ticked(contract);
  if (!doc.is_object()) fail(ctx + ": predicate must be an object");
  PredicateSpec spec;
  spec.name = get_or<std::string>(doc, "name", "", ctx);
  const std::string pctx = ctx + ": predicate " + ticked(spec.name);
  spec.family = get_or<std::string>(doc, "family", spec.name, pctx);
  const auto kind_text = get_or<std::string>(doc, "kind", "", pctx);
  const auto kind = predicate_kind_from_string(kind_text);
  if (!kind) fail(pctx + ": unknown predicate kind " + ticked(kind_text));
  spec.kind = *kind;
  spec.field = require_string(doc, "field", pctx);
  switch (spec.kind) {
    case PredicateKind::RegexMatch:
      spec.pattern = require_string(doc, "pattern", pctx);
      break;
    case PredicateKind::FieldEquals:
      spec.value = require(doc, "value", pctx);
      break;
    case PredicateKind::LengthBound:
    case PredicateKind::NumericRange:
      spec.min = get_opt<double>(doc, "min", pctx);
      spec.max = get_opt<double>(doc, "max", pctx);
      break;
    case PredicateKind::CrossFieldComparison: {
      const auto op_text = get_or<std::string>(doc, "op", "", pctx);
      const auto op = comparison_from_string(op_text);
      if (!op) fail(pctx + ": unknown comparison " + ticked(op_text));
      spec.op = *op;
      spec.other = require_string(doc, "other", pctx);
      break;
    }
    case PredicateKind::OutputReferencesInputField:
      spec.other = require_string(doc, "other", pctx);
      break;
  }
  return spec;
}

Json predicate_to_json(const PredicateSpec& spec) {
  Json doc = Json::object();
  doc["name"] = spec.name;
  doc["family"] = spec.family;
  doc["kind"] = std::string(to_string(spec.kind));
  doc["field"] = spec.field;
  switch (spec.kind) {
    case PredicateKind::RegexMatch: doc["pattern"] = spec.pattern; break;
    case PredicateKind::FieldEquals: doc["value"] = spec.value; break;
    case PredicateKind::LengthBound:
    case PredicateKind::NumericRange:
      if (spec.min) doc["min"] = *spec.min;
      if (spec.max) doc["max"] = *spec.max;
      break;
    case PredicateKind::CrossFieldComparison:
      doc["op"] = std::string(to_string(spec.op));
      doc["other"] = spec.other;
      break;
    case PredicateKind::OutputReferencesInputField: doc["other"] = spec.other; break;
  }
  return doc;
}

std::optional<ActOpKind> act_op_from_string(std::string_view text) {
  if (text == "lowercase") return ActOpKind::Lowercase;
  if (text == "uppercase") return ActOpKind::Uppercase;
  if (text == "trim") return ActOpKind::Trim;
  if (text == "set") return ActOpKind::Set;
  return std::nullopt;
}

std::optional<FallbackMode::Kind> fallback_from_string(std::string_view text) {
  if (text == "strict") return FallbackMode::Kind::Strict;
  if (text == "graceful-raw") return FallbackMode::Kind::GracefulRaw;
  if (text == "graceful-default") return FallbackMode::Kind::GracefulDefault;
  return std::nullopt;
}

std::string apply_string_op(ActOpKind kind, std::string text) {
  switch (kind) {
    case ActOpKind::Lowercase:
      for (auto& c : text) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      }
      break;
    case ActOpKind::Uppercase:
      for (auto& c : text) {
        if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
      }
      break;
    case ActOpKind::Trim: {
      const char* ws = " \t\r\n\f\v";
      const auto first = text.find_first_not_of(ws);
      if (first == std::string::npos) return {};
      text = text.substr(first, text.find_last_not_of(ws) - first + 1);
      break;
    }
    case ActOpKind::Set: break;
  }
  return text;
}

Json apply_act_ops(const std::vector<ActOp>& ops, Json value) {
  for (const auto& op : ops) {
    const auto parts = split_path(op.field);
    Json* node = &value;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      if (!node->is_object()) break;
      if (op.kind == ActOpKind::Set && (!node->contains(parts[i]) || (*node)[parts[i]].is_null())) {
        (*node)[parts[i]] = Json::object();
      }
      auto it = node->find(parts[i]);
      if (it == node->end()) {
        node = nullptr;
        break;
      }
      node = &*it;
    }
    if (!node || !node->is_object()) continue;
    if (op.kind == ActOpKind::Set) {
      (*node)[parts.back()] = op.value;
      continue;
    }
    auto it = node->find(parts.back());
    if (it != node->end() && it->is_string()) {
      *it = apply_string_op(op.kind, it->get<std::string>());
    }
  }
  return value;
}

std::filesystem::path resolve_path(const std::filesystem::path& p,
                                   const std::filesystem::path& base_dir) {
  if (p.is_relative() && !base_dir.empty()) return (base_dir / p).lexically_normal();
  return p;
}

class SchemaTable {
 public:
  explicit SchemaTable(const Json& docs) {
    if (!docs.is_array()) fail("'schemas' must be a list");
    for (const auto& doc : docs) {
      if (!doc.is_object() || !doc.contains("name") || !doc["name"].is_string()) {
        fail("every schema needs a string 'name'");
      }
      const auto name = doc["name"].get<std::string>();
      if (docs_.count(name)) fail("schema " + ticked(name) + " is defined twice");
      docs_.emplace(name, doc);
      order_.push_back(name);
    }
  }

  std::vector<SchemaPtr> build_all() {
    std::vector<SchemaPtr> out;
    for (const auto& name : order_) out.push_back(build(name));
    return out;
  }

 private:
  SchemaPtr build(const std::string& name) {
    if (auto it = built_.find(name); it != built_.end()) return it->second;
    auto doc = docs_.find(name);
    if (doc == docs_.end()) fail("unknown schema " + ticked(name));
    if (!in_progress_.insert(name).second) fail("schema " + ticked(name) + " references itself");
    SchemaPtr schema;
    try {
      schema = schema_from_json(doc->second, [this](const std::string& n) { return build(n); });
    } catch (const std::invalid_argument& e) {
      fail("schema " + ticked(name) + ": " + e.what());
    }
    in_progress_.erase(name);
    for (const auto& error : check_schema(*schema)) {
      fail("schema " + ticked(name) + ": field " + ticked(error.field) + ": " + error.message);
    }
    built_.emplace(name, schema);
    return schema;
  }

  std::map<std::string, Json> docs_;
  std::vector<std::string> order_;
  std::map<std::string, SchemaPtr> built_;
  std::set<std::string> in_progress_;
};

SchemaPtr schema_ref(const SuiteSpec& suite, const std::string& name, const std::string& context) {
  auto schema = suite.find_schema(name);
  if (!schema) fail(context + ": unknown schema " + ticked(name));
  return schema;
}

void check_contract_spec(const SuiteSpec& suite, const ContractSpec& spec) {
  const std::string ctx = "contract " + ticked(spec.id);
  const auto input = schema_ref(suite, spec.input, ctx);
  const auto output = schema_ref(suite, spec.output, ctx);

  std::set<std::string> names;
  for (const auto& p : spec.preconditions) {
    if (!names.insert(p.name).second) fail(context_of(spec.id, p) + ": duplicate name");
    check_predicate(p, *input, nullptr, context_of(spec.id, p));
  }
  for (const auto& p : spec.postconditions) {
    if (!names.insert(p.name).second) fail(context_of(spec.id, p) + ": duplicate name");
    if (check_predicate(p, *input, output.get(), context_of(spec.id, p)) ==
        PredicateTarget::Input) {
      fail(context_of(spec.id, p) + ": a postcondition must read the output");
    }
  }

  if (spec.act) {
    const auto target = spec.act->schema ? schema_ref(suite, *spec.act->schema, ctx + ": act") : input;
    for (const auto& op : spec.act->ops) {
      const std::string octx = ctx + ": act op " + ticked(std::string(to_string(op.kind))) +
                               " on " + ticked(op.field);
      const auto parts = split_path(op.field);
      if (op.kind == ActOpKind::Set) {
        const auto* field = resolve_field(*target, parts, 0);
        if (!field) fail(octx + ": unknown field in schema " + ticked(target->name));
        if (!value_fits(*field, op.value)) fail(octx + ": value " + op.value.dump() + " does not fit");
      } else {
        const auto* field = resolve_field(*input, parts, 0);
        if (!field) fail(octx + ": unknown field in schema " + ticked(input->name));
        if (field->base != BaseType::String) fail(octx + ": needs a string field");
      }
    }
  }

  for (const auto* policy : {&spec.pre_retry, &spec.post_retry}) {
    if (!*policy) continue;
    for (const auto& error : check_retry_policy(**policy)) fail(ctx + ": retry policy: " + error);
  }

  if (spec.fallback.kind == FallbackMode::Kind::GracefulDefault) {
    if (!spec.fallback.default_value) fail(ctx + ": graceful-default fallback needs 'default'");
    if (!validate_instance(*output, *spec.fallback.default_value).empty()) {
      fail(ctx + ": fallback default does not conform to " + ticked(output->name));
    }
  }
  if (spec.threshold && !(*spec.threshold >= 0.0 && *spec.threshold <= 1.0)) {
    fail(ctx + ": threshold must lie in [0, 1]");
  }
  if (spec.generator && !suite.find_generator(*spec.generator)) {
    fail(ctx + ": unknown generator " + ticked(*spec.generator));
  }
  if (spec.inputs.empty()) fail(ctx + ": no inputs");
}

}  // namespace

std::string_view to_string(PredicateKind kind) {
  switch (kind) {
    case PredicateKind::RegexMatch: return "regex-match";
    case PredicateKind::FieldEquals: return "field-equals";
    case PredicateKind::LengthBound: return "length-bound";
    case PredicateKind::NumericRange: return "numeric-range";
    case PredicateKind::CrossFieldComparison: return "cross-field-comparison";
    case PredicateKind::OutputReferencesInputField: return "output-references-input-field";
  }
  return "unknown";
}

std::optional<PredicateKind> predicate_kind_from_string(std::string_view text) {
  for (auto kind : {PredicateKind::RegexMatch, PredicateKind::FieldEquals,
                    PredicateKind::LengthBound, PredicateKind::NumericRange,
                    PredicateKind::CrossFieldComparison,
                    PredicateKind::OutputReferencesInputField}) {
    if (to_string(kind) == text) return kind;
  }
  return std::nullopt;
}

std::string_view to_string(Comparison op) {
  switch (op) {
    case Comparison::Less: return "<";
    case Comparison::LessEqual: return "<=";
    case Comparison::Equal: return "==";
    case Comparison::NotEqual: return "!=";
    case Comparison::GreaterEqual: return ">=";
    case Comparison::Greater: return ">";
  }
  return "?";
}

std::optional<Comparison> comparison_from_string(std::string_view text) {
  for (auto op : {Comparison::Less, Comparison::LessEqual, Comparison::Equal,
                  Comparison::NotEqual, Comparison::GreaterEqual, Comparison::Greater}) {
    if (to_string(op) == text) return op;
  }
  return std::nullopt;
}

std::string_view to_string(ActOpKind kind) {
  switch (kind) {
    case ActOpKind::Lowercase: return "lowercase";
    case ActOpKind::Uppercase: return "uppercase";
    case ActOpKind::Trim: return "trim";
    case ActOpKind::Set: return "set";
  }
  return "unknown";
}

SchemaPtr SuiteSpec::find_schema(const std::string& name) const {
  for (const auto& s : schemas) {
    if (s->name == name) return s;
  }
  return nullptr;
}

const GeneratorConfig* SuiteSpec::find_generator(const std::string& name) const {
  for (const auto& g : generators) {
    if (g.name == name) return &g;
  }
  return nullptr;
}

const ContractSpec* SuiteSpec::find_contract(const std::string& id) const {
  for (const auto& c : contracts) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

bool operator==(const SuiteSpec& a, const SuiteSpec& b) {
  if (a.schemas.size() != b.schemas.size()) return false;
  for (std::size_t i = 0; i < a.schemas.size(); ++i) {
    if (!(*a.schemas[i] == *b.schemas[i])) return false;
  }
  return a.generators == b.generators && a.agent == b.agent && a.contracts == b.contracts &&
         a.run == b.run && a.output == b.output;
}

SuiteSpec suite_from_json(const Json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) fail("suite must be a JSON object");
  SuiteSpec suite;

  suite.schemas = SchemaTable(require(doc, "schemas", "suite")).build_all();

  const auto& gens = require(doc, "generators", "suite");
  if (!gens.is_array() || gens.empty()) fail("suite: 'generators' must be a non-empty list");
  for (const auto& g : gens) {
    GeneratorConfig config;
    try {
      config = generator_config_from_json(g, base_dir);
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
    if (config.name.empty()) fail("every generator needs a 'name'");
    if (suite.find_generator(config.name)) {
      fail("generator " + ticked(config.name) + " is defined twice");
    }
    for (const auto& error : check_generator_config(config)) {
      fail("generator " + ticked(config.name) + ": " + error);
    }
    suite.generators.push_back(std::move(config));
  }

  const Json agent_doc = doc.contains("agent") ? doc["agent"] : Json::object();
  if (!agent_doc.is_object()) fail("suite: 'agent' must be an object");
  auto& agent = suite.agent;
  const std::string actx = "agent";
  agent.id = get_or<std::string>(agent_doc, "id", "agent", actx);
  if (agent_doc.contains("instructions")) {
    const auto& ins = agent_doc["instructions"];
    if (ins.is_string()) {
      agent.instructions.push_back(ins.get<std::string>());
    } else {
      agent.instructions = get_or<std::vector<std::string>>(agent_doc, "instructions", {}, actx);
    }
  }
  agent.temperature = get_or<double>(agent_doc, "temperature", 0.0, actx);
  agent.seed = get_opt<std::int64_t>(agent_doc, "seed", actx);
  agent.max_generator_calls = get_or<int>(agent_doc, "max_generator_calls", 16, actx);
  agent.max_tokens = get_or<int>(agent_doc, "max_tokens", 1024, actx);
  if (agent_doc.contains("retry")) {
    try {
      agent.retry = retry_policy_from_json(agent_doc["retry"]);
    } catch (const std::invalid_argument& e) {
      fail(std::string("agent: ") + e.what());
    }
  }
  for (const auto& error : check_retry_policy(agent.retry)) fail("agent: retry policy: " + error);
  if (agent.max_generator_calls < 1) fail("agent: max_generator_calls must be >= 1");
  agent.generator = get_or<std::string>(agent_doc, "generator", suite.generators.front().name, actx);
  if (!suite.find_generator(agent.generator)) {
    fail("agent: unknown generator " + ticked(agent.generator));
  }

  const auto& contracts = require(doc, "contracts", "suite");
  if (!contracts.is_array() || contracts.empty()) fail("suite: 'contracts' must be a non-empty list");
  for (const auto& c : contracts) {
    if (!c.is_object()) fail("suite: every contract must be an object");
    ContractSpec spec;
    spec.id = get_or<std::string>(c, "id", "", "contract");
    if (spec.id.empty()) fail("every contract needs an 'id'");
    if (suite.find_contract(spec.id)) fail("contract " + ticked(spec.id) + " is defined twice");
    const std::string ctx = "contract " + ticked(spec.id);
    spec.input = get_or<std::string>(c, "input", "", ctx);
    spec.output = get_or<std::string>(c, "output", "", ctx);
    spec.prompt = get_or<std::string>(c, "prompt", "", ctx);
    for (const char* key : {"preconditions", "postconditions"}) {
      if (!c.contains(key)) continue;
      if (!c[key].is_array()) fail(ctx + ": '" + key + "' must be a list");
      auto& target = std::string_view(key) == "preconditions" ? spec.preconditions : spec.postconditions;
      for (const auto& p : c[key]) target.push_back(predicate_from_json(p, spec.id));
    }
    if (c.contains("act") && !c["act"].is_null()) {
      const auto& a = c["act"];
      if (!a.is_object()) fail(ctx + ": 'act' must be an object");
      ActSpec act;
      act.schema = get_opt<std::string>(a, "schema", ctx + ": act");
      if (a.contains("ops")) {
        if (!a["ops"].is_array()) fail(ctx + ": act 'ops' must be a list");
        for (const auto& o : a["ops"]) {
          if (!o.is_object()) fail(ctx + ": act op must be an object");
          const auto name = get_or<std::string>(o, "op", "", ctx + ": act");
          const auto kind = act_op_from_string(name);
          if (!kind) fail(ctx + ": unknown act op " + ticked(name));
          ActOp op;
          op.kind = *kind;
          op.field = get_or<std::string>(o, "field", "", ctx + ": act");
          if (op.kind == ActOpKind::Set) op.value = require(o, "value", ctx + ": act op 'set'");
          act.ops.push_back(std::move(op));
        }
      }
      spec.act = std::move(act);
    }
    for (const char* key : {"pre_retry", "post_retry"}) {
      if (!c.contains(key)) continue;
      try {
        auto policy = retry_policy_from_json(c[key], agent.retry);
        (std::string_view(key) == "pre_retry" ? spec.pre_retry : spec.post_retry) = policy;
      } catch (const std::invalid_argument& e) {
        fail(ctx + ": " + e.what());
      }
    }
    if (c.contains("fallback")) {
      const auto& f = c["fallback"];
      std::string mode = f.is_string() ? f.get<std::string>()
                                       : get_or<std::string>(f, "mode", "strict", ctx + ": fallback");
      const auto kind = fallback_from_string(mode);
      if (!kind) fail(ctx + ": unknown fallback mode " + ticked(mode));
      spec.fallback.kind = *kind;
      if (f.is_object() && f.contains("default")) spec.fallback.default_value = f["default"];
    }
    spec.threshold = get_opt<double>(c, "threshold", ctx);
    spec.generator = get_opt<std::string>(c, "generator", ctx);
    if (c.contains("inputs")) {
      if (!c["inputs"].is_array()) fail(ctx + ": 'inputs' must be a list");
      for (const auto& in : c["inputs"]) spec.inputs.push_back(in);
    }
    suite.contracts.push_back(std::move(spec));
  }

  const Json run = doc.contains("run") ? doc["run"] : Json::object();
  if (!run.is_object()) fail("suite: 'run' must be an object");
  suite.run.runs = get_or<std::size_t>(run, "runs", 100, "run");
  suite.run.seed = get_or<std::uint64_t>(run, "seed", 0, "run");
  suite.run.threshold = get_or<double>(run, "threshold", RunSpec::kDefaultSuiteThreshold, "run");
  suite.run.threads = get_or<unsigned>(run, "threads", 0, "run");
  if (suite.run.runs < 1) fail("run: 'runs' must be >= 1");
  if (!(suite.run.threshold >= 0.0 && suite.run.threshold <= 1.0)) {
    fail("run: threshold must lie in [0, 1]");
  }

  const Json out = doc.contains("output") ? doc["output"] : Json::object();
  if (!out.is_object()) fail("suite: 'output' must be an object");
  if (auto p = get_opt<std::string>(out, "report", "output")) {
    suite.output.report = resolve_path(*p, base_dir);
  }
  if (auto p = get_opt<std::string>(out, "trace", "output")) {
    suite.output.trace = resolve_path(*p, base_dir);
  }

  for (const auto& spec : suite.contracts) check_contract_spec(suite, spec);
  const auto built = build_agent(suite);
  for (const auto& error : check_agent(built)) fail("agent " + ticked(agent.id) + ": " + error);
  return suite;
}

SuiteSpec load_suite(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open suite file " + ticked(path.string()));
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    fail("suite file " + ticked(path.string()) + " is not valid JSON: " + e.what());
  }
  return suite_from_json(doc, std::filesystem::absolute(path).parent_path());
}

Json suite_to_json(const SuiteSpec& suite) {
  Json doc = Json::object();
  Json schemas = Json::array();
  for (const auto& s : suite.schemas) schemas.push_back(schema_to_json(*s));
  doc["schemas"] = std::move(schemas);

  Json gens = Json::array();
  for (const auto& g : suite.generators) gens.push_back(generator_config_to_json(g));
  doc["generators"] = std::move(gens);

  const auto& a = suite.agent;
  Json agent = Json::object();
  agent["id"] = a.id;
  agent["instructions"] = a.instructions;
  agent["temperature"] = a.temperature;
  if (a.seed) agent["seed"] = *a.seed;
  agent["retry"] = retry_policy_to_json(a.retry);
  agent["max_generator_calls"] = a.max_generator_calls;
  agent["max_tokens"] = a.max_tokens;
  agent["generator"] = a.generator;
  doc["agent"] = std::move(agent);

  Json contracts = Json::array();
  for (const auto& c : suite.contracts) {
    Json cd = Json::object();
    cd["id"] = c.id;
    cd["input"] = c.input;
    cd["output"] = c.output;
    cd["prompt"] = c.prompt;
    Json pre = Json::array(), post = Json::array();
    for (const auto& p : c.preconditions) pre.push_back(predicate_to_json(p));
    for (const auto& p : c.postconditions) post.push_back(predicate_to_json(p));
    cd["preconditions"] = std::move(pre);
    cd["postconditions"] = std::move(post);
    if (c.act) {
      Json act = Json::object();
      if (c.act->schema) act["schema"] = *c.act->schema;
      Json ops = Json::array();
      for (const auto& op : c.act->ops) {
        Json o = Json{{"op", std::string(to_string(op.kind))}, {"field", op.field}};
        if (op.kind == ActOpKind::Set) o["value"] = op.value;
        ops.push_back(std::move(o));
      }
      act["ops"] = std::move(ops);
      cd["act"] = std::move(act);
    }
    if (c.pre_retry) cd["pre_retry"] = retry_policy_to_json(*c.pre_retry);
    if (c.post_retry) cd["post_retry"] = retry_policy_to_json(*c.post_retry);
    Json fallback = Json{{"mode", std::string(to_string(c.fallback.kind))}};
    if (c.fallback.default_value) fallback["default"] = *c.fallback.default_value;
    cd["fallback"] = std::move(fallback);
    if (c.threshold) cd["threshold"] = *c.threshold;
    if (c.generator) cd["generator"] = *c.generator;
    cd["inputs"] = c.inputs;
    contracts.push_back(std::move(cd));
  }
  doc["contracts"] = std::move(contracts);

  doc["run"] = Json{{"runs", suite.run.runs},
                    {"seed", suite.run.seed},
                    {"threshold", suite.run.threshold},
                    {"threads", suite.run.threads}};
  Json out = Json::object();
  if (suite.output.report) out["report"] = suite.output.report->string();
  if (suite.output.trace) out["trace"] = suite.output.trace->string();
  doc["output"] = std::move(out);
  return doc;
}

Predicate compile_predicate(const PredicateSpec& spec, const TypeSchema& input,
                            const TypeSchema* output) {
  Predicate predicate;
  predicate.name = spec.name;
  predicate.family = spec.family.empty() ? spec.name : spec.family;
  predicate.target = check_predicate(spec, input, output, "predicate " + ticked(spec.name));

  const auto field = resolve_ref(spec.field, input, output, spec.name);
  std::optional<FieldRef> other;
  if (!spec.other.empty()) other = resolve_ref(spec.other, input, output, spec.name);
  const std::string path = spec.field;

  switch (spec.kind) {
    case PredicateKind::RegexMatch: {
      auto re = std::make_shared<const std::regex>(spec.pattern, std::regex::ECMAScript);
      predicate.evaluator = [field, re, path, pattern = spec.pattern](const Instance& in,
                                                                      const Instance* out) {
        const Json* v = read(field, in, out);
        if (!v) return Verdict::fail(path + " is absent");
        if (!std::regex_search(v->get<std::string>(), *re)) {
          return Verdict::fail(path + " does not match /" + pattern + "/");
        }
        return Verdict::pass();
      };
      break;
    }
    case PredicateKind::FieldEquals:
      predicate.evaluator = [field, path, expected = spec.value](const Instance& in,
                                                                 const Instance* out) {
        const Json* v = read(field, in, out);
        if (!v) return Verdict::fail(path + " is absent");
        if (*v != expected) {
          return Verdict::fail(path + " is " + v->dump() + ", expected " + expected.dump());
        }
        return Verdict::pass();
      };
      break;
    case PredicateKind::LengthBound:
      predicate.evaluator = [field, path, spec](const Instance& in, const Instance* out) {
        const Json* v = read(field, in, out);
        if (!v) return Verdict::fail(path + " is absent");
        const double n = static_cast<double>(v->is_string() ? utf8_length(v->get<std::string>())
                                                            : v->size());
        if ((spec.min && n < *spec.min) || (spec.max && n > *spec.max)) {
          return Verdict::fail("length of " + path + " is " + detail::format_number(n) +
                               ", expected " + bounds_text(spec, "length"));
        }
        return Verdict::pass();
      };
      break;
    case PredicateKind::NumericRange:
      predicate.evaluator = [field, path, spec](const Instance& in, const Instance* out) {
        const Json* v = read(field, in, out);
        if (!v) return Verdict::fail(path + " is absent");
        const double x = v->get<double>();
        if ((spec.min && x < *spec.min) || (spec.max && x > *spec.max)) {
          return Verdict::fail(path + " is " + detail::format_number(x) + ", expected " +
                               bounds_text(spec, "value"));
        }
        return Verdict::pass();
      };
      break;
    case PredicateKind::CrossFieldComparison:
      predicate.evaluator = [field, other = *other, spec](const Instance& in, const Instance* out) {
        const Json* a = read(field, in, out);
        const Json* b = read(other, in, out);
        if (!a) return Verdict::fail(spec.field + " is absent");
        if (!b) return Verdict::fail(spec.other + " is absent");
        const auto c = compare_values(*a, *b);
        if (!c || !holds(spec.op, *c)) {
          return Verdict::fail(spec.field + " (" + value_text(*a) + ") " +
                               std::string(to_string(spec.op)) + " " + spec.other + " (" +
                               value_text(*b) + ") does not hold");
        }
        return Verdict::pass();
      };
      break;
    case PredicateKind::OutputReferencesInputField:
      predicate.evaluator = [field, other = *other, spec](const Instance& in, const Instance* out) {
        const Json* text = read(field, in, out);
        const Json* ref = read(other, in, out);
        if (!text) return Verdict::fail(spec.field + " is absent");
        if (!ref) return Verdict::fail(spec.other + " is absent");
        const auto needle = value_text(*ref);
        if (text->get<std::string>().find(needle) == std::string::npos) {
          return Verdict::fail(spec.field + " does not mention " + spec.other + " (" +
                               Json(needle).dump() + ")");
        }
        return Verdict::pass();
      };
      break;
  }
  return predicate;
}

std::shared_ptr<const Contract> build_contract(const SuiteSpec& suite, const ContractSpec& spec) {
  const std::string ctx = "contract " + ticked(spec.id);
  auto contract = std::make_shared<Contract>();
  contract->id = spec.id;
  contract->input_schema = schema_ref(suite, spec.input, ctx);
  contract->output_schema = schema_ref(suite, spec.output, ctx);
  contract->prompt = spec.prompt;
  for (const auto& p : spec.preconditions) {
    contract->preconditions.push_back(compile_predicate(p, *contract->input_schema, nullptr));
  }
  for (const auto& p : spec.postconditions) {
    contract->postconditions.push_back(
        compile_predicate(p, *contract->input_schema, contract->output_schema.get()));
  }
  if (spec.act) {
    Act act;
    act.schema = spec.act->schema ? schema_ref(suite, *spec.act->schema, ctx) : contract->input_schema;
    act.transform = [ops = spec.act->ops](const Instance& input) {
      return apply_act_ops(ops, input.value());
    };
    contract->act = std::move(act);
  }
  contract->pre_retry = spec.pre_retry.value_or(suite.agent.retry);
  contract->post_retry = spec.post_retry.value_or(suite.agent.retry);
  switch (spec.fallback.kind) {
    case FallbackMode::Kind::Strict: contract->fallback = FallbackMode::strict(); break;
    case FallbackMode::Kind::GracefulRaw: contract->fallback = FallbackMode::graceful_raw(); break;
    case FallbackMode::Kind::GracefulDefault:
      try {
        contract->fallback = FallbackMode::graceful_default(
            Instance::create(contract->output_schema, spec.fallback.default_value.value_or(Json())));
      } catch (const std::invalid_argument& e) {
        fail(ctx + ": fallback default: " + e.what());
      }
      break;
  }
  for (const auto& error : check_contract(*contract)) fail(ctx + ": " + error);
  return contract;
}

Agent build_agent(const SuiteSpec& suite) {
  Agent agent;
  agent.id = suite.agent.id;
  agent.generators = suite.generators;
  agent.instructions = suite.agent.instructions;
  agent.hyperparameters.temperature = suite.agent.temperature;
  agent.hyperparameters.seed = suite.agent.seed;
  agent.hyperparameters.default_retry = suite.agent.retry;
  agent.hyperparameters.max_generator_calls = suite.agent.max_generator_calls;
  agent.hyperparameters.max_tokens = suite.agent.max_tokens;
  agent.schemas = suite.schemas;
  for (const auto& spec : suite.contracts) agent.contracts.push_back(build_contract(suite, spec));
  return agent;
}

const GeneratorConfig& contract_generator(const SuiteSpec& suite, const ContractSpec& spec,
                                          std::optional<GeneratorKind> backend) {
  const auto* config = suite.find_generator(spec.generator.value_or(suite.agent.generator));
  if (!config) fail("contract " + ticked(spec.id) + ": unknown generator");
  if (!backend || config->kind == *backend) return *config;
  for (const auto& g : suite.generators) {
    if (g.kind == *backend) return g;
  }
  fail("suite has no generator of kind " + ticked(std::string(to_string(*backend))));
}

}  // namespace dbc
