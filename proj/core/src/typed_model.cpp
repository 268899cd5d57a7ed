#include "dbc/typed_model.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

#include "text_util.hpp"

namespace dbc {

namespace {

constexpr std::string_view kRoot = "$";

std::string json_type_name(const Json& value) {
  if (value.is_number_integer()) return "integer";
  if (value.is_number_float()) return "real";
  return value.type_name();
}

std::string quote(std::string_view text) {
  return Json(std::string(text)).dump();
}

bool compatible(ConstraintKind kind, BaseType base) {
  switch (kind) {
    case ConstraintKind::Regex:
      return base == BaseType::String;
    case ConstraintKind::Range:
      return base == BaseType::Integer || base == BaseType::Real;
    case ConstraintKind::Length:
    case ConstraintKind::NonEmpty:
      return base == BaseType::String || base == BaseType::List;
    case ConstraintKind::EnumMembers:
      return base == BaseType::String || base == BaseType::Enum;
  }
  return false;
}

std::string describe_bounds(const std::optional<double>& lo,
                            const std::optional<double>& hi) {
  return "[" + (lo ? detail::format_number(*lo) : std::string("-inf")) + ", " +
         (hi ? detail::format_number(*hi) : std::string("+inf")) + "]";
}

std::string describe_bounds(const std::optional<std::size_t>& lo,
                            const std::optional<std::size_t>& hi) {
  return "[" + (lo ? std::to_string(*lo) : std::string("0")) + ", " +
         (hi ? std::to_string(*hi) : std::string("+inf")) + "]";
}

// ---------------------------------------------------------------------------
// check_schema

class SchemaChecker {
 public:
  std::vector<SchemaError> run(const TypeSchema& schema) {
    check(schema, schema.name, 1);
    return std::move(errors_);
  }

 private:
  void error(std::string field, std::string rule, std::string message) {
    errors_.push_back({std::move(field), std::move(rule), std::move(message)});
  }

  void check(const TypeSchema& schema, const std::string& prefix, int depth) {
    if (depth > kMaxNestingDepth) {
      error(prefix, "max-depth",
            "nesting depth exceeds " + std::to_string(kMaxNestingDepth));
      return;
    }
    if (std::find(stack_.begin(), stack_.end(), &schema) != stack_.end()) {
      error(prefix, "acyclic",
            "schema '" + schema.name + "' references itself");
      return;
    }
    if (schema.name.empty()) error(prefix, "identifier", "schema name is empty");
    stack_.push_back(&schema);
    std::set<std::string> seen;
    for (const auto& field : schema.fields) {
      std::string path = prefix.empty() ? field.name : prefix + "." + field.name;
      if (field.name.empty()) {
        error(path, "identifier", "field name is empty");
      } else if (!seen.insert(field.name).second) {
        error(field.name, "unique-name",
              "duplicate field name '" + field.name + "' in schema '" +
                  schema.name + "'");
      }
      check_field(field, path, depth);
    }
    stack_.pop_back();
  }

  void check_field(const FieldSpec& field, const std::string& path, int depth) {
    bool has_members = false;
    for (const auto& c : field.constraints) {
      if (!compatible(c.kind, field.base)) {
        error(path, "constraint-base",
              std::string(to_string(c.kind)) + " constraint is not allowed on " +
                  std::string(to_string(field.base)) + " field");
      }
      switch (c.kind) {
        case ConstraintKind::Regex:
          if (!c.compiled) {
            error(path, "regex-syntax", "invalid regex " + quote(c.pattern));
          }
          break;
        case ConstraintKind::Range:
          if (c.min_value && c.max_value && *c.min_value > *c.max_value) {
            error(path, "range",
                  "range " + describe_bounds(c.min_value, c.max_value) +
                      ": min ≤ max violated");
          }
          break;
        case ConstraintKind::Length:
          if (c.min_length && c.max_length && *c.min_length > *c.max_length) {
            error(path, "length",
                  "length " + describe_bounds(c.min_length, c.max_length) +
                      ": min ≤ max violated");
          }
          break;
        case ConstraintKind::EnumMembers:
          has_members = true;
          if (c.members.empty()) {
            error(path, "enum-members", "enum constraint has no members");
          }
          break;
        case ConstraintKind::NonEmpty:
          break;
      }
    }
    switch (field.base) {
      case BaseType::Enum:
        if (!has_members) {
          error(path, "enum-members", "enum field declares no members");
        }
        break;
      case BaseType::List:
        if (!field.items) {
          error(path, "list-items", "list field has no item specification");
        } else {
          check_field(*field.items, path + "[]", depth + 1);
        }
        break;
      case BaseType::Nested:
        if (!field.nested) {
          error(path, "nested-schema", "nested field has no schema");
        } else {
          check(*field.nested, path, depth + 1);
        }
        break;
      default:
        break;
    }
  }

  std::vector<SchemaError> errors_;
  std::vector<const TypeSchema*> stack_;
};

// ---------------------------------------------------------------------------
// validate_instance

class Validator {
 public:
  std::vector<Violation> run(const TypeSchema& schema, const Json& value) {
    if (!value.is_object()) {
      out_.push_back({std::string(kRoot), ViolationKind::TypeMismatch,
                      "expected object of type '" + schema.name + "', got " +
                          json_type_name(value)});
      return std::move(out_);
    }
    fields(schema, value, std::string(kRoot));
    return std::move(out_);
  }

 private:
  void fields(const TypeSchema& schema, const Json& object,
              const std::string& prefix) {
    for (const auto& field : schema.fields) {
      std::string path = prefix + "." + field.name;
      auto it = object.find(field.name);
      if (it == object.end() || it->is_null()) {
        if (!field.optional) {
          out_.push_back({path, ViolationKind::Missing,
                          "required field '" + field.name + "' is missing"});
        }
        continue;
      }
      value(field, *it, path);
    }
  }

  void value(const FieldSpec& spec, const Json& v, const std::string& path) {
    if (!type_matches(spec.base, v)) {
      std::string expected(to_string(spec.base));
      if (spec.base == BaseType::Nested && spec.nested) {
        expected = "object '" + spec.nested->name + "'";
      }
      out_.push_back({path, ViolationKind::TypeMismatch,
                      "expected " + expected + ", got " + json_type_name(v)});
      return;
    }
    for (const auto& c : spec.constraints) constraint(c, v, path);
    if (spec.base == BaseType::List && spec.items) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        value(*spec.items, v[i], path + "[" + std::to_string(i) + "]");
      }
    } else if (spec.base == BaseType::Nested && spec.nested) {
      fields(*spec.nested, v, path);
    }
  }

  static bool type_matches(BaseType base, const Json& v) {
    switch (base) {
      case BaseType::String:
      case BaseType::Enum:
        return v.is_string();
      case BaseType::Integer:
        return v.is_number_integer();
      case BaseType::Real:
        return v.is_number();
      case BaseType::Boolean:
        return v.is_boolean();
      case BaseType::List:
        return v.is_array();
      case BaseType::Nested:
        return v.is_object();
    }
    return false;
  }

  void fail(const std::string& path, std::string message) {
    out_.push_back({path, ViolationKind::Constraint, std::move(message)});
  }

  void constraint(const Constraint& c, const Json& v, const std::string& path) {
    switch (c.kind) {
      case ConstraintKind::Regex: {
        if (!v.is_string() || !c.compiled) return;
        const auto& text = v.get_ref<const std::string&>();
        if (!std::regex_search(text, *c.compiled)) {
          fail(path, "value " + quote(text) + " does not match pattern /" +
                         c.pattern + "/");
        }
        return;
      }
      case ConstraintKind::Range: {
        if (!v.is_number()) return;
        double x = v.get<double>();
        if ((c.min_value && x < *c.min_value) ||
            (c.max_value && x > *c.max_value)) {
          fail(path, "value " + v.dump() + " is outside range " +
                         describe_bounds(c.min_value, c.max_value));
        }
        return;
      }
      case ConstraintKind::Length: {
        std::size_t n = 0;
        if (v.is_string()) {
          n = utf8_length(v.get_ref<const std::string&>());
        } else if (v.is_array()) {
          n = v.size();
        } else {
          return;
        }
        if ((c.min_length && n < *c.min_length) ||
            (c.max_length && n > *c.max_length)) {
          fail(path, "length " + std::to_string(n) + " is outside " +
                         describe_bounds(c.min_length, c.max_length));
        }
        return;
      }
      case ConstraintKind::EnumMembers: {
        if (!v.is_string()) return;
        const auto& text = v.get_ref<const std::string&>();
        if (std::find(c.members.begin(), c.members.end(), text) ==
            c.members.end()) {
          fail(path, "value " + quote(text) + " is not one of {" +
                         detail::join(c.members, ", ") + "}");
        }
        return;
      }
      case ConstraintKind::NonEmpty:
        if ((v.is_string() && v.get_ref<const std::string&>().empty()) ||
            (v.is_array() && v.empty())) {
          fail(path, "value must not be empty");
        }
        return;
    }
  }

  std::vector<Violation> out_;
};

Json canonical_value(const FieldSpec& spec, const Json& v);

Json canonical_object(const TypeSchema& schema, const Json& object) {
  Json out = Json::object();
  for (const auto& field : schema.fields) {
    auto it = object.find(field.name);
    if (it == object.end() || it->is_null()) continue;
    out[field.name] = canonical_value(field, *it);
  }
  return out;
}

Json canonical_value(const FieldSpec& spec, const Json& v) {
  if (spec.base == BaseType::Nested && spec.nested) {
    return canonical_object(*spec.nested, v);
  }
  if (spec.base == BaseType::List && spec.items) {
    Json out = Json::array();
    for (const auto& element : v) out.push_back(canonical_value(*spec.items, element));
    return out;
  }
  return v;
}

// ---------------------------------------------------------------------------
// render_schema_prompt

std::string describe_constraint(const Constraint& c) {
  switch (c.kind) {
    case ConstraintKind::Regex:
      return "matches regex /" + c.pattern + "/";
    case ConstraintKind::Range:
      return "value in " + describe_bounds(c.min_value, c.max_value);
    case ConstraintKind::Length:
      return "length in " + describe_bounds(c.min_length, c.max_length);
    case ConstraintKind::EnumMembers:
      return "one of {" + detail::join(c.members, ", ") + "}";
    case ConstraintKind::NonEmpty:
      return "non-empty";
  }
  return {};
}

std::string describe_type(const FieldSpec& spec) {
  switch (spec.base) {
    case BaseType::List:
      return spec.items ? "list of " + describe_type(*spec.items) : "list";
    case BaseType::Nested:
      return spec.nested ? "object " + spec.nested->name : "object";
    default:
      return std::string(to_string(spec.base));
  }
}

void render_fields(const TypeSchema& schema, int depth, std::ostringstream& out);

void render_item_details(const FieldSpec& spec, int depth,
                         std::ostringstream& out) {
  std::string indent(static_cast<std::size_t>(depth) * 2, ' ');
  if (spec.base == BaseType::List && spec.items) {
    std::vector<std::string> item_constraints;
    for (const auto& c : spec.items->constraints) {
      item_constraints.push_back(describe_constraint(c));
    }
    if (!item_constraints.empty()) {
      out << indent << "  each item: " << detail::join(item_constraints, "; ")
          << "\n";
    }
    render_item_details(*spec.items, depth, out);
  } else if (spec.base == BaseType::Nested && spec.nested) {
    render_fields(*spec.nested, depth + 1, out);
  }
}

void render_fields(const TypeSchema& schema, int depth, std::ostringstream& out) {
  std::string indent(static_cast<std::size_t>(depth) * 2, ' ');
  for (const auto& field : schema.fields) {
    out << indent << "- " << field.name << " (" << describe_type(field) << ", "
        << (field.optional ? "optional" : "required") << ")";
    if (!field.description.empty()) out << ": " << field.description;
    out << "\n";
    if (!field.constraints.empty()) {
      std::vector<std::string> parts;
      for (const auto& c : field.constraints) parts.push_back(describe_constraint(c));
      out << indent << "  constraints: " << detail::join(parts, "; ") << "\n";
    }
    render_item_details(field, depth, out);
  }
}

// ---------------------------------------------------------------------------
// Schema JSON

Constraint constraint_from_json(const Json& doc) {
  if (!doc.is_object() || !doc.contains("kind") || !doc["kind"].is_string()) {
    throw std::invalid_argument("constraint must be an object with a 'kind'");
  }
  const auto kind = doc["kind"].get<std::string>();
  auto opt_number = [&](const char* key) -> std::optional<double> {
    if (!doc.contains(key) || doc[key].is_null()) return std::nullopt;
    if (!doc[key].is_number()) {
      throw std::invalid_argument(kind + " constraint: '" + key + "' must be a number");
    }
    return doc[key].get<double>();
  };
  auto opt_size = [&](const char* key) -> std::optional<std::size_t> {
    if (!doc.contains(key) || doc[key].is_null()) return std::nullopt;
    if (!doc[key].is_number_unsigned() &&
        !(doc[key].is_number_integer() && doc[key].get<long long>() >= 0)) {
      throw std::invalid_argument(kind + " constraint: '" + key +
                                  "' must be a non-negative integer");
    }
    return doc[key].get<std::size_t>();
  };
  if (kind == "regex") {
    if (!doc.contains("pattern") || !doc["pattern"].is_string()) {
      throw std::invalid_argument("regex constraint requires a string 'pattern'");
    }
    return Constraint::regex(doc["pattern"].get<std::string>());
  }
  if (kind == "range") return Constraint::range(opt_number("min"), opt_number("max"));
  if (kind == "length") return Constraint::length(opt_size("min"), opt_size("max"));
  if (kind == "enum-members") {
    if (!doc.contains("members") || !doc["members"].is_array()) {
      throw std::invalid_argument("enum-members constraint requires 'members'");
    }
    std::vector<std::string> members;
    for (const auto& m : doc["members"]) {
      if (!m.is_string()) {
        throw std::invalid_argument("enum members must be strings");
      }
      members.push_back(m.get<std::string>());
    }
    return Constraint::enum_members(std::move(members));
  }
  if (kind == "non-empty") return Constraint::non_empty();
  throw std::invalid_argument("unknown constraint kind '" + kind + "'");
}

Json constraint_to_json(const Constraint& c) {
  Json doc = Json::object();
  doc["kind"] = std::string(to_string(c.kind));
  switch (c.kind) {
    case ConstraintKind::Regex:
      doc["pattern"] = c.pattern;
      break;
    case ConstraintKind::Range:
      if (c.min_value) doc["min"] = *c.min_value;
      if (c.max_value) doc["max"] = *c.max_value;
      break;
    case ConstraintKind::Length:
      if (c.min_length) doc["min"] = *c.min_length;
      if (c.max_length) doc["max"] = *c.max_length;
      break;
    case ConstraintKind::EnumMembers:
      doc["members"] = c.members;
      break;
    case ConstraintKind::NonEmpty:
      break;
  }
  return doc;
}

std::string string_member(const Json& doc, const char* key, bool required,
                          const std::string& context) {
  if (!doc.contains(key) || doc[key].is_null()) {
    if (required) {
      throw std::invalid_argument(context + ": missing '" + key + "'");
    }
    return {};
  }
  if (!doc[key].is_string()) {
    throw std::invalid_argument(context + ": '" + key + "' must be a string");
  }
  return doc[key].get<std::string>();
}

FieldSpec field_from_json(const Json& doc, const SchemaResolver& resolve,
                          bool named) {
  if (!doc.is_object()) throw std::invalid_argument("field must be an object");
  FieldSpec field;
  field.name = named ? string_member(doc, "name", true, "field") : "";
  const std::string context = "field '" + field.name + "'";
  auto base_text = string_member(doc, "base", true, context);
  auto base = base_type_from_string(base_text);
  if (!base) {
    throw std::invalid_argument(context + ": unknown base type '" + base_text + "'");
  }
  field.base = *base;
  if (doc.contains("optional")) {
    if (!doc["optional"].is_boolean()) {
      throw std::invalid_argument(context + ": 'optional' must be a boolean");
    }
    field.optional = doc["optional"].get<bool>();
  }
  field.description = string_member(doc, "description", false, context);
  if (doc.contains("constraints")) {
    if (!doc["constraints"].is_array()) {
      throw std::invalid_argument(context + ": 'constraints' must be an array");
    }
    for (const auto& c : doc["constraints"]) {
      field.constraints.push_back(constraint_from_json(c));
    }
  }
  if (field.base == BaseType::List) {
    if (!doc.contains("items")) {
      throw std::invalid_argument(context + ": list field requires 'items'");
    }
    field.items = std::make_shared<const FieldSpec>(
        field_from_json(doc["items"], resolve, false));
  } else if (field.base == BaseType::Nested) {
    if (!doc.contains("schema")) {
      throw std::invalid_argument(context + ": nested field requires 'schema'");
    }
    const auto& ref = doc["schema"];
    if (ref.is_string()) {
      auto name = ref.get<std::string>();
      field.nested = resolve ? resolve(name) : nullptr;
      if (!field.nested) {
        throw std::invalid_argument(context + ": unknown schema '" + name + "'");
      }
    } else {
      field.nested = schema_from_json(ref, resolve);
    }
  }
  return field;
}

Json field_to_json(const FieldSpec& field, bool named, bool nested_by_name) {
  Json doc = Json::object();
  if (named) doc["name"] = field.name;
  doc["base"] = std::string(to_string(field.base));
  doc["optional"] = field.optional;
  doc["description"] = field.description;
  Json constraints = Json::array();
  for (const auto& c : field.constraints) constraints.push_back(constraint_to_json(c));
  doc["constraints"] = std::move(constraints);
  if (field.base == BaseType::List && field.items) {
    doc["items"] = field_to_json(*field.items, false, nested_by_name);
  }
  if (field.base == BaseType::Nested && field.nested) {
    if (nested_by_name) {
      doc["schema"] = field.nested->name;
    } else {
      doc["schema"] = schema_to_json(*field.nested, false);
    }
  }
  return doc;
}

// List item specs: the name is not part of the type.
bool same_ptr_value(const std::shared_ptr<const FieldSpec>& a,
                    const std::shared_ptr<const FieldSpec>& b) {
  if (a == b) return true;
  if (!a || !b) return false;
  FieldSpec renamed = *b;
  renamed.name = a->name;
  return *a == renamed;
}

bool same_ptr_value(const SchemaPtr& a, const SchemaPtr& b) {
  if (a == b) return true;
  if (!a || !b) return false;
  return *a == *b;
}

}  // namespace

std::string_view to_string(BaseType base) {
  switch (base) {
    case BaseType::String: return "string";
    case BaseType::Integer: return "integer";
    case BaseType::Real: return "real";
    case BaseType::Boolean: return "boolean";
    case BaseType::Enum: return "enum";
    case BaseType::List: return "list";
    case BaseType::Nested: return "nested";
  }
  return "unknown";
}

std::optional<BaseType> base_type_from_string(std::string_view text) {
  for (auto base : {BaseType::String, BaseType::Integer, BaseType::Real,
                    BaseType::Boolean, BaseType::Enum, BaseType::List,
                    BaseType::Nested}) {
    if (to_string(base) == text) return base;
  }
  return std::nullopt;
}

std::string_view to_string(ConstraintKind kind) {
  switch (kind) {
    case ConstraintKind::Regex: return "regex";
    case ConstraintKind::Range: return "range";
    case ConstraintKind::Length: return "length";
    case ConstraintKind::EnumMembers: return "enum-members";
    case ConstraintKind::NonEmpty: return "non-empty";
  }
  return "unknown";
}

std::string_view to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::Missing: return "missing";
    case ViolationKind::TypeMismatch: return "type-mismatch";
    case ViolationKind::Constraint: return "constraint";
    case ViolationKind::Parse: return "parse";
  }
  return "unknown";
}

Constraint Constraint::regex(std::string pattern) {
  Constraint c;
  c.kind = ConstraintKind::Regex;
  try {
    c.compiled = std::make_shared<const std::regex>(pattern, std::regex::ECMAScript);
  } catch (const std::regex_error&) {
    c.compiled = nullptr;
  }
  c.pattern = std::move(pattern);
  return c;
}

Constraint Constraint::range(std::optional<double> min, std::optional<double> max) {
  Constraint c;
  c.kind = ConstraintKind::Range;
  c.min_value = min;
  c.max_value = max;
  return c;
}

Constraint Constraint::length(std::optional<std::size_t> min,
                              std::optional<std::size_t> max) {
  Constraint c;
  c.kind = ConstraintKind::Length;
  c.min_length = min;
  c.max_length = max;
  return c;
}

Constraint Constraint::enum_members(std::vector<std::string> members) {
  Constraint c;
  c.kind = ConstraintKind::EnumMembers;
  c.members = std::move(members);
  return c;
}

Constraint Constraint::non_empty() {
  Constraint c;
  c.kind = ConstraintKind::NonEmpty;
  return c;
}

bool operator==(const Constraint& a, const Constraint& b) {
  return a.kind == b.kind && a.pattern == b.pattern &&
         a.min_value == b.min_value && a.max_value == b.max_value &&
         a.min_length == b.min_length && a.max_length == b.max_length &&
         a.members == b.members;
}

bool operator==(const FieldSpec& a, const FieldSpec& b) {
  return a.name == b.name && a.base == b.base && a.optional == b.optional &&
         a.description == b.description && a.constraints == b.constraints &&
         same_ptr_value(a.items, b.items) && same_ptr_value(a.nested, b.nested);
}

bool operator==(const TypeSchema& a, const TypeSchema& b) {
  return a.name == b.name && a.description == b.description &&
         a.fields == b.fields;
}

const FieldSpec* TypeSchema::find_field(std::string_view field_name) const {
  for (const auto& f : fields) {
    if (f.name == field_name) return &f;
  }
  return nullptr;
}

std::vector<SchemaError> check_schema(const TypeSchema& schema) {
  return SchemaChecker{}.run(schema);
}

std::vector<Violation> validate_instance(const TypeSchema& schema,
                                         const Json& value) {
  return Validator{}.run(schema, value);
}

Instance Instance::create(SchemaPtr schema, const Json& value) {
  auto result = try_create(std::move(schema), value);
  if (auto* violations = std::get_if<std::vector<Violation>>(&result)) {
    std::string message = "value is not well-typed:";
    for (const auto& v : *violations) message += " " + v.path + ": " + v.message + ";";
    throw std::invalid_argument(message);
  }
  return std::get<Instance>(std::move(result));
}

std::variant<Instance, std::vector<Violation>> Instance::try_create(
    SchemaPtr schema, const Json& value) {
  if (!schema) throw std::invalid_argument("Instance requires a schema");
  auto violations = validate_instance(*schema, value);
  if (!violations.empty()) return violations;
  Json canonical = canonical_object(*schema, value);
  return Instance(std::move(schema), std::move(canonical));
}

bool operator==(const Instance& a, const Instance& b) {
  return (a.schema_ == b.schema_ || *a.schema_ == *b.schema_) &&
         a.value_ == b.value_;
}

std::string render_schema_prompt(const TypeSchema& schema) {
  std::ostringstream out;
  out << "Type: " << schema.name << "\n";
  if (!schema.description.empty()) out << "Description: " << schema.description << "\n";
  out << "Fields:\n";
  if (schema.fields.empty()) out << "  (none)\n";
  render_fields(schema, 1, out);
  out << "Answer with a single JSON object of type " << schema.name
      << ", using exactly the field names listed above.";
  return out.str();
}

std::optional<std::string_view> extract_candidate(std::string_view text) {
  constexpr std::string_view fence = "```";
  if (auto open = text.find(fence); open != std::string_view::npos) {
    auto body_start = text.find('\n', open + fence.size());
    if (body_start != std::string_view::npos) {
      ++body_start;
      auto close = text.find(fence, body_start);
      if (close != std::string_view::npos) {
        return text.substr(body_start, close - body_start);
      }
    }
  }
  for (std::size_t start = text.find('{'); start != std::string_view::npos;
       start = text.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      char ch = text[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (ch == '\\') {
          escaped = true;
        } else if (ch == '"') {
          in_string = false;
        }
        continue;
      }
      if (ch == '"') {
        in_string = true;
      } else if (ch == '{') {
        ++depth;
      } else if (ch == '}') {
        if (--depth == 0) return text.substr(start, i - start + 1);
      }
    }
  }
  return std::nullopt;
}

ParseResult parse_output(std::string_view text, const SchemaPtr& schema) {
  auto root_error = [](std::string message) {
    return ParseError{{std::string(kRoot), ViolationKind::Parse, std::move(message)}, {}};
  };
  auto candidate = extract_candidate(text);
  if (!candidate) return root_error("no JSON object found in generator output");
  Json value;
  try {
    value = Json::parse(candidate->begin(), candidate->end());
  } catch (const Json::parse_error& e) {
    return root_error(std::string("invalid JSON: ") + e.what());
  }
  auto result = Instance::try_create(schema, value);
  if (auto* violations = std::get_if<std::vector<Violation>>(&result)) {
    auto error = root_error("output does not conform to type '" + schema->name +
                            "' (" + std::to_string(violations->size()) +
                            " violation(s))");
    error.details = std::move(*violations);
    return error;
  }
  return std::get<Instance>(std::move(result));
}

std::string serialize_instance(const Instance& instance) {
  return instance.value().dump();
}

std::size_t utf8_length(std::string_view text) {
  return static_cast<std::size_t>(std::count_if(text.begin(), text.end(), [](char c) {
    return (static_cast<unsigned char>(c) & 0xC0) != 0x80;
  }));
}

std::string utf8_prefix(std::string_view text, std::size_t max_chars) {
  std::size_t chars = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if ((static_cast<unsigned char>(text[i]) & 0xC0) != 0x80) {
      if (chars == max_chars) return std::string(text.substr(0, i));
      ++chars;
    }
  }
  return std::string(text);
}

SchemaPtr schema_from_json(const Json& doc, const SchemaResolver& resolve) {
  if (!doc.is_object()) throw std::invalid_argument("schema must be a JSON object");
  auto schema = std::make_shared<TypeSchema>();
  schema->name = string_member(doc, "name", true, "schema");
  schema->description =
      string_member(doc, "description", false, "schema '" + schema->name + "'");
  if (doc.contains("fields")) {
    if (!doc["fields"].is_array()) {
      throw std::invalid_argument("schema '" + schema->name +
                                  "': 'fields' must be an array");
    }
    for (const auto& f : doc["fields"]) {
      schema->fields.push_back(field_from_json(f, resolve, true));
    }
  }
  return schema;
}

Json schema_to_json(const TypeSchema& schema, bool nested_by_name) {
  Json doc = Json::object();
  doc["name"] = schema.name;
  doc["description"] = schema.description;
  Json fields = Json::array();
  for (const auto& f : schema.fields) fields.push_back(field_to_json(f, true, nested_by_name));
  doc["fields"] = std::move(fields);
  return doc;
}

}  // namespace dbc
