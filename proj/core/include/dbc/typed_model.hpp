#pragma once

// Type system for contract inputs and outputs: schemas, well-typed
// instances, constraint checking, prompt rendering and parsing of generator
// text into typed values.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace dbc {

/// Value trees are JSON documents whose object keys keep insertion order.
using Json = nlohmann::ordered_json;

enum class BaseType { String, Integer, Real, Boolean, Enum, List, Nested };

std::string_view to_string(BaseType base);
std::optional<BaseType> base_type_from_string(std::string_view text);

enum class ConstraintKind { Regex, Range, Length, EnumMembers, NonEmpty };

std::string_view to_string(ConstraintKind kind);

/// A single field condition. Only the parameters belonging to `kind` are
/// meaningful; use the named factories to build one.
struct Constraint {
  ConstraintKind kind = ConstraintKind::NonEmpty;
  std::string pattern;
  std::optional<double> min_value;
  std::optional<double> max_value;
  std::optional<std::size_t> min_length;
  std::optional<std::size_t> max_length;
  std::vector<std::string> members;

  /// Compiled form of `pattern`; null when the pattern is not valid
  /// ECMAScript syntax (check_schema reports it).
  std::shared_ptr<const std::regex> compiled;

  static Constraint regex(std::string pattern);
  static Constraint range(std::optional<double> min, std::optional<double> max);
  static Constraint length(std::optional<std::size_t> min,
                           std::optional<std::size_t> max);
  static Constraint enum_members(std::vector<std::string> members);
  static Constraint non_empty();

  friend bool operator==(const Constraint& a, const Constraint& b);
};

struct TypeSchema;
using SchemaPtr = std::shared_ptr<const TypeSchema>;

struct FieldSpec {
  std::string name;
  BaseType base = BaseType::String;
  bool optional = false;
  std::string description;
  std::vector<Constraint> constraints;
  /// Element specification when base == List. Its name is unused.
  std::shared_ptr<const FieldSpec> items;
  /// Referenced schema when base == Nested.
  SchemaPtr nested;

  friend bool operator==(const FieldSpec& a, const FieldSpec& b);
};

struct TypeSchema {
  std::string name;
  std::string description;
  std::vector<FieldSpec> fields;

  const FieldSpec* find_field(std::string_view field_name) const;

  friend bool operator==(const TypeSchema& a, const TypeSchema& b);
};

inline constexpr int kMaxNestingDepth = 16;

struct SchemaError {
  std::string field;  // dotted path of the offending field, or the schema name
  std::string rule;
  std::string message;
};

/// Checks the definition-level invariants of a schema: unique field names,
/// bounded acyclic nesting, constraint/base compatibility and well-formed
/// constraint parameters. An empty result means the schema is usable.
std::vector<SchemaError> check_schema(const TypeSchema& schema);

enum class ViolationKind { Missing, TypeMismatch, Constraint, Parse };

std::string_view to_string(ViolationKind kind);

struct Violation {
  std::string path;  // "$" for the root, "$.a.b[2]" below it
  ViolationKind kind = ViolationKind::Parse;
  std::string message;

  friend bool operator==(const Violation&, const Violation&) = default;
};

/// Reports every failing field and constraint in schema field order.
/// Keys not declared by the schema are ignored.
std::vector<Violation> validate_instance(const TypeSchema& schema,
                                         const Json& value);

/// A value that has been checked against its schema. The stored value is
/// canonical: schema field order, undeclared keys dropped, absent optional
/// fields omitted.
class Instance {
 public:
  /// Throws std::invalid_argument listing the violations if `value` is not
  /// well-typed.
  static Instance create(SchemaPtr schema, const Json& value);
  static std::variant<Instance, std::vector<Violation>> try_create(
      SchemaPtr schema, const Json& value);

  const TypeSchema& schema() const { return *schema_; }
  const SchemaPtr& schema_ptr() const { return schema_; }
  const Json& value() const { return value_; }

  /// Field-by-field equality of the canonical values.
  friend bool operator==(const Instance& a, const Instance& b);

 private:
  Instance(SchemaPtr schema, Json value)
      : schema_(std::move(schema)), value_(std::move(value)) {}

  SchemaPtr schema_;
  Json value_;
};

/// Deterministic prompt fragment describing the schema to a generator.
std::string render_schema_prompt(const TypeSchema& schema);

struct ParseError {
  /// Always kind == Parse, path == "$".
  Violation violation;
  /// Field-level violations when the text deserialized but failed validation.
  std::vector<Violation> details;
};

using ParseResult = std::variant<Instance, ParseError>;

/// Locates the candidate region in generator text: the body of the first
/// fenced code block if there is one, otherwise the first balanced `{...}`
/// literal.
std::optional<std::string_view> extract_candidate(std::string_view text);

ParseResult parse_output(std::string_view text, const SchemaPtr& schema);

/// Compact JSON in schema field order.
std::string serialize_instance(const Instance& instance);

/// Number of Unicode code points in a UTF-8 string; used for string
/// length constraints.
std::size_t utf8_length(std::string_view text);

/// Prefix of at most `max_chars` code points.
std::string utf8_prefix(std::string_view text, std::size_t max_chars);

// Schema definition files.
//
// A schema document has keys `name`, `description` and `fields`; each field
// carries `name`, `base`, `optional`, `description`, `constraints` and, for
// lists, `items` (a field object without a name) or, for nested fields,
// `schema` (an inline schema document or the name of a schema resolved by
// `resolve`).

using SchemaResolver = std::function<SchemaPtr(const std::string& name)>;

/// Throws std::invalid_argument on malformed documents. Definition-level
/// problems such as bad regex syntax are left to check_schema.
SchemaPtr schema_from_json(const Json& doc, const SchemaResolver& resolve = {});

/// Nested schemas are emitted by name when `nested_by_name` is set, inline
/// otherwise.
Json schema_to_json(const TypeSchema& schema, bool nested_by_name = false);

}  // namespace dbc
