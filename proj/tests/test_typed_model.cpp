#include <doctest.h>

#include <fstream>
#include <sstream>

#include "fuzz.hpp"

using namespace dbc;

namespace {

SchemaPtr email_schema() {
  auto s = std::make_shared<TypeSchema>();
  s->name = "Contact";
  FieldSpec email;
  email.name = "email";
  email.base = BaseType::String;
  email.description = "primary address";
  email.constraints.push_back(Constraint::regex("^[^@]+@[^@]+$"));
  s->fields.push_back(email);
  return s;
}

FieldSpec field(std::string name, BaseType base, std::vector<Constraint> constraints = {},
                bool optional = false) {
  FieldSpec f;
  f.name = std::move(name);
  f.base = base;
  f.constraints = std::move(constraints);
  f.optional = optional;
  return f;
}

bool has_rule(const std::vector<SchemaError>& errors, const std::string& rule) {
  for (const auto& e : errors) {
    if (e.rule == rule) return true;
  }
  return false;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SchemaPtr nested_schema() {
  auto address = std::make_shared<TypeSchema>();
  address->name = "Address";
  address->description = "Postal address";
  address->fields.push_back(field("street", BaseType::String, {Constraint::non_empty()}));
  address->fields.push_back(field("zip", BaseType::String, {Constraint::regex("^[0-9]{5}$")}));
  address->fields.back().description = "five digit code";

  auto person = std::make_shared<TypeSchema>();
  person->name = "Person";
  person->description = "A person with a home address";
  person->fields.push_back(field("name", BaseType::String, {Constraint::length(1, 40)}));
  person->fields.push_back(field("age", BaseType::Integer, {Constraint::range(0, 150)}, true));
  auto home = field("home", BaseType::Nested);
  home.nested = address;
  home.description = "where they live";
  person->fields.push_back(home);
  auto tags = field("tags", BaseType::List, {Constraint::length(std::nullopt, 3)});
  tags.items = std::make_shared<FieldSpec>(field("", BaseType::Enum, {Constraint::enum_members({"a", "b"})}));
  person->fields.push_back(tags);
  return person;
}

}  // namespace

TEST_CASE("check_schema names a duplicate field") {
  TypeSchema s;
  s.name = "Dup";
  s.fields.push_back(field("email", BaseType::String));
  s.fields.push_back(field("email", BaseType::String));
  auto errors = check_schema(s);
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].field == "email");
  CHECK(errors[0].rule == "unique-name");
}

TEST_CASE("check_schema rejects an inverted range") {
  TypeSchema s;
  s.name = "R";
  s.fields.push_back(field("n", BaseType::Integer, {Constraint::range(5, 1)}));
  auto errors = check_schema(s);
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].message.find("min \xE2\x89\xA4 max violated") != std::string::npos);
}

TEST_CASE("check_schema accepts a zero-field schema") {
  TypeSchema s;
  s.name = "Ack";
  CHECK(check_schema(s).empty());
}

TEST_CASE("check_schema enforces constraint compatibility and parameters") {
  TypeSchema s;
  s.name = "Bad";
  s.fields.push_back(field("a", BaseType::Integer, {Constraint::regex("x")}));
  s.fields.push_back(field("b", BaseType::String, {Constraint::regex("(unclosed")}));
  s.fields.push_back(field("c", BaseType::Enum, {Constraint::enum_members({})}));
  s.fields.push_back(field("d", BaseType::List));
  s.fields.push_back(field("e", BaseType::Nested));
  s.fields.push_back(field("f", BaseType::String, {Constraint::range(0, 1)}));
  s.fields.push_back(field("g", BaseType::Boolean, {Constraint::length(0, 1)}));
  s.fields.push_back(field("h", BaseType::String, {Constraint::length(4, 2)}));
  auto errors = check_schema(s);
  CHECK(has_rule(errors, "constraint-base"));
  CHECK(has_rule(errors, "regex-syntax"));
  CHECK(has_rule(errors, "enum-members"));
  CHECK(has_rule(errors, "list-items"));
  CHECK(has_rule(errors, "nested-schema"));
  CHECK(has_rule(errors, "length"));
}

TEST_CASE("check_schema rejects self reference and excessive depth") {
  auto self = std::make_shared<TypeSchema>();
  self->name = "Loop";
  auto f = field("next", BaseType::Nested, {}, true);
  f.nested = self;
  self->fields.push_back(f);
  CHECK(has_rule(check_schema(*self), "acyclic"));
  self->fields.clear();  // break the reference cycle

  auto chain = [](int levels) {
    auto leaf = std::make_shared<TypeSchema>();
    leaf->name = "L0";
    SchemaPtr current = leaf;
    for (int i = 1; i < levels; ++i) {
      auto s = std::make_shared<TypeSchema>();
      s->name = "L" + std::to_string(i);
      auto nf = field("child", BaseType::Nested);
      nf.nested = current;
      s->fields.push_back(nf);
      current = s;
    }
    return current;
  };
  CHECK(check_schema(*chain(kMaxNestingDepth)).empty());
  CHECK(has_rule(check_schema(*chain(kMaxNestingDepth + 1)), "max-depth"));
}

TEST_CASE("validate_instance reports an out-of-range integer") {
  TypeSchema s;
  s.name = "N";
  s.fields.push_back(field("n", BaseType::Integer, {Constraint::range(0, 10)}));
  auto v = validate_instance(s, Json{{"n", 11}});
  REQUIRE(v.size() == 1);
  CHECK(v[0].path == "$.n");
  CHECK(v[0].kind == ViolationKind::Constraint);
  CHECK_FALSE(v[0].message.empty());
}

TEST_CASE("validate_instance accepts an exact match without constraints") {
  TypeSchema s;
  s.name = "Plain";
  s.fields.push_back(field("a", BaseType::String));
  s.fields.push_back(field("b", BaseType::Boolean));
  s.fields.push_back(field("c", BaseType::Real));
  CHECK(validate_instance(s, Json{{"a", "x"}, {"b", false}, {"c", 1.5}}).empty());
}

TEST_CASE("nested missing field and sibling regex failure give two violations") {
  auto person = nested_schema();
  Json value = {{"name", "Ada"}, {"home", {{"zip", "12a45"}}}, {"tags", Json::array()}};
  auto v = validate_instance(*person, value);
  REQUIRE(v.size() == 2);
  CHECK(v[0].path == "$.home.street");
  CHECK(v[0].kind == ViolationKind::Missing);
  CHECK(v[1].path == "$.home.zip");
  CHECK(v[1].kind == ViolationKind::Constraint);

  const auto expected = testing::oracle_violations(*person, value);
  REQUIRE(expected.size() == v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    CHECK(v[i].path == expected[i].first);
    CHECK(v[i].kind == expected[i].second);
  }
}

TEST_CASE("validate_instance does not short-circuit constraints") {
  TypeSchema s;
  s.name = "Multi";
  s.fields.push_back(field("s", BaseType::String,
                           {Constraint::regex("^[a-z]+$"), Constraint::length(5, 9),
                            Constraint::non_empty()}));
  auto v = validate_instance(s, Json{{"s", ""}});
  CHECK(v.size() == 3);
}

TEST_CASE("numeric typing: integers reject fractions, reals accept integers") {
  TypeSchema s;
  s.name = "Num";
  s.fields.push_back(field("i", BaseType::Integer));
  s.fields.push_back(field("r", BaseType::Real));
  CHECK(validate_instance(s, Json::parse(R"({"i": 3, "r": 3})")).empty());
  auto v = validate_instance(s, Json::parse(R"({"i": 3.0, "r": 2.5})"));
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == ViolationKind::TypeMismatch);
  CHECK(v[0].path == "$.i");
}

TEST_CASE("string length counts code points") {
  TypeSchema s;
  s.name = "Len";
  s.fields.push_back(field("s", BaseType::String, {Constraint::length(3, 3)}));
  CHECK(validate_instance(s, Json{{"s", "\xE6\x97\xA5\xE6\x9C\xAC\xE8\xAA\x9E"}}).empty());
  CHECK(utf8_length("\xF0\x9F\x99\x82x") == 2);
  CHECK(utf8_prefix("\xC3\xA9\xC3\xA9\xC3\xA9", 2) == "\xC3\xA9\xC3\xA9");
}

TEST_CASE("optional fields may be absent or null, required may not") {
  TypeSchema s;
  s.name = "Opt";
  s.fields.push_back(field("a", BaseType::String, {}, true));
  s.fields.push_back(field("b", BaseType::String));
  CHECK(validate_instance(s, Json{{"a", nullptr}, {"b", "x"}}).empty());
  auto v = validate_instance(s, Json{{"b", nullptr}});
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == ViolationKind::Missing);
  auto root = validate_instance(s, Json::array());
  REQUIRE(root.size() == 1);
  CHECK(root[0].path == "$");
}

TEST_CASE("render_schema_prompt lists name, type and regex") {
  auto text = render_schema_prompt(*email_schema());
  CHECK(text.find("email") != std::string::npos);
  CHECK(text.find("string") != std::string::npos);
  CHECK(text.find("^[^@]+@[^@]+$") != std::string::npos);
  CHECK(text.find("single JSON object") != std::string::npos);
  CHECK(render_schema_prompt(*email_schema()) == text);
}

TEST_CASE("render_schema_prompt matches the frozen nested rendering") {
  const auto text = render_schema_prompt(*nested_schema());
  const std::string path = std::string(DBC_TEST_GOLDEN) + "/nested_schema_prompt.txt";
  if (std::getenv("DBC_UPDATE_GOLDEN")) {
    std::ofstream(path, std::ios::binary) << text;
  }
  CHECK(text == read_file(path));
  CHECK(text.find("\n    - street") != std::string::npos);
}

TEST_CASE("parse_output on a bare object") {
  auto parsed = parse_output(R"({"email":"a@b.com"})", email_schema());
  REQUIRE(std::holds_alternative<Instance>(parsed));
  CHECK(std::get<Instance>(parsed).value() == Json{{"email", "a@b.com"}});
}

TEST_CASE("parse_output prefers the fenced block") {
  const std::string bare = R"({"email":"a@b.com"})";
  const std::string chatty = "Here you go {not this}:\n```json\n" + bare + "\n```\nThanks!";
  auto a = parse_output(bare, email_schema());
  auto b = parse_output(chatty, email_schema());
  REQUIRE(std::holds_alternative<Instance>(a));
  REQUIRE(std::holds_alternative<Instance>(b));
  CHECK(std::get<Instance>(a) == std::get<Instance>(b));
}

TEST_CASE("parse_output without braces is a root parse violation") {
  auto parsed = parse_output("no object here", email_schema());
  REQUIRE(std::holds_alternative<ParseError>(parsed));
  const auto& e = std::get<ParseError>(parsed);
  CHECK(e.violation.kind == ViolationKind::Parse);
  CHECK(e.violation.path == "$");
  CHECK(e.details.empty());
}

TEST_CASE("parse_output reports field violations as details") {
  auto parsed = parse_output(R"(answer: {"email":"nope"})", email_schema());
  REQUIRE(std::holds_alternative<ParseError>(parsed));
  const auto& e = std::get<ParseError>(parsed);
  CHECK(e.violation.kind == ViolationKind::Parse);
  REQUIRE(e.details.size() == 1);
  CHECK(e.details[0].path == "$.email");
}

TEST_CASE("extract_candidate handles braces inside strings and unclosed fences") {
  CHECK(extract_candidate(R"(x {"a":"}{"} y)") == std::optional<std::string_view>(R"({"a":"}{"})"));
  CHECK(extract_candidate("```json\n{\"a\":1}") == std::optional<std::string_view>("{\"a\":1}"));
  CHECK(extract_candidate("{ unbalanced") == std::nullopt);
  CHECK(extract_candidate("a } b { \"k\": \"\\\"}\" } c") ==
        std::optional<std::string_view>("{ \"k\": \"\\\"}\" }"));
}

TEST_CASE("serialize_instance is canonical") {
  auto one = Instance::create(email_schema(), Json{{"email", "a@b.com"}});
  CHECK(serialize_instance(one) == R"({"email":"a@b.com"})");

  auto empty = std::make_shared<TypeSchema>();
  empty->name = "Ack";
  CHECK(serialize_instance(Instance::create(empty, Json::object())) == "{}");

  auto person = nested_schema();
  Json shuffled = Json::parse(
      R"({"tags":["a"],"extra":1,"home":{"zip":"12345","street":"Main"},"age":null,"name":"Ada"})");
  auto inst = Instance::create(person, shuffled);
  CHECK(serialize_instance(inst) ==
        R"({"name":"Ada","home":{"street":"Main","zip":"12345"},"tags":["a"]})");
}

TEST_CASE("Instance::create rejects ill-typed values") {
  CHECK_THROWS_AS(Instance::create(email_schema(), Json{{"email", 3}}), std::invalid_argument);
  auto r = Instance::try_create(email_schema(), Json::object());
  REQUIRE(std::holds_alternative<std::vector<Violation>>(r));
}

TEST_CASE("schema documents round-trip") {
  auto person = nested_schema();
  auto doc = schema_to_json(*person);
  auto back = schema_from_json(doc);
  CHECK(*back == *person);
  CHECK(schema_to_json(*back) == doc);

  auto by_name = schema_to_json(*person, true);
  auto address = person->fields[2].nested;
  auto resolved = schema_from_json(by_name, [&](const std::string& n) {
    return n == "Address" ? address : nullptr;
  });
  CHECK(*resolved == *person);
  CHECK_THROWS_AS(schema_from_json(Json{{"name", "X"}, {"fields", {{{"name", "a"}, {"base", "decimal"}}}}}),
                  std::invalid_argument);
}
