#include "dbc/generators.hpp"

#include <fstream>
#include <random>
#include <set>

#include "text_util.hpp"

namespace dbc {

std::string_view to_string(TransportError::Kind kind) {
  switch (kind) {
    case TransportError::Kind::Connection: return "connection";
    case TransportError::Kind::Timeout: return "timeout";
    case TransportError::Kind::Status: return "status";
    case TransportError::Kind::MalformedBody: return "malformed-body";
    case TransportError::Kind::Script: return "script";
  }
  return "unknown";
}

std::int64_t approximate_tokens(std::string_view text) {
  return static_cast<std::int64_t>((text.size() + 3) / 4);
}

// ---------------------------------------------------------------------------
// Scripted mock

std::vector<ScriptEntry> parse_script(const Json& doc) {
  if (!doc.is_array()) throw std::invalid_argument("script must be a JSON list");
  std::vector<ScriptEntry> entries;
  for (const auto& item : doc) {
    if (!item.is_object() || !item.contains("response") ||
        !item["response"].is_string()) {
      throw std::invalid_argument(
          "script entry " + std::to_string(entries.size()) +
          " must be an object with a string 'response'");
    }
    ScriptEntry entry;
    entry.response = item["response"].get<std::string>();
    if (item.contains("match") && !item["match"].is_null()) {
      if (!item["match"].is_string()) {
        throw std::invalid_argument("script entry " + std::to_string(entries.size()) +
                                    ": 'match' must be a string");
      }
      entry.match = item["match"].get<std::string>();
    }
    entries.push_back(std::move(entry));
  }
  return entries;
}

std::vector<ScriptEntry> replay_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open script file " + path.string());
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw std::invalid_argument("script file " + path.string() + ": " + e.what());
  }
  return parse_script(doc);
}

Json script_to_json(const std::vector<ScriptEntry>& entries) {
  Json doc = Json::array();
  for (const auto& e : entries) {
    Json item = Json::object();
    if (e.match) item["match"] = *e.match;
    item["response"] = e.response;
    doc.push_back(std::move(item));
  }
  return doc;
}

ScriptedGenerator::ScriptedGenerator(std::vector<ScriptEntry> entries)
    : entries_(std::move(entries)), consumed_(entries_.size(), false) {}

GeneratorResponse ScriptedGenerator::generate(const GeneratorRequest& request) {
  std::lock_guard lock(mutex_);
  prompts_.push_back(request.prompt);
  bool any_left = false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (consumed_[i]) continue;
    any_left = true;
    const auto& entry = entries_[i];
    if (entry.match && request.prompt.find(*entry.match) == std::string::npos) {
      continue;
    }
    consumed_[i] = true;
    GeneratorResponse response;
    response.text = entry.response;
    response.tokens_in = approximate_tokens(request.prompt);
    response.tokens_out = approximate_tokens(entry.response);
    return response;
  }
  if (!any_left) {
    throw TransportError(TransportError::Kind::Script,
                         "script exhausted after " + std::to_string(entries_.size()) +
                             " response(s)");
  }
  throw TransportError(TransportError::Kind::Script,
                       "no scripted response matches the prompt");
}

std::shared_ptr<Generator> ScriptedGenerator::fork(std::uint64_t) const {
  return std::make_shared<ScriptedGenerator>(entries_);
}

std::size_t ScriptedGenerator::calls() const {
  std::lock_guard lock(mutex_);
  return prompts_.size();
}

std::vector<std::string> ScriptedGenerator::prompts() const {
  std::lock_guard lock(mutex_);
  return prompts_;
}

// ---------------------------------------------------------------------------
// Bernoulli mock

namespace {

// Uniform double in [0, 1) from the top 53 bits.
double unit_draw(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

BernoulliGenerator::BernoulliGenerator(BernoulliSettings settings, std::uint64_t stream)
    : settings_(std::make_shared<const BernoulliSettings>(std::move(settings))),
      stream_(stream) {}

std::vector<std::string> BernoulliGenerator::failing_families(std::uint64_t index) const {
  std::mt19937_64 rng(detail::mix_seed(detail::mix_seed(settings_->seed, stream_), index));
  std::vector<std::string> failing;
  const auto& families = settings_->families;
  if (settings_->sampling == FamilySampling::Independent) {
    for (const auto& f : families) {
      if (unit_draw(rng) >= f.pass_probability) failing.push_back(f.name);
    }
  } else {
    double u = unit_draw(rng);
    double acc = 0.0;
    for (const auto& f : families) {
      acc += 1.0 - f.pass_probability;
      if (u < acc) {
        failing.push_back(f.name);
        break;
      }
    }
  }
  return failing;
}

GeneratorResponse BernoulliGenerator::generate(const GeneratorRequest& request) {
  const auto index = next_call_.fetch_add(1);
  Json output = settings_->valid_output;
  for (const auto& name : failing_families(index)) {
    for (const auto& f : settings_->families) {
      if (f.name == name) output.merge_patch(f.corruption);
    }
  }
  GeneratorResponse response;
  response.text = output.dump();
  if (settings_->fenced) response.text = "```json\n" + response.text + "\n```";
  response.tokens_in = approximate_tokens(request.prompt);
  response.tokens_out = approximate_tokens(response.text);
  response.latency = settings_->latency;
  return response;
}

std::shared_ptr<Generator> BernoulliGenerator::fork(std::uint64_t stream) const {
  return std::make_shared<BernoulliGenerator>(*settings_,
                                              detail::mix_seed(stream_, stream));
}

// ---------------------------------------------------------------------------
// Configuration

std::string_view to_string(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::ScriptedMock: return "scripted-mock";
    case GeneratorKind::BernoulliMock: return "bernoulli-mock";
    case GeneratorKind::Http: return "http";
  }
  return "unknown";
}

std::optional<GeneratorKind> generator_kind_from_string(std::string_view text) {
  if (text == "scripted-mock" || text == "scripted") return GeneratorKind::ScriptedMock;
  if (text == "bernoulli-mock" || text == "bernoulli") return GeneratorKind::BernoulliMock;
  if (text == "http") return GeneratorKind::Http;
  return std::nullopt;
}

std::vector<std::string> check_generator_config(const GeneratorConfig& config) {
  std::vector<std::string> errors;
  switch (config.kind) {
    case GeneratorKind::ScriptedMock:
      break;
    case GeneratorKind::BernoulliMock: {
      const auto& b = config.bernoulli;
      if (!b.valid_output.is_object()) errors.push_back("bernoulli: 'valid' must be an object");
      std::set<std::string> names;
      double failure_mass = 0.0;
      for (const auto& f : b.families) {
        if (f.name.empty()) errors.push_back("bernoulli: family name is empty");
        if (!names.insert(f.name).second) {
          errors.push_back("bernoulli: duplicate family '" + f.name + "'");
        }
        if (!(f.pass_probability >= 0.0 && f.pass_probability <= 1.0)) {
          errors.push_back("bernoulli: probability of family '" + f.name +
                           "' must lie in [0, 1]");
        }
        failure_mass += 1.0 - f.pass_probability;
      }
      if (b.sampling == FamilySampling::Exclusive && failure_mass > 1.0 + 1e-9) {
        errors.push_back("bernoulli: exclusive sampling needs failure probabilities summing to at most 1");
      }
      if (b.latency.count() < 0) errors.push_back("bernoulli: latency must be >= 0");
      break;
    }
    case GeneratorKind::Http: {
      const auto& h = config.http;
      if (h.endpoint.rfind("http://", 0) != 0 && h.endpoint.rfind("https://", 0) != 0) {
        errors.push_back("http: endpoint must start with http:// or https://");
      }
      if (h.model.empty()) errors.push_back("http: model is empty");
      if (!(h.timeout.count() > 0)) errors.push_back("http: timeout must be > 0");
      if (h.max_in_flight < 1) errors.push_back("http: max_in_flight must be >= 1");
      if (h.temperature && *h.temperature < 0) {
        errors.push_back("http: temperature must be >= 0");
      }
      break;
    }
  }
  return errors;
}

namespace {

template <typename T>
T member_or(const Json& doc, const char* key, T fallback, const std::string& context) {
  if (!doc.contains(key) || doc[key].is_null()) return fallback;
  try {
    return doc[key].get<T>();
  } catch (const Json::exception&) {
    throw std::invalid_argument(context + ": '" + key + "' has the wrong type");
  }
}

}  // namespace

GeneratorConfig generator_config_from_json(const Json& doc,
                                           const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw std::invalid_argument("generator config must be an object");
  auto kind_text = member_or<std::string>(doc, "kind", "", "generator");
  auto kind = generator_kind_from_string(kind_text);
  if (!kind) throw std::invalid_argument("unknown generator kind '" + kind_text + "'");
  GeneratorConfig config;
  config.kind = *kind;
  config.name = member_or<std::string>(doc, "name", "", "generator");
  const std::string context = "generator '" + std::string(to_string(*kind)) + "'";
  switch (config.kind) {
    case GeneratorKind::ScriptedMock: {
      if (!doc.contains("script")) throw std::invalid_argument(context + ": missing 'script'");
      const auto& script = doc["script"];
      if (script.is_string()) {
        std::filesystem::path path = script.get<std::string>();
        if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
        config.script_path = path.lexically_normal();
        config.script = replay_script(*config.script_path);
      } else {
        config.script = parse_script(script);
      }
      break;
    }
    case GeneratorKind::BernoulliMock: {
      auto& b = config.bernoulli;
      b.seed = member_or<std::uint64_t>(doc, "seed", 0, context);
      b.valid_output = doc.contains("valid") ? doc["valid"] : Json::object();
      b.latency = Millis(member_or<double>(doc, "latency_ms", 0.0, context));
      b.fenced = member_or<bool>(doc, "fenced", false, context);
      auto sampling = member_or<std::string>(doc, "sampling", "independent", context);
      if (sampling == "independent") {
        b.sampling = FamilySampling::Independent;
      } else if (sampling == "exclusive") {
        b.sampling = FamilySampling::Exclusive;
      } else {
        throw std::invalid_argument(context + ": unknown sampling '" + sampling + "'");
      }
      if (doc.contains("families")) {
        if (!doc["families"].is_array()) {
          throw std::invalid_argument(context + ": 'families' must be a list");
        }
        for (const auto& f : doc["families"]) {
          if (!f.is_object()) throw std::invalid_argument(context + ": family must be an object");
          BernoulliFamily family;
          family.name = member_or<std::string>(f, "name", "", context);
          family.pass_probability = member_or<double>(f, "p", 1.0, context);
          family.corruption = f.contains("corrupt") ? f["corrupt"] : Json::object();
          b.families.push_back(std::move(family));
        }
      }
      break;
    }
    case GeneratorKind::Http: {
      auto& h = config.http;
      h.endpoint = member_or<std::string>(doc, "endpoint", "", context);
      h.model = member_or<std::string>(doc, "model", "", context);
      if (doc.contains("temperature") && !doc["temperature"].is_null()) {
        h.temperature = member_or<double>(doc, "temperature", 0.0, context);
      }
      h.timeout = Millis(member_or<double>(doc, "timeout_ms", 30000.0, context));
      h.max_in_flight = member_or<int>(doc, "max_in_flight", 4, context);
      h.api_key_env = member_or<std::string>(doc, "api_key_env", "CONTRACT_API_KEY", context);
      break;
    }
  }
  return config;
}

Json generator_config_to_json(const GeneratorConfig& config) {
  Json doc = Json::object();
  doc["kind"] = std::string(to_string(config.kind));
  if (!config.name.empty()) doc["name"] = config.name;
  switch (config.kind) {
    case GeneratorKind::ScriptedMock:
      if (config.script_path) {
        doc["script"] = config.script_path->string();
      } else {
        doc["script"] = script_to_json(config.script);
      }
      break;
    case GeneratorKind::BernoulliMock: {
      const auto& b = config.bernoulli;
      doc["seed"] = b.seed;
      doc["sampling"] = b.sampling == FamilySampling::Independent ? "independent" : "exclusive";
      doc["valid"] = b.valid_output;
      Json families = Json::array();
      for (const auto& f : b.families) {
        families.push_back(Json{{"name", f.name}, {"p", f.pass_probability}, {"corrupt", f.corruption}});
      }
      doc["families"] = std::move(families);
      doc["latency_ms"] = b.latency.count();
      doc["fenced"] = b.fenced;
      break;
    }
    case GeneratorKind::Http: {
      const auto& h = config.http;
      doc["endpoint"] = h.endpoint;
      doc["model"] = h.model;
      if (h.temperature) doc["temperature"] = *h.temperature;
      doc["timeout_ms"] = h.timeout.count();
      doc["max_in_flight"] = h.max_in_flight;
      doc["api_key_env"] = h.api_key_env;
      break;
    }
  }
  return doc;
}

GeneratorHandle make_generator(const GeneratorConfig& config) {
  auto errors = check_generator_config(config);
  if (!errors.empty()) throw std::invalid_argument(detail::join(errors, "; "));
  switch (config.kind) {
    case GeneratorKind::ScriptedMock:
      return std::make_shared<ScriptedGenerator>(config.script);
    case GeneratorKind::BernoulliMock:
      return std::make_shared<BernoulliGenerator>(config.bernoulli);
    case GeneratorKind::Http:
      return std::make_shared<HttpGenerator>(config.http);
  }
  throw std::invalid_argument("unknown generator kind");
}

GeneratorResponse generate(const GeneratorConfig& config,
                           const GeneratorRequest& request) {
  if (request.max_tokens < 1) throw std::invalid_argument("max_tokens must be >= 1");
  return make_generator(config)->generate(request);
}

}  // namespace dbc
