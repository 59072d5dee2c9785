#include "dro/cli/run_config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "dro/error.hpp"

namespace dro::cli {

extern const char* const kRunConfigSchemaText; // generated from configs/

namespace {

using nlohmann::json;

bool has_type(const json& value, const std::string& type) {
  if (type == "object") return value.is_object();
  if (type == "array") return value.is_array();
  if (type == "string") return value.is_string();
  if (type == "boolean") return value.is_boolean();
  if (type == "null") return value.is_null();
  if (type == "integer") {
    if (value.is_number_integer()) return true;
    return value.is_number_float() && std::isfinite(value.get<double>()) &&
           value.get<double>() == std::floor(value.get<double>());
  }
  if (type == "number") return value.is_number();
  throw ConfigError("schema uses unknown type '" + type + "'");
}

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ConfigError("config " + (where.empty() ? std::string("/") : where) + ": " + what);
}

void check(const json& doc, const json& schema, const std::string& where) {
  if (auto t = schema.find("type"); t != schema.end()) {
    bool ok = false;
    std::string names;
    for (const auto& ty : t->is_array() ? *t : json::array({*t})) {
      ok = ok || has_type(doc, ty.get<std::string>());
      names += (names.empty() ? "" : " or ") + ty.get<std::string>();
    }
    if (!ok) fail(where, "expected " + names + ", got " + doc.dump());
  }
  if (auto e = schema.find("enum"); e != schema.end()) {
    bool found = false;
    for (const auto& v : *e) found = found || v == doc;
    if (!found) fail(where, doc.dump() + " is not one of " + e->dump());
  }
  if (doc.is_number()) {
    const double v = doc.get<double>();
    if (!std::isfinite(v)) fail(where, "must be finite");
    if (auto m = schema.find("minimum"); m != schema.end() && v < m->get<double>())
      fail(where, "must be >= " + m->dump());
    if (auto m = schema.find("maximum"); m != schema.end() && v > m->get<double>())
      fail(where, "must be <= " + m->dump());
    if (auto m = schema.find("exclusiveMinimum"); m != schema.end() && v <= m->get<double>())
      fail(where, "must be > " + m->dump());
    if (auto m = schema.find("exclusiveMaximum"); m != schema.end() && v >= m->get<double>())
      fail(where, "must be < " + m->dump());
  }
  if (doc.is_object()) {
    if (auto r = schema.find("required"); r != schema.end())
      for (const auto& key : *r)
        if (!doc.contains(key.get<std::string>())) fail(where, "missing key '" + key.get<std::string>() + "'");
    const json* props = schema.contains("properties") ? &schema.at("properties") : nullptr;
    const bool closed = schema.value("additionalProperties", true) == false;
    for (const auto& [key, value] : doc.items()) {
      if (props != nullptr && props->contains(key))
        check(value, props->at(key), where + "/" + key);
      else if (closed)
        fail(where, "unknown key '" + key + "'");
    }
  }
  if (doc.is_array()) {
    if (auto m = schema.find("minItems"); m != schema.end() && doc.size() < m->get<std::size_t>())
      fail(where, "needs at least " + m->dump() + " items");
    if (auto items = schema.find("items"); items != schema.end())
      for (std::size_t i = 0; i < doc.size(); ++i) check(doc[i], *items, where + "/" + std::to_string(i));
  }
}

void overlay(json& base, const json& patch) {
  if (!base.is_object() || !patch.is_object()) {
    base = patch;
    return;
  }
  for (const auto& [key, value] : patch.items()) {
    if (base.contains(key) && base[key].is_object() && value.is_object())
      overlay(base[key], value);
    else
      base[key] = value;
  }
}

std::string to_string(SeedMode m) { return m == SeedMode::derived ? "derived" : "common"; }

json synthetic_json(const data::SyntheticSpec& s) {
  return {{"n_samples", s.n_samples},
          {"n_features", s.n_features},
          {"ambiguous_fraction", s.ambiguous_fraction},
          {"signal_features", s.signal_features},
          {"flip_noise", s.flip_noise},
          {"signal_density", s.signal_density},
          {"background_density", s.background_density},
          {"ambiguous_density", s.ambiguous_density},
          {"seed", s.seed}};
}

RunConfig from_json(const json& doc) {
  RunConfig c;
  const auto& d = doc.at("data");
  c.intent_classes = data::intent_classes_from_string(d.at("intent_classes").get<std::string>());
  c.fail_fast = d.at("fail_fast").get<bool>();
  c.train_fraction = d.at("train_fraction").get<double>();
  c.validation_fraction = d.at("validation_fraction").get<double>();
  if (c.train_fraction + c.validation_fraction >= 1.0)
    throw ConfigError("config /data: train_fraction + validation_fraction must leave room for a test split");
  const auto& s = d.at("synthetic");
  c.synthetic.n_samples = s.at("n_samples").get<std::size_t>();
  c.synthetic.n_features = s.at("n_features").get<std::size_t>();
  c.synthetic.ambiguous_fraction = s.at("ambiguous_fraction").get<double>();
  c.synthetic.signal_features = s.at("signal_features").get<std::size_t>();
  c.synthetic.flip_noise = s.at("flip_noise").get<double>();
  c.synthetic.signal_density = s.at("signal_density").get<double>();
  c.synthetic.background_density = s.at("background_density").get<double>();
  c.synthetic.ambiguous_density = s.at("ambiguous_density").get<double>();
  c.synthetic.seed = s.at("seed").get<std::uint64_t>();
  c.synthetic.validate();

  json r = doc.at("router");
  r["eval_batch_size"] = doc.at("eval").at("batch_size");
  c.router = router::router_config_from_json(r);
  c.classifier = clf::classifier_config_from_json(doc.at("classifier"));

  const auto& w = doc.at("sweep");
  c.sweep.lambda_grid = w.at("lambda_grid").get<std::vector<double>>();
  c.sweep.mu_grid = w.at("mu_grid").get<std::vector<double>>();
  c.sweep.fixed_mu = w.at("fixed_mu").get<double>();
  if (!w.at("best_lambda").is_null()) c.sweep.best_lambda = w.at("best_lambda").get<double>();
  c.sweep.full_grid = w.at("full_grid").get<bool>();
  c.sweep.seed_mode = w.at("seed_mode").get<std::string>() == "derived" ? SeedMode::derived : SeedMode::common;
  return c;
}

} // namespace

const json& run_config_schema() {
  static const json schema = json::parse(kRunConfigSchemaText);
  return schema;
}

void validate_schema(const json& doc, const json& schema) { check(doc, schema, ""); }

json to_json(const RunConfig& c) {
  json r = router::to_json(c.router);
  const auto eval_batch = r.at("eval_batch_size");
  r.erase("eval_batch_size");
  return {{"data",
           {{"intent_classes", data::to_string(c.intent_classes)},
            {"fail_fast", c.fail_fast},
            {"train_fraction", c.train_fraction},
            {"validation_fraction", c.validation_fraction},
            {"synthetic", synthetic_json(c.synthetic)}}},
          {"router", r},
          {"classifier", clf::to_json(c.classifier)},
          {"eval", {{"batch_size", eval_batch}}},
          {"sweep",
           {{"lambda_grid", c.sweep.lambda_grid},
            {"mu_grid", c.sweep.mu_grid},
            {"fixed_mu", c.sweep.fixed_mu},
            {"best_lambda", c.sweep.best_lambda ? json(*c.sweep.best_lambda) : json(nullptr)},
            {"full_grid", c.sweep.full_grid},
            {"seed_mode", to_string(c.sweep.seed_mode)}}}};
}

RunConfig resolve_config(const json& overrides) {
  if (!overrides.is_object()) throw ConfigError("config must be a JSON object");
  json merged = to_json(RunConfig{});
  overlay(merged, overrides);
  validate_schema(merged, run_config_schema());
  try {
    return from_json(merged);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

RunConfig load_config(const std::optional<std::filesystem::path>& path) {
  if (!path) return resolve_config(json::object());
  std::ifstream in(*path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path->string());
  std::ostringstream text;
  text << in.rdbuf();
  json doc;
  try {
    doc = json::parse(text.str());
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path->string() + " is not valid JSON: " + e.what());
  }
  return resolve_config(doc);
}

} // namespace dro::cli
