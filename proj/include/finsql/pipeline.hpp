#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "finsql/calibration.hpp"
#include "finsql/error.hpp"
#include "finsql/http.hpp"
#include "finsql/llm_client.hpp"
#include "finsql/prompts.hpp"
#include "finsql/schema.hpp"
#include "finsql/schema_link.hpp"

namespace finsql::pipeline {

// JSON config; relative paths resolve against the config file's directory.
//   {"schema": "...", "scorer": "lexical" | "remote:<url>", "k_tables": 3,
//    "m_columns": 7, "llm": "mock:<script>" | "remote:<url>", "model": "...",
//    "credential_env": "...", "sample_count": 5, "temperature": 0.8,
//    "max_tokens": 512, "seed": 0, "prompt_template": "...", "output": "..."}
struct PipelineConfig {
  std::filesystem::path schema;
  std::string scorer = "lexical";
  std::size_t k_tables = kDefaultTopTables;
  std::size_t m_columns = kDefaultTopColumns;
  std::string llm;
  std::string model;
  std::string credential_env;
  std::size_t sample_count = 5;
  double temperature = 0.8;
  std::size_t max_tokens = 512;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> prompt_template;
  std::optional<std::filesystem::path> output;

  void validate() const {
    if (schema.empty()) throw MissingField("schema");
    if (llm.empty()) throw MissingField("llm");
    if (sample_count < 1) throw Error("sample_count must be at least 1");
    if (!std::filesystem::exists(schema)) throw Error("schema file not found: " + schema.string());
    if (prompt_template && !std::filesystem::exists(*prompt_template))
      throw Error("prompt template not found: " + prompt_template->string());
  }
};

namespace detail {

// "mock:<path>" with a relative path is resolved against `base`.
inline std::string resolve_endpoint(const std::string& endpoint, const std::filesystem::path& base) {
  if (!text::istarts_with(endpoint, "mock:")) return endpoint;
  const std::filesystem::path p = endpoint.substr(5);
  return "mock:" + (p.is_absolute() ? p : base / p).string();
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

inline PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base = ".") {
  PipelineConfig c;
  const auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
  };
  try {
    if (!j.contains("schema")) throw MissingField("schema");
    if (!j.contains("llm")) throw MissingField("llm");
    c.schema = resolve(j.at("schema").get<std::string>());
    c.scorer = j.value("scorer", c.scorer);
    c.k_tables = j.value("k_tables", c.k_tables);
    c.m_columns = j.value("m_columns", c.m_columns);
    c.llm = detail::resolve_endpoint(j.at("llm").get<std::string>(), base);
    c.model = j.value("model", c.model);
    c.credential_env = j.value("credential_env", c.credential_env);
    c.sample_count = j.value("sample_count", c.sample_count);
    c.temperature = j.value("temperature", c.temperature);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.seed = j.value("seed", c.seed);
    if (j.contains("prompt_template")) c.prompt_template = resolve(j.at("prompt_template").get<std::string>());
    if (j.contains("output")) c.output = resolve(j.at("output").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("invalid config: ") + e.what());
  }
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

inline std::unique_ptr<Scorer> make_scorer(const std::string& spec, std::shared_ptr<HttpTransport> transport = nullptr) {
  if (spec == "lexical") return std::make_unique<LexicalScorer>();
  if (text::istarts_with(spec, "remote:")) {
    if (!transport) transport = std::make_shared<HttplibTransport>();
    return std::make_unique<RemoteScorer>(spec.substr(7), std::move(transport));
  }
  throw Error("scorer must be 'lexical' or 'remote:<url>', got '" + spec + "'");
}

struct InferResult {
  LinkResult link;
  std::string prompt;
  std::vector<std::string> candidates;
  calibration::CalibrationReport report;
};

// link -> prompt over the linked sub-schema -> n samples -> calibrate against
// the full schema, with the linker's table scores guiding alignment.
inline InferResult infer(const std::string& question, const SchemaCatalog& schema, const Scorer& scorer,
                         llm::CompletionBackend& model, const PipelineConfig& config) {
  if (text::trim(question).empty()) throw MissingField("question");
  InferResult r;
  r.link = link(question, schema, scorer, config.k_tables, config.m_columns);
  const std::string tmpl =
      config.prompt_template ? detail::read_text(*config.prompt_template) : std::string(prompts::kInferTemplate);
  r.prompt = prompts::infer_prompt(question, r.link.sub_schema, tmpl);
  r.candidates = llm::sample_candidates(model, r.prompt, config.sample_count, config.temperature, config.max_tokens);

  calibration::CandidateSet cs;
  cs.candidates = r.candidates;
  cs.schema = &schema;
  for (const auto& t : r.link.ranked_tables) cs.table_scores[t.name] = t.score;
  r.report = calibration::calibrate(cs);
  return r;
}

inline InferResult infer(const std::string& question, const PipelineConfig& config,
                         std::shared_ptr<HttpTransport> transport = nullptr) {
  config.validate();
  const SchemaCatalog schema = load_schema(config.schema.string());
  const auto scorer = make_scorer(config.scorer, transport);
  llm::RemoteConfig rc;
  rc.model = config.model;
  rc.credential_env = config.credential_env;
  const auto model = llm::make_backend(config.llm, rc, transport);
  return infer(question, schema, *scorer, *model, config);
}

}  // namespace finsql::pipeline
