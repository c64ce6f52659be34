#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "finsql/augmentation.hpp"
#include "finsql/calibration.hpp"
#include "finsql/lora.hpp"
#include "finsql/pipeline.hpp"
#include "finsql/schema_link.hpp"
#include "finsql/sql_skeleton.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace finsql;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitRejected = 2;
constexpr int kExitTransport = 3;
constexpr int kExitIntegrity = 4;

const char* kFooter =
    "Exit codes: 0 success, 1 usage or input error, 2 every candidate rejected,\n"
    "3 LLM or scorer endpoint failure, 4 plugin integrity failure.";

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(p.string() + " is not valid JSON: " + e.what());
  }
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Written next to the target and renamed, so a failed run leaves nothing.
void write_atomic(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    out << content;
    if (!out) throw Error("cannot write " + p.string());
  }
  fs::rename(tmp, p);
}

void emit(const json& j) { std::cout << j.dump(2) << "\n"; }

// ---------------------------------------------------------------------------

struct InferArgs {
  std::string config;
  std::string question;
  std::string output;
};

int run_infer(const InferArgs& a) {
  auto config = pipeline::load_config(a.config);
  if (!a.output.empty()) config.output = a.output;
  const auto r = pipeline::infer(a.question, config);
  const std::string body = calibration::to_json(r.report).dump(2) + "\n";
  if (config.output) write_atomic(*config.output, body);
  std::cout << body;
  return kExitOk;
}

struct CalibrateArgs {
  std::string input;
};

// {"schema_ref": "<path relative to this file>", "candidates": [...],
//  "table_scores": {"table": score}}
int run_calibrate(const CalibrateArgs& a) {
  const auto j = read_json(a.input);
  if (!j.contains("schema_ref")) throw MissingField("schema_ref");
  if (!j.contains("candidates")) throw MissingField("candidates");
  fs::path ref = j.at("schema_ref").get<std::string>();
  if (ref.is_relative()) ref = fs::path(a.input).parent_path() / ref;
  const auto schema = load_schema(ref.string());
  calibration::CandidateSet cs;
  cs.candidates = j.at("candidates").get<std::vector<std::string>>();
  cs.schema = &schema;
  if (j.contains("table_scores")) cs.table_scores = j.at("table_scores").get<calibration::TableScores>();
  emit(calibration::to_json(calibration::calibrate(cs)));
  return kExitOk;
}

int run_skeleton(const std::string& sql_text) {
  emit({{"skeleton", sql::extract_skeleton(sql_text).text}});
  return kExitOk;
}

struct LinkArgs {
  std::string schema;
  std::string question;
  std::size_t k_tables = kDefaultTopTables;
  std::size_t m_columns = kDefaultTopColumns;
  std::string scorer = "lexical";
};

int run_link(const LinkArgs& a) {
  const auto schema = load_schema(a.schema);
  const auto scorer = pipeline::make_scorer(a.scorer);
  emit(to_json(link(a.question, schema, *scorer, a.k_tables, a.m_columns)));
  return kExitOk;
}

struct EvalArgs {
  std::string schema;
  std::string examples;
  std::string scorer = "lexical";
  std::vector<std::size_t> table_ks = {1, 3, 5};
  std::vector<std::size_t> column_ks = {5, 7, 10};
};

// Examples: JSON lines {question, gold_tables: [...], gold_columns: ["t.c", ...]}.
int run_eval_linking(const EvalArgs& a) {
  const auto schema = load_schema(a.schema);
  const auto scorer = pipeline::make_scorer(a.scorer);
  std::ifstream in(a.examples);
  if (!in) throw Error("cannot read " + a.examples);
  std::vector<std::pair<LinkResult, GoldLink>> results;
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    const auto j = json::parse(line);
    GoldLink gold;
    gold.tables = j.value("gold_tables", std::vector<std::string>{});
    for (const auto& c : j.value("gold_columns", std::vector<std::string>{})) {
      const auto dot = c.find('.');
      if (dot == std::string::npos) throw Error("gold column '" + c + "' must be table.column");
      gold.columns.push_back({c.substr(0, dot), c.substr(dot + 1)});
    }
    const std::size_t widest = std::max(schema.tables.size(), std::size_t{1});
    results.emplace_back(link(j.at("question").get<std::string>(), schema, *scorer, widest, widest), std::move(gold));
  }
  emit(to_json(eval_linking(results, a.table_ks, a.column_ks)));
  return kExitOk;
}

struct AugmentArgs {
  std::string input;
  std::string schema;
  std::string db;
  std::string tasks = "cot,synonym,skeleton";
  std::string llm;
  std::uint64_t seed = 0;
  std::size_t synonyms = augment::kDefaultSynonymCount;
  std::size_t parallel = 4;
  std::string out_dir = "augmented";
};

int run_augment(const AugmentArgs& a) {
  const auto schema = load_schema(a.schema);
  const auto examples = augment::read_examples(a.input);
  auto engine = augment::SqliteEngine(schema.db_id, read_text(a.db));
  augment::AugmentOptions opts;
  opts.tasks.clear();
  std::stringstream ss(a.tasks);
  for (std::string t; std::getline(ss, t, ',');)
    if (!text::trim(t).empty()) opts.tasks.insert(augment::parse_variant(text::trim(t)));
  opts.seed = a.seed;
  opts.synonym_count = a.synonyms;

  std::unique_ptr<llm::CompletionBackend> model;
  if (!a.llm.empty()) model = llm::make_backend(a.llm);
  // Scripted responses are consumed in order, so a mock runs one example at a time.
  opts.parallelism = text::istarts_with(a.llm, "mock:") ? 1 : a.parallel;

  const auto r = augment::run_augmentation(examples, schema, engine, model.get(), opts);
  const fs::path dir = a.out_dir;
  for (const auto& [variant, records] : r.datasets) {
    std::stringstream out;
    augment::write_jsonl(out, records);
    write_atomic(dir / (std::string(augment::variant_name(variant)) + ".jsonl"), out.str());
  }
  std::stringstream mixed;
  augment::write_jsonl(mixed, r.mixed);
  write_atomic(dir / "mixed.jsonl", mixed.str());

  json summary;
  summary["cot"] = augment::to_json(augment::augmentation_stats(r.cot_outcomes));
  summary["outcomes"] = json::array();
  for (std::size_t i = 0; i < r.cot_outcomes.size(); ++i) {
    const auto& o = r.cot_outcomes[i];
    summary["outcomes"].push_back({{"source_id", examples[i].id}, {"status", augment::status_name(o.status)}, {"reason", o.reason}});
  }
  summary["records"] = json::object();
  for (const auto& [variant, records] : r.datasets) summary["records"][std::string(augment::variant_name(variant))] = records.size();
  summary["synonym_failures"] = r.synonym_failures;
  summary["seed"] = a.seed;
  write_atomic(dir / "stats.json", summary.dump(2) + "\n");
  emit(summary);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct LoraArgs {
  std::string hub = "plugins";
  std::string spec;
  bool average = false;
  std::string out;
  std::string domain;
  std::string base_model;
  std::string file;
  std::string plugin;
  std::string layer;
  std::string input;
  std::vector<std::string> json_files;
};

int run_lora_merge(const LoraArgs& a) {
  lora::PluginHub hub(a.hub);
  const auto spec = lora::merge_spec_from_json(read_json(a.spec), a.average);
  const auto merged = lora::merge(spec, hub);
  const auto info = hub.save(merged);
  if (!a.out.empty()) lora::write_plugin_file(a.out, merged);
  json j = lora::plugin_to_json(merged);
  j["checksum"] = info.checksum;
  emit(j);
  return kExitOk;
}

int run_lora_list(const LoraArgs& a) {
  lora::PluginHub hub(a.hub);
  lora::HubFilter f;
  if (!a.domain.empty()) f.domain = a.domain;
  if (!a.base_model.empty()) f.base_model_id = a.base_model;
  json j = json::array();
  for (const auto& i : hub.list(f)) j.push_back(lora::to_json(i));
  emit(j);
  return kExitOk;
}

int run_lora_verify(const LoraArgs& a) {
  if (!a.file.empty()) {
    const auto p = lora::read_plugin_file(a.file);
    emit({{"ok", true}, {"plugin", lora::metadata_json(p)}});
    return kExitOk;
  }
  lora::PluginHub hub(a.hub);
  json j = json::array();
  bool ok = true;
  for (const auto& i : hub.list()) {
    try {
      hub.load(i.plugin_id);
      j.push_back({{"plugin_id", i.plugin_id}, {"ok", true}});
    } catch (const LoraError& e) {
      ok = false;
      j.push_back({{"plugin_id", i.plugin_id}, {"ok", false}, {"error", e.what()}});
    }
  }
  emit({{"ok", ok}, {"plugins", j}});
  return ok ? kExitOk : kExitIntegrity;
}

int run_lora_forward(const LoraArgs& a) {
  lora::PluginHub hub(a.hub);
  const auto p = hub.load(a.plugin);
  const auto x = json::parse(a.input).get<std::vector<double>>();
  emit({{"plugin_id", p.plugin_id}, {"layer", a.layer}, {"output", lora::delta_forward(p, a.layer, x)}});
  return kExitOk;
}

int run_lora_import(const LoraArgs& a) {
  lora::PluginHub hub(a.hub);
  json j = json::array();
  for (const auto& f : a.json_files) j.push_back(lora::to_json(hub.save(lora::plugin_from_json(read_json(f)))));
  emit(j);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-to-SQL toolkit for financial databases: schema linking, candidate calibration, data "
               "augmentation and LoRA plugin management."};
  app.footer(kFooter);
  app.require_subcommand(1);

  std::function<int()> action;

  InferArgs infer;
  auto* c_infer = app.add_subcommand("infer", "Link, prompt, sample and calibrate for one question");
  c_infer->add_option("--config", infer.config, "Pipeline config JSON")->required()->check(CLI::ExistingFile);
  c_infer->add_option("--question,-q", infer.question, "Natural-language question")->required();
  c_infer->add_option("--output,-o", infer.output, "Also write the report here (overrides the config)");
  c_infer->callback([&] { action = [&] { return run_infer(infer); }; });

  CalibrateArgs cal;
  auto* c_cal = app.add_subcommand("calibrate", "Calibrate a candidate set given as JSON");
  c_cal->add_option("--input,-i", cal.input, "JSON file {schema_ref, candidates, table_scores?}")
      ->required()
      ->check(CLI::ExistingFile);
  c_cal->callback([&] { action = [&] { return run_calibrate(cal); }; });

  std::string skeleton_sql;
  auto* c_sk = app.add_subcommand("skeleton", "Print the skeleton of a SQL query");
  c_sk->add_option("sql", skeleton_sql, "SQL text")->required();
  c_sk->callback([&] { action = [&] { return run_skeleton(skeleton_sql); }; });

  LinkArgs lk;
  auto* c_link = app.add_subcommand("link", "Rank tables and columns for a question");
  c_link->add_option("--schema", lk.schema, "Schema JSON")->required()->check(CLI::ExistingFile);
  c_link->add_option("--question,-q", lk.question, "Question")->required();
  c_link->add_option("--k-tables", lk.k_tables, "Tables kept")->capture_default_str()->check(CLI::PositiveNumber);
  c_link->add_option("--m-columns", lk.m_columns, "Columns kept per table")->capture_default_str()->check(CLI::PositiveNumber);
  c_link->add_option("--scorer", lk.scorer, "lexical or remote:<url>")->capture_default_str();
  c_link->callback([&] { action = [&] { return run_link(lk); }; });

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval-linking", "Recall@k and AUC of a scorer over labelled questions");
  c_eval->add_option("--schema", ev.schema, "Schema JSON")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--examples", ev.examples, "JSON lines {question, gold_tables, gold_columns}")
      ->required()
      ->check(CLI::ExistingFile);
  c_eval->add_option("--scorer", ev.scorer, "lexical or remote:<url>")->capture_default_str();
  c_eval->add_option("--table-k", ev.table_ks, "Table cutoffs")->capture_default_str();
  c_eval->add_option("--column-k", ev.column_ks, "Column cutoffs")->capture_default_str();
  c_eval->callback([&] { action = [&] { return run_eval_linking(ev); }; });

  AugmentArgs ag;
  auto* c_aug = app.add_subcommand("augment", "Generate CoT, synonym and skeleton training data");
  c_aug->add_option("--input", ag.input, "Examples as JSON lines {id, question, sql, db_id}")
      ->required()
      ->check(CLI::ExistingFile);
  c_aug->add_option("--schema", ag.schema, "Schema JSON")->required()->check(CLI::ExistingFile);
  c_aug->add_option("--db", ag.db, "SQL script that builds the fixture database")->required()->check(CLI::ExistingFile);
  c_aug->add_option("--tasks", ag.tasks, "Comma-separated subset of cot,synonym,skeleton")->capture_default_str();
  c_aug->add_option("--llm", ag.llm, "mock:<script.json> or remote:<url>");
  c_aug->add_option("--seed", ag.seed, "Shuffle seed for the mixed dataset")->capture_default_str();
  c_aug->add_option("--synonyms", ag.synonyms, "Rewrites per question")->capture_default_str()->check(CLI::PositiveNumber);
  c_aug->add_option("--parallel", ag.parallel, "Concurrent CoT requests (remote only)")->capture_default_str();
  c_aug->add_option("--out-dir", ag.out_dir, "Output directory")->capture_default_str();
  c_aug->callback([&] { action = [&] { return run_augment(ag); }; });

  LoraArgs lo;
  auto* c_lora = app.add_subcommand("lora", "LoRA plugin hub");
  c_lora->require_subcommand(1);
  c_lora->add_option("--hub", lo.hub, "Hub directory")->capture_default_str();

  auto* l_merge = c_lora->add_subcommand("merge", "Weighted merge of hub plugins");
  l_merge->add_option("--spec", lo.spec, "Merge spec JSON {output_id, entries:[{plugin_id, weight}]}")
      ->required()
      ->check(CLI::ExistingFile);
  l_merge->add_flag("--average", lo.average, "Use equal weights 1/n");
  l_merge->add_option("--out", lo.out, "Also write the merged plugin file here");
  l_merge->callback([&] { action = [&] { return run_lora_merge(lo); }; });

  auto* l_list = c_lora->add_subcommand("list", "List hub plugins");
  l_list->add_option("--domain", lo.domain, "Only this domain");
  l_list->add_option("--base-model", lo.base_model, "Only this base model");
  l_list->callback([&] { action = [&] { return run_lora_list(lo); }; });

  auto* l_verify = c_lora->add_subcommand("verify", "Check plugin checksums");
  l_verify->add_option("--file", lo.file, "Single plugin file; otherwise the whole hub")->check(CLI::ExistingFile);
  l_verify->callback([&] { action = [&] { return run_lora_verify(lo); }; });

  auto* l_fwd = c_lora->add_subcommand("forward", "Apply a plugin's low-rank delta to an input vector");
  l_fwd->add_option("--plugin", lo.plugin, "Plugin id")->required();
  l_fwd->add_option("--layer", lo.layer, "Layer name")->required();
  l_fwd->add_option("--input", lo.input, "JSON array of length d")->required();
  l_fwd->callback([&] { action = [&] { return run_lora_forward(lo); }; });

  auto* l_import = c_lora->add_subcommand("import", "Add plugins given as JSON to the hub");
  l_import->add_option("files", lo.json_files, "Plugin JSON files")->required()->check(CLI::ExistingFile);
  l_import->callback([&] { action = [&] { return run_lora_import(lo); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    return action();
  } catch (const AllCandidatesRejected& e) {
    std::cerr << "finsql: " << e.what() << "\n";
    return kExitRejected;
  } catch (const LlmError& e) {
    std::cerr << "finsql: " << e.what() << "\n";
    return kExitTransport;
  } catch (const GenerationError& e) {
    std::cerr << "finsql: " << e.what() << "\n";
    return kExitTransport;
  } catch (const ScorerFailure& e) {
    std::cerr << "finsql: " << e.what() << "\n";
    return kExitTransport;
  } catch (const ChecksumMismatch& e) {
    std::cerr << "finsql: " << e.what() << "\n";
    return kExitIntegrity;
  } catch (const std::exception& e) {
    std::cerr << "finsql: " << e.what() << "\n";
    return kExitError;
  }
}
