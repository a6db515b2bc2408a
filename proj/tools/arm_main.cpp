// Command-line front end: data generation, training, evaluation, explanation db and serving.

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "arm/cases.hpp"
#include "arm/dataset.hpp"
#include "arm/errors.hpp"
#include "arm/explain_db.hpp"
#include "arm/model_io.hpp"
#include "arm/schema.hpp"
#include "arm/service.hpp"
#include "arm/train.hpp"

using nlohmann::json;

namespace {

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw arm::Error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw arm::MalformedDocument(path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text << "\n";
    return;
  }
  std::ofstream out(path);
  if (!out) throw arm::Error("cannot write " + path);
  out << text << "\n";
}

arm::Schema base_schema(const std::string& path) { return path.empty() ? arm::fico_schema() : arm::load_schema(path); }

/// Schema for generated data: the base schema when names line up, otherwise
/// one subscale per synthetic feature.
arm::Schema schema_for_spec(const arm::SyntheticSpec& spec, const arm::Schema& base) {
  bool same = spec.features.size() == base.features.size();
  for (std::size_t p = 0; same && p < spec.features.size(); ++p) same = spec.features[p].name == base.features[p].name;
  if (same) return base;
  arm::Schema s;
  s.label_column = base.label_column;
  s.label_map = base.label_map;
  for (const auto& f : spec.features) {
    arm::FeatureSpec fs;
    fs.name = f.name;
    fs.monotonicity = f.direction;
    s.features.push_back(fs);
    s.subscales.push_back({f.name, {f.name}});
  }
  return s;
}

arm::SolverBudget budget_from_ms(long ms) {
  arm::SolverBudget b;
  b.time_limit = std::chrono::milliseconds(ms);
  return b;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-layer additive risk models with rule and case explanations"};
  app.require_subcommand(1);
  std::string schema_path;
  app.add_option("--schema", schema_path, "Schema JSON (default: built-in HELOC layout)");

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  std::string gen_spec, gen_out;
  std::optional<std::size_t> gen_n;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--spec", gen_spec, "Synthetic spec JSON (default: HELOC-like)");
  gen->add_option("--out", gen_out, "Output CSV")->required();
  gen->add_option("--n", gen_n, "Row count override");
  gen->add_option("--seed", gen_seed, "Seed override");

  // train
  auto* train = app.add_subcommand("train", "Fit a model");
  std::string train_data, train_config, train_out, train_report;
  train->add_option("--data", train_data, "Training CSV")->required();
  train->add_option("--config", train_config, "Training config JSON");
  train->add_option("--out", train_out, "Model JSON")->required();
  train->add_option("--report", train_report, "Write the fit report here instead of stdout");

  // eval
  auto* eval = app.add_subcommand("eval", "Refit on random splits and compare with baselines");
  std::string eval_model, eval_data, eval_config;
  std::size_t eval_splits = 5;
  std::uint64_t eval_seed = 7;
  double eval_test_frac = 0.2;
  eval->add_option("--model", eval_model, "Model JSON supplying thresholds and subscales")->required();
  eval->add_option("--data", eval_data, "CSV")->required();
  eval->add_option("--config", eval_config, "Training config JSON");
  eval->add_option("--splits", eval_splits, "Number of splits");
  eval->add_option("--seed", eval_seed, "Split seed");
  eval->add_option("--test-frac", eval_test_frac, "Test fraction");

  // build-db
  auto* build = app.add_subcommand("build-db", "Build or resume the explanation database");
  std::string build_model, build_data, build_out;
  std::size_t build_random = 0, build_threads = 1, build_rows = 0;
  long build_ms = 6000;
  std::uint64_t build_seed = 1;
  build->add_option("--model", build_model)->required();
  build->add_option("--data", build_data)->required();
  build->add_option("--out", build_out, "Db file (resumed when it exists)")->required();
  build->add_option("--random", build_random, "Additional random observations");
  build->add_option("--rows", build_rows, "Only the first N dataset rows (0 = all)");
  build->add_option("--threads", build_threads);
  build->add_option("--seed", build_seed);
  build->add_option("--time-limit-ms", build_ms, "Time limit for the four solves of one pattern");

  // explain
  auto* expl = app.add_subcommand("explain", "Explain one dataset row");
  std::string expl_model, expl_data, expl_db;
  std::size_t expl_row = 0;
  bool expl_cases = false;
  expl->add_option("--model", expl_model)->required();
  expl->add_option("--data", expl_data)->required();
  expl->add_option("--db", expl_db);
  expl->add_option("--row", expl_row)->required();
  expl->add_flag("--cases", expl_cases, "Also list similar cases");

  // predict
  auto* pred = app.add_subcommand("predict", "Score a feature map");
  std::string pred_model, pred_input;
  pred->add_option("--model", pred_model)->required();
  pred->add_option("--input", pred_input, "JSON {\"features\": {...}}")->required();

  // table
  auto* table = app.add_subcommand("table", "Print a scoring table");
  std::string table_model, table_feature, table_format = "text";
  table->add_option("--model", table_model)->required();
  table->add_option("--feature", table_feature)->required();
  table->add_option("--format", table_format)->check(CLI::IsMember({"text", "csv"}));

  // schema
  auto* schema_cmd = app.add_subcommand("schema", "Write the built-in schema");
  std::string schema_out;
  schema_cmd->add_option("--out", schema_out);

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  std::string serve_model, serve_data, serve_db, serve_host = "0.0.0.0", serve_static;
  int serve_port = 8080;
  long serve_ms = 6000;
  bool serve_write = false;
  serve->add_option("--model", serve_model);
  serve->add_option("--data", serve_data);
  serve->add_option("--db", serve_db);
  serve->add_option("--port", serve_port);
  serve->add_option("--host", serve_host);
  serve->add_option("--static", serve_static, "Directory of UI assets to serve at /");
  serve->add_option("--time-limit-ms", serve_ms, "Time limit for one explanation");
  serve->add_flag("--write-through", serve_write, "Store rules solved for new observations");

  CLI11_PARSE(app, argc, argv);

  try {
    const arm::Schema base = base_schema(schema_path);

    if (*gen) {
      arm::SyntheticSpec spec = gen_spec.empty() ? arm::fico_like_spec(10459, 1)
                                                 : arm::synthetic_spec_from_json(read_json(gen_spec));
      if (gen_n) spec.n = *gen_n;
      if (gen_seed) spec.seed = *gen_seed;
      const auto data = arm::generate_synthetic(spec);
      arm::save_csv(gen_out, data, schema_for_spec(spec, base));
      std::cerr << "wrote " << data.size() << " rows, positive rate " << data.positive_rate() << "\n";
    } else if (*train) {
      const auto config = train_config.empty() ? arm::TrainConfig{} : arm::train_config_from_json(read_json(train_config));
      const auto data = arm::load_csv(train_data, base);
      const auto fitted = arm::fit_model(base, data, config);
      arm::save_model(fitted.model, train_out);
      write_text(train_report, fitted.report.to_json().dump(2));
    } else if (*eval) {
      const auto config = eval_config.empty() ? arm::TrainConfig{} : arm::train_config_from_json(read_json(eval_config));
      const auto model = arm::load_model(eval_model);
      const auto schema = arm::schema_of(model, base);
      const auto data = arm::load_csv(eval_data, schema);
      const auto result = arm::evaluate(schema, data, config, eval_splits, eval_test_frac, eval_seed, &model.binarizer());
      std::cout << result.to_json().dump(2) << "\n";
    } else if (*build) {
      const auto model = arm::load_model(build_model);
      const auto data = arm::load_csv(build_data, arm::schema_of(model, base));
      const auto ed = arm::make_explain_data(model, arm::binarize_dataset(model.binarizer(), data.rows));
      arm::ExplanationDb db;
      if (std::ifstream(build_out).good()) db = arm::ExplanationDb::load(build_out);
      arm::DbBuildSettings settings;
      settings.n_random = build_random;
      settings.seed = build_seed;
      settings.threads = build_threads;
      settings.budget = budget_from_ms(build_ms);
      if (build_rows > 0)
        for (std::size_t i = 0; i < std::min(build_rows, data.size()); ++i) settings.rows.push_back(i);
      settings.progress = [](std::size_t done, std::size_t total) {
        if (done % 100 == 0 || done == total) std::cerr << "\r" << done << "/" << total << std::flush;
      };
      const auto report = arm::build_explanation_db(db, model, ed, arm::model_hash(model), settings);
      std::cerr << "\n";
      db.save(build_out);
      std::cout << report.to_json().dump(2) << "\n";
    } else if (*expl) {
      const auto model = arm::load_model(expl_model);
      const auto schema = arm::schema_of(model, base);
      const auto data = arm::load_csv(expl_data, schema);
      if (expl_row >= data.size()) throw arm::Error("row out of range");
      const auto ed = arm::make_explain_data(model, arm::binarize_dataset(model.binarizer(), data.rows));
      std::optional<arm::ExplanationDb> db;
      if (!expl_db.empty()) db = arm::ExplanationDb::load(expl_db);
      const auto query = ed.X.row(expl_row);
      const auto e = arm::explain(query, ed.labels[expl_row], ed, db ? &*db : nullptr);
      json out{{"row", expl_row},
               {"step", arm::to_string(e.step)},
               {"rule", arm::rule_to_json(e.rule, &model.binarizer())},
               {"consistent", e.verification.consistent}};
      if (expl_cases)
        out["cases"] = arm::cases_to_json(arm::similar_cases(query, e.rule, ed, &data, 5, data.rows[expl_row]), &schema);
      std::cout << out.dump(2) << "\n";
    } else if (*pred) {
      const auto model = arm::load_model(pred_model);
      arm::Service service(model, std::nullopt, std::nullopt, arm::schema_of(model, base));
      std::ifstream in(pred_input);
      std::stringstream ss;
      ss << in.rdbuf();
      const auto r = service.predict(ss.str());
      std::cout << r.body << "\n";
      return r.status == 200 ? 0 : 1;
    } else if (*table) {
      const auto model = arm::load_model(table_model);
      const auto p = model.binarizer().feature_index(table_feature);
      if (!p) throw arm::Error("unknown feature " + table_feature);
      const auto t = model.scoring_table(model.subscale_of_feature(*p), *p);
      std::cout << (table_format == "csv" ? t.to_csv() : t.to_text());
    } else if (*schema_cmd) {
      write_text(schema_out, arm::schema_to_json(base).dump(2));
    } else if (*serve) {
      std::optional<arm::ArmModel> model;
      std::optional<arm::RawDataset> data;
      std::optional<arm::ExplanationDb> db;
      arm::Schema schema = base;
      if (!serve_model.empty()) {
        model = arm::load_model(serve_model);
        schema = arm::schema_of(*model, base);
        if (!serve_data.empty()) data = arm::load_csv(serve_data, schema);
        if (!serve_db.empty()) {
          db = std::ifstream(serve_db).good() ? arm::ExplanationDb::load(serve_db) : arm::ExplanationDb();
        }
      }
      arm::ServiceConfig config;
      config.explain.budget = budget_from_ms(serve_ms);
      config.explain.write_through = serve_write;
      arm::Service service(std::move(model), std::move(data), std::move(db), schema, config);
      if (service.db() && service.explain_data() &&
          !service.db()->matches(service.model_hash(), service.explain_data()->hash))
        std::cerr << "warning: explanation db was built for a different model or dataset; cached rules are "
                     "re-verified on every hit\n";
      std::cerr << "listening on " << serve_host << ":" << serve_port << "\n";
      service.listen(serve_host, serve_port, serve_static);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
