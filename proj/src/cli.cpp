#include "cfstab/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include "cfstab/config.hpp"
#include "cfstab/errors.hpp"
#include "cfstab/harness.hpp"
#include "cfstab/model_io.hpp"
#include "cfstab/train.hpp"

namespace cfstab {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code(const std::exception& e) {
  if (const auto* s = dynamic_cast<const StageError*>(&e)) return s->code();
  if (dynamic_cast<const ConfigError*>(&e)) return exit_codes::kConfig;
  if (dynamic_cast<const DataError*>(&e)) return exit_codes::kData;
  if (dynamic_cast<const NumericError*>(&e)) return exit_codes::kNumeric;
  if (dynamic_cast<const VerificationError*>(&e)) return exit_codes::kVerification;
  if (dynamic_cast<const json::exception*>(&e)) return exit_codes::kConfig;
  return exit_codes::kGeneric;
}

namespace {

struct Invocation {
  std::string subcommand;
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  int threads = 1;
};

struct Context {
  ExperimentConfig config;
  fs::path out;
  int threads = 1;
  std::ostream& log;
};

void write_text(const std::string& text, const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void prepare_out(const Context& ctx) {
  std::error_code ec;
  fs::create_directories(ctx.out, ec);
  if (ec) throw DataError("cannot create output directory " + ctx.out.string() + ": " + ec.message());
  write_json_file(ctx.config.effective, ctx.out / "effective_config.json");
}

Network base_model(const Context& ctx, const Dataset& train) {
  if (!ctx.config.paths.model.empty()) return load_network(ctx.config.paths.model);
  return train_base(ctx.config, train);
}

void save_ensembles(const std::map<std::string, Ensemble>& ensembles, const fs::path& dir) {
  json manifest = json::object();
  for (const auto& [kind, e] : ensembles) {
    fs::create_directories(dir / kind);
    json members = json::array();
    for (std::size_t k = 0; k < e.members.size(); ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "member_%03zu.json", k);
      save_network(e.members[k], dir / kind / name);
      members.push_back(kind + "/" + name);
    }
    manifest[kind] = {{"count", e.spec.count},
                      {"base_seed", e.spec.base_seed},
                      {"members", members},
                      {"removed_rows", e.removed_rows}};
  }
  write_json_file(manifest, dir / "manifest.json");
}

std::map<std::string, Ensemble> load_ensembles(const fs::path& dir) {
  const json manifest = read_json_file(dir / "manifest.json");
  std::map<std::string, Ensemble> out;
  try {
    for (const auto& [kind, entry] : manifest.items()) {
      Ensemble e;
      e.spec = {parse_ensemble_kind(kind), entry.at("count").get<int>(), entry.at("base_seed").get<std::uint64_t>()};
      e.removed_rows = entry.at("removed_rows").get<std::vector<std::size_t>>();
      for (const auto& file : entry.at("members")) e.members.push_back(load_network(dir / file.get<std::string>()));
      out[kind] = std::move(e);
    }
  } catch (const json::exception& ex) {
    throw DataError("malformed ensemble manifest in " + dir.string() + ": " + ex.what());
  }
  return out;
}

std::size_t distinct_origins(const std::vector<CounterfactualRecord>& records) {
  std::set<std::size_t> seen;
  for (const auto& r : records) seen.insert(r.origin_index);
  return seen.size();
}

int cmd_train(Context& ctx) {
  prepare_out(ctx);
  const ExperimentData data = prepare_data(ctx.config);
  const Network net = train_base(ctx.config, data.train);
  save_network(net, ctx.out / "model.json");
  std::string log = "epoch,loss\n";
  for (std::size_t e = 0; e < net.loss_log.size(); ++e) log += std::to_string(e + 1) + "," + exact(net.loss_log[e]) + "\n";
  write_text(log, ctx.out / "train_log.csv");
  char summary[128];
  std::snprintf(summary, sizeof summary, "train accuracy %.4f, validation accuracy %.4f\n",
                accuracy(net, data.train), accuracy(net, data.validation));
  ctx.log << summary << "wrote " << (ctx.out / "model.json").string() << '\n';
  return exit_codes::kOk;
}

int cmd_ensemble(Context& ctx) {
  prepare_out(ctx);
  const ExperimentData data = prepare_data(ctx.config);
  const Network base = base_model(ctx, data.train);
  save_network(base, ctx.out / "model.json");
  save_ensembles(build_ensembles(ctx.config, base, data.train, ctx.threads), ctx.out / "ensembles");
  ctx.log << "wrote " << (ctx.out / "ensembles" / "manifest.json").string() << '\n';
  return exit_codes::kOk;
}

int cmd_generate(Context& ctx) {
  prepare_out(ctx);
  const ExperimentData data = prepare_data(ctx.config);
  const Network base = base_model(ctx, data.train);
  save_network(base, ctx.out / "model.json");
  const auto origins = select_origins(base, data.validation, ctx.config.dataset);
  if (origins.empty()) throw DataError("no validation point is predicted outside the desired class");
  const auto records = generate_counterfactuals(ctx.config, base, data.train, data.validation, origins, ctx.threads);
  write_records_jsonl(records, ctx.out / "records.jsonl");
  write_json_file(json{{"origins", origins}}, ctx.out / "origins.json");
  ctx.log << "wrote " << records.size() << " records to " << (ctx.out / "records.jsonl").string() << '\n';
  return exit_codes::kOk;
}

int cmd_evaluate(Context& ctx) {
  prepare_out(ctx);
  const auto& paths = ctx.config.paths;
  InvalidationReport report;
  if (!paths.records.empty() || !paths.ensembles.empty()) {
    if (paths.model.empty() || paths.records.empty() || paths.ensembles.empty()) {
      throw ConfigError("evaluate from files needs paths.model, paths.records and paths.ensembles");
    }
    const Network base = load_network(paths.model);
    const auto records = read_records_jsonl(paths.records, &base);
    if (records.empty()) throw DataError("no records in " + paths.records);
    report = aggregate(records, distinct_origins(records), base, load_ensembles(paths.ensembles),
                       ctx.config.report.success_floor, ctx.threads);
    report.meta["config"] = ctx.config.effective;
  } else {
    ExperimentResult result = run_experiment(ctx.config, ctx.threads);
    save_network(result.base, ctx.out / "model.json");
    write_records_jsonl(result.records, ctx.out / "records.jsonl");
    report = std::move(result.report);
  }
  report_emit(report, ctx.config.report.formats, ctx.out);
  ctx.log << report_text_table(report);
  return exit_codes::kOk;
}

int cmd_report(Context& ctx) {
  prepare_out(ctx);
  if (ctx.config.paths.report.empty()) throw ConfigError("report needs paths.report");
  const InvalidationReport report = report_from_json(read_json_file(ctx.config.paths.report));
  report_emit(report, ctx.config.report.formats, ctx.out);
  ctx.log << report_text_table(report);
  return exit_codes::kOk;
}

int cmd_verify(Context& ctx) {
  prepare_out(ctx);
  const auto reports = run_verify_suite(ctx.config.verify, ctx.threads);
  json doc = json::array();
  json counterexamples = json::object();
  bool ok = true;
  for (const auto& r : reports) {
    doc.push_back(r.to_json());
    counterexamples[r.name] = r.counterexamples;
    ok = ok && r.ok();
    char line[160];
    std::snprintf(line, sizeof line, "%-13s checked %zu, passed %zu, worst margin %.3e\n", r.name.c_str(),
                  r.checked, r.passed, r.worst_margin);
    ctx.log << line;
  }
  write_json_file(doc, ctx.out / "verify_report.json");
  const fs::path cx = ctx.out / "counterexamples.json";
  write_json_file(counterexamples, cx);
  if (!ok) {
    ctx.log << "violations found, see " << cx.string() << '\n';
    return exit_codes::kVerification;
  }
  return exit_codes::kOk;
}

int cmd_plot(Context& ctx) {
  const ExperimentConfig& c = ctx.config;
  if (c.layer_dims.empty() || c.layer_dims.front() != 2) throw ConfigError("plot needs a 2-D input space");
  prepare_out(ctx);
  const ExperimentData data = prepare_data(c);
  if (data.train.dim() != 2) throw ConfigError("plot needs a 2-D dataset");
  const Network base = base_model(ctx, data.train);
  if (base.input_dim() != 2) throw ConfigError("plot needs a 2-D model");
  const Network other = train(init_network(base.spec, c.init_seed + 1), data.train, c.train);

  const Raster single = raster_2d(base, c.plot.bbox, c.plot.resolution);
  write_pgm(single, ctx.out / "base.pgm");
  write_json_file(raster_sidecar(single), ctx.out / "base.json");
  const Raster member = raster_2d(other, c.plot.bbox, c.plot.resolution);
  write_pgm(member, ctx.out / "rs1.pgm");
  write_json_file(raster_sidecar(member), ctx.out / "rs1.json");
  if (base.output_dim() == 1) {
    const Raster pair = raster_2d(base, other, c.plot.bbox, c.plot.resolution);
    write_pgm(pair, ctx.out / "pair.pgm");
    write_json_file(raster_sidecar(pair), ctx.out / "pair.json");
    char line[96];
    std::snprintf(line, sizeof line, "disagreement fraction %.4f\n", pair.disagreement_fraction());
    ctx.log << line;
  }
  if (!c.paths.records.empty()) {
    json overlay = json::array();
    for (const auto& r : read_records_jsonl(c.paths.records)) {
      if (r.origin.size() != 2) throw ConfigError("overlay records must be 2-D");
      overlay.push_back({{"method", method_label(r)},
                         {"origin_index", r.origin_index},
                         {"success", r.success},
                         {"origin", {r.origin[0], r.origin[1]}},
                         {"counterfactual", {r.counterfactual[0], r.counterfactual[1]}}});
    }
    write_json_file(overlay, ctx.out / "overlay.json");
  }
  return exit_codes::kOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Counterfactual stability experiments for ReLU networks", "cfstab"};
  app.require_subcommand(1);
  Invocation inv;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"train", "Train the base model"},
      {"ensemble", "Train the LOO and RS retraining ensembles"},
      {"generate", "Generate counterfactuals for the origin points"},
      {"evaluate", "Compute invalidation and cost metrics"},
      {"verify", "Run the boundary-geometry and gradient verifiers"},
      {"plot", "Write decision-region rasters"},
      {"report", "Re-emit a report in the configured formats"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", inv.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--override", inv.overrides, "Dotted key=value override")->take_all();
    sub->add_option("--out", inv.out_dir, "Output directory")->required();
    sub->add_option("--threads", inv.threads, "Worker threads")->check(CLI::PositiveNumber);
    sub->callback([&inv, n = name] { inv.subcommand = n; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    app.exit(e, out, err);
    return exit_codes::kOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return exit_codes::kConfig;
  }

  try {
    Context ctx{load_config(inv.config_path, inv.overrides, seed_offset_from_env()), inv.out_dir, inv.threads, out};
    if (inv.subcommand == "train") return cmd_train(ctx);
    if (inv.subcommand == "ensemble") return cmd_ensemble(ctx);
    if (inv.subcommand == "generate") return cmd_generate(ctx);
    if (inv.subcommand == "evaluate") return cmd_evaluate(ctx);
    if (inv.subcommand == "verify") return cmd_verify(ctx);
    if (inv.subcommand == "plot") return cmd_plot(ctx);
    if (inv.subcommand == "report") return cmd_report(ctx);
    err << "error: unknown subcommand\n";
    return exit_codes::kConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e);
  }
}

}  // namespace cfstab
