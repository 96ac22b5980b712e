#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dwfs/common.hpp"
#include "dwfs/pipeline.hpp"

namespace {

using namespace dwfs;

constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

void report_error(const std::string& command, std::string_view kind, const std::string& message) {
  std::cerr << "error command=" << command << " kind=" << kind << " message=" << quote(message) << "\n";
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> strategies;
  std::vector<std::string> models;
  std::optional<std::string> feature_source;
};

PipelineConfig resolve_config(const Options& o) {
  PipelineConfig cfg = o.config.empty() ? PipelineConfig{} : PipelineConfig::load(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.out = o.out;
  if (!o.strategies.empty()) cfg.strategies = o.strategies;
  if (!o.models.empty()) cfg.models = o.models;
  if (o.feature_source) cfg.feature_source = parse_feature_source(*o.feature_source);
  cfg.validate();
  return cfg;
}

void note(const std::string& command, const std::string& text) { std::cerr << "info command=" << command << " " << text << "\n"; }

void run(const std::string& command, const PipelineConfig& cfg) {
  if (command == "gen") {
    cmd_gen(cfg);
    note(command, "corpus=" + quote(cfg.corpus_manifest().string()));
  } else if (command == "select") {
    const auto r = cmd_select(cfg);
    note(command, "selected=" + std::to_string(r.selected.size()) + " of=" + std::to_string(r.schema.dimension()) +
                      " out=" + quote(cfg.selection_path().string()));
  } else if (command == "sbs") {
    const auto s = cmd_sbs(cfg);
    note(command, "skipped=" + std::to_string(s.skipped) + " warnings=" + std::to_string(s.warnings.size()) +
                      " out=" + quote(cfg.sbs_dir().string()));
    std::cout << s.stats.to_markdown();
  } else if (command == "train") {
    for (const auto& m : cfg.models) {
      const auto r = cmd_train(cfg, m);
      note(command, "model=" + cfg.model_tag(m) + " final_loss=" + format_double(r.log.rows.empty() ? 0.0 : r.log.rows.back().loss));
    }
  } else if (command == "eval") {
    for (const auto& m : cfg.models) {
      const auto e = cmd_eval(cfg, m);
      for (const auto& c : e.conditions)
        note(command, "model=" + e.tag + " condition=" + c.condition + " accuracy=" + format_double(c.metrics.micro.accuracy) +
                          " macro_f1=" + format_double(c.metrics.macro.f1));
    }
  } else if (command == "report") {
    cmd_report(cfg);
    note(command, "out=" + quote(cfg.report_dir().string()));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Obfuscation-resistant feature selection and graph classification for malware families"};
  app.require_subcommand(1);
  Options opt;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen", "Generate a synthetic corpus with obfuscated variants"},
      {"select", "Run dynamic weighted feature selection"},
      {"sbs", "Extract sensitive behavior subgraphs"},
      {"train", "Train GNN classifiers"},
      {"eval", "Evaluate trained classifiers on every condition"},
      {"report", "Render the markdown and JSON report"},
      {"run", "Run gen, select, sbs, train, eval and report in order"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "Pipeline config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "Root seed");
    sub->add_option("--out", opt.out, "Run directory");
    sub->add_option("--strategy", opt.strategies, "Restrict evaluation to these conditions (repeatable)");
    sub->add_option("--model", opt.models, "gat, sage or gcn (repeatable)");
    sub->add_option("--features", opt.feature_source, "Feature source: dwfs or topk");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error(app.get_subcommands().empty() ? "dwfs" : app.get_subcommands().front()->get_name(), "argument",
                 e.what());
    return kExitValidation;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const PipelineConfig cfg = resolve_config(opt);
    if (command == "run") {
      for (const char* step : {"gen", "select", "sbs", "train", "eval", "report"}) run(step, cfg);
    } else {
      run(command, cfg);
    }
  } catch (const Error& e) {
    report_error(command, to_string(e.kind()), e.what());
    return e.kind() == ErrorKind::Io ? kExitIo : kExitValidation;
  } catch (const std::filesystem::filesystem_error& e) {
    report_error(command, "io", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    report_error(command, "internal", e.what());
    return kExitValidation;
  }
  return 0;
}
