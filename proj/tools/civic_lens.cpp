// civic_lens: stage-by-stage driver for the user classification pipeline.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "civic_lens/pipeline.hpp"

using namespace civic_lens;
using nlohmann::json;

namespace {

int fail(const std::string& kind, const std::string& message, const std::string& stage) {
  json err{{"error", kind}, {"message", message}};
  if (!stage.empty()) err["stage"] = stage;
  std::cerr << err.dump() << "\n";
  return exit_code_for(kind);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Classify misinformation posters and active citizens from their post histories"};
  app.require_subcommand(1, 1);

  std::string config_path = "civic_lens.json";
  bool force = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> model, fusion, out;
  app.add_option("--config", config_path, "Pipeline config (JSON)")->capture_default_str();
  app.add_flag("--force", force, "Rerun the stage even when its outputs are current");
  app.add_option("--seed", seed, "Run a single seed instead of the configured list");
  app.add_option("--model", model, "Model kind: lr-bow, lr-lexicon, bilstm-att, hier, hier-truncated");
  app.add_option("--fusion", fusion, "Chunk fusion for hier models")
      ->check(CLI::IsMember({"max", "mean", "lstm"}));
  app.add_option("--out", out, "Runs directory (overrides CIVIC_LENS_RUNS and the config)");

  const std::pair<const char*, const char*> commands[] = {
      {"ingest", "Load, filter and hash the raw JSONL corpus"},
      {"synth", "Generate the planted-signal synthetic corpus"},
      {"summarize", "Per-class user and post statistics"},
      {"preprocess", "Split users and normalize their histories"},
      {"featurize", "TF-IDF and lexicon feature matrices"},
      {"train", "Train the configured model for each seed"},
      {"evaluate", "Macro metrics on the test split, aggregated over seeds"},
      {"explain", "Input-gradient token attributions for test users"},
      {"analyze", "Feature-label correlation rankings and word clouds"},
      {"report", "Model comparison and ranking tables as markdown"},
  };
  // options are accepted before or after the subcommand
  app.fallthrough();
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), "");
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    Overrides ov;
    ov.seed = seed;
    ov.model = model;
    ov.fusion = fusion;
    if (out) ov.out = *out;
    Pipeline pipeline(PipelineConfig::load(config_path, ov), force);
    const auto res = pipeline.run(stage);
    if (stage == "report") {
      std::cout << res.summary.at("markdown").get<std::string>();
      return 0;
    }
    json j{{"stage", res.stage}, {"skipped", res.skipped}, {"summary", res.summary}};
    json outs = json::array();
    for (const auto& p : res.outputs) outs.push_back(p.string());
    j["outputs"] = outs;
    std::cout << j.dump(2) << "\n";
    return 0;
  } catch (const Error& e) {
    return fail(e.kind(), e.what(), stage);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), stage);
  }
}
