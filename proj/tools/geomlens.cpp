#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "geomlens/cli.hpp"
#include "geomlens/error.hpp"
#include "geomlens/version.hpp"

namespace {

using geomlens::cli::RunConfig;

void add_common(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option("--out", cfg.out_dir, "Output directory")->required();
  cmd->add_option("--seed", cfg.seed, "Seed recorded in every artifact");
  cmd->add_option("--threads", cfg.threads, "Worker threads for per-model work");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string(geomlens::kToolName) +
               " - unembedding/representation geometry metrics and the statistics relating "
               "them to model performance"};
  app.set_version_flag("--version", geomlens::kToolVersion);
  app.require_subcommand(1);

  RunConfig cfg;

  CLI::App* metrics = app.add_subcommand(
      "metrics", "Compute geometry summaries for every model in a manifest");
  metrics->add_option("--manifest", cfg.manifest_path, "Experiment manifest (JSON)")->required();
  metrics->add_option("--epsilon", cfg.epsilon, "Effective-rank spectrum perturbation");
  metrics->add_option("--isotropy-signs", cfg.isotropy_signs,
                      "Candidate directions: both | positive");
  add_common(metrics, cfg);

  CLI::App* analyze = app.add_subcommand(
      "analyze", "Correlation battery between geometry metrics and a loss target");
  analyze->add_option("--manifest", cfg.manifest_path, "Experiment manifest (JSON)")->required();
  analyze->add_option("--geometry", cfg.geometry_dir, "Directory of *.geometry.json summaries")
      ->required();
  analyze->add_option("--target", cfg.loss_target, "Loss task name")->required();
  add_common(analyze, cfg);

  CLI::App* sweep = app.add_subcommand(
      "sweep-report", "Group means of scaled loss and metrics along one hyperparameter axis");
  sweep->add_option("--manifest", cfg.manifest_path, "Experiment manifest (JSON)")->required();
  sweep->add_option("--axis", cfg.axis,
                    "batch_size | weight_decay | lr_scale | lr_anneal_frac | token_budget")
      ->required();
  sweep->add_option("--target", cfg.loss_target, "Loss task name")->required();
  sweep->add_option("--geometry", cfg.geometry_dir, "Optional geometry summary directory");
  add_common(sweep, cfg);

  CLI::App* saturation = app.add_subcommand(
      "saturation", "Loss-degradation and rank-collapse onsets over checkpoint series");
  saturation->add_option("--series", cfg.series_path, "Series CSV or manifest JSON")->required();
  saturation->add_option("--rise-frac", cfg.rise_frac, "Sustained relative loss rise");
  saturation->add_option("--drop-frac", cfg.drop_frac, "Relative rank drop from running max");
  saturation->add_option("--window", cfg.window, "Consecutive checkpoints required");
  add_common(saturation, cfg);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (metrics->parsed()) {
      cfg.command = "metrics";
      geomlens::cli::cmd_metrics(cfg);
    } else if (analyze->parsed()) {
      cfg.command = "analyze";
      geomlens::cli::cmd_analyze(cfg);
    } else if (sweep->parsed()) {
      cfg.command = "sweep-report";
      geomlens::cli::cmd_sweep_report(cfg);
    } else if (saturation->parsed()) {
      cfg.command = "saturation";
      geomlens::cli::cmd_saturation(cfg);
    }
  } catch (const geomlens::Error& e) {
    std::fprintf(stderr, "geomlens: %s\n", e.what());
    return geomlens::is_convergence(e.code()) ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "geomlens: %s\n", e.what());
    return 1;
  }
  return 0;
}
