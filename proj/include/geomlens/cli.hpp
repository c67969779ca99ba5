#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "geomlens/geometry.hpp"
#include "geomlens/manifest.hpp"
#include "geomlens/saturation.hpp"
#include "geomlens/stats.hpp"

namespace geomlens::cli {

struct RunConfig {
  std::string command;
  std::filesystem::path manifest_path;
  std::filesystem::path geometry_dir;
  std::filesystem::path series_path;
  std::filesystem::path out_dir;
  std::string loss_target;
  std::string axis;
  std::uint64_t seed = 0;
  double epsilon = 1e-12;
  std::string isotropy_signs = "both";
  double rise_frac = 0.01;
  double drop_frac = 0.2;
  int window = 3;
  int threads = 1;
};

// Recorded in every emitted artifact so any output can be traced back to the
// exact invocation that produced it.
struct ArtifactStamp {
  std::string tool_version;
  std::uint64_t seed = 0;
  std::string config_hash;
};

ArtifactStamp stamp_for(const RunConfig& cfg);

geometry::MetricConfig metric_config_for(const RunConfig& cfg);

// ---- commands ---------------------------------------------------------------

// One geometry summary JSON per (model, target) plus a combined metrics.csv,
// sorted by model id.
void cmd_metrics(const RunConfig& cfg);

// The five-statistic battery against --target, as a 3-decimal CSV table plus a
// full-precision JSON document.
void cmd_analyze(const RunConfig& cfg);

// Per-axis-value, per-model-size group means of scaled loss and geometry
// metrics, as CSV plus an SVG panel.
void cmd_sweep_report(const RunConfig& cfg);

// Saturation verdicts (JSON) and dual-axis SVG per checkpoint series.
void cmd_saturation(const RunConfig& cfg);

// ---- sweep report -----------------------------------------------------------

struct SweepGroupRow {
  double axis_value = 0.0;
  long long param_count = 0;
  int n = 0;
  double mean_scaled_loss = 0.0;
  std::optional<double> mean_eff_rank_w;
  std::optional<double> mean_isotropy_w;
  std::optional<double> mean_cos_w;
  std::optional<double> mean_eff_rank_h;
  std::optional<double> mean_cos_h;
};

struct SweepGroupReport {
  std::string axis;
  std::vector<SweepGroupRow> rows;  // sorted by (axis_value, param_count)
};

SweepGroupReport build_sweep_report(const ingest::Manifest& manifest,
                                    const std::map<std::string, stats::ModelGeometry>& geometry,
                                    const std::string& axis, const std::string& loss_target);

// ---- SVG --------------------------------------------------------------------

struct ScatterPoint {
  double x = 0.0;
  double y = 0.0;
  std::string group;
};

// Standalone SVG 1.1 scatter plot; byte-deterministic for identical input.
// Point fill is keyed by group via a fixed palette.
std::string emit_svg_scatter(const std::vector<ScatterPoint>& points, const std::string& x_label,
                             const std::string& y_label, const std::string& title,
                             const ArtifactStamp& stamp);

// Loss (left axis) and effective rank (right axis) against tokens, with onset
// markers from the verdict.
std::string emit_svg_saturation(const saturation::CheckpointSeries& series,
                                const saturation::SaturationVerdict& verdict,
                                const ArtifactStamp& stamp);

std::string emit_svg_sweep(const SweepGroupReport& report, const ArtifactStamp& stamp);

// ---- geometry summary files ---------------------------------------------------

void write_geometry_summary(const geometry::GeometrySummary& summary, const std::string& model_id,
                            const std::string& source_id, const ArtifactStamp& stamp,
                            const std::filesystem::path& file);

// Reads every *.geometry.json in the directory into per-model geometry.
std::map<std::string, stats::ModelGeometry> read_geometry_dir(const std::filesystem::path& dir);

// Writes a whole geometry map as cmd_metrics would; fixture helper.
void write_geometry_dir(const std::map<std::string, stats::ModelGeometry>& geometry,
                        const ArtifactStamp& stamp, const std::filesystem::path& dir);

std::string sanitize_filename(const std::string& name);

}  // namespace geomlens::cli
