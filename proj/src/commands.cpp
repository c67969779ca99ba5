#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "emit_util.hpp"
#include "geomlens/cli.hpp"
#include "geomlens/synthetic.hpp"
#include "geomlens/tensor_io.hpp"
#include "geomlens/version.hpp"
#include "json.hpp"

namespace geomlens::cli {

namespace {

using detail::csv_field;
using detail::fmt_fixed3;
using detail::fmt_full;
using detail::write_text_file;
using json = nlohmann::json;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json stamp_json(const ArtifactStamp& stamp) {
  return {{"tool_version", stamp.tool_version},
          {"seed", stamp.seed},
          {"config_hash", stamp.config_hash}};
}

void ensure_out_dir(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) throw Error(Errc::parse_error, "no output directory given");
  std::filesystem::create_directories(cfg.out_dir);
}

std::string dump_json(const json& doc) { return doc.dump(2) + "\n"; }

const char* target_name(geometry::Target t) {
  return t == geometry::Target::unembedding ? "unembedding" : "representation";
}

json summary_to_json(const geometry::GeometrySummary& s, const std::string& model_id,
                     const std::string& source_id, const ArtifactStamp& stamp) {
  json doc = stamp_json(stamp);
  doc["model_id"] = model_id;
  doc["source_id"] = source_id;
  doc["target"] = target_name(s.target);
  doc["effective_rank_raw"] = s.effective_rank_raw;
  doc["effective_rank_norm"] = s.effective_rank_norm;
  doc["effective_rank_clamped"] = s.effective_rank_clamped;
  if (s.isotropy) doc["isotropy"] = *s.isotropy;
  doc["angular_variability"] = s.angular_variability;
  doc["zero_rows_excluded"] = static_cast<long long>(s.zero_rows_excluded);
  doc["config"] = {{"epsilon", s.config_used.epsilon},
                   {"isotropy_signs", s.config_used.isotropy_signs ==
                                              geometry::IsotropySigns::both
                                          ? "both"
                                          : "positive_only"}};
  return doc;
}

geometry::GeometrySummary summary_from_json(const json& doc, const std::string& source) {
  geometry::GeometrySummary s;
  try {
    const std::string target = doc.at("target").get<std::string>();
    s.target = target == "representation" ? geometry::Target::representation
                                          : geometry::Target::unembedding;
    s.effective_rank_raw = doc.at("effective_rank_raw").get<double>();
    s.effective_rank_norm = doc.at("effective_rank_norm").get<double>();
    s.effective_rank_clamped = doc.value("effective_rank_clamped", false);
    if (doc.contains("isotropy")) s.isotropy = doc.at("isotropy").get<double>();
    s.angular_variability = doc.at("angular_variability").get<double>();
    s.zero_rows_excluded = doc.value("zero_rows_excluded", 0LL);
    if (doc.contains("config")) {
      s.config_used.epsilon = doc.at("config").value("epsilon", 1e-12);
      s.config_used.isotropy_signs =
          doc.at("config").value("isotropy_signs", "both") == std::string("positive_only")
              ? geometry::IsotropySigns::positive_only
              : geometry::IsotropySigns::both;
    }
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, source + ": " + e.what());
  }
  return s;
}

struct MetricsResult {
  std::string model_id;
  geometry::GeometrySummary weight;
  std::string weight_source;
  std::optional<geometry::GeometrySummary> representation;
  std::string representation_source;
};

ingest::TensorRef resolve_weight_ref(const ingest::ExperimentRecord& rec) {
  if (rec.weight_tensor) return *rec.weight_tensor;
  for (auto it = rec.checkpoint_paths.rbegin(); it != rec.checkpoint_paths.rend(); ++it)
    if (!it->path.empty()) return {it->path, it->tensor};
  throw Error(Errc::parse_error,
              "record '" + rec.model_id + "' names no weight tensor or checkpoint path");
}

// Paths inside a manifest resolve relative to the manifest's directory.
std::filesystem::path resolve_path(const std::filesystem::path& manifest_path,
                                   const std::string& p) {
  const std::filesystem::path fp(p);
  if (fp.is_absolute()) return fp;
  return manifest_path.parent_path() / fp;
}

MetricsResult compute_record_metrics(const ingest::ExperimentRecord& rec,
                                     const std::filesystem::path& manifest_path,
                                     const geometry::MetricConfig& mcfg) {
  MetricsResult out;
  out.model_id = rec.model_id;
  const ingest::TensorRef wref = resolve_weight_ref(rec);
  const ingest::WeightMatrix w =
      ingest::load_weight(resolve_path(manifest_path, wref.path), wref.tensor);
  out.weight = geometry::summarize(w, mcfg);
  out.weight_source = w.source_id;
  if (rec.representation_tensor) {
    const ingest::RepresentationMatrix h = ingest::load_representation(
        resolve_path(manifest_path, rec.representation_tensor->path),
        rec.representation_tensor->tensor);
    out.representation = geometry::summarize(h, mcfg);
    out.representation_source = h.source_id;
  }
  return out;
}

std::string csv_cell(const std::optional<double>& v, const std::string& na_reason) {
  if (v) return fmt_fixed3(*v);
  return "NA(" + (na_reason.empty() ? std::string("missing") : na_reason) + ")";
}

double axis_value_of(const ingest::ExperimentRecord& rec, const std::string& axis) {
  if (axis == "batch_size") return static_cast<double>(rec.batch_size);
  if (axis == "weight_decay") return rec.weight_decay;
  if (axis == "lr_scale") return rec.lr_scale;
  if (axis == "lr_anneal_frac") return rec.lr_anneal_frac;
  if (axis == "token_budget") return static_cast<double>(rec.token_budget);
  throw Error(Errc::unknown_axis, "no sweep axis named '" + axis + "'");
}

}  // namespace

std::string sanitize_filename(const std::string& name) {
  std::string out;
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '.' || c == '-' || c == '_';
    out += ok ? c : '_';
  }
  return out.empty() ? "_" : out;
}

ArtifactStamp stamp_for(const RunConfig& cfg) {
  std::ostringstream canon;
  canon << cfg.command << '|' << cfg.manifest_path.string() << '|' << cfg.geometry_dir.string()
        << '|' << cfg.series_path.string() << '|' << cfg.loss_target << '|' << cfg.axis << '|'
        << "seed=" << cfg.seed << "|epsilon=" << fmt_full(cfg.epsilon) << '|'
        << cfg.isotropy_signs << "|rise=" << fmt_full(cfg.rise_frac)
        << "|drop=" << fmt_full(cfg.drop_frac) << "|window=" << cfg.window;
  return {kToolVersion, cfg.seed, hex64(fnv1a(canon.str()))};
}

geometry::MetricConfig metric_config_for(const RunConfig& cfg) {
  geometry::MetricConfig mcfg;
  mcfg.epsilon = cfg.epsilon;
  if (cfg.isotropy_signs == "both") {
    mcfg.isotropy_signs = geometry::IsotropySigns::both;
  } else if (cfg.isotropy_signs == "positive" || cfg.isotropy_signs == "positive_only") {
    mcfg.isotropy_signs = geometry::IsotropySigns::positive_only;
  } else {
    throw Error(Errc::parse_error, "isotropy-signs must be 'both' or 'positive'");
  }
  return mcfg;
}

void write_geometry_summary(const geometry::GeometrySummary& summary, const std::string& model_id,
                            const std::string& source_id, const ArtifactStamp& stamp,
                            const std::filesystem::path& file) {
  write_text_file(file, dump_json(summary_to_json(summary, model_id, source_id, stamp)));
}

std::map<std::string, stats::ModelGeometry> read_geometry_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw Error(Errc::parse_error, "not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > 14 && name.substr(name.size() - 14) == ".geometry.json")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::map<std::string, stats::ModelGeometry> out;
  for (const auto& file : files) {
    std::ifstream in(file);
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(Errc::parse_error, file.string() + ": " + e.what());
    }
    const std::string model_id = doc.value("model_id", std::string{});
    if (model_id.empty()) throw Error(Errc::parse_error, file.string() + ": missing model_id");
    const geometry::GeometrySummary s = summary_from_json(doc, file.string());
    if (s.target == geometry::Target::unembedding) out[model_id].weight = s;
    else out[model_id].representation = s;
  }
  return out;
}

void write_geometry_dir(const std::map<std::string, stats::ModelGeometry>& geometry,
                        const ArtifactStamp& stamp, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [model_id, g] : geometry) {
    const std::string base = sanitize_filename(model_id);
    if (g.weight)
      write_geometry_summary(*g.weight, model_id, "synthetic", stamp,
                             dir / (base + ".unembedding.geometry.json"));
    if (g.representation)
      write_geometry_summary(*g.representation, model_id, "synthetic", stamp,
                             dir / (base + ".representation.geometry.json"));
  }
}

void cmd_metrics(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  const ArtifactStamp stamp = stamp_for(cfg);
  const geometry::MetricConfig mcfg = metric_config_for(cfg);
  const ingest::Manifest manifest = ingest::load_manifest(cfg.manifest_path);

  std::vector<MetricsResult> results(manifest.records.size());
  const int threads = std::max(1, cfg.threads);
  if (threads == 1 || manifest.records.size() < 2) {
    for (size_t i = 0; i < manifest.records.size(); ++i)
      results[i] = compute_record_metrics(manifest.records[i], cfg.manifest_path, mcfg);
  } else {
    std::atomic<size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
      for (;;) {
        const size_t i = next.fetch_add(1);
        if (i >= manifest.records.size()) return;
        try {
          results[i] = compute_record_metrics(manifest.records[i], cfg.manifest_path, mcfg);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  std::sort(results.begin(), results.end(),
            [](const MetricsResult& a, const MetricsResult& b) { return a.model_id < b.model_id; });

  std::ostringstream csv;
  csv << "# " << detail::stamp_line(stamp) << "\n";
  csv << "model_id,target,eff_rank_raw,eff_rank_norm,isotropy,cosine_sim\n";
  for (const MetricsResult& r : results) {
    const std::string base = sanitize_filename(r.model_id);
    write_geometry_summary(r.weight, r.model_id, r.weight_source, stamp,
                           cfg.out_dir / (base + ".unembedding.geometry.json"));
    csv << csv_field(r.model_id) << ",unembedding," << fmt_full(r.weight.effective_rank_raw) << ','
        << fmt_full(r.weight.effective_rank_norm) << ',' << fmt_full(*r.weight.isotropy) << ','
        << fmt_full(r.weight.angular_variability) << "\n";
    if (r.representation) {
      write_geometry_summary(*r.representation, r.model_id, r.representation_source, stamp,
                             cfg.out_dir / (base + ".representation.geometry.json"));
      csv << csv_field(r.model_id) << ",representation,"
          << fmt_full(r.representation->effective_rank_raw) << ','
          << fmt_full(r.representation->effective_rank_norm) << ",NA,"
          << fmt_full(r.representation->angular_variability) << "\n";
    }
  }
  write_text_file(cfg.out_dir / "metrics.csv", csv.str());

  // Raw cross-metric scatter (rank vs. cosine), one color per target.
  std::vector<ScatterPoint> points;
  for (const MetricsResult& r : results) {
    points.push_back({r.weight.effective_rank_norm, r.weight.angular_variability, "unembedding"});
    if (r.representation)
      points.push_back({r.representation->effective_rank_norm,
                        r.representation->angular_variability, "representation"});
  }
  if (!points.empty())
    write_text_file(cfg.out_dir / "metrics_scatter.svg",
                    emit_svg_scatter(points, "effective rank (normalized)",
                                     "mean pairwise cosine", "cross-metric scatter", stamp));
}

void cmd_analyze(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  if (cfg.loss_target.empty()) throw Error(Errc::parse_error, "analyze needs --target");
  const ArtifactStamp stamp = stamp_for(cfg);
  const ingest::Manifest manifest = ingest::load_manifest(cfg.manifest_path);
  const auto geometry = read_geometry_dir(cfg.geometry_dir);

  const std::vector<stats::CorrelationReport> reports =
      stats::run_battery(manifest, geometry, cfg.loss_target, cfg.seed);

  const auto find_report = [&](const char* name) -> const stats::CorrelationReport* {
    for (const auto& r : reports)
      if (r.metric_name == name) return &r;
    return nullptr;
  };

  struct StatRow {
    const char* label;
    std::optional<double> stats::CorrelationReport::*field;
  };
  const StatRow rows[] = {
      {"Raw Spearman", &stats::CorrelationReport::raw_spearman},
      {"Residual Spearman (linear)", &stats::CorrelationReport::residual_spearman_linear},
      {"Residual Spearman (Chinchilla)", &stats::CorrelationReport::residual_spearman_chinchilla},
      {"Partial Spearman", &stats::CorrelationReport::partial_spearman},
      {"Predictive dR2", &stats::CorrelationReport::delta_r2},
  };

  std::ostringstream csv;
  csv << "# " << detail::stamp_line(stamp) << "\n";
  csv << "statistic";
  for (const char* name : stats::kBatteryMetricNames) csv << ',' << csv_field(name);
  csv << "\n";
  for (const StatRow& row : rows) {
    csv << csv_field(row.label);
    for (const char* name : stats::kBatteryMetricNames) {
      const stats::CorrelationReport* r = find_report(name);
      if (!r) {
        csv << ",NA(missing)";
      } else {
        csv << ',' << csv_cell(r->*(row.field), r->na_reason);
      }
    }
    csv << "\n";
  }
  const std::string target_tag = sanitize_filename(cfg.loss_target);
  write_text_file(cfg.out_dir / ("analysis_" + target_tag + ".csv"), csv.str());

  json jr = json::array();
  for (const auto& r : reports) {
    json one = {{"metric_name", r.metric_name},
                {"loss_target", r.loss_target},
                {"n_records", r.n_records},
                {"seed", r.seed}};
    const auto put = [&](const char* key, const std::optional<double>& v) {
      if (v) one[key] = *v;
      else one[key] = nullptr;
    };
    put("raw_spearman", r.raw_spearman);
    put("residual_spearman_linear", r.residual_spearman_linear);
    put("residual_spearman_chinchilla", r.residual_spearman_chinchilla);
    put("partial_spearman", r.partial_spearman);
    put("delta_r2", r.delta_r2);
    if (!r.na_reason.empty()) one["na_reason"] = r.na_reason;
    jr.push_back(std::move(one));
  }
  json doc = stamp_json(stamp);
  doc["loss_target"] = cfg.loss_target;
  doc["n_records"] = static_cast<long long>(manifest.records.size());
  doc["notes"] =
      "partial Spearman: rank-transformed covariates {log batch_size, weight_decay, lr_scale, "
      "lr_anneal_frac, log N, log D} residualized via OLS (scale-free), constant columns dropped";
  doc["reports"] = std::move(jr);
  write_text_file(cfg.out_dir / ("analysis_" + target_tag + ".json"), dump_json(doc));
}

SweepGroupReport build_sweep_report(const ingest::Manifest& manifest,
                                    const std::map<std::string, stats::ModelGeometry>& geometry,
                                    const std::string& axis, const std::string& loss_target) {
  SweepGroupReport report;
  report.axis = axis;

  const auto scaled = ingest::scaled_loss(manifest.records, loss_target);
  std::map<std::string, double> scaled_by_id(scaled.begin(), scaled.end());

  std::map<std::pair<double, long long>, std::vector<const ingest::ExperimentRecord*>> groups;
  for (const ingest::ExperimentRecord& rec : manifest.records)
    groups[{axis_value_of(rec, axis), rec.param_count_nonembed}].push_back(&rec);

  for (const auto& [key, members] : groups) {
    SweepGroupRow row;
    row.axis_value = key.first;
    row.param_count = key.second;
    row.n = static_cast<int>(members.size());

    double loss_sum = 0.0;
    double rank_w = 0.0, iso_w = 0.0, cos_w = 0.0, rank_h = 0.0, cos_h = 0.0;
    int n_w = 0, n_iso = 0, n_h = 0;
    for (const ingest::ExperimentRecord* rec : members) {
      loss_sum += scaled_by_id.at(rec->model_id);
      const auto git = geometry.find(rec->model_id);
      if (git == geometry.end()) continue;
      if (git->second.weight) {
        rank_w += git->second.weight->effective_rank_norm;
        cos_w += git->second.weight->angular_variability;
        ++n_w;
        if (git->second.weight->isotropy) {
          iso_w += *git->second.weight->isotropy;
          ++n_iso;
        }
      }
      if (git->second.representation) {
        rank_h += git->second.representation->effective_rank_norm;
        cos_h += git->second.representation->angular_variability;
        ++n_h;
      }
    }
    row.mean_scaled_loss = loss_sum / row.n;
    if (n_w > 0) {
      row.mean_eff_rank_w = rank_w / n_w;
      row.mean_cos_w = cos_w / n_w;
    }
    if (n_iso > 0) row.mean_isotropy_w = iso_w / n_iso;
    if (n_h > 0) {
      row.mean_eff_rank_h = rank_h / n_h;
      row.mean_cos_h = cos_h / n_h;
    }
    report.rows.push_back(row);
  }
  return report;
}

void cmd_sweep_report(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  if (cfg.loss_target.empty()) throw Error(Errc::parse_error, "sweep-report needs --target");
  const ArtifactStamp stamp = stamp_for(cfg);
  const ingest::Manifest manifest = ingest::load_manifest(cfg.manifest_path);
  std::map<std::string, stats::ModelGeometry> geometry;
  if (!cfg.geometry_dir.empty()) geometry = read_geometry_dir(cfg.geometry_dir);

  const SweepGroupReport report =
      build_sweep_report(manifest, geometry, cfg.axis, cfg.loss_target);

  std::ostringstream csv;
  csv << "# " << detail::stamp_line(stamp) << "\n";
  csv << "axis,axis_value,param_count,n,mean_scaled_loss,mean_eff_rank_w,mean_isotropy_w,"
         "mean_cos_w,mean_eff_rank_h,mean_cos_h\n";
  const auto opt_cell = [&](const std::optional<double>& v) {
    return v ? fmt_full(*v) : std::string("NA");
  };
  for (const SweepGroupRow& r : report.rows) {
    csv << csv_field(report.axis) << ',' << fmt_full(r.axis_value) << ',' << r.param_count << ','
        << r.n << ',' << fmt_full(r.mean_scaled_loss) << ',' << opt_cell(r.mean_eff_rank_w) << ','
        << opt_cell(r.mean_isotropy_w) << ',' << opt_cell(r.mean_cos_w) << ','
        << opt_cell(r.mean_eff_rank_h) << ',' << opt_cell(r.mean_cos_h) << "\n";
  }
  const std::string tag = sanitize_filename(cfg.axis);
  write_text_file(cfg.out_dir / ("sweep_" + tag + ".csv"), csv.str());
  write_text_file(cfg.out_dir / ("sweep_" + tag + ".svg"), emit_svg_sweep(report, stamp));
}

namespace {

saturation::CheckpointSeries series_from_record(const ingest::ExperimentRecord& rec,
                                                const std::filesystem::path& manifest_path,
                                                const geometry::MetricConfig& mcfg) {
  saturation::CheckpointSeries s;
  s.model_id = rec.model_id;
  for (const ingest::CheckpointRef& cp : rec.checkpoint_paths) {
    saturation::CheckpointPoint p;
    p.tokens = cp.tokens;
    if (!cp.loss)
      throw Error(Errc::missing_loss, "record '" + rec.model_id + "' checkpoint at " +
                                          std::to_string(cp.tokens) + " tokens has no loss");
    p.loss = *cp.loss;
    if (cp.eff_rank_norm) {
      p.eff_rank_norm = *cp.eff_rank_norm;
    } else if (!cp.path.empty()) {
      const ingest::WeightMatrix w =
          ingest::load_weight(resolve_path(manifest_path, cp.path), cp.tensor);
      p.eff_rank_norm = geometry::effective_rank(w.data, mcfg).normalized;
    } else {
      throw Error(Errc::parse_error, "record '" + rec.model_id + "' checkpoint at " +
                                         std::to_string(cp.tokens) +
                                         " tokens has neither eff_rank_norm nor a tensor path");
    }
    s.points.push_back(p);
  }
  return s;
}

}  // namespace

void cmd_saturation(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  const ArtifactStamp stamp = stamp_for(cfg);
  const saturation::Thresholds thresholds{cfg.rise_frac, cfg.drop_frac, cfg.window};

  std::vector<saturation::CheckpointSeries> series;
  if (cfg.series_path.extension() == ".json") {
    const ingest::Manifest manifest = ingest::load_manifest(cfg.series_path);
    const geometry::MetricConfig mcfg = metric_config_for(cfg);
    for (const ingest::ExperimentRecord& rec : manifest.records)
      if (!rec.checkpoint_paths.empty())
        series.push_back(series_from_record(rec, cfg.series_path, mcfg));
    if (series.empty())
      throw Error(Errc::parse_error,
                  cfg.series_path.string() + ": no record has checkpoint_paths");
  } else {
    series.push_back(saturation::load_series_csv(cfg.series_path));
  }

  for (const saturation::CheckpointSeries& s : series) {
    const saturation::SaturationVerdict v = saturation::assess(s, thresholds);
    json doc = stamp_json(stamp);
    doc["model_id"] = s.model_id;
    doc["loss_degradation_onset"] =
        v.loss_degradation_onset ? json(*v.loss_degradation_onset) : json(nullptr);
    doc["rank_collapse_onset"] =
        v.rank_collapse_onset ? json(*v.rank_collapse_onset) : json(nullptr);
    doc["co_occurring"] = v.co_occurring;
    doc["lag_tokens"] = v.lag_tokens ? json(*v.lag_tokens) : json(nullptr);
    doc["rank_slope_at_onset"] =
        v.rank_slope_at_onset ? json(*v.rank_slope_at_onset) : json(nullptr);
    doc["thresholds"] = {{"rise_frac", v.thresholds_used.rise_frac},
                         {"drop_frac", v.thresholds_used.drop_frac},
                         {"window", v.thresholds_used.window}};
    const std::string base = sanitize_filename(s.model_id);
    write_text_file(cfg.out_dir / (base + ".verdict.json"), dump_json(doc));
    write_text_file(cfg.out_dir / (base + ".saturation.svg"),
                    emit_svg_saturation(s, v, stamp));
  }
}

}  // namespace geomlens::cli
