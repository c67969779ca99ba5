#include "geomlens/manifest.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace geomlens::ingest {

namespace {

using json = nlohmann::json;

void reject_unknown_fields(const json& obj, const std::set<std::string>& known,
                           const std::string& context) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.count(it.key()))
      throw Error(Errc::parse_error, context + ": unknown field '" + it.key() + "'");
  }
}

template <typename T>
T require(const json& obj, const char* field, const std::string& context) {
  const auto it = obj.find(field);
  if (it == obj.end())
    throw Error(Errc::parse_error, context + ": missing field '" + field + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw Error(Errc::parse_error, context + ": field '" + field + "' has wrong type");
  }
}

TensorRef parse_tensor_ref(const json& obj, const std::string& context) {
  if (!obj.is_object()) throw Error(Errc::parse_error, context + ": expected an object");
  reject_unknown_fields(obj, {"path", "tensor"}, context);
  TensorRef ref;
  ref.path = require<std::string>(obj, "path", context);
  ref.tensor = obj.value("tensor", std::string{});
  return ref;
}

ExperimentRecord parse_record(const json& obj, const std::string& context) {
  if (!obj.is_object()) throw Error(Errc::parse_error, context + ": expected an object");
  reject_unknown_fields(obj,
                        {"model_id", "param_count_nonembed", "token_budget", "batch_size",
                         "weight_decay", "lr_scale", "lr_anneal_frac", "losses",
                         "checkpoint_paths", "weight_tensor", "representation_tensor"},
                        context);
  ExperimentRecord rec;
  rec.model_id = require<std::string>(obj, "model_id", context);
  const std::string where = "record '" + rec.model_id + "'";
  rec.param_count_nonembed = require<long long>(obj, "param_count_nonembed", where);
  rec.token_budget = require<long long>(obj, "token_budget", where);
  rec.batch_size = require<long long>(obj, "batch_size", where);
  rec.weight_decay = require<double>(obj, "weight_decay", where);
  rec.lr_scale = require<double>(obj, "lr_scale", where);
  rec.lr_anneal_frac = require<double>(obj, "lr_anneal_frac", where);

  if (rec.param_count_nonembed <= 0)
    throw Error(Errc::invariant_violation, where + ": param_count_nonembed must be > 0");
  if (rec.token_budget <= 0)
    throw Error(Errc::invariant_violation, where + ": token_budget must be > 0");
  if (rec.batch_size <= 0)
    throw Error(Errc::invariant_violation, where + ": batch_size must be > 0");
  if (!(rec.lr_anneal_frac >= 0.0 && rec.lr_anneal_frac <= 1.0))
    throw Error(Errc::invariant_violation, where + ": lr_anneal_frac must be in [0, 1]");
  if (!std::isfinite(rec.weight_decay) || !std::isfinite(rec.lr_scale))
    throw Error(Errc::invariant_violation, where + ": non-finite hyperparameter");

  const json& losses = obj.contains("losses") ? obj.at("losses") : json::object();
  if (!losses.is_object()) throw Error(Errc::parse_error, where + ": losses must be an object");
  for (auto it = losses.begin(); it != losses.end(); ++it) {
    double v;
    try {
      v = it->get<double>();
    } catch (const json::exception&) {
      throw Error(Errc::parse_error, where + ": loss '" + it.key() + "' is not a number");
    }
    if (!std::isfinite(v) || v <= 0.0)
      throw Error(Errc::invariant_violation,
                  where + ": loss '" + it.key() + "' must be finite and > 0");
    rec.losses[it.key()] = v;
  }

  if (obj.contains("checkpoint_paths")) {
    const json& cps = obj.at("checkpoint_paths");
    if (!cps.is_array())
      throw Error(Errc::parse_error, where + ": checkpoint_paths must be an array");
    long long prev = -1;
    for (const json& cp : cps) {
      const std::string cctx = where + " checkpoint";
      if (!cp.is_object()) throw Error(Errc::parse_error, cctx + ": expected an object");
      reject_unknown_fields(cp, {"tokens", "path", "tensor", "loss", "eff_rank_norm"}, cctx);
      CheckpointRef ref;
      ref.tokens = require<long long>(cp, "tokens", cctx);
      ref.path = cp.value("path", std::string{});
      ref.tensor = cp.value("tensor", std::string{});
      if (cp.contains("loss")) ref.loss = cp.at("loss").get<double>();
      if (cp.contains("eff_rank_norm")) ref.eff_rank_norm = cp.at("eff_rank_norm").get<double>();
      if (ref.tokens <= prev)
        throw Error(Errc::invariant_violation,
                    where + ": checkpoint_paths tokens must be strictly increasing");
      prev = ref.tokens;
      rec.checkpoint_paths.push_back(std::move(ref));
    }
  }
  if (obj.contains("weight_tensor"))
    rec.weight_tensor = parse_tensor_ref(obj.at("weight_tensor"), where + " weight_tensor");
  if (obj.contains("representation_tensor"))
    rec.representation_tensor =
        parse_tensor_ref(obj.at("representation_tensor"), where + " representation_tensor");
  return rec;
}

}  // namespace

Manifest parse_manifest(const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, source + ": " + e.what());
  }
  if (!doc.is_object()) throw Error(Errc::parse_error, source + ": top level must be an object");
  reject_unknown_fields(doc, {"schema_version", "records"}, source);

  Manifest m;
  m.schema_version = require<std::string>(doc, "schema_version", source);
  if (m.schema_version != kManifestSchemaVersion)
    throw Error(Errc::parse_error, source + ": unsupported schema_version '" + m.schema_version +
                                       "' (expected '" + kManifestSchemaVersion + "')");
  const json& records = doc.contains("records") ? doc.at("records") : json::array();
  if (!records.is_array()) throw Error(Errc::parse_error, source + ": records must be an array");

  std::set<std::string> ids;
  for (const json& r : records) {
    ExperimentRecord rec = parse_record(r, source);
    if (!ids.insert(rec.model_id).second)
      throw Error(Errc::duplicate_model_id, source + ": duplicate model_id '" + rec.model_id + "'");
    m.records.push_back(std::move(rec));
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::parse_error, "cannot open manifest: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.string());
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  json records = json::array();
  for (const ExperimentRecord& rec : m.records) {
    json r = {{"model_id", rec.model_id},
              {"param_count_nonembed", rec.param_count_nonembed},
              {"token_budget", rec.token_budget},
              {"batch_size", rec.batch_size},
              {"weight_decay", rec.weight_decay},
              {"lr_scale", rec.lr_scale},
              {"lr_anneal_frac", rec.lr_anneal_frac},
              {"losses", rec.losses}};
    if (!rec.checkpoint_paths.empty()) {
      json cps = json::array();
      for (const CheckpointRef& cp : rec.checkpoint_paths) {
        json c = {{"tokens", cp.tokens}};
        if (!cp.path.empty()) c["path"] = cp.path;
        if (!cp.tensor.empty()) c["tensor"] = cp.tensor;
        if (cp.loss) c["loss"] = *cp.loss;
        if (cp.eff_rank_norm) c["eff_rank_norm"] = *cp.eff_rank_norm;
        cps.push_back(std::move(c));
      }
      r["checkpoint_paths"] = std::move(cps);
    }
    if (rec.weight_tensor)
      r["weight_tensor"] = {{"path", rec.weight_tensor->path}, {"tensor", rec.weight_tensor->tensor}};
    if (rec.representation_tensor)
      r["representation_tensor"] = {{"path", rec.representation_tensor->path},
                                    {"tensor", rec.representation_tensor->tensor}};
    records.push_back(std::move(r));
  }
  const json doc = {{"schema_version", m.schema_version.empty() ? kManifestSchemaVersion
                                                                : m.schema_version},
                    {"records", std::move(records)}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::parse_error, "cannot open for writing: " + path.string());
  out << doc.dump(2) << '\n';
}

std::vector<std::pair<std::string, double>> scaled_loss(
    const std::vector<ExperimentRecord>& records, const std::string& task) {
  std::map<long long, double> group_min;
  for (const ExperimentRecord& rec : records) {
    const auto it = rec.losses.find(task);
    if (it == rec.losses.end())
      throw Error(Errc::missing_loss, "record '" + rec.model_id + "' has no loss for task '" +
                                          task + "'");
    auto [g, inserted] = group_min.emplace(rec.param_count_nonembed, it->second);
    if (!inserted && it->second < g->second) g->second = it->second;
  }
  std::vector<std::pair<std::string, double>> out;
  out.reserve(records.size());
  for (const ExperimentRecord& rec : records)
    out.emplace_back(rec.model_id, rec.losses.at(task) / group_min.at(rec.param_count_nonembed));
  return out;
}

}  // namespace geomlens::ingest
