#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "geomlens/error.hpp"

namespace geomlens::ingest {

// Pointer to a tensor on disk. `tensor` selects a name inside a safetensors
// container and is empty for single-tensor files.
struct TensorRef {
  std::string path;
  std::string tensor;
};

struct CheckpointRef {
  long long tokens = 0;
  std::string path;              // optional; empty when only precomputed values are given
  std::string tensor;
  std::optional<double> loss;    // per-checkpoint eval loss, when known
  std::optional<double> eff_rank_norm;  // precomputed, bypasses tensor loading
};

// One trained model: the hyperparameter axes that were ablated plus its
// evaluation losses. param_count_nonembed is the model-size axis N; the
// sequence count of a representation matrix is a separate quantity (n_seq).
struct ExperimentRecord {
  std::string model_id;
  long long param_count_nonembed = 0;  // N
  long long token_budget = 0;          // D
  long long batch_size = 0;
  double weight_decay = 0.0;
  double lr_scale = 1.0;
  double lr_anneal_frac = 0.0;
  std::map<std::string, double> losses;  // eval task -> cross-entropy (nats)
  std::vector<CheckpointRef> checkpoint_paths;
  std::optional<TensorRef> weight_tensor;
  std::optional<TensorRef> representation_tensor;
};

struct Manifest {
  std::string schema_version;
  std::vector<ExperimentRecord> records;
};

inline constexpr const char* kManifestSchemaVersion = "1";

// Strict loader: unknown fields anywhere in the document are hard errors, as
// are duplicate model ids and any record-invariant violation.
Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(const std::string& text, const std::string& source);
void save_manifest(const Manifest& m, const std::filesystem::path& path);

// Loss for `task` divided by the lowest loss among records with the same
// param_count_nonembed. Output order matches input order; each group's
// minimizer maps to exactly 1.0.
std::vector<std::pair<std::string, double>> scaled_loss(
    const std::vector<ExperimentRecord>& records, const std::string& task);

}  // namespace geomlens::ingest
