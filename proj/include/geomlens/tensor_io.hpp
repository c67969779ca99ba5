#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "geomlens/error.hpp"

namespace geomlens::ingest {

enum class DtypeOrigin { f64, f32, f16, bf16 };

const char* to_string(DtypeOrigin d);

enum class TensorKind { weight, representation };

// Unembedding matrix W (vocab rows x model-dim cols). Entries are widened to
// double at load time and validated finite; the object is immutable afterwards
// and safe to share across threads.
struct WeightMatrix {
  Eigen::MatrixXd data;  // v x d
  std::string source_id;
  DtypeOrigin dtype_origin = DtypeOrigin::f64;

  Eigen::Index vocab_size() const { return data.rows(); }
  Eigen::Index model_dim() const { return data.cols(); }
};

// Last-token final-layer states H (one row per input sequence).
struct RepresentationMatrix {
  Eigen::MatrixXd data;  // n_seq x d
  std::string source_id;
  DtypeOrigin dtype_origin = DtypeOrigin::f64;

  Eigen::Index n_seq() const { return data.rows(); }
  Eigen::Index model_dim() const { return data.cols(); }
};

using LoadedTensor = std::variant<WeightMatrix, RepresentationMatrix>;

// Loads a dense 2-D tensor from a safetensors container, an NPY v1.0 file, or
// a raw UGT1 file, widening to double. `tensor_name` selects the tensor inside
// a safetensors container and is ignored for the single-tensor formats.
LoadedTensor load_tensor(const std::filesystem::path& path, const std::string& tensor_name,
                         TensorKind kind);

WeightMatrix load_weight(const std::filesystem::path& path, const std::string& tensor_name);
RepresentationMatrix load_representation(const std::filesystem::path& path,
                                         const std::string& tensor_name);

// Fixture/round-trip writers. Values are narrowed to the requested storage
// dtype (round-to-nearest-even), so save followed by load_tensor returns the
// narrowed values exactly widened.
void save_npy(const std::filesystem::path& path, const Eigen::MatrixXd& m, DtypeOrigin dtype);
void save_raw(const std::filesystem::path& path, const Eigen::MatrixXd& m, DtypeOrigin dtype);

struct NamedTensor {
  std::string name;
  Eigen::MatrixXd data;
  DtypeOrigin dtype = DtypeOrigin::f32;
};
void save_safetensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);

// Exact scalar widenings used by the loaders; exposed for tests.
double half_to_double(std::uint16_t bits);
double bfloat16_to_double(std::uint16_t bits);
std::uint16_t double_to_half(double v);
std::uint16_t double_to_bfloat16(double v);

}  // namespace geomlens::ingest
