#include "geomlens/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace geomlens::ingest {

namespace {

using json = nlohmann::json;

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::unknown_format, "cannot open file: " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<char> buf(static_cast<size_t>(size));
  in.read(buf.data(), size);
  if (!in) throw Error(Errc::unknown_format, "short read: " + path.string());
  return buf;
}

std::uint16_t read_u16le(const char* p) {
  std::uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}

std::uint32_t read_u32le(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

std::uint64_t read_u64le(const char* p) {
  std::uint64_t v;
  std::memcpy(&v, p, 8);
  return v;
}

size_t dtype_size(DtypeOrigin d) {
  switch (d) {
    case DtypeOrigin::f64: return 8;
    case DtypeOrigin::f32: return 4;
    case DtypeOrigin::f16:
    case DtypeOrigin::bf16: return 2;
  }
  return 0;
}

double decode_at(const char* payload, size_t idx, DtypeOrigin d) {
  switch (d) {
    case DtypeOrigin::f64: {
      double v;
      std::memcpy(&v, payload + 8 * idx, 8);
      return v;
    }
    case DtypeOrigin::f32: {
      float v;
      std::memcpy(&v, payload + 4 * idx, 4);
      return static_cast<double>(v);
    }
    case DtypeOrigin::f16: return half_to_double(read_u16le(payload + 2 * idx));
    case DtypeOrigin::bf16: return bfloat16_to_double(read_u16le(payload + 2 * idx));
  }
  return 0.0;
}

struct RawTensor {
  Eigen::MatrixXd data;
  DtypeOrigin dtype;
};

// Widens a row-major payload and reports the first non-finite entry by index.
Eigen::MatrixXd widen_row_major(const char* payload, Eigen::Index rows, Eigen::Index cols,
                                DtypeOrigin d, const std::string& source_id) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      const double v = decode_at(payload, static_cast<size_t>(i) * cols + j, d);
      if (!std::isfinite(v)) {
        throw Error(Errc::non_finite, source_id + ": non-finite entry at row " +
                                          std::to_string(i) + ", col " + std::to_string(j));
      }
      m(i, j) = v;
    }
  }
  return m;
}

bool starts_with(const std::vector<char>& buf, const char* magic, size_t n) {
  return buf.size() >= n && std::memcmp(buf.data(), magic, n) == 0;
}

// ---- NPY v1.0 -------------------------------------------------------------

std::string npy_header_value(const std::string& header, const std::string& key,
                             const std::string& source) {
  const auto kpos = header.find("'" + key + "'");
  if (kpos == std::string::npos)
    throw Error(Errc::parse_error, source + ": NPY header missing key '" + key + "'");
  auto pos = header.find(':', kpos);
  if (pos == std::string::npos) throw Error(Errc::parse_error, source + ": malformed NPY header");
  ++pos;
  while (pos < header.size() && header[pos] == ' ') ++pos;
  std::string out;
  if (header[pos] == '\'') {
    const auto end = header.find('\'', pos + 1);
    out = header.substr(pos + 1, end - pos - 1);
  } else if (header[pos] == '(') {
    const auto end = header.find(')', pos);
    out = header.substr(pos, end - pos + 1);
  } else {
    auto end = header.find_first_of(",}", pos);
    out = header.substr(pos, end - pos);
  }
  return out;
}

RawTensor load_npy(const std::vector<char>& buf, const std::string& source) {
  if (buf.size() < 10) throw Error(Errc::shape_mismatch, source + ": truncated NPY preamble");
  const unsigned major = static_cast<unsigned char>(buf[6]);
  const unsigned minor = static_cast<unsigned char>(buf[7]);
  if (major != 1 || minor != 0)
    throw Error(Errc::unknown_format,
                source + ": unsupported NPY version " + std::to_string(major) + "." +
                    std::to_string(minor));
  const size_t header_len = read_u16le(buf.data() + 8);
  if (buf.size() < 10 + header_len)
    throw Error(Errc::shape_mismatch, source + ": truncated NPY header");
  const std::string header(buf.data() + 10, header_len);

  const std::string descr = npy_header_value(header, "descr", source);
  DtypeOrigin dtype;
  if (descr == "<f8") dtype = DtypeOrigin::f64;
  else if (descr == "<f4") dtype = DtypeOrigin::f32;
  else if (descr == "<f2") dtype = DtypeOrigin::f16;
  else throw Error(Errc::unknown_format, source + ": unsupported NPY dtype '" + descr + "'");

  const std::string order = npy_header_value(header, "fortran_order", source);
  const bool fortran = order.find("True") != std::string::npos;

  const std::string shape = npy_header_value(header, "shape", source);
  std::vector<Eigen::Index> dims;
  std::string digits;
  for (char c : shape) {
    if (std::isdigit(static_cast<unsigned char>(c))) {
      digits += c;
    } else if (!digits.empty()) {
      dims.push_back(static_cast<Eigen::Index>(std::stoll(digits)));
      digits.clear();
    }
  }
  if (dims.size() != 2)
    throw Error(Errc::shape_mismatch,
                source + ": expected a 2-D tensor, got " + std::to_string(dims.size()) + "-D");
  const Eigen::Index rows = dims[0], cols = dims[1];

  const size_t payload_off = 10 + header_len;
  const size_t expected = static_cast<size_t>(rows) * cols * dtype_size(dtype);
  if (buf.size() - payload_off != expected)
    throw Error(Errc::shape_mismatch, source + ": payload holds " +
                                          std::to_string(buf.size() - payload_off) +
                                          " bytes, header implies " + std::to_string(expected));
  const char* payload = buf.data() + payload_off;
  if (!fortran) return {widen_row_major(payload, rows, cols, dtype, source), dtype};
  // Column-major payload: widen via the transposed view.
  Eigen::MatrixXd t = widen_row_major(payload, cols, rows, dtype, source);
  return {t.transpose(), dtype};
}

// ---- raw UGT1 -------------------------------------------------------------

RawTensor load_raw(const std::vector<char>& buf, const std::string& source) {
  if (buf.size() < 16) throw Error(Errc::shape_mismatch, source + ": truncated UGT1 header");
  const unsigned code = static_cast<unsigned char>(buf[4]);
  if (code > 1)
    throw Error(Errc::unknown_format, source + ": unknown UGT1 dtype code " + std::to_string(code));
  if (buf[5] != 0 || buf[6] != 0 || buf[7] != 0)
    throw Error(Errc::unknown_format, source + ": UGT1 reserved bytes not zero");
  const DtypeOrigin dtype = code == 0 ? DtypeOrigin::f32 : DtypeOrigin::f64;
  const Eigen::Index rows = read_u32le(buf.data() + 8);
  const Eigen::Index cols = read_u32le(buf.data() + 12);
  const size_t expected = static_cast<size_t>(rows) * cols * dtype_size(dtype);
  if (buf.size() - 16 != expected)
    throw Error(Errc::shape_mismatch, source + ": payload holds " +
                                          std::to_string(buf.size() - 16) +
                                          " bytes, header implies " + std::to_string(expected));
  return {widen_row_major(buf.data() + 16, rows, cols, dtype, source), dtype};
}

// ---- safetensors ----------------------------------------------------------

RawTensor load_safetensors(const std::vector<char>& buf, const std::string& tensor_name,
                           const std::string& source) {
  const std::uint64_t header_len = read_u64le(buf.data());
  if (header_len == 0 || header_len > buf.size() - 8)
    throw Error(Errc::unknown_format, source + ": implausible safetensors header length");
  json header;
  try {
    header = json::parse(buf.data() + 8, buf.data() + 8 + header_len);
  } catch (const json::exception& e) {
    throw Error(Errc::unknown_format, source + ": safetensors header is not JSON (" + e.what() + ")");
  }
  if (!header.is_object())
    throw Error(Errc::unknown_format, source + ": safetensors header is not an object");
  const auto it = header.find(tensor_name);
  if (it == header.end())
    throw Error(Errc::tensor_not_found,
                source + ": no tensor named '" + tensor_name + "' in container");
  const json& info = *it;

  const std::string dt = info.at("dtype").get<std::string>();
  DtypeOrigin dtype;
  if (dt == "F64") dtype = DtypeOrigin::f64;
  else if (dt == "F32") dtype = DtypeOrigin::f32;
  else if (dt == "F16") dtype = DtypeOrigin::f16;
  else if (dt == "BF16") dtype = DtypeOrigin::bf16;
  else throw Error(Errc::unknown_format, source + ": unsupported safetensors dtype '" + dt + "'");

  const auto shape = info.at("shape").get<std::vector<std::int64_t>>();
  if (shape.size() != 2)
    throw Error(Errc::shape_mismatch,
                source + ": expected a 2-D tensor, got " + std::to_string(shape.size()) + "-D");
  const Eigen::Index rows = shape[0], cols = shape[1];

  const auto offsets = info.at("data_offsets").get<std::vector<std::uint64_t>>();
  if (offsets.size() != 2 || offsets[1] < offsets[0])
    throw Error(Errc::parse_error, source + ": malformed data_offsets");
  const size_t expected = static_cast<size_t>(rows) * cols * dtype_size(dtype);
  if (offsets[1] - offsets[0] != expected)
    throw Error(Errc::shape_mismatch, source + ": data_offsets span " +
                                          std::to_string(offsets[1] - offsets[0]) +
                                          " bytes, shape implies " + std::to_string(expected));
  const size_t data_start = 8 + header_len;
  if (data_start + offsets[1] > buf.size())
    throw Error(Errc::shape_mismatch, source + ": tensor data extends past end of file");
  return {widen_row_major(buf.data() + data_start + offsets[0], rows, cols, dtype, source), dtype};
}

const char* dtype_descr(DtypeOrigin d) {
  switch (d) {
    case DtypeOrigin::f64: return "<f8";
    case DtypeOrigin::f32: return "<f4";
    case DtypeOrigin::f16: return "<f2";
    case DtypeOrigin::bf16: break;
  }
  throw Error(Errc::unknown_format, "NPY cannot store bf16");
}

void encode_row_major(std::string& out, const Eigen::MatrixXd& m, DtypeOrigin d) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      switch (d) {
        case DtypeOrigin::f64: {
          out.append(reinterpret_cast<const char*>(&v), 8);
          break;
        }
        case DtypeOrigin::f32: {
          const float f = static_cast<float>(v);
          out.append(reinterpret_cast<const char*>(&f), 4);
          break;
        }
        case DtypeOrigin::f16: {
          const std::uint16_t h = double_to_half(v);
          out.append(reinterpret_cast<const char*>(&h), 2);
          break;
        }
        case DtypeOrigin::bf16: {
          const std::uint16_t h = double_to_bfloat16(v);
          out.append(reinterpret_cast<const char*>(&h), 2);
          break;
        }
      }
    }
  }
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::parse_error, "cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::parse_error, "short write: " + path.string());
}

}  // namespace

const char* to_string(DtypeOrigin d) {
  switch (d) {
    case DtypeOrigin::f64: return "f64";
    case DtypeOrigin::f32: return "f32";
    case DtypeOrigin::f16: return "f16";
    case DtypeOrigin::bf16: return "bf16";
  }
  return "?";
}

double half_to_double(std::uint16_t bits) {
  const std::uint32_t sign = (bits >> 15) & 1u;
  const std::uint32_t expo = (bits >> 10) & 0x1Fu;
  std::uint32_t mant = bits & 0x3FFu;
  std::uint32_t f;
  if (expo == 0) {
    if (mant == 0) {
      f = sign << 31;
    } else {
      int shift = 0;
      while (!(mant & 0x400u)) {
        mant <<= 1;
        ++shift;
      }
      mant &= 0x3FFu;
      f = (sign << 31) | static_cast<std::uint32_t>(113 - shift) << 23 | (mant << 13);
    }
  } else if (expo == 31) {
    f = (sign << 31) | 0x7F800000u | (mant << 13);
  } else {
    f = (sign << 31) | ((expo - 15 + 127) << 23) | (mant << 13);
  }
  return static_cast<double>(std::bit_cast<float>(f));
}

double bfloat16_to_double(std::uint16_t bits) {
  return static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16));
}

std::uint16_t double_to_half(double v) {
  const float f = static_cast<float>(v);
  const std::uint32_t x = std::bit_cast<std::uint32_t>(f);
  const std::uint32_t sign = (x >> 16) & 0x8000u;
  const std::int32_t expo = static_cast<std::int32_t>((x >> 23) & 0xFFu) - 127 + 15;
  std::uint32_t mant = x & 0x7FFFFFu;
  if (((x >> 23) & 0xFFu) == 0xFFu) return static_cast<std::uint16_t>(sign | 0x7C00u | (mant ? 0x200u : 0));
  if (expo >= 31) return static_cast<std::uint16_t>(sign | 0x7C00u);  // overflow -> inf
  if (expo <= 0) {
    if (expo < -10) return static_cast<std::uint16_t>(sign);  // underflow -> zero
    mant |= 0x800000u;
    const int shift = 14 - expo;
    std::uint32_t half = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1);
    const std::uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (half & 1u))) ++half;
    return static_cast<std::uint16_t>(sign | half);
  }
  std::uint32_t half = (static_cast<std::uint32_t>(expo) << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) ++half;  // may carry into exponent; that is correct
  return static_cast<std::uint16_t>(sign | half);
}

std::uint16_t double_to_bfloat16(double v) {
  const float f = static_cast<float>(v);
  std::uint32_t x = std::bit_cast<std::uint32_t>(f);
  if (std::isnan(f)) return static_cast<std::uint16_t>((x >> 16) | 0x40u);
  const std::uint32_t rem = x & 0xFFFFu;
  std::uint32_t hi = x >> 16;
  if (rem > 0x8000u || (rem == 0x8000u && (hi & 1u))) ++hi;
  return static_cast<std::uint16_t>(hi);
}

LoadedTensor load_tensor(const std::filesystem::path& path, const std::string& tensor_name,
                         TensorKind kind) {
  if (!std::filesystem::exists(path))
    throw Error(Errc::unknown_format, "no such file: " + path.string());
  const std::vector<char> buf = read_file(path);
  const std::string source_id = path.string() + ":" + tensor_name;

  RawTensor raw;
  if (starts_with(buf, "\x93NUMPY", 6)) {
    raw = load_npy(buf, source_id);
  } else if (starts_with(buf, "UGT1", 4)) {
    raw = load_raw(buf, source_id);
  } else if (buf.size() >= 9 && read_u64le(buf.data()) <= buf.size() - 8 && buf[8] == '{') {
    raw = load_safetensors(buf, tensor_name, source_id);
  } else {
    throw Error(Errc::unknown_format, source_id + ": not a safetensors, NPY, or UGT1 file");
  }

  if (kind == TensorKind::weight) {
    if (raw.data.rows() < 1 || raw.data.cols() < 1)
      throw Error(Errc::invariant_violation, source_id + ": empty weight matrix");
    return WeightMatrix{std::move(raw.data), source_id, raw.dtype};
  }
  if (raw.data.rows() < 2)
    throw Error(Errc::invariant_violation,
                source_id + ": representation matrix needs n_seq >= 2, got " +
                    std::to_string(raw.data.rows()));
  return RepresentationMatrix{std::move(raw.data), source_id, raw.dtype};
}

WeightMatrix load_weight(const std::filesystem::path& path, const std::string& tensor_name) {
  return std::get<WeightMatrix>(load_tensor(path, tensor_name, TensorKind::weight));
}

RepresentationMatrix load_representation(const std::filesystem::path& path,
                                         const std::string& tensor_name) {
  return std::get<RepresentationMatrix>(load_tensor(path, tensor_name, TensorKind::representation));
}

void save_npy(const std::filesystem::path& path, const Eigen::MatrixXd& m, DtypeOrigin dtype) {
  std::ostringstream dict;
  dict << "{'descr': '" << dtype_descr(dtype) << "', 'fortran_order': False, 'shape': ("
       << m.rows() << ", " << m.cols() << "), }";
  std::string header = dict.str();
  const size_t unpadded = 10 + header.size() + 1;
  const size_t padded = (unpadded + 63) / 64 * 64;
  header.append(padded - unpadded, ' ');
  header += '\n';

  std::string bytes;
  bytes += "\x93NUMPY";
  bytes += '\x01';
  bytes += '\x00';
  const std::uint16_t hlen = static_cast<std::uint16_t>(header.size());
  bytes.append(reinterpret_cast<const char*>(&hlen), 2);
  bytes += header;
  encode_row_major(bytes, m, dtype);
  write_file(path, bytes);
}

void save_raw(const std::filesystem::path& path, const Eigen::MatrixXd& m, DtypeOrigin dtype) {
  if (dtype != DtypeOrigin::f32 && dtype != DtypeOrigin::f64)
    throw Error(Errc::unknown_format, "UGT1 stores f32 or f64 only");
  std::string bytes = "UGT1";
  bytes += static_cast<char>(dtype == DtypeOrigin::f32 ? 0 : 1);
  bytes.append(3, '\0');
  const std::uint32_t rows = static_cast<std::uint32_t>(m.rows());
  const std::uint32_t cols = static_cast<std::uint32_t>(m.cols());
  bytes.append(reinterpret_cast<const char*>(&rows), 4);
  bytes.append(reinterpret_cast<const char*>(&cols), 4);
  encode_row_major(bytes, m, dtype);
  write_file(path, bytes);
}

void save_safetensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  json header = json::object();
  std::uint64_t offset = 0;
  // nlohmann objects iterate in key order; assign offsets in that same order.
  for (const auto& t : tensors) {
    header[t.name] = json::object();
  }
  std::vector<const NamedTensor*> ordered;
  for (auto it = header.begin(); it != header.end(); ++it) {
    for (const auto& t : tensors)
      if (t.name == it.key()) ordered.push_back(&t);
  }
  for (const NamedTensor* t : ordered) {
    const char* dt = t->dtype == DtypeOrigin::f64   ? "F64"
                     : t->dtype == DtypeOrigin::f32 ? "F32"
                     : t->dtype == DtypeOrigin::f16 ? "F16"
                                                    : "BF16";
    const std::uint64_t nbytes =
        static_cast<std::uint64_t>(t->data.rows()) * t->data.cols() * dtype_size(t->dtype);
    header[t->name] = {{"dtype", dt},
                       {"shape", {t->data.rows(), t->data.cols()}},
                       {"data_offsets", {offset, offset + nbytes}}};
    offset += nbytes;
  }
  std::string hstr = header.dump();
  while ((8 + hstr.size()) % 8 != 0) hstr += ' ';

  std::string bytes;
  const std::uint64_t hlen = hstr.size();
  bytes.append(reinterpret_cast<const char*>(&hlen), 8);
  bytes += hstr;
  for (const NamedTensor* t : ordered) encode_row_major(bytes, t->data, t->dtype);
  write_file(path, bytes);
}

}  // namespace geomlens::ingest
