#include "anople/tensor_io.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <limits>
#include <cstring>
#include <fstream>

namespace anople {

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "tensor files are little-endian");

double half_to_double(std::uint16_t h) {
  const std::uint32_t sign = (h >> 15) & 1u;
  const std::uint32_t exp = (h >> 10) & 0x1fu;
  const std::uint32_t mant = h & 0x3ffu;
  double v;
  if (exp == 0) {
    v = std::ldexp(static_cast<double>(mant), -24);
  } else if (exp == 31) {
    v = mant ? std::numeric_limits<double>::quiet_NaN() : std::numeric_limits<double>::infinity();
  } else {
    v = std::ldexp(static_cast<double>(mant | 0x400u), static_cast<int>(exp) - 25);
  }
  return sign ? -v : v;
}

double bf16_to_double(std::uint16_t b) {
  const std::uint32_t bits = static_cast<std::uint32_t>(b) << 16;
  return static_cast<double>(std::bit_cast<float>(bits));
}

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "F64") return 8;
  if (dtype == "F32") return 4;
  if (dtype == "F16" || dtype == "BF16") return 2;
  throw FormatError("unsupported tensor dtype: " + dtype);
}

const char* dtype_name(DType d) {
  switch (d) {
    case DType::F16: return "F16";
    case DType::BF16: return "BF16";
    case DType::F32: return "F32";
    case DType::F64: return "F64";
  }
  return "F64";
}

}  // namespace

TensorRecord TensorRecord::from_matrix(const ad::Matrix& m) {
  return with_shape(m, {m.rows(), m.cols()});
}

TensorRecord TensorRecord::with_shape(const ad::Matrix& m, std::vector<std::int64_t> shape) {
  std::int64_t n = 1;
  for (auto s : shape) n *= s;
  if (n != m.size()) throw FormatError("tensor shape does not match element count");
  return TensorRecord{std::move(shape), m};
}

const TensorRecord& TensorFile::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw FormatError("missing tensor: " + name);
  return it->second;
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open tensor file: " + path.string());
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || header_len == 0 || header_len > (1ull << 30)) throw FormatError("bad tensor file header: " + path.string());
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw FormatError("truncated tensor file header: " + path.string());

  json meta;
  try {
    meta = json::parse(header);
  } catch (const json::exception& e) {
    throw FormatError("tensor file header is not JSON: " + std::string(e.what()));
  }

  std::vector<char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  TensorFile file;
  for (auto& [name, entry] : meta.items()) {
    if (name == "__metadata__") {
      for (auto& [k, v] : entry.items()) file.metadata[k] = v.get<std::string>();
      continue;
    }
    const auto dtype = entry.at("dtype").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
    const std::size_t elem = dtype_size(dtype);
    std::int64_t count = 1;
    for (auto s : shape) count *= s;
    if (offsets.size() != 2 || offsets[1] < offsets[0] || offsets[1] > blob.size() ||
        offsets[1] - offsets[0] != static_cast<std::uint64_t>(count) * elem) {
      throw FormatError("tensor '" + name + "' has inconsistent data offsets");
    }
    const Eigen::Index rows = shape.empty() ? 1 : (shape.size() == 1 ? 1 : shape[0]);
    const Eigen::Index cols = rows == 0 ? 0 : count / std::max<Eigen::Index>(rows, 1);
    ad::Matrix data(rows, cols);
    const char* src = blob.data() + offsets[0];
    for (std::int64_t i = 0; i < count; ++i) {
      double v = 0;
      if (dtype == "F64") {
        std::memcpy(&v, src + i * 8, 8);
      } else if (dtype == "F32") {
        float f;
        std::memcpy(&f, src + i * 4, 4);
        v = f;
      } else {
        std::uint16_t h;
        std::memcpy(&h, src + i * 2, 2);
        v = dtype == "F16" ? half_to_double(h) : bf16_to_double(h);
      }
      data.data()[i] = v;
    }
    file.tensors.emplace(name, TensorRecord{shape, std::move(data)});
  }
  return file;
}

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file, DType dtype) {
  if (dtype == DType::F16 || dtype == DType::BF16) throw FormatError("half-precision writing is not supported");
  const std::size_t elem = dtype == DType::F64 ? 8 : 4;

  json meta = json::object();
  if (!file.metadata.empty()) meta["__metadata__"] = file.metadata;
  std::uint64_t offset = 0;
  for (const auto& [name, rec] : file.tensors) {
    const auto bytes = static_cast<std::uint64_t>(rec.data.size()) * elem;
    meta[name] = {{"dtype", dtype_name(dtype)}, {"shape", rec.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string header = meta.dump();
  // Pad so the data section starts 8-byte aligned.
  while (header.size() % 8 != 0) header.push_back(' ');

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write tensor file: " + path.string());
  const std::uint64_t header_len = header.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, rec] : file.tensors) {
    const double* src = rec.data.data();
    if (dtype == DType::F64) {
      out.write(reinterpret_cast<const char*>(src), static_cast<std::streamsize>(rec.data.size() * 8));
    } else {
      std::vector<float> tmp(src, src + rec.data.size());
      out.write(reinterpret_cast<const char*>(tmp.data()), static_cast<std::streamsize>(tmp.size() * 4));
    }
  }
  if (!out) throw FormatError("failed writing tensor file: " + path.string());
}

}  // namespace anople
