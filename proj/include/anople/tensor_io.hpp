#pragma once

#include "anople/autograd.hpp"
#include "anople/errors.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

// Named-tensor container in the safetensors layout:
//   u64 little-endian header length | JSON header | raw tensor bytes
// The JSON header maps tensor names to {dtype, shape, data_offsets} and may
// carry a string-to-string "__metadata__" table. Checkpoints, memory banks and
// backbone weights all use this container, so PyTorch state dicts exported
// with `safetensors.torch.save_file` load without conversion.
namespace anople {

enum class DType { F16, BF16, F32, F64 };

struct TensorRecord {
  std::vector<std::int64_t> shape;
  // Row-major data viewed as shape[0] x prod(shape[1:]); 1-D tensors are a
  // single row and scalars are 1x1.
  ad::Matrix data;

  static TensorRecord from_matrix(const ad::Matrix& m);
  static TensorRecord with_shape(const ad::Matrix& m, std::vector<std::int64_t> shape);
};

struct TensorFile {
  std::map<std::string, TensorRecord> tensors;
  std::map<std::string, std::string> metadata;

  const TensorRecord& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
};

TensorFile read_tensor_file(const std::filesystem::path& path);
void write_tensor_file(const std::filesystem::path& path, const TensorFile& file, DType dtype = DType::F64);

}  // namespace anople
