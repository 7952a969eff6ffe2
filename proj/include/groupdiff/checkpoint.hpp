#pragma once

#include <string>
#include <vector>

#include "groupdiff/tensor.hpp"

namespace groupdiff {

struct NamedTensor {
  std::string name;
  Tensor value;

  bool operator==(const NamedTensor&) const = default;
};

enum class DType : std::uint8_t { kFloat64 = 0, kFloat32 = 1 };

/// Parameter file layout ("GDF1"):
///
///   "GDF1" u32 version
///   u32 header_len, header bytes       (structured-text config record)
///   u32 tensor_count
///   per tensor: str name, u32 rank, u64 dims[rank], u8 dtype, u64 byte_offset
///   raw little-endian data; offsets are relative to the start of this block
struct Checkpoint {
  std::string header;
  std::vector<NamedTensor> tensors;

  const Tensor& find(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt, DType dtype = DType::kFloat64);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace groupdiff
