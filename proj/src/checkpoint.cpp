#include "groupdiff/checkpoint.hpp"

#include "groupdiff/binary_io.hpp"
#include "groupdiff/error.hpp"

namespace groupdiff {

namespace {
constexpr std::uint32_t kVersion = 1;

std::size_t dtype_size(DType d) { return d == DType::kFloat64 ? 8 : 4; }
}  // namespace

const Tensor& Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw ValidationError("checkpoint has no tensor named " + name);
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt, DType dtype) {
  io::BinaryWriter w(path);
  w.magic("GDF1");
  w.u32(kVersion);
  w.str(ckpt.header);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.value.rank()));
    for (auto d : t.value.shape()) w.u64(d);
    w.u8(static_cast<std::uint8_t>(dtype));
    w.u64(offset);
    offset += t.value.numel() * dtype_size(dtype);
  }
  for (const auto& t : ckpt.tensors) {
    if (dtype == DType::kFloat64) {
      w.f64s(t.value.values());
    } else {
      std::vector<float> buf(t.value.values().begin(), t.value.values().end());
      w.f32s(buf);
    }
  }
  w.close();
}

Checkpoint read_checkpoint(const std::string& path) {
  io::BinaryReader r(path);
  r.expect_magic("GDF1");
  const auto version = r.u32();
  if (version != kVersion) throw IoError(path + ": unsupported GDF version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.header = r.str();
  const auto count = r.u32();

  struct Entry {
    std::string name;
    Shape shape;
    DType dtype;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.str();
    const auto rank = r.u32();
    if (rank > 8) throw IoError(path + ": tensor rank " + std::to_string(rank) + " is implausible");
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.u64());
    const auto dt = r.u8();
    if (dt > 1) throw IoError(path + ": unknown dtype");
    e.dtype = static_cast<DType>(dt);
    e.offset = r.u64();
    entries.push_back(std::move(e));
  }
  std::uint64_t expected = 0;
  for (auto& e : entries) {
    if (e.offset != expected) throw IoError(path + ": non-contiguous tensor offsets");
    Tensor t(e.shape);
    if (e.dtype == DType::kFloat64) {
      r.f64s(t.values());
    } else {
      std::vector<float> buf(t.numel());
      r.f32s(buf);
      for (std::size_t i = 0; i < buf.size(); ++i) t[i] = buf[i];
    }
    expected += t.numel() * dtype_size(e.dtype);
    ckpt.tensors.push_back({std::move(e.name), std::move(t)});
  }
  return ckpt;
}

}  // namespace groupdiff
