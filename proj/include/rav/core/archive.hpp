#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rav {

/// One named array in a binary archive: float32 or int32 payload.
struct NamedArray {
  enum class DType : std::uint8_t { f32 = 0, i32 = 1 };

  std::string name;
  DType dtype = DType::f32;
  std::vector<std::int64_t> shape;
  std::vector<float> f32;
  std::vector<std::int32_t> i32;

  std::int64_t numel() const;
};

/// Named-array archive shared by the morphable-model ("RAVMM1") and checkpoint
/// ("RAVCK1") formats.
///
/// Layout (little-endian): 6-byte magic, u32 version, u32 header count, u32
/// header values, u32 array count, then per array: u32 name length, name bytes,
/// u8 dtype, u32 rank, i64 dims, raw element data.
struct Archive {
  std::string magic;
  std::uint32_t version = 1;
  std::vector<std::uint32_t> header;
  std::vector<NamedArray> arrays;

  const NamedArray& get(const std::string& name) const;
  const NamedArray* find(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path, const std::string& expected_magic);

}  // namespace rav
