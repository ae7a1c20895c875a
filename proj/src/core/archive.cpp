#include "rav/core/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "rav/core/error.hpp"

namespace rav {
namespace {

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

constexpr std::size_t kMagicSize = 6;

template <typename T>
void put(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw Error(ErrorCategory::format_error, "truncated archive: " + path.string());
  return value;
}

}  // namespace

std::int64_t NamedArray::numel() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

const NamedArray* Archive::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

const NamedArray& Archive::get(const std::string& name) const {
  const NamedArray* a = find(name);
  if (a == nullptr) throw Error(ErrorCategory::format_error, "archive has no array '" + name + "'");
  return *a;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  require(archive.magic.size() == kMagicSize, "archive magic must be 6 bytes");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCategory::io_error, "cannot write " + path.string());
  out.write(archive.magic.data(), kMagicSize);
  put<std::uint32_t>(out, archive.version);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(archive.header.size()));
  for (auto h : archive.header) put<std::uint32_t>(out, h);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(archive.arrays.size()));
  for (const auto& a : archive.arrays) {
    const auto n = a.numel();
    const std::size_t have = a.dtype == NamedArray::DType::f32 ? a.f32.size() : a.i32.size();
    require(static_cast<std::size_t>(n) == have, "array '" + a.name + "' size does not match shape");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(a.dtype));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) put<std::int64_t>(out, d);
    if (a.dtype == NamedArray::DType::f32)
      out.write(reinterpret_cast<const char*>(a.f32.data()), static_cast<std::streamsize>(n * 4));
    else
      out.write(reinterpret_cast<const char*>(a.i32.data()), static_cast<std::streamsize>(n * 4));
  }
  if (!out) throw Error(ErrorCategory::io_error, "write failed: " + path.string());
}

Archive read_archive(const std::filesystem::path& path, const std::string& expected_magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCategory::missing_artifact, "cannot open " + path.string());
  Archive archive;
  archive.magic.resize(kMagicSize);
  in.read(archive.magic.data(), kMagicSize);
  if (!in || archive.magic != expected_magic)
    throw Error(ErrorCategory::format_error,
                "bad archive magic in " + path.string() + " (expected " + expected_magic + ")");
  archive.version = get<std::uint32_t>(in, path);
  const auto header_count = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < header_count; ++i)
    archive.header.push_back(get<std::uint32_t>(in, path));
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto name_len = get<std::uint32_t>(in, path);
    a.name.resize(name_len);
    in.read(a.name.data(), name_len);
    const auto dtype = get<std::uint8_t>(in, path);
    if (dtype > 1) throw Error(ErrorCategory::format_error, "unknown dtype in " + path.string());
    a.dtype = static_cast<NamedArray::DType>(dtype);
    const auto rank = get<std::uint32_t>(in, path);
    for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(get<std::int64_t>(in, path));
    const auto n = a.numel();
    if (n < 0) throw Error(ErrorCategory::format_error, "negative array size in " + path.string());
    if (a.dtype == NamedArray::DType::f32) {
      a.f32.resize(static_cast<std::size_t>(n));
      in.read(reinterpret_cast<char*>(a.f32.data()), n * 4);
    } else {
      a.i32.resize(static_cast<std::size_t>(n));
      in.read(reinterpret_cast<char*>(a.i32.data()), n * 4);
    }
    if (!in) throw Error(ErrorCategory::format_error, "truncated archive: " + path.string());
    archive.arrays.push_back(std::move(a));
  }
  return archive;
}

}  // namespace rav
