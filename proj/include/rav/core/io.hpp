#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "rav/core/image.hpp"

namespace rav {

/// Writes an 8-bit PNG (gray for 1 channel, RGB for 3). Values are clamped and rounded.
void write_png(const std::filesystem::path& path, const ImageBuffer& img);
ImageBuffer read_png(const std::filesystem::path& path);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const std::string& text);
std::string sha256_file(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace rav
