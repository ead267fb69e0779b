#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "realanon/image.hpp"

namespace realanon::io {

ImageTensor load_image(const std::string& path);
void save_image(const std::string& path, const ImageTensor& image);

/// Decodes PNG/JPEG bytes. Throws IoError on undecodable input.
ImageTensor decode_image(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const ImageTensor& image);

/// Loads a grayscale image as a mask: pixels > 127 are set.
BinaryMask load_mask(const std::string& path);
void save_mask(const std::string& path, const BinaryMask& mask);

/// float32 .npy with shape (C, H, W) or (H, W, C) when `channels_last`.
EmbeddingMap load_npy_embedding(const std::string& path);
void save_npy_embedding(const std::string& path, const EmbeddingMap& map);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws IoError on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace realanon::io
