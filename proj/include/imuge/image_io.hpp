#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace imuge {

enum class ImageFormat { png, bmp, jpeg };

ImageFormat format_from_path(const std::filesystem::path& path);

/// [-1, 1] -> 8-bit, 127.5 * (x + 1) rounded half away from zero, clamped to [0, 255].
/// Input [3, H, W] (RGB) or [1, H, W]; output is H x W x C interleaved bytes.
std::vector<uint8_t> quantize_to_bytes(const torch::Tensor& image);

/// Inverse of quantize_to_bytes: interleaved bytes -> [C, H, W] float in [-1, 1].
torch::Tensor bytes_to_image(const std::vector<uint8_t>& bytes, int64_t height, int64_t width, int64_t channels);

/// Decodes PNG / BMP / JPEG / TIFF into a [3, H, W] RGB tensor in [-1, 1].
torch::Tensor load_image(const std::filesystem::path& path);

/// Decodes a single-channel mask file into [1, H, W] in [0, 1].
torch::Tensor load_mask(const std::filesystem::path& path);

/// Writes a [3, H, W] image or [1, H, W] mask. JPEG requires a quality factor.
/// Masks are expected in [0, 1] and written as 0..255.
void save_image(const std::filesystem::path& path, const torch::Tensor& image, ImageFormat format,
                std::optional<int> quality = std::nullopt);
void save_mask(const std::filesystem::path& path, const torch::Tensor& mask);

/// In-memory encode/decode through the system JPEG codec at `quality`.
torch::Tensor jpeg_roundtrip(const torch::Tensor& image, int quality);

/// Encoded JPEG bytes of a [3, H, W] image.
std::vector<uint8_t> encode_jpeg(const torch::Tensor& image, int quality);

}  // namespace imuge
