#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ssrc/tensor.hpp"

namespace ssrc {

// 8-bit PNG I/O. Image tensors are (3, H, W) with values in [-1, 1]; the byte
// mapping is v = b / 127.5 - 1 and b = round((v + 1) * 127.5), clamped.
void save_image(const Tensor& image, const std::filesystem::path& path);
Tensor load_image(const std::filesystem::path& path);  // RGB only, else IngestionError

void save_label_map(const std::vector<std::uint8_t>& labels, std::int64_t height, std::int64_t width,
                    const std::filesystem::path& path);
std::vector<std::uint8_t> load_label_map(const std::filesystem::path& path, std::int64_t* height = nullptr,
                                         std::int64_t* width = nullptr);

// Bilinear resize with half-pixel centers: (C, H, W) -> (C, h, w).
Tensor resize_bilinear(const Tensor& image, std::int64_t height, std::int64_t width);

struct ImageDataset {
  std::vector<std::filesystem::path> files;  // sorted by filename
  std::vector<Tensor> images;                // (3, size, size)

  std::size_t size() const { return images.size(); }
};

// Every *.png in `dir` (non-recursive), sorted by filename and resized to
// size x size. size <= 0 keeps the stored size.
ImageDataset load_image_folder(const std::filesystem::path& dir, std::int64_t size);

}  // namespace ssrc
