#include "ssrc/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>

#include "ssrc/error.hpp"

namespace ssrc {

namespace {

struct PngRead {
  png_image img;
  PngRead() {
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
  }
  ~PngRead() { png_image_free(&img); }
};

void begin_read(PngRead& r, const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) throw IngestionError(path.string() + ": not a readable file");
  if (std::filesystem::file_size(path, ec) == 0) throw IngestionError(path.string() + ": empty file");
  if (!png_image_begin_read_from_file(&r.img, path.string().c_str())) {
    throw IngestionError(path.string() + ": unreadable PNG (" + r.img.message + ")");
  }
}

void write_png(const std::filesystem::path& path, std::uint32_t format, std::int64_t h, std::int64_t w,
               const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IngestionError(path.string() + ": cannot write PNG (" + msg + ")");
  }
}

}  // namespace

void save_image(const Tensor& image, const std::filesystem::path& path) {
  if (image.dim() != 3 || image.size(0) != 3) {
    throw ShapeError("save_image: expected (3, H, W), got " + shape_str(image.shape()));
  }
  const auto h = image.size(1), w = image.size(2), hw = h * w;
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(3 * hw));
  const Scalar* p = image.data().data();
  for (std::int64_t i = 0; i < hw; ++i)
    for (int c = 0; c < 3; ++c) {
      const double v = std::round((static_cast<double>(p[c * hw + i]) + 1.0) * 127.5);
      bytes[static_cast<std::size_t>(3 * i + c)] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  write_png(path, PNG_FORMAT_RGB, h, w, bytes);
}

Tensor load_image(const std::filesystem::path& path) {
  PngRead r;
  begin_read(r, path);
  if (!(r.img.format & PNG_FORMAT_FLAG_COLOR) || (r.img.format & PNG_FORMAT_FLAG_ALPHA)) {
    throw IngestionError(path.string() + ": expected 3-channel RGB, got " +
                         std::to_string(PNG_IMAGE_SAMPLE_CHANNELS(r.img.format)) + " channel(s)");
  }
  r.img.format = PNG_FORMAT_RGB;
  const std::int64_t h = r.img.height, w = r.img.width, hw = h * w;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(r.img));
  if (!png_image_finish_read(&r.img, nullptr, bytes.data(), 0, nullptr)) {
    throw IngestionError(path.string() + ": corrupt PNG (" + r.img.message + ")");
  }
  std::vector<Scalar> data(static_cast<std::size_t>(3 * hw));
  for (std::int64_t i = 0; i < hw; ++i)
    for (int c = 0; c < 3; ++c)
      data[static_cast<std::size_t>(c * hw + i)] = static_cast<Scalar>(bytes[3 * i + c] / 127.5 - 1.0);
  return Tensor::from_data({3, h, w}, std::move(data));
}

void save_label_map(const std::vector<std::uint8_t>& labels, std::int64_t height, std::int64_t width,
                    const std::filesystem::path& path) {
  if (static_cast<std::int64_t>(labels.size()) != height * width) {
    throw ShapeError("save_label_map: " + std::to_string(labels.size()) + " labels for " + std::to_string(height) +
                     "x" + std::to_string(width));
  }
  write_png(path, PNG_FORMAT_GRAY, height, width, labels);
}

std::vector<std::uint8_t> load_label_map(const std::filesystem::path& path, std::int64_t* height,
                                         std::int64_t* width) {
  PngRead r;
  begin_read(r, path);
  if ((r.img.format & PNG_FORMAT_FLAG_COLOR) || (r.img.format & PNG_FORMAT_FLAG_ALPHA)) {
    throw IngestionError(path.string() + ": label map must be single-channel");
  }
  r.img.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(r.img));
  if (!png_image_finish_read(&r.img, nullptr, bytes.data(), 0, nullptr)) {
    throw IngestionError(path.string() + ": corrupt PNG (" + r.img.message + ")");
  }
  if (height) *height = r.img.height;
  if (width) *width = r.img.width;
  return bytes;
}

Tensor resize_bilinear(const Tensor& image, std::int64_t height, std::int64_t width) {
  if (image.dim() != 3) throw ShapeError("resize_bilinear: expected (C, H, W), got " + shape_str(image.shape()));
  if (height < 1 || width < 1) throw ContractError("resize_bilinear: target size must be positive");
  const auto c = image.size(0), h = image.size(1), w = image.size(2);
  if (h == height && w == width) return image.detach();
  std::vector<Scalar> out(static_cast<std::size_t>(c * height * width));
  const Scalar* src = image.data().data();
  const double sy = static_cast<double>(h) / height, sx = static_cast<double>(w) / width;
  for (std::int64_t y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::int64_t>(fy);
    const auto y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - y0;
    for (std::int64_t x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::int64_t>(fx);
      const auto x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - x0;
      for (std::int64_t k = 0; k < c; ++k) {
        const Scalar* p = src + k * h * w;
        const double top = p[y0 * w + x0] * (1 - tx) + p[y0 * w + x1] * tx;
        const double bottom = p[y1 * w + x0] * (1 - tx) + p[y1 * w + x1] * tx;
        out[static_cast<std::size_t>((k * height + y) * width + x)] = static_cast<Scalar>(top * (1 - ty) + bottom * ty);
      }
    }
  }
  return Tensor::from_data({c, height, width}, std::move(out));
}

ImageDataset load_image_folder(const std::filesystem::path& dir, std::int64_t size) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw IngestionError(dir.string() + ": not a directory");
  ImageDataset ds;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png") ds.files.push_back(entry.path());
  }
  std::sort(ds.files.begin(), ds.files.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  for (const auto& f : ds.files) {
    Tensor img = load_image(f);
    ds.images.push_back(size > 0 ? resize_bilinear(img, size, size) : img);
  }
  return ds;
}

}  // namespace ssrc
