#include "siamtrack/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "siamtrack/error.hpp"

namespace siamtrack {

std::vector<float> Image::channel_means() const {
  std::vector<float> means(channels, 0.f);
  const std::size_t plane_size = static_cast<std::size_t>(width) * height;
  if (plane_size == 0) return means;
  for (int c = 0; c < channels; ++c) {
    double s = 0;
    const float* p = plane(c);
    for (std::size_t i = 0; i < plane_size; ++i) s += p[i];
    means[c] = static_cast<float>(s / plane_size);
  }
  return means;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace

Image read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw IoError("libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt png " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int ch = png_get_channels(png, info);
  std::vector<png_byte> buf(static_cast<std::size_t>(w) * h * ch);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buf.data() + static_cast<std::size_t>(y) * w * ch;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  Image img(w, h, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * ch + c];
    }
  }
  return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw IoError("png writer needs 1 or 3 channels");
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw IoError("libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(img.width) * img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        const float v = std::round(img.at(c, y, x));
        row[static_cast<std::size_t>(x) * img.channels + c] =
            static_cast<png_byte>(std::clamp(v, 0.f, 255.f));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image crop_and_resize(const Image& frame, double cx, double cy, double side, int out_size) {
  return crop_and_resize(frame, cx, cy, side, out_size, frame.channel_means());
}

Image crop_and_resize(const Image& frame, double cx, double cy, double side, int out_size,
                      const std::vector<float>& fill) {
  if (!(side > 0) || out_size < 1) throw UsageError("crop side and output size must be positive");
  Image out(out_size, out_size, frame.channels);
  const double scale = side / out_size;
  const double x0 = cx - side / 2;
  const double y0 = cy - side / 2;
  // sample coordinates in pixel-index space (pixel i centered at i + 0.5)
  std::vector<double> xs(out_size);
  std::vector<double> ys(out_size);
  for (int u = 0; u < out_size; ++u) {
    xs[u] = x0 + (u + 0.5) * scale - 0.5;
    ys[u] = y0 + (u + 0.5) * scale - 0.5;
  }
  const int W = frame.width;
  const int H = frame.height;
  for (int c = 0; c < frame.channels; ++c) {
    const float* src = frame.plane(c);
    const float f = fill[c];
    auto fetch = [&](int y, int x) -> float {
      return (x >= 0 && x < W && y >= 0 && y < H) ? src[static_cast<std::size_t>(y) * W + x] : f;
    };
    for (int v = 0; v < out_size; ++v) {
      const double sy = ys[v];
      const int iy = static_cast<int>(std::floor(sy));
      const float fy = static_cast<float>(sy - iy);
      for (int u = 0; u < out_size; ++u) {
        const double sx = xs[u];
        const int ix = static_cast<int>(std::floor(sx));
        const float fx = static_cast<float>(sx - ix);
        float top = fetch(iy, ix);
        float bot = fetch(iy + 1, ix);
        if (fx != 0.f) {
          top = top + fx * (fetch(iy, ix + 1) - top);
          bot = bot + fx * (fetch(iy + 1, ix + 1) - bot);
        }
        out.at(c, v, u) = fy != 0.f ? top + fy * (bot - top) : top;
      }
    }
  }
  return out;
}

Tensor<float> to_tensor(const Image& img) {
  Tensor<float> t(Shape{1, img.channels, img.height, img.width});
  for (std::size_t i = 0; i < img.data.size(); ++i) t.data()[i] = (img.data[i] - 128.f) / 64.f;
  return t;
}

Tensor<float> to_tensor(const std::vector<Image>& batch) {
  if (batch.empty()) throw ShapeError("empty image batch");
  const Image& f = batch[0];
  Tensor<float> t(Shape{static_cast<int>(batch.size()), f.channels, f.height, f.width});
  for (std::size_t n = 0; n < batch.size(); ++n) {
    if (batch[n].width != f.width || batch[n].height != f.height || batch[n].channels != f.channels) {
      throw ShapeError("image batch with mixed sizes");
    }
    float* dst = t.sample(static_cast<int>(n));
    for (std::size_t i = 0; i < batch[n].data.size(); ++i) dst[i] = (batch[n].data[i] - 128.f) / 64.f;
  }
  return t;
}

}  // namespace siamtrack
