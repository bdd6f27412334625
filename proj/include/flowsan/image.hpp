#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "flowsan/error.hpp"
#include "flowsan/tensor.hpp"

namespace flowsan {

// Single-channel image, row-major, intensities nominally in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, float fill = 0.0f)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

  std::size_t size() const { return pixels.size(); }
  float& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const Image&, const Image&) = default;
};

inline void require_same_size(const Image& a, const Image& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(what) + ": image size mismatch " + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                     std::to_string(b.width));
  }
}

// Stack images into an [N,1,H,W] tensor.
template <class T>
Tensor<T> stack_images(std::span<const Image* const> images) {
  if (images.empty()) throw ShapeError("stack_images: empty batch");
  const int h = images.front()->height, w = images.front()->width;
  Tensor<T> out({static_cast<int>(images.size()), 1, h, w});
  T* dst = out.data();
  for (const Image* im : images) {
    require_same_size(*images.front(), *im, "stack_images");
    for (float v : im->pixels) *dst++ = static_cast<T>(v);
  }
  return out;
}

template <class T>
Tensor<T> stack_images(const std::vector<Image>& images) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(images.size());
  for (const Image& im : images) ptrs.push_back(&im);
  return stack_images<T>(std::span<const Image* const>(ptrs));
}

// Split an [N,1,H,W] tensor back into images.
template <class T>
std::vector<Image> unstack_images(const Tensor<T>& t) {
  if (t.rank() != 4 || t.dim(1) != 1) throw ShapeError("unstack_images expects [N,1,H,W]");
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(t.dim(0)));
  const T* src = t.data();
  for (int n = 0; n < t.dim(0); ++n) {
    Image im(t.dim(2), t.dim(3));
    for (float& v : im.pixels) v = static_cast<float>(*src++);
    out.push_back(std::move(im));
  }
  return out;
}

// Binary portable graymap (P5, 8-bit).
void write_pgm(const std::filesystem::path& path, const Image& image);
Image read_pgm(const std::filesystem::path& path);

// Horizontal strip of equally sized panels separated by a 1-pixel gutter.
Image tile_horizontal(const std::vector<Image>& panels, float gutter = 1.0f);

}  // namespace flowsan
