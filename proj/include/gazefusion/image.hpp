#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gazefusion/tensor.hpp"

namespace gazefusion {

// Row-major H×W×C image with values nominally in [0,1].
struct Image {
  std::size_t height = 0, width = 0, channels = 1;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c) : height(h), width(w), channels(c), pixels(h * w * c, 0.0) {}

  double& at(std::size_t y, std::size_t x, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c = 0) const { return pixels[(y * width + x) * channels + c]; }
  Shape shape() const { return {height, width, channels}; }

  friend bool operator==(const Image&, const Image&) = default;
};

// Stacks same-sized images into a [B×H×W×C] tensor.
Tensor stack_images(std::span<const Image* const> images);
Tensor image_tensor(const Image& image);  // [H×W×C]

}  // namespace gazefusion
