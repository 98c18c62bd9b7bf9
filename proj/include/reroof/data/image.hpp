#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "reroof/numerics/tensor.hpp"

namespace reroof::data {

/// RGB image stored CHW as a [3, H, W] tensor with values in [0, 1].
using Image = nn::Tensor;

inline constexpr std::size_t kImageSize = 64;
inline constexpr std::size_t kChannels = 3;

inline Image make_image(std::size_t height, std::size_t width, float fill = 0.0f) {
  return Image(nn::Shape{kChannels, height, width}, fill);
}

inline std::size_t image_height(const Image& img) { return img.dim(1); }
inline std::size_t image_width(const Image& img) { return img.dim(2); }

inline void require_rgb(const Image& img, const char* what) {
  if (img.rank() != 3 || img.dim(0) != kChannels) {
    throw DimensionError(std::string(what) + ": expected an RGB [3,H,W] image, got " +
                         nn::shape_string(img.shape()));
  }
}

inline void clamp_unit(Image& img) {
  for (auto& v : img.values()) v = std::clamp(v, 0.0f, 1.0f);
}

/// Rec. 601 luma of one pixel.
inline float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

/// Stacks equally-shaped images into an [N, 3, H, W] batch.
inline nn::Tensor stack_images(const std::vector<const Image*>& images) {
  if (images.empty()) throw PreconditionError("stack_images: empty batch");
  const auto& first = images.front()->shape();
  nn::Shape shape{images.size()};
  shape.insert(shape.end(), first.begin(), first.end());
  nn::Tensor out(shape);
  const std::size_t per = images.front()->size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    nn::require_shape(images[i]->shape(), first, "stack_images");
    std::copy(images[i]->data(), images[i]->data() + per, out.data() + i * per);
  }
  return out;
}

}  // namespace reroof::data
