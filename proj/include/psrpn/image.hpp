#pragma once

#include <algorithm>
#include <cmath>

#include "psrpn/errors.hpp"
#include "psrpn/tensor.hpp"

namespace psrpn {

// Half-pixel-centre bilinear resize to an arbitrary size.
inline Tensor4f resize_bilinear(const Tensor4f& img, int oh, int ow) {
  if (img.h < 1 || img.w < 1 || oh < 1 || ow < 1)
    throw ShapeError("resize_bilinear: empty image");
  Tensor4f out(img.n, img.c, oh, ow);
  const double sy = static_cast<double>(img.h) / oh;
  const double sx = static_cast<double>(img.w) / ow;
  for (int b = 0; b < img.n; ++b)
    for (int c = 0; c < img.c; ++c)
      for (int y = 0; y < oh; ++y) {
        const double fy = (y + 0.5) * sy - 0.5;
        const int yf = static_cast<int>(std::floor(fy));
        const int y0 = std::clamp(yf, 0, img.h - 1);
        const int y1 = std::clamp(yf + 1, 0, img.h - 1);
        const double wy = fy - yf;
        const float* r0 = img.row(b, c, y0);
        const float* r1 = img.row(b, c, y1);
        float* dst = out.row(b, c, y);
        for (int x = 0; x < ow; ++x) {
          const double fx = (x + 0.5) * sx - 0.5;
          const int xf = static_cast<int>(std::floor(fx));
          const int x0 = std::clamp(xf, 0, img.w - 1);
          const int x1 = std::clamp(xf + 1, 0, img.w - 1);
          const double wx = fx - xf;
          dst[x] = static_cast<float>((1 - wy) * ((1 - wx) * r0[x0] + wx * r0[x1]) +
                                      wy * ((1 - wx) * r1[x0] + wx * r1[x1]));
        }
      }
  return out;
}

// Zero padding on the bottom and right only, so box coordinates survive.
inline Tensor4f pad_to(const Tensor4f& img, int oh, int ow) {
  if (oh < img.h || ow < img.w) throw ShapeError("pad_to: target smaller than image");
  Tensor4f out(img.n, img.c, oh, ow);
  for (int b = 0; b < img.n; ++b)
    for (int c = 0; c < img.c; ++c)
      for (int y = 0; y < img.h; ++y)
        std::copy_n(img.row(b, c, y), img.w, out.row(b, c, y));
  return out;
}

inline Tensor4f crop_image(const Tensor4f& img, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || y0 + h > img.h || x0 + w > img.w || h < 1 || w < 1)
    throw ShapeError("crop_image: window outside image");
  Tensor4f out(img.n, img.c, h, w);
  for (int b = 0; b < img.n; ++b)
    for (int c = 0; c < img.c; ++c)
      for (int y = 0; y < h; ++y) std::copy_n(img.row(b, c, y0 + y) + x0, w, out.row(b, c, y));
  return out;
}

inline int next_multiple(int v, int m) { return ((v + m - 1) / m) * m; }

// Centres pixel values for the network input.
inline Tensor4f normalize_image(Tensor4f img) {
  for (float& v : img.data) v -= 0.5f;
  return img;
}

}  // namespace psrpn
