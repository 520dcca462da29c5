#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "psrpn/errors.hpp"

namespace psrpn {

// Half-open pixel rectangle [x0,x1) x [y0,y1).
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double w() const { return x1 - x0; }
  double h() const { return y1 - y0; }
  double area() const { return std::max(0.0, w()) * std::max(0.0, h()); }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
  bool valid() const { return x1 > x0 && y1 > y0; }
};

inline double iou(const Box& a, const Box& b) {
  const double ix = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double iy = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

// Offsets from an anchor to a target box: centre shifts in anchor units,
// log size ratios.
inline std::array<double, 4> encode_box(const Box& anchor, const Box& target) {
  if (!anchor.valid() || !target.valid())
    throw ShapeError("encode_box: degenerate box");
  return {(target.cx() - anchor.cx()) / anchor.w(), (target.cy() - anchor.cy()) / anchor.h(),
          std::log(target.w() / anchor.w()), std::log(target.h() / anchor.h())};
}

// Inverse of encode_box. Size offsets beyond +-8 are clamped (exp would
// overflow or collapse the box); clamp_count tallies those events.
inline Box decode_box(const Box& anchor, const std::array<double, 4>& t,
                      long* clamp_count = nullptr) {
  if (!anchor.valid()) throw ShapeError("decode_box: degenerate anchor");
  double tw = t[2], th = t[3];
  if (std::fabs(tw) > 8.0 || std::fabs(th) > 8.0) {
    tw = std::clamp(tw, -8.0, 8.0);
    th = std::clamp(th, -8.0, 8.0);
    if (clamp_count) ++*clamp_count;
  }
  const double cx = anchor.cx() + t[0] * anchor.w();
  const double cy = anchor.cy() + t[1] * anchor.h();
  const double w = anchor.w() * std::exp(tw);
  const double h = anchor.h() * std::exp(th);
  return Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

inline Box clip_box(const Box& b, double img_w, double img_h) {
  return Box{std::clamp(b.x0, 0.0, img_w), std::clamp(b.y0, 0.0, img_h),
             std::clamp(b.x1, 0.0, img_w), std::clamp(b.y1, 0.0, img_h)};
}

}  // namespace psrpn
