#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "psrpn/errors.hpp"
#include "psrpn/rng.hpp"

namespace psrpn {

// Dense 4-D buffer, row-major with batch outermost and width innermost.
template <typename T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {
    if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0) throw ShapeError("Tensor4: negative dim");
  }

  std::size_t numel() const { return data.size(); }
  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  std::string shape_str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }

  std::size_t index(int b, int ch, int y, int x) const {
    return ((static_cast<std::size_t>(b) * c + ch) * h + y) * w + x;
  }
  T& at(int b, int ch, int y, int x) { return data[index(b, ch, y, x)]; }
  T at(int b, int ch, int y, int x) const { return data[index(b, ch, y, x)]; }

  T* row(int b, int ch, int y) { return data.data() + index(b, ch, y, 0); }
  const T* row(int b, int ch, int y) const { return data.data() + index(b, ch, y, 0); }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Tensor4<U> cast() const {
    Tensor4<U> out(n, c, h, w);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  static Tensor4 randn(int n, int c, int h, int w, Rng& rng, double stddev = 1.0) {
    Tensor4 t(n, c, h, w);
    for (T& v : t.data) v = static_cast<T>(rng.normal(0.0, stddev));
    return t;
  }
};

using Tensor4f = Tensor4<float>;
using Tensor4d = Tensor4<double>;

#ifndef NDEBUG
template <typename T>
inline void dcheck_finite(const Tensor4<T>& t, const char* where) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite values after ") + where);
}
#else
template <typename T>
inline void dcheck_finite(const Tensor4<T>&, const char*) {}
#endif

}  // namespace psrpn
