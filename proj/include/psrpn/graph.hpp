#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "psrpn/errors.hpp"
#include "psrpn/pool_geometry.hpp"
#include "psrpn/tensor.hpp"

namespace psrpn {

// Learnable tensor. Gradients accumulate across graph executions until the
// optimiser consumes them.
template <typename T>
struct Parameter {
  std::string name;
  Tensor4<T> value;
  Tensor4<T> grad;
  bool decay = true;  // weight decay applies (conv kernels; not BN affine)

  Parameter() = default;
  Parameter(std::string name_, Tensor4<T> value_, bool decay_ = true)
      : name(std::move(name_)), value(std::move(value_)), decay(decay_) {}

  void ensure_grad() {
    if (grad.numel() != value.numel()) grad = Tensor4<T>(value.n, value.c, value.h, value.w);
  }
  void zero_grad() {
    ensure_grad();
    grad.fill(T(0));
  }
};

// Running statistics for one batch-norm site.
template <typename T>
struct BnState {
  Tensor4<T> running_mean, running_var;
  T momentum = T(0.9);
  T eps = T(1e-5);

  BnState() = default;
  explicit BnState(int channels)
      : running_mean(1, channels, 1, 1), running_var(1, channels, 1, 1, T(1)) {}
};

template <typename T>
struct LossValues {
  T reg = T(0);      // smooth-L1 sum over positives
  T cls_pos = T(0);  // cross-entropy sum over positives
  T cls_neg = T(0);  // cross-entropy sum over negatives
  T total = T(0);    // (reg + cls_pos + cls_neg) / (batch_images * anchors_per_image)
};

inline int div_ceil(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }

// One dense-map read site: which ratio slot at which feature cell.
struct CellRef {
  int ratio = 0;
  int row = 0;
  int col = 0;
};

// Reverse-mode tape over Tensor4 values. Nodes are immutable once written;
// one graph execution is single-threaded.
template <typename T>
class Graph {
 public:
  using Id = int;

  explicit Graph(bool training = false) : training_(training) {}

  bool training() const { return training_; }
  void set_update_bn_stats(bool v) { update_bn_stats_ = v; }

  Id input(Tensor4<T> v) {
    nodes_.push_back(Node{std::move(v), {}, nullptr, nullptr});
    return static_cast<Id>(nodes_.size()) - 1;
  }

  // One node per Parameter per graph; repeated uses share it, so shared
  // weights accumulate a single combined gradient.
  Id param(Parameter<T>& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return it->second;
    nodes_.push_back(Node{p.value, {}, nullptr, &p});
    const Id id = static_cast<Id>(nodes_.size()) - 1;
    param_ids_[&p] = id;
    return id;
  }

  const Tensor4<T>& value(Id id) const { return nodes_[id].value; }
  const Tensor4<T>& grad(Id id) const { return nodes_[id].grad; }

  Id conv2d(Id x, Id w, int stride, int pad_h, int pad_w) {
    const Tensor4<T>& X = nodes_[x].value;
    const Tensor4<T>& W = nodes_[w].value;
    if (W.c != X.c)
      throw ShapeError("conv2d: input channels " + X.shape_str() + " do not match kernel " +
                       W.shape_str());
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    if (pad_h < 0 || pad_w < 0) throw ShapeError("conv2d: negative padding");
    const int oh = (X.h + 2 * pad_h - W.h) / stride + 1;
    const int ow = (X.w + 2 * pad_w - W.w) / stride + 1;
    if (X.h + 2 * pad_h < W.h || X.w + 2 * pad_w < W.w || oh < 1 || ow < 1)
      throw ShapeError("conv2d: zero-sized output for input " + X.shape_str() + " kernel " +
                       W.shape_str());
    Tensor4<T> Y(X.n, W.n, oh, ow);
    conv_forward(X, W, Y, stride, pad_h, pad_w);
    dcheck_finite(Y, "conv2d");
    return make_node(std::move(Y), [x, w, stride, pad_h, pad_w](Graph& g, Id self) {
      const Tensor4<T>& G = g.nodes_[self].grad;
      const Tensor4<T>& X2 = g.nodes_[x].value;
      const Tensor4<T>& W2 = g.nodes_[w].value;
      conv_backward(X2, W2, G, g.grad_buf(x), g.grad_buf(w), stride, pad_h, pad_w);
    });
  }

  Id batch_norm(Id x, Id scale, Id shift, BnState<T>* state) {
    const Tensor4<T>& X = nodes_[x].value;
    const int C = X.c;
    if (nodes_[scale].value.c != C || nodes_[shift].value.c != C ||
        (state && state->running_mean.c != C))
      throw ShapeError("batch_norm: channel mismatch for input " + X.shape_str());
    const T eps = state ? state->eps : T(1e-5);
    const std::size_t m = static_cast<std::size_t>(X.n) * X.h * X.w;

    std::vector<T> mean(C, T(0)), var(C, T(0)), inv_std(C, T(0));
    if (training_) {
      for (int ch = 0; ch < C; ++ch) {
        double s = 0.0;
        for (int b = 0; b < X.n; ++b) {
          const T* p = X.row(b, ch, 0);
          for (std::size_t i = 0; i < static_cast<std::size_t>(X.h) * X.w; ++i) s += p[i];
        }
        mean[ch] = static_cast<T>(s / static_cast<double>(m));
        double v = 0.0;
        for (int b = 0; b < X.n; ++b) {
          const T* p = X.row(b, ch, 0);
          for (std::size_t i = 0; i < static_cast<std::size_t>(X.h) * X.w; ++i) {
            const double d = static_cast<double>(p[i]) - static_cast<double>(mean[ch]);
            v += d * d;
          }
        }
        var[ch] = static_cast<T>(v / static_cast<double>(m));
      }
      if (state && update_bn_stats_) bn_updates_.push_back(BnUpdate{state, mean, var});
    } else {
      if (!state) throw ShapeError("batch_norm: inference mode requires running statistics");
      for (int ch = 0; ch < C; ++ch) {
        mean[ch] = state->running_mean.data[ch];
        var[ch] = state->running_var.data[ch];
      }
    }
    for (int ch = 0; ch < C; ++ch)
      inv_std[ch] = T(1) / std::sqrt(var[ch] + eps);

    const Tensor4<T>& Sc = nodes_[scale].value;
    const Tensor4<T>& Sh = nodes_[shift].value;
    Tensor4<T> Y(X.n, C, X.h, X.w);
    for (int b = 0; b < X.n; ++b)
      for (int ch = 0; ch < C; ++ch) {
        const T g = Sc.data[ch], be = Sh.data[ch], mu = mean[ch], is = inv_std[ch];
        const T* px = X.row(b, ch, 0);
        T* py = Y.row(b, ch, 0);
        for (std::size_t i = 0; i < static_cast<std::size_t>(X.h) * X.w; ++i)
          py[i] = (px[i] - mu) * is * g + be;
      }
    dcheck_finite(Y, "batch_norm");

    const bool train = training_;
    return make_node(std::move(Y), [x, scale, shift, mean, inv_std, train, m](Graph& g, Id self) {
      const Tensor4<T>& G = g.nodes_[self].grad;
      const Tensor4<T>& X2 = g.nodes_[x].value;
      const Tensor4<T>& Sc2 = g.nodes_[scale].value;
      Tensor4<T>& dX = g.grad_buf(x);
      Tensor4<T>& dSc = g.grad_buf(scale);
      Tensor4<T>& dSh = g.grad_buf(shift);
      const std::size_t plane = static_cast<std::size_t>(X2.h) * X2.w;
      for (int ch = 0; ch < X2.c; ++ch) {
        const T mu = mean[ch], is = inv_std[ch], gam = Sc2.data[ch];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b = 0; b < X2.n; ++b) {
          const T* pg = G.row(b, ch, 0);
          const T* px = X2.row(b, ch, 0);
          for (std::size_t i = 0; i < plane; ++i) {
            sum_dy += pg[i];
            sum_dy_xhat += static_cast<double>(pg[i]) * ((px[i] - mu) * is);
          }
        }
        dSh.data[ch] += static_cast<T>(sum_dy);
        dSc.data[ch] += static_cast<T>(sum_dy_xhat);
        if (train) {
          const double mdy = sum_dy / static_cast<double>(m);
          const double mdyx = sum_dy_xhat / static_cast<double>(m);
          for (int b = 0; b < X2.n; ++b) {
            const T* pg = G.row(b, ch, 0);
            const T* px = X2.row(b, ch, 0);
            T* pd = dX.row(b, ch, 0);
            for (std::size_t i = 0; i < plane; ++i) {
              const double xh = (px[i] - mu) * is;
              pd[i] += static_cast<T>(gam * is * (pg[i] - mdy - xh * mdyx));
            }
          }
        } else {
          for (int b = 0; b < X2.n; ++b) {
            const T* pg = G.row(b, ch, 0);
            T* pd = dX.row(b, ch, 0);
            for (std::size_t i = 0; i < plane; ++i) pd[i] += gam * is * pg[i];
          }
        }
      }
    });
  }

  Id relu(Id x) {
    const Tensor4<T>& X = nodes_[x].value;
    Tensor4<T> Y = X;
    for (T& v : Y.data) v = v > T(0) ? v : T(0);
    return make_node(std::move(Y), [x](Graph& g, Id self) {
      const Tensor4<T>& G = g.nodes_[self].grad;
      const Tensor4<T>& X2 = g.nodes_[x].value;
      Tensor4<T>& dX = g.grad_buf(x);
      for (std::size_t i = 0; i < G.numel(); ++i)
        if (X2.data[i] > T(0)) dX.data[i] += G.data[i];
    });
  }

  Id sigmoid(Id x) {
    const Tensor4<T>& X = nodes_[x].value;
    Tensor4<T> Y = X;
    for (T& v : Y.data) v = T(1) / (T(1) + std::exp(-v));
    return make_node(std::move(Y), [x](Graph& g, Id self) {
      const Tensor4<T>& G = g.nodes_[self].grad;
      const Tensor4<T>& Y2 = g.nodes_[self].value;
      Tensor4<T>& dX = g.grad_buf(x);
      for (std::size_t i = 0; i < G.numel(); ++i)
        dX.data[i] += G.data[i] * Y2.data[i] * (T(1) - Y2.data[i]);
    });
  }

  Id add(Id a, Id b) {
    const Tensor4<T>& A = nodes_[a].value;
    const Tensor4<T>& B = nodes_[b].value;
    if (!A.same_shape(B))
      throw ShapeError("add: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    Tensor4<T> Y = A;
    for (std::size_t i = 0; i < Y.numel(); ++i) Y.data[i] += B.data[i];
    return make_node(std::move(Y), [a, b](Graph& g, Id self) {
      const Tensor4<T>& G = g.nodes_[self].grad;
      Tensor4<T>& dA = g.grad_buf(a);
      Tensor4<T>& dB = g.grad_buf(b);
      for (std::size_t i = 0; i < G.numel(); ++i) {
        dA.data[i] += G.data[i];
        dB.data[i] += G.data[i];
      }
    });
  }

  // 2x bilinear upsampling with half-pixel centres; constants map to
  // constants.
  Id bilinear_upsample2x(Id x) {
    const Tensor4<T>& X = nodes_[x].value;
    if (X.h < 1 || X.w < 1) throw ShapeError("bilinear_upsample2x: empty input");
    const int oh = 2 * X.h, ow = 2 * X.w;
    auto taps = [](int o, int in_len) {
      const double src = (o + 0.5) / 2.0 - 0.5;
      int i0 = static_cast<int>(std::floor(src));
      double w1 = src - i0;
      int i1 = i0 + 1;
      i0 = std::clamp(i0, 0, in_len - 1);
      i1 = std::clamp(i1, 0, in_len - 1);
      return std::array<double, 3>{static_cast<double>(i0), static_cast<double>(i1), w1};
    };
    Tensor4<T> Y(X.n, X.c, oh, ow);
    for (int b = 0; b < X.n; ++b)
      for (int ch = 0; ch < X.c; ++ch)
        for (int oy = 0; oy < oh; ++oy) {
          const auto ty = taps(oy, X.h);
          const int y0 = static_cast<int>(ty[0]), y1 = static_cast<int>(ty[1]);
          const double wy = ty[2];
          const T* r0 = X.row(b, ch, y0);
          const T* r1 = X.row(b, ch, y1);
          T* out = Y.row(b, ch, oy);
          for (int ox = 0; ox < ow; ++ox) {
            const auto tx = taps(ox, X.w);
            const int x0 = static_cast<int>(tx[0]), x1 = static_cast<int>(tx[1]);
            const double wx = tx[2];
            const double v = (1 - wy) * ((1 - wx) * r0[x0] + wx * r0[x1]) +
                             wy * ((1 - wx) * r1[x0] + wx * r1[x1]);
            out[ox] = static_cast<T>(v);
          }
        }
    return make_node(std::move(Y), [x, taps](Graph& g, Id self) {
      const Tensor4<T>& G = g.nodes_[self].grad;
      const Tensor4<T>& X2 = g.nodes_[x].value;
      Tensor4<T>& dX = g.grad_buf(x);
      for (int b = 0; b < X2.n; ++b)
        for (int ch = 0; ch < X2.c; ++ch)
          for (int oy = 0; oy < G.h; ++oy) {
            const auto ty = taps(oy, X2.h);
            const int y0 = static_cast<int>(ty[0]), y1 = static_cast<int>(ty[1]);
            const double wy = ty[2];
            const T* gr = G.row(b, ch, oy);
            T* d0 = dX.row(b, ch, y0);
            T* d1 = dX.row(b, ch, y1);
            for (int ox = 0; ox < G.w; ++ox) {
              const auto tx = taps(ox, X2.w);
              const int x0 = static_cast<int>(tx[0]), x1 = static_cast<int>(tx[1]);
              const double wx = tx[2];
              const double gv = gr[ox];
              d0[x0] += static_cast<T>((1 - wy) * (1 - wx) * gv);
              d0[x1] += static_cast<T>((1 - wy) * wx * gv);
              d1[x0] += static_cast<T>(wy * (1 - wx) * gv);
              d1[x1] += static_cast<T>(wy * wx * gv);
            }
          }
    });
  }

  // Parameter-free 2x2 mean, stride 2.
  Id avg_downsample2x(Id x) {
    const Tensor4<T>& X = nodes_[x].value;
    if (X.h % 2 != 0 || X.w % 2 != 0)
      throw ShapeError("avg_downsample2x: odd spatial dims " + X.shape_str());
    Tensor4<T> Y(X.n, X.c, X.h / 2, X.w / 2);
    for (int b = 0; b < X.n; ++b)
      for (int ch = 0; ch < X.c; ++ch)
        for (int oy = 0; oy < Y.h; ++oy) {
          const T* r0 = X.row(b, ch, 2 * oy);
          const T* r1 = X.row(b, ch, 2 * oy + 1);
          T* out = Y.row(b, ch, oy);
          for (int ox = 0; ox < Y.w; ++ox)
            out[ox] = (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * T(0.25);
        }
    return make_node(std::move(Y), [x](Graph& g, Id self) {
      const Tensor4<T>& G = g.nodes_[self].grad;
      Tensor4<T>& dX = g.grad_buf(x);
      for (int b = 0; b < G.n; ++b)
        for (int ch = 0; ch < G.c; ++ch)
          for (int oy = 0; oy < G.h; ++oy) {
            const T* gr = G.row(b, ch, oy);
            T* d0 = dX.row(b, ch, 2 * oy);
            T* d1 = dX.row(b, ch, 2 * oy + 1);
            for (int ox = 0; ox < G.w; ++ox) {
              const T q = gr[ox] * T(0.25);
              d0[2 * ox] += q;
              d0[2 * ox + 1] += q;
              d1[2 * ox] += q;
              d1[2 * ox + 1] += q;
            }
          }
    });
  }

  Id global_avg_pool(Id x) {
    const Tensor4<T>& X = nodes_[x].value;
    Tensor4<T> Y(X.n, X.c, 1, 1);
    const std::size_t plane = static_cast<std::size_t>(X.h) * X.w;
    for (int b = 0; b < X.n; ++b)
      for (int ch = 0; ch < X.c; ++ch) {
        double s = 0.0;
        const T* p = X.row(b, ch, 0);
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
        Y.at(b, ch, 0, 0) = static_cast<T>(s / static_cast<double>(plane));
      }
    return make_node(std::move(Y), [x, plane](Graph& g, Id self) {
      const Tensor4<T>& G = g.nodes_[self].grad;
      Tensor4<T>& dX = g.grad_buf(x);
      const T inv = T(1) / static_cast<T>(plane);
      for (int b = 0; b < G.n; ++b)
        for (int ch = 0; ch < G.c; ++ch) {
          const T gv = G.at(b, ch, 0, 0) * inv;
          T* p = dX.row(b, ch, 0);
          for (std::size_t i = 0; i < plane; ++i) p[i] += gv;
        }
    });
  }

  // Position-sensitive pooling of many windows against shared score maps.
  // cls has k*k channels (grid-major), reg has 4*k*k (coordinate-major
  // blocks of k*k). Output is (windows, 5, 1, 1): t_x t_y t_w t_h o.
  Id ps_pool(Id reg, Id cls, std::vector<PoolWindow> windows, int k) {
    const Tensor4<T>& R = nodes_[reg].value;
    const Tensor4<T>& C = nodes_[cls].value;
    if (R.n != 1 || C.n != 1) throw ShapeError("ps_pool: expects single-image score maps");
    if (C.c != k * k || R.c != 4 * k * k)
      throw ShapeError("ps_pool: channel layout mismatch for k=" + std::to_string(k));
    if (R.h != C.h || R.w != C.w) throw ShapeError("ps_pool: reg/cls spatial mismatch");
    for (const PoolWindow& pw : windows)
      if (pw.row < 0 || pw.col < 0 || pw.row + pw.h > C.h || pw.col + pw.w > C.w ||
          pw.w < 1 || pw.h < 1)
        throw ShapeError("ps_pool: window outside map");

    const int A = static_cast<int>(windows.size());
    Tensor4<T> Y(A, 5, 1, 1);
    for (int a = 0; a < A; ++a) {
      const PoolWindow& pw = windows[a];
      const auto by = grid_bins(pw.h, k);
      const auto bx = grid_bins(pw.w, k);
      double t[4] = {0, 0, 0, 0};
      double o = 0.0;
      for (int gy = 0; gy < k; ++gy)
        for (int gx = 0; gx < k; ++gx) {
          const int grid = gy * k + gx;
          const int y0 = pw.row + by[gy].first, y1 = pw.row + by[gy].second;
          const int x0 = pw.col + bx[gx].first, x1 = pw.col + bx[gx].second;
          const double cells = static_cast<double>(y1 - y0) * (x1 - x0);
          double s = 0.0;
          for (int y = y0; y < y1; ++y) {
            const T* p = C.row(0, grid, y);
            for (int x = x0; x < x1; ++x) s += p[x];
          }
          o += s / cells;
          for (int cd = 0; cd < 4; ++cd) {
            double sr = 0.0;
            for (int y = y0; y < y1; ++y) {
              const T* p = R.row(0, cd * k * k + grid, y);
              for (int x = x0; x < x1; ++x) sr += p[x];
            }
            t[cd] += sr / cells;
          }
        }
      const double kk = static_cast<double>(k) * k;
      for (int cd = 0; cd < 4; ++cd) Y.at(a, cd, 0, 0) = static_cast<T>(t[cd] / kk);
      Y.at(a, 4, 0, 0) = static_cast<T>(o / kk);
    }
    return make_node(std::move(Y), [reg, cls, windows, k](Graph& g, Id self) {
      const Tensor4<T>& G = g.nodes_[self].grad;
      Tensor4<T>& dR = g.grad_buf(reg);
      Tensor4<T>& dC = g.grad_buf(cls);
      const double kk = static_cast<double>(k) * k;
      for (int a = 0; a < static_cast<int>(windows.size()); ++a) {
        const PoolWindow& pw = windows[a];
        const auto by = grid_bins(pw.h, k);
        const auto bx = grid_bins(pw.w, k);
        for (int gy = 0; gy < k; ++gy)
          for (int gx = 0; gx < k; ++gx) {
            const int grid = gy * k + gx;
            const int y0 = pw.row + by[gy].first, y1 = pw.row + by[gy].second;
            const int x0 = pw.col + bx[gx].first, x1 = pw.col + bx[gx].second;
            const double cells = static_cast<double>(y1 - y0) * (x1 - x0);
            const T go = static_cast<T>(G.at(a, 4, 0, 0) / (kk * cells));
            for (int y = y0; y < y1; ++y) {
              T* p = dC.row(0, grid, y);
              for (int x = x0; x < x1; ++x) p[x] += go;
            }
            for (int cd = 0; cd < 4; ++cd) {
              const T gt = static_cast<T>(G.at(a, cd, 0, 0) / (kk * cells));
              T* base = nullptr;
              for (int y = y0; y < y1; ++y) {
                base = dR.row(0, cd * k * k + grid, y);
                for (int x = x0; x < x1; ++x) base[x] += gt;
              }
            }
          }
      }
    });
  }

  // Reads per-cell predictions for selected anchors from dense sibling maps.
  // reg has 4*R channels (4 per ratio, interleaved by ratio), cls has R.
  // Output matches ps_pool: (anchors, 5, 1, 1) as t_x t_y t_w t_h o.
  Id gather_cells(Id reg, Id cls, std::vector<CellRef> cells) {
    const Tensor4<T>& R = nodes_[reg].value;
    const Tensor4<T>& C = nodes_[cls].value;
    if (R.n != 1 || C.n != 1) throw ShapeError("gather_cells: expects single-image maps");
    if (R.c != 4 * C.c) throw ShapeError("gather_cells: reg channels must be 4x cls channels");
    if (R.h != C.h || R.w != C.w) throw ShapeError("gather_cells: reg/cls spatial mismatch");
    for (const CellRef& cr : cells)
      if (cr.ratio < 0 || cr.ratio >= C.c || cr.row < 0 || cr.row >= C.h || cr.col < 0 ||
          cr.col >= C.w)
        throw ShapeError("gather_cells: cell outside map");
    const int A = static_cast<int>(cells.size());
    Tensor4<T> Y(A, 5, 1, 1);
    for (int a = 0; a < A; ++a) {
      const CellRef& cr = cells[a];
      for (int cd = 0; cd < 4; ++cd) Y.at(a, cd, 0, 0) = R.at(0, 4 * cr.ratio + cd, cr.row, cr.col);
      Y.at(a, 4, 0, 0) = C.at(0, cr.ratio, cr.row, cr.col);
    }
    return make_node(std::move(Y), [reg, cls, cells](Graph& g, Id self) {
      const Tensor4<T>& G = g.nodes_[self].grad;
      Tensor4<T>& dR = g.grad_buf(reg);
      Tensor4<T>& dC = g.grad_buf(cls);
      for (int a = 0; a < static_cast<int>(cells.size()); ++a) {
        const CellRef& cr = cells[a];
        for (int cd = 0; cd < 4; ++cd)
          dR.at(0, 4 * cr.ratio + cd, cr.row, cr.col) += G.at(a, cd, 0, 0);
        dC.at(0, cr.ratio, cr.row, cr.col) += G.at(a, 4, 0, 0);
      }
    });
  }

  // Training objective over one image's sampled anchors. labels[i] is +1
  // (positive) or -1 (negative); targets are consulted for positives only.
  // The sum is normalised by 1/(batch_images * anchors_per_image).
  Id rpn_loss(Id pooled, const std::vector<std::array<T, 4>>& targets,
              const std::vector<int>& labels, int anchors_per_image, int batch_images,
              LossValues<T>* breakdown = nullptr) {
    const Tensor4<T>& P = nodes_[pooled].value;
    const int A = P.n;
    if (P.c != 5) throw ShapeError("rpn_loss: pooled tensor must have 5 channels");
    if (static_cast<int>(labels.size()) != A || static_cast<int>(targets.size()) != A)
      throw ShapeError("rpn_loss: labels/targets size mismatch");
    if (anchors_per_image < 1 || batch_images < 1)
      throw ShapeError("rpn_loss: normalisation counts must be positive");
    for (int a = 0; a < A; ++a)
      for (int ch = 0; ch < 5; ++ch)
        if (!std::isfinite(static_cast<double>(P.at(a, ch, 0, 0))))
          throw NumericError("rpn_loss: non-finite pooled value at anchor " + std::to_string(a));

    const double norm = 1.0 / (static_cast<double>(anchors_per_image) * batch_images);
    double reg = 0.0, cls_pos = 0.0, cls_neg = 0.0;
    for (int a = 0; a < A; ++a) {
      const double o = P.at(a, 4, 0, 0);
      const double bce = std::max(o, 0.0) - o * (labels[a] > 0 ? 1.0 : 0.0) +
                         std::log1p(std::exp(-std::fabs(o)));
      if (labels[a] > 0) {
        cls_pos += bce;
        for (int cd = 0; cd < 4; ++cd) {
          const double d = static_cast<double>(P.at(a, cd, 0, 0)) - targets[a][cd];
          reg += std::fabs(d) < 1.0 ? 0.5 * d * d : std::fabs(d) - 0.5;
        }
      } else {
        cls_neg += bce;
      }
    }
    if (breakdown) {
      breakdown->reg = static_cast<T>(reg);
      breakdown->cls_pos = static_cast<T>(cls_pos);
      breakdown->cls_neg = static_cast<T>(cls_neg);
      breakdown->total = static_cast<T>((reg + cls_pos + cls_neg) * norm);
    }
    Tensor4<T> Y(1, 1, 1, 1);
    Y.data[0] = static_cast<T>((reg + cls_pos + cls_neg) * norm);
    return make_node(std::move(Y), [pooled, targets, labels, norm](Graph& g, Id self) {
      const T gv = g.nodes_[self].grad.data[0];
      const Tensor4<T>& P2 = g.nodes_[pooled].value;
      Tensor4<T>& dP = g.grad_buf(pooled);
      for (int a = 0; a < P2.n; ++a) {
        const double o = P2.at(a, 4, 0, 0);
        const double sig = 1.0 / (1.0 + std::exp(-o));
        const double z = labels[a] > 0 ? 1.0 : 0.0;
        dP.at(a, 4, 0, 0) += static_cast<T>(gv * norm * (sig - z));
        if (labels[a] > 0)
          for (int cd = 0; cd < 4; ++cd) {
            const double d = static_cast<double>(P2.at(a, cd, 0, 0)) - targets[a][cd];
            const double sl1 = std::fabs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0);
            dP.at(a, cd, 0, 0) += static_cast<T>(gv * norm * sl1);
          }
      }
    });
  }

  // Scalar projection sum(r .* x); the grad-check scalarises outputs with it.
  Id dot_const(Id x, Tensor4<T> r) {
    const Tensor4<T>& X = nodes_[x].value;
    if (!X.same_shape(r)) throw ShapeError("dot_const: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < X.numel(); ++i)
      s += static_cast<double>(X.data[i]) * static_cast<double>(r.data[i]);
    Tensor4<T> Y(1, 1, 1, 1);
    Y.data[0] = static_cast<T>(s);
    return make_node(std::move(Y), [x, r = std::move(r)](Graph& g, Id self) {
      const T gv = g.nodes_[self].grad.data[0];
      Tensor4<T>& dX = g.grad_buf(x);
      for (std::size_t i = 0; i < dX.numel(); ++i) dX.data[i] += gv * r.data[i];
    });
  }

  void backward(Id root) {
    Node& r = nodes_[root];
    r.grad = Tensor4<T>(r.value.n, r.value.c, r.value.h, r.value.w, T(1));
    for (Id i = root; i >= 0; --i) {
      Node& nd = nodes_[i];
      if (nd.grad.numel() == 0) continue;
      if (nd.backprop) nd.backprop(*this, i);
      if (nd.param) {
        nd.param->ensure_grad();
        for (std::size_t j = 0; j < nd.grad.numel(); ++j)
          nd.param->grad.data[j] += nd.grad.data[j];
      }
    }
  }

  // Deferred running-statistics updates, applied in forward creation order.
  void apply_bn_updates() {
    for (const BnUpdate& u : bn_updates_) {
      const T mom = u.state->momentum;
      for (std::size_t ch = 0; ch < u.mean.size(); ++ch) {
        u.state->running_mean.data[ch] =
            mom * u.state->running_mean.data[ch] + (T(1) - mom) * u.mean[ch];
        u.state->running_var.data[ch] =
            mom * u.state->running_var.data[ch] + (T(1) - mom) * u.var[ch];
      }
    }
    bn_updates_.clear();
  }

  Tensor4<T>& grad_buf(Id id) {
    Node& nd = nodes_[id];
    if (nd.grad.numel() == 0)
      nd.grad = Tensor4<T>(nd.value.n, nd.value.c, nd.value.h, nd.value.w);
    return nd.grad;
  }

 private:
  struct Node {
    Tensor4<T> value;
    Tensor4<T> grad;
    std::function<void(Graph&, Id)> backprop;
    Parameter<T>* param = nullptr;
  };
  struct BnUpdate {
    BnState<T>* state;
    std::vector<T> mean, var;
  };

  Id make_node(Tensor4<T> value, std::function<void(Graph&, Id)> backprop) {
    nodes_.push_back(Node{std::move(value), {}, std::move(backprop), nullptr});
    return static_cast<Id>(nodes_.size()) - 1;
  }

  static void conv_forward(const Tensor4<T>& X, const Tensor4<T>& W, Tensor4<T>& Y, int stride,
                           int pad_h, int pad_w) {
    const int kh = W.h, kw = W.w;
    for (int b = 0; b < X.n; ++b)
      for (int o = 0; o < W.n; ++o)
        for (int ic = 0; ic < X.c; ++ic)
          for (int ky = 0; ky < kh; ++ky) {
            const int oy0 = std::max(0, div_ceil(pad_h - ky, stride));
            const int oy1 = std::min(Y.h - 1, (X.h - 1 - ky + pad_h) / stride);
            for (int oy = oy0; oy <= oy1; ++oy) {
              const int iy = oy * stride + ky - pad_h;
              const T* xr = X.row(b, ic, iy);
              T* yr = Y.row(b, o, oy);
              for (int kx = 0; kx < kw; ++kx) {
                const T wv = W.at(o, ic, ky, kx);
                const int ox0 = std::max(0, div_ceil(pad_w - kx, stride));
                const int ox1 = std::min(Y.w - 1, (X.w - 1 - kx + pad_w) / stride);
                if (stride == 1) {
                  const T* xp = xr + (ox0 + kx - pad_w);
                  for (int ox = ox0; ox <= ox1; ++ox) yr[ox] += wv * xp[ox - ox0];
                } else {
                  for (int ox = ox0; ox <= ox1; ++ox)
                    yr[ox] += wv * xr[ox * stride + kx - pad_w];
                }
              }
            }
          }
  }

  static void conv_backward(const Tensor4<T>& X, const Tensor4<T>& W, const Tensor4<T>& G,
                            Tensor4<T>& dX, Tensor4<T>& dW, int stride, int pad_h, int pad_w) {
    const int kh = W.h, kw = W.w;
    for (int b = 0; b < X.n; ++b)
      for (int o = 0; o < W.n; ++o)
        for (int ic = 0; ic < X.c; ++ic)
          for (int ky = 0; ky < kh; ++ky) {
            const int oy0 = std::max(0, div_ceil(pad_h - ky, stride));
            const int oy1 = std::min(G.h - 1, (X.h - 1 - ky + pad_h) / stride);
            for (int oy = oy0; oy <= oy1; ++oy) {
              const int iy = oy * stride + ky - pad_h;
              const T* xr = X.row(b, ic, iy);
              T* dxr = dX.row(b, ic, iy);
              const T* gr = G.row(b, o, oy);
              for (int kx = 0; kx < kw; ++kx) {
                const T wv = W.at(o, ic, ky, kx);
                const int ox0 = std::max(0, div_ceil(pad_w - kx, stride));
                const int ox1 = std::min(G.w - 1, (X.w - 1 - kx + pad_w) / stride);
                T acc = T(0);
                if (stride == 1) {
                  const int off = ox0 + kx - pad_w;
                  T* dxp = dxr + off;
                  const T* xp = xr + off;
                  for (int ox = ox0; ox <= ox1; ++ox) {
                    const T gv = gr[ox];
                    dxp[ox - ox0] += wv * gv;
                    acc += xp[ox - ox0] * gv;
                  }
                } else {
                  for (int ox = ox0; ox <= ox1; ++ox) {
                    const int ix = ox * stride + kx - pad_w;
                    const T gv = gr[ox];
                    dxr[ix] += wv * gv;
                    acc += xr[ix] * gv;
                  }
                }
                dW.at(o, ic, ky, kx) += acc;
              }
            }
          }
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, Id> param_ids_;
  std::vector<BnUpdate> bn_updates_;
  bool training_ = false;
  bool update_bn_stats_ = true;
};

// Large-kernel context block: two summed branches of paired 1-D
// convolutions (kx1 then 1xk, and 1xk then kx1), SAME padding.
template <typename T>
typename Graph<T>::Id separable_gcn(Graph<T>& g, typename Graph<T>::Id x,
                                    typename Graph<T>::Id a1, typename Graph<T>::Id a2,
                                    typename Graph<T>::Id b1, typename Graph<T>::Id b2,
                                    int kernel) {
  if (kernel % 2 == 0) throw ShapeError("separable_gcn: kernel must be odd");
  const int p = kernel / 2;
  const auto branch_a = g.conv2d(g.conv2d(x, a1, 1, p, 0), a2, 1, 0, p);
  const auto branch_b = g.conv2d(g.conv2d(x, b1, 1, 0, p), b2, 1, p, 0);
  return g.add(branch_a, branch_b);
}

}  // namespace psrpn
