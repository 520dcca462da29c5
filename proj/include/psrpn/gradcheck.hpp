#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "psrpn/graph.hpp"
#include "psrpn/rng.hpp"
#include "psrpn/tensor.hpp"

namespace psrpn {

struct GradCheckReport {
  int probes = 0;
  double max_rel_err = 0.0;
  std::string worst;  // "param[index]" of the worst probe
  bool ok(double tol) const { return max_rel_err <= tol; }
};

// Central-difference check of d(scalar)/d(params) against the tape. The
// builder must construct the same scalar-valued graph each call from the
// current parameter values and return its root node. Relative error uses a
// 0.01 floor so near-zero pairs compare absolutely. Probing is sampled: at
// most max_probes_per_param randomly chosen elements of each parameter.
//
// A probe whose stencil straddles a relu corner reports a large error even
// when the tape is right, so a failing probe retries with the step shrunk
// until the corner falls outside the stencil. A wrong gradient stays wrong
// at every step size.
inline GradCheckReport grad_check(
    const std::function<Graph<double>::Id(Graph<double>&)>& build,
    std::vector<Parameter<double>*> params, Rng& rng, int max_probes_per_param = 6,
    double step = 1e-4) {
  GradCheckReport rep;

  auto scalar = [&](Graph<double>& g, Graph<double>::Id root) {
    const Tensor4<double>& v = g.value(root);
    if (v.numel() != 1) throw ShapeError("grad_check: builder must return a scalar node");
    return v.data[0];
  };

  for (Parameter<double>* p : params) p->zero_grad();
  {
    Graph<double> g(true);
    g.set_update_bn_stats(false);
    const auto root = build(g);
    (void)scalar(g, root);
    g.backward(root);
  }

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter<double>& p = *params[pi];
    const std::size_t count = p.value.numel();
    std::vector<std::size_t> idx;
    if (static_cast<int>(count) <= max_probes_per_param) {
      for (std::size_t i = 0; i < count; ++i) idx.push_back(i);
    } else {
      for (int i = 0; i < max_probes_per_param; ++i)
        idx.push_back(
            static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(count) - 1)));
    }
    for (std::size_t i : idx) {
      const double saved = p.value.data[i];
      auto eval = [&](double v) {
        p.value.data[i] = v;
        Graph<double> g(true);
        g.set_update_bn_stats(false);
        return scalar(g, build(g));
      };
      const double an = p.grad.data[i];
      double best = 1e300;
      for (double h = step; h > step * 1e-3; h *= 0.25) {
        const double y_plus = eval(saved + h);
        const double y_minus = eval(saved - h);
        const double fd = (y_plus - y_minus) / (2.0 * h);
        const double rel = std::fabs(an - fd) /
                           std::max({std::fabs(an), std::fabs(fd), 0.01});
        best = std::min(best, rel);
        if (best < 1e-5) break;
      }
      p.value.data[i] = saved;
      ++rep.probes;
      if (best > rep.max_rel_err) {
        rep.max_rel_err = best;
        rep.worst = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return rep;
}

}  // namespace psrpn
