#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "improv/errors.hpp"
#include "improv/nn.hpp"

namespace improv {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update. A non-finite gradient aborts with a
/// NumericError naming the parameter piece it appeared in.
inline void adam_step(ParameterStore& ps, std::span<const double> grad, AdamState& st,
                      const AdamConfig& cfg) {
  const std::size_t n = ps.values.size();
  if (grad.size() != n) throw std::invalid_argument("adam_step: gradient length mismatch");
  if (st.m.empty()) {
    st.m.assign(n, 0.0);
    st.v.assign(n, 0.0);
  }
  if (st.m.size() != n) throw std::invalid_argument("adam_step: state length mismatch");

  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    if (!std::isfinite(g)) {
      std::string where = "?";
      for (const ParamPiece& p : ps.pieces) {
        if (i >= p.offset && i < p.offset + p.count) {
          where = p.name;
          break;
        }
      }
      throw NumericError("non-finite gradient in " + where);
    }
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
    st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    ps.values[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

}
