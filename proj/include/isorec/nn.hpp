#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "isorec/common.hpp"

namespace isorec {

// Adaptive moment estimation with bias correction, default moments.
struct AdamState {
    real beta1 = 0.9;
    real beta2 = 0.999;
    real eps = 1e-8;
    long step = 0;
    std::vector<real> m, v;

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

inline void adam_step(std::span<real> params, std::span<const real> grad, AdamState& st,
                      real lr) {
    if (params.size() != grad.size() || st.m.size() != params.size())
        throw ShapeError("adam_step: buffer size mismatch");
    st.step += 1;
    const real bc1 = 1.0 - std::pow(st.beta1, real(st.step));
    const real bc2 = 1.0 - std::pow(st.beta2, real(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad[i];
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
        params[i] -= lr * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + st.eps);
    }
}

// Plain gradient descent, used by gradient-check tests.
inline void sgd_step(std::span<real> params, std::span<const real> grad, real lr) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
}

}  // namespace isorec
