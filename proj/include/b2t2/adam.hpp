#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "b2t2/tensor.hpp"

namespace b2t2 {

using ParamMap = std::map<std::string, Tensor>;

struct AdamState {
    long step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
};

// One Adam update with bias correction over every named parameter.
// Reads gradients from each tensor's grad buffer; a missing/empty grad
// counts as zero.
inline void adam_step(ParamMap& params, AdamState& state) {
    state.step += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (auto& [name, p] : params) {
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) m.assign(p->size(), 0.0);
        if (v.empty()) v.assign(p->size(), 0.0);
        if (m.size() != p->size() || v.size() != p->size())
            throw DimensionError("adam state shape mismatch for " + name);
        if (!p->grad.empty() && p->grad.size() != p->size())
            throw DimensionError("gradient shape mismatch for " + name);
        for (std::size_t i = 0; i < p->size(); ++i) {
            double g = p->grad.empty() ? 0.0 : p->grad[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            p->value[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

inline void zero_grads(ParamMap& params) {
    for (auto& [name, p] : params) p->zero_grad();
}

}  // namespace b2t2
