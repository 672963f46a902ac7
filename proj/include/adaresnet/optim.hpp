#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>

#include "adaresnet/autograd.hpp"
#include "adaresnet/errors.hpp"

namespace adaresnet {

namespace detail {

inline void check_gradient(const Parameter& p) {
    if (p.grad.shape() != p.value.shape()) {
        throw GradientError("missing gradient for parameter " + p.name);
    }
    if (!p.grad.all_finite()) {
        throw NumericError("non-finite gradient for parameter " + p.name);
    }
}

} // namespace detail

/// w <- w - lr * dL/dw for every trainable parameter.
inline void sgd_step(std::span<Parameter* const> params, float lr) {
    for (const Parameter* p : params) {
        if (p->trainable) {
            detail::check_gradient(*p);
        }
    }
    for (Parameter* p : params) {
        if (!p->trainable) {
            continue;
        }
        auto w = p->value.data();
        auto g = p->grad.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] -= lr * g[i];
        }
    }
}

struct AdamState {
    float lr = 0.001f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float epsilon = 1e-8f;
    std::uint64_t step = 0;

    struct Moments {
        Tensor first;
        Tensor second;
    };
    std::map<std::string, Moments, std::less<>> moments;
};

/// Bias-corrected Adam. Moments are created on first sight of a parameter.
inline void adam_step(std::span<Parameter* const> params, AdamState& state) {
    for (const Parameter* p : params) {
        if (p->trainable) {
            detail::check_gradient(*p);
        }
    }
    ++state.step;
    const auto t = static_cast<float>(state.step);
    const float correction1 = 1.0f - std::pow(state.beta1, t);
    const float correction2 = 1.0f - std::pow(state.beta2, t);
    for (Parameter* p : params) {
        if (!p->trainable) {
            continue;
        }
        auto it = state.moments.find(p->name);
        if (it == state.moments.end()) {
            it = state.moments.emplace(p->name, AdamState::Moments{Tensor(p->value.shape()), Tensor(p->value.shape())})
                     .first;
        }
        auto w = p->value.data();
        auto g = p->grad.data();
        auto m = it->second.first.data();
        auto v = it->second.second.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0f - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0f - state.beta2) * g[i] * g[i];
            const float m_hat = m[i] / correction1;
            const float v_hat = v[i] / correction2;
            w[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
        }
    }
}

enum class OptimizerKind { sgd, adam };

inline OptimizerKind parse_optimizer(std::string_view name) {
    if (name == "sgd") {
        return OptimizerKind::sgd;
    }
    if (name == "adam") {
        return OptimizerKind::adam;
    }
    throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected sgd or adam)");
}

inline const char* to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

/// Either update rule behind one call.
class Optimizer {
  public:
    Optimizer(OptimizerKind kind, float lr) : kind_(kind), lr_(lr) { adam_.lr = lr; }

    void step(std::span<Parameter* const> params) {
        if (kind_ == OptimizerKind::sgd) {
            sgd_step(params, lr_);
        } else {
            adam_step(params, adam_);
        }
    }

    const AdamState& adam_state() const noexcept { return adam_; }

  private:
    OptimizerKind kind_;
    float lr_;
    AdamState adam_;
};

} // namespace adaresnet
