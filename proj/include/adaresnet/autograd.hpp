#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "adaresnet/errors.hpp"
#include "adaresnet/random.hpp"
#include "adaresnet/tensor.hpp"

namespace adaresnet {

/// A named tensor that the optimizers may update.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string name_, Tensor value_, bool trainable_ = true)
        : name(std::move(name_)), value(std::move(value_)), grad(value.shape()), trainable(trainable_) {}

    void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
};

/// Relu on/off masks of one forward pass, in evaluation order.
struct ActivationPattern {
    enum class Mode { off, record, replay, compare };

    Mode mode = Mode::off;
    std::vector<std::vector<std::uint8_t>> masks;
    std::size_t cursor = 0;
    /// Units whose sign differed from the recorded pass (compare mode).
    std::size_t sign_changes = 0;

    void start(Mode m) {
        mode = m;
        cursor = 0;
        sign_changes = 0;
        if (m == Mode::record) {
            masks.clear();
        }
    }
};

/// Reverse-mode autodiff tape.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order; backward walks it once from the loss down to node 0.
/// A tape belongs to one thread and one forward/backward pass.
class Tape {
  public:
    /// Receives the node's accumulated output gradient and pushes
    /// contributions into the parents via accumulate().
    using BackwardFn = std::function<void(Tape&, const Tensor&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// With gradients disabled, parameters enter as constants and nothing is differentiable.
    void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
    bool grad_enabled() const noexcept { return grad_enabled_; }

    /// Routes relu masks through `pattern`: record them, replay recorded ones, or count sign changes.
    void set_activation_pattern(ActivationPattern* pattern) { pattern_ = pattern; }
    ActivationPattern* activation_pattern() const noexcept { return pattern_; }

    Var constant(Tensor value) {
        nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
        return Var{this, nodes_.size() - 1};
    }

    /// Leaf for a parameter. One leaf per parameter per tape, so repeated uses share it.
    Var parameter(Parameter& p) {
        if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
            return Var{this, it->second};
        }
        const bool differentiable = grad_enabled_ && p.trainable;
        nodes_.push_back(Node{p.value, {}, {}, differentiable ? &p : nullptr, differentiable});
        param_nodes_.emplace(&p, nodes_.size() - 1);
        return Var{this, nodes_.size() - 1};
    }

    /// Records an op result. The node is differentiable iff some parent is.
    Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
        bool differentiable = false;
        for (const Var& p : parents) {
            differentiable = differentiable || nodes_.at(p.id).requires_grad;
        }
        nodes_.push_back(Node{std::move(value), {}, differentiable ? std::move(backward) : BackwardFn{},
                              nullptr, differentiable});
        return Var{this, nodes_.size() - 1};
    }

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Adds `g` into the gradient of `target`; no-op for non-differentiable nodes.
    void accumulate(Var target, Tensor g) {
        Node& node = nodes_.at(target.id);
        if (!node.requires_grad) {
            return;
        }
        if (g.shape() != node.value.shape()) {
            throw DimensionError("gradient shape " + shape_string(g.shape()) + " does not match output " +
                                 shape_string(node.value.shape()));
        }
        if (node.grad.empty()) {
            node.grad = std::move(g);
            return;
        }
        auto dst = node.grad.data();
        auto src = g.data();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] += src[i];
        }
    }

    /// Gradient of `loss` with respect to every trainable parameter on this tape.
    /// Parameter gradients are reset before accumulation.
    void backward(Var loss) {
        Node& root = nodes_.at(loss.id);
        if (root.value.size() != 1) {
            throw GradientError("backward needs a scalar loss, got shape " + shape_string(root.value.shape()));
        }
        if (!root.requires_grad) {
            throw GradientError("loss is detached from every trainable parameter");
        }
        for (const auto& [param, id] : param_nodes_) {
            if (nodes_[id].requires_grad) {
                param->zero_grad();
            }
        }
        for (Node& node : nodes_) {
            node.grad = Tensor();
        }
        root.grad = Tensor(root.value.shape(), 1.0f);
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& node = nodes_[i];
            if (node.grad.empty()) {
                continue;
            }
            if (node.param != nullptr) {
                auto dst = node.param->grad.data();
                auto src = node.grad.data();
                for (std::size_t j = 0; j < dst.size(); ++j) {
                    dst[j] += src[j];
                }
            }
            if (node.backward) {
                // Backward rules only accumulate into parents; nodes_ is never resized here.
                node.backward(*this, node.grad);
            }
        }
    }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        BackwardFn backward;
        Parameter* param = nullptr;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
    std::unordered_map<Parameter*, std::size_t> param_nodes_;
    bool grad_enabled_ = true;
    ActivationPattern* pattern_ = nullptr;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

// ---------------------------------------------------------------------------
// Differentiable ops

namespace ops {

inline Var add(Var a, Var b) {
    Tape& t = *a.tape;
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    if (x.shape() != y.shape()) {
        throw DimensionError("add shape mismatch: " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
    }
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += y[i];
    }
    return t.record(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& g) {
        tape.accumulate(a, g);
        tape.accumulate(b, g);
    });
}

inline Var scale(Var a, float c) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (float& v : out.data()) {
        v *= c;
    }
    return t.record(std::move(out), {a}, [a, c](Tape& tape, const Tensor& g) {
        Tensor d = g;
        for (float& v : d.data()) {
            v *= c;
        }
        tape.accumulate(a, std::move(d));
    });
}

inline Var sum(Var a) {
    Tape& t = *a.tape;
    double acc = 0.0;
    for (float v : t.value(a).data()) {
        acc += v;
    }
    const Shape shape = t.value(a).shape();
    return t.record(Tensor::scalar(static_cast<float>(acc)), {a}, [a, shape](Tape& tape, const Tensor& g) {
        tape.accumulate(a, Tensor(shape, g[0]));
    });
}

inline Var relu(Var a) {
    Tape& t = *a.tape;
    const Tensor& x = t.value(a);
    std::vector<std::uint8_t> mask(x.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = x[i] > 0.0f ? 1 : 0;  // subgradient 0 at the kink
    }
    if (ActivationPattern* p = t.activation_pattern(); p != nullptr && p->mode != ActivationPattern::Mode::off) {
        using Mode = ActivationPattern::Mode;
        if (p->mode == Mode::record) {
            p->masks.push_back(mask);
        } else {
            if (p->cursor >= p->masks.size() || p->masks[p->cursor].size() != mask.size()) {
                throw GradientError("activation pattern does not match this forward pass");
            }
            const auto& recorded = p->masks[p->cursor++];
            if (p->mode == Mode::replay) {
                mask = recorded;
            } else {
                for (std::size_t i = 0; i < mask.size(); ++i) {
                    p->sign_changes += mask[i] != recorded[i] ? 1 : 0;
                }
            }
        }
    }
    Tensor out(x.shape());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        out[i] = mask[i] != 0 ? x[i] : 0.0f;
    }
    return t.record(std::move(out), {a}, [a, mask = std::move(mask)](Tape& tape, const Tensor& g) {
        Tensor d = g;
        float* dd = d.data().data();
        for (std::size_t i = 0; i < d.size(); ++i) {
            dd[i] = mask[i] != 0 ? dd[i] : 0.0f;
        }
        tape.accumulate(a, std::move(d));
    });
}

inline Var matmul(Var a, Var b) {
    Tape& t = *a.tape;
    return t.record(adaresnet::matmul(t.value(a), t.value(b)), {a, b}, [a, b](Tape& tape, const Tensor& g) {
        const Tensor& x = tape.value(a);
        const Tensor& y = tape.value(b);
        const auto m = x.dim(0), k = x.dim(1), n = y.dim(1);
        const detail::ConstMatrixMap dg(g.data().data(), m, n);
        if (tape.requires_grad(a)) {
            Tensor dx({m, k});
            detail::MatrixMap(dx.data().data(), m, k).noalias() =
                dg * detail::ConstMatrixMap(y.data().data(), k, n).transpose();
            tape.accumulate(a, std::move(dx));
        }
        if (tape.requires_grad(b)) {
            Tensor dy({k, n});
            detail::MatrixMap(dy.data().data(), k, n).noalias() =
                detail::ConstMatrixMap(x.data().data(), m, k).transpose() * dg;
            tape.accumulate(b, std::move(dy));
        }
    });
}

/// x[N x K] + bias[K] broadcast over rows.
inline Var add_bias(Var x, Var bias) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    const Tensor& bv = t.value(bias);
    detail::require_rank(xv, 2, "add_bias input");
    if (bv.size() != xv.dim(1)) {
        throw DimensionError("bias of shape " + shape_string(bv.shape()) + " does not fit " +
                             shape_string(xv.shape()));
    }
    Tensor out = xv;
    const auto n = xv.dim(0), k = xv.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            out[i * k + j] += bv[j];
        }
    }
    return t.record(std::move(out), {x, bias}, [x, bias, n, k](Tape& tape, const Tensor& g) {
        tape.accumulate(x, g);
        if (tape.requires_grad(bias)) {
            Tensor db(tape.value(bias).shape());
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < k; ++j) {
                    db[j] += g[i * k + j];
                }
            }
            tape.accumulate(bias, std::move(db));
        }
    });
}

inline Var conv2d(Var input, Var kernel, std::size_t stride, Padding padding) {
    Tape& t = *input.tape;
    return t.record(adaresnet::conv2d(t.value(input), t.value(kernel), stride, padding), {input, kernel},
                    [input, kernel, stride, padding](Tape& tape, const Tensor& g) {
                        const Tensor& x = tape.value(input);
                        const Tensor& k = tape.value(kernel);
                        if (tape.requires_grad(input)) {
                            tape.accumulate(input, conv2d_input_grad(g, k, x.shape(), stride, padding));
                        }
                        if (tape.requires_grad(kernel)) {
                            tape.accumulate(kernel, conv2d_kernel_grad(x, g, k.shape(), stride, padding));
                        }
                    });
}

/// Running statistics are updated as a side effect and stay outside the graph.
inline Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var, bool training) {
    Tape& t = *x.tape;
    auto fwd = batch_norm_forward(t.value(x), t.value(gamma), t.value(beta), running_mean, running_var, training);
    Tensor out = std::move(fwd.output);
    return t.record(
        std::move(out), {x, gamma, beta},
        [x, gamma, beta, training, xhat = std::move(fwd.normalized),
         inv_std = std::move(fwd.inv_std)](Tape& tape, const Tensor& g) {
            const Tensor& gm = tape.value(gamma);
            const auto n = xhat.dim(0), c = xhat.dim(1), hw = xhat.dim(2) * xhat.dim(3);
            const double count = static_cast<double>(n * hw);
            Tensor dgamma(gm.shape());
            Tensor dbeta(gm.shape());
            Tensor dx(xhat.shape());
            for (std::size_t ch = 0; ch < c; ++ch) {
                double sum_g = 0.0;
                double sum_gx = 0.0;
                for (std::size_t b = 0; b < n; ++b) {
                    const std::size_t off = (b * c + ch) * hw;
                    sum_g += detail::sum_f64(g.data().data() + off, hw);
                    sum_gx += detail::dot_f64(g.data().data() + off, xhat.data().data() + off, hw);
                }
                dgamma[ch] = static_cast<float>(sum_gx);
                dbeta[ch] = static_cast<float>(sum_g);
                const float scale = gm[ch] * inv_std[ch];
                const auto mean_g = static_cast<float>(sum_g / count);
                const auto mean_gx = static_cast<float>(sum_gx / count);
                for (std::size_t b = 0; b < n; ++b) {
                    const std::size_t off = (b * c + ch) * hw;
                    const float* gp = g.data().data() + off;
                    const float* xp = xhat.data().data() + off;
                    float* dp = dx.data().data() + off;
                    if (training) {
                        for (std::size_t i = 0; i < hw; ++i) {
                            dp[i] = scale * (gp[i] - mean_g - xp[i] * mean_gx);
                        }
                    } else {
                        for (std::size_t i = 0; i < hw; ++i) {
                            dp[i] = scale * gp[i];
                        }
                    }
                }
            }
            tape.accumulate(x, std::move(dx));
            tape.accumulate(gamma, std::move(dgamma));
            tape.accumulate(beta, std::move(dbeta));
        });
}

inline Var global_avg_pool(Var x) {
    Tape& t = *x.tape;
    return t.record(adaresnet::global_avg_pool(t.value(x)), {x}, [x](Tape& tape, const Tensor& g) {
        const Shape& shape = tape.value(x).shape();
        const std::size_t hw = shape[2] * shape[3];
        Tensor d(shape);
        const float inv = 1.0f / static_cast<float>(hw);
        for (std::size_t i = 0; i < g.size(); ++i) {
            std::fill_n(d.data().data() + i * hw, hw, g[i] * inv);
        }
        tape.accumulate(x, std::move(d));
    });
}

inline Var softmax_cross_entropy(Var logits, const Tensor& onehot) {
    Tape& t = *logits.tape;
    auto ce = softmax_cross_entropy_with_grad(t.value(logits), onehot);
    return t.record(Tensor::scalar(ce.loss), {logits},
                    [logits, dlogits = std::move(ce.grad)](Tape& tape, const Tensor& g) {
                        Tensor d = dlogits;
                        for (float& v : d.data()) {
                            v *= g[0];
                        }
                        tape.accumulate(logits, std::move(d));
                    });
}

} // namespace ops

// ---------------------------------------------------------------------------
// Finite-difference gradient check

inline double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

struct GradCheckOptions {
    float epsilon = 1e-3f;
    double tolerance = 1e-2;
    /// Probe at most this many elements per parameter (0 = all), chosen with `seed`.
    std::size_t max_elements = 0;
    std::uint64_t seed = 0;
    /// Replay the relu masks of the unperturbed pass while probing, so the
    /// differences stay inside one linear region of the network.
    bool freeze_activations = false;
};

struct GradCheckReport {
    std::map<std::string, double> max_relative_error;
    /// Tape and finite-difference values at the worst element of each parameter.
    std::map<std::string, std::pair<double, double>> worst_pair;
    double tolerance = 0.0;
    /// Largest number of relu units that switched sides in a single probe (0 when frozen).
    std::size_t max_sign_changes = 0;

    double worst() const {
        double w = 0.0;
        for (const auto& [name, err] : max_relative_error) {
            w = std::max(w, err);
        }
        return w;
    }
    bool passed() const { return worst() < tolerance; }
};

/// Compares tape gradients against central differences (f(p+e) - f(p-e)) / 2e.
///
/// `build_loss(Tape&) -> Var` must record the full forward pass and return a
/// scalar loss; it is called once for the tape gradient and twice per probed element.
template <class BuildLoss>
GradCheckReport grad_check(BuildLoss&& build_loss, std::span<Parameter* const> params,
                           const GradCheckOptions& options = {}) {
    ActivationPattern pattern;
    {
        Tape tape;
        pattern.start(ActivationPattern::Mode::record);
        tape.set_activation_pattern(&pattern);
        const Var loss = build_loss(tape);
        tape.backward(loss);
    }
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (const Parameter* p : params) {
        analytic.push_back(p->grad);
    }
    GradCheckReport report;
    const auto evaluate = [&] {
        Tape tape;
        pattern.start(options.freeze_activations ? ActivationPattern::Mode::replay : ActivationPattern::Mode::compare);
        tape.set_activation_pattern(&pattern);
        const Var loss = build_loss(tape);
        report.max_sign_changes = std::max(report.max_sign_changes, pattern.sign_changes);
        const float v = tape.value(loss)[0];
        if (!std::isfinite(v)) {
            throw NumericError("non-finite loss while probing finite differences");
        }
        return static_cast<double>(v);
    };

    report.tolerance = options.tolerance;
    Rng rng(options.seed);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter& p = *params[pi];
        std::vector<std::size_t> indices(p.value.size());
        for (std::size_t i = 0; i < indices.size(); ++i) {
            indices[i] = i;
        }
        if (options.max_elements != 0 && indices.size() > options.max_elements) {
            rng.shuffle(std::span<std::size_t>(indices));
            indices.resize(options.max_elements);
        }
        double worst = 0.0;
        std::pair<double, double> worst_values{0.0, 0.0};
        for (std::size_t idx : indices) {
            const float original = p.value[idx];
            const float up = original + options.epsilon;
            const float down = original - options.epsilon;
            p.value[idx] = up;
            const double f_up = evaluate();
            p.value[idx] = down;
            const double f_down = evaluate();
            p.value[idx] = original;
            const double numeric = (f_up - f_down) / (static_cast<double>(up) - static_cast<double>(down));
            const double tape_grad = analytic[pi][idx];
            const double err = relative_error(tape_grad, numeric);
            if (err >= worst) {
                worst = err;
                worst_values = {tape_grad, numeric};
            }
        }
        report.max_relative_error[p.name] = worst;
        report.worst_pair[p.name] = worst_values;
    }
    return report;
}

} // namespace adaresnet
