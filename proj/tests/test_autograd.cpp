#include <cmath>

#include <gtest/gtest.h>

#include "adaresnet/autograd.hpp"
#include "adaresnet/nn.hpp"
#include "support.hpp"

using namespace adaresnet;
using testing_support::random_tensor;

TEST(Tape, SkipSumGradientExample) {
    Tape tape;
    const Var tfd = tape.constant(Tensor({2}, {1, 2}));
    const Var ipd = tape.constant(Tensor({2}, {3, 4}));
    Parameter w("w", Tensor::scalar(0.0f));
    const Var y = ada_skip(tfd, ipd, tape.parameter(w));
    EXPECT_EQ(y.value(), Tensor({2}, {1, 2}));
    tape.backward(ops::sum(y));
    EXPECT_FLOAT_EQ(w.grad[0], 7.0f);
}

TEST(Tape, SkipSumInputGradientIsWeightTimesUpstream) {
    Tape tape;
    Parameter tfd("tfd", Tensor({3}, {0.5f, -1, 2}));
    Parameter ipd("ipd", Tensor({3}, {1, 2, 3}));
    Parameter w("w", Tensor::scalar(-1.5f));
    const Var y = ada_skip(tape.parameter(tfd), tape.parameter(ipd), tape.parameter(w));
    tape.backward(ops::sum(ops::scale(y, 2.0f)));
    EXPECT_EQ(ipd.grad, Tensor({3}, -3.0f));
    EXPECT_EQ(tfd.grad, Tensor({3}, 2.0f));
    EXPECT_FLOAT_EQ(w.grad[0], 12.0f);
}

TEST(Tape, ZeroSkipWeightLeavesTransformedPathAlone) {
    Tape tape;
    const auto d = random_tensor({2, 3}, 1);
    const Var y = ada_skip(tape.constant(d), tape.constant(random_tensor({2, 3}, 2)), 0.0f);
    EXPECT_EQ(y.value(), d);
}

TEST(Tape, LinearInWeightGivesExactGradient) {
    // y = w * x with a zero transformed path: dL/dw = sum(x).
    Tape tape;
    const auto x = random_tensor({4, 5}, 3);
    Parameter w("w", Tensor::scalar(0.3f));
    const Var y = ada_skip(tape.constant(Tensor(x.shape())), tape.constant(x), tape.parameter(w));
    tape.backward(ops::sum(y));
    double expected = 0.0;
    for (float v : x.data()) expected += v;
    EXPECT_NEAR(w.grad[0], expected, 1e-5);
}

TEST(Tape, SharedParameterAccumulatesAcrossUses) {
    Tape tape;
    Parameter w("w", Tensor::scalar(2.0f));
    const Var a = ada_skip(tape.constant(Tensor({1}, 0.0f)), tape.constant(Tensor({1}, 3.0f)), tape.parameter(w));
    const Var b = ada_skip(a, tape.constant(Tensor({1}, 5.0f)), tape.parameter(w));
    tape.backward(ops::sum(b));
    EXPECT_FLOAT_EQ(w.grad[0], 8.0f);
}

TEST(Tape, ZeroInputPathGivesZeroWeightGradient) {
    Tape tape;
    Parameter w("w", Tensor::scalar(0.7f));
    Parameter k("k", random_tensor({2, 2}, 4));
    const Var tfd = ops::matmul(tape.constant(random_tensor({3, 2}, 5)), tape.parameter(k));
    const Var y = ada_skip(tfd, tape.constant(Tensor({3, 2})), tape.parameter(w));
    tape.backward(ops::sum(y));
    EXPECT_EQ(w.grad[0], 0.0f);
}

TEST(Tape, ScalingTheLossScalesEveryGradient) {
    Parameter k("k", random_tensor({3, 4}, 6));
    Parameter w("w", Tensor::scalar(0.4f));
    const auto x = random_tensor({2, 3}, 7);
    const auto ipd = random_tensor({2, 4}, 8);
    const auto run = [&](float c) {
        Tape tape;
        const Var tfd = ops::relu(ops::matmul(tape.constant(x), tape.parameter(k)));
        tape.backward(ops::scale(ops::sum(ada_skip(tfd, tape.constant(ipd), tape.parameter(w))), c));
        return std::pair{k.grad, w.grad};
    };
    const auto [k1, w1] = run(1.0f);
    const auto [k3, w3] = run(3.0f);
    for (std::size_t i = 0; i < k1.size(); ++i) {
        EXPECT_NEAR(k3[i], 3.0f * k1[i], 1e-5);
    }
    EXPECT_NEAR(w3[0], 3.0f * w1[0], 1e-5);
}

TEST(Tape, BackwardResetsGradientsBetweenPasses) {
    Parameter w("w", Tensor::scalar(1.0f));
    for (int pass = 0; pass < 2; ++pass) {
        Tape tape;
        tape.backward(ops::sum(ada_skip(tape.constant(Tensor({2})), tape.constant(Tensor({2}, 1.0f)),
                                        tape.parameter(w))));
        EXPECT_FLOAT_EQ(w.grad[0], 2.0f);
    }
}

TEST(Tape, NonScalarLossIsRejected) {
    Tape tape;
    Parameter w("w", Tensor({2}, 1.0f));
    EXPECT_THROW(tape.backward(ops::scale(tape.parameter(w), 2.0f)), GradientError);
}

TEST(Tape, DetachedLossIsRejected) {
    Tape tape;
    Parameter frozen("frozen", Tensor({2}, 1.0f), false);
    EXPECT_THROW(tape.backward(ops::sum(tape.parameter(frozen))), GradientError);
    Tape tape2;
    EXPECT_THROW(tape2.backward(ops::sum(tape2.constant(Tensor({2}, 1.0f)))), GradientError);
}

TEST(Tape, GradientsDisabledMakesParametersConstant) {
    Tape tape;
    tape.set_grad_enabled(false);
    Parameter w("w", Tensor::scalar(1.0f));
    EXPECT_FALSE(tape.requires_grad(tape.parameter(w)));
}

TEST(Tape, SkipSumShapeErrors) {
    Tape tape;
    Parameter w("w", Tensor({2}, 1.0f));
    EXPECT_THROW(ada_skip(tape.constant(Tensor({2})), tape.constant(Tensor({3})), 1.0f), DimensionError);
    EXPECT_THROW(ada_skip(tape.constant(Tensor({2})), tape.constant(Tensor({2})), tape.parameter(w)),
                 DimensionError);
}

TEST(Ops, CrossEntropyGradientIsSoftmaxMinusTarget) {
    Tape tape;
    Parameter logits("logits", Tensor({1, 3}, {1, 2, 3}));
    tape.backward(ops::softmax_cross_entropy(tape.parameter(logits), Tensor({1, 3}, {0, 0, 1})));
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    EXPECT_NEAR(logits.grad[0], std::exp(1.0) / z, 1e-6);
    EXPECT_NEAR(logits.grad[1], std::exp(2.0) / z, 1e-6);
    EXPECT_NEAR(logits.grad[2], std::exp(3.0) / z - 1.0, 1e-6);
}

namespace {

ModelConfig small_config(SkipMode mode, std::uint64_t seed) {
    ModelConfig c;
    c.in_channels = 1;
    c.height = 6;
    c.width = 6;
    c.stem_channels = 3;
    c.num_classes = 3;
    c.stages = {{{BlockKind::projection, 3, 4, 2}, {BlockKind::identity, 4, 4, 1}}};
    c.skip_mode = mode;
    c.initial_skip = 0.5f;
    c.seed = seed;
    return c;
}

/// Loss sum(logits @ r) for a fixed r: a smooth head whose value sits near zero,
/// so float rounding of the loss stays far below the gradient scale.
Var projected_logits(Model& model, Tape& tape, const Tensor& x, const Tensor& r, bool training) {
    return ops::sum(ops::matmul(model.forward(tape, x, training), tape.constant(r)));
}

/// Central differences with the relu pattern frozen at the unperturbed pass.
/// Returns the worst |tape - fd| - rel_tol * max(|tape|, |fd|) over all probes.
template <class BuildLoss>
double frozen_excess(BuildLoss&& build, std::span<Parameter* const> params, float eps, double rel_tol) {
    ActivationPattern pattern;
    {
        Tape tape;
        pattern.start(ActivationPattern::Mode::record);
        tape.set_activation_pattern(&pattern);
        tape.backward(build(tape));
    }
    double worst = -1.0;
    for (Parameter* p : params) {
        const Tensor analytic = p->grad;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const float original = p->value[i];
            double f[2];
            for (int s = 0; s < 2; ++s) {
                p->value[i] = s == 0 ? original + eps : original - eps;
                Tape tape;
                pattern.start(ActivationPattern::Mode::replay);
                tape.set_activation_pattern(&pattern);
                f[s] = tape.value(build(tape))[0];
            }
            p->value[i] = original;
            const double fd = (f[0] - f[1]) / (2.0 * eps);
            const double a = analytic[i];
            worst = std::max(worst, std::abs(a - fd) - rel_tol * std::max(std::abs(a), std::abs(fd)));
        }
    }
    return worst;
}

} // namespace

TEST(GradCheck, SmallNetworkPassesStrictCentralDifferences) {
    for (SkipMode mode : {SkipMode::per_block(), SkipMode::unified(), SkipMode::per_type()}) {
        Model model(small_config(mode, 3));
        const auto x = random_tensor({4, 1, 6, 6}, 40);
        const auto r = random_tensor({3, 1}, 41);
        const auto params = model.skip_parameters();
        const auto report = grad_check(
            [&](Tape& tape) { return projected_logits(model, tape, x, r, false); }, params, GradCheckOptions{});
        EXPECT_EQ(report.max_sign_changes, 0u);
        EXPECT_TRUE(report.passed()) << mode.to_string() << " worst " << report.worst();
    }
}

TEST(GradCheck, SmallNetworkAllParametersWithFrozenActivations) {
    Model model(small_config(SkipMode::per_block(), 5));
    const auto x = random_tensor({4, 1, 6, 6}, 50);
    const auto r = random_tensor({3, 1}, 51);
    const auto params = model.trainable_parameters();
    GradCheckOptions options;
    options.freeze_activations = true;
    options.max_elements = 6;
    const auto report = grad_check(
        [&](Tape& tape) { return projected_logits(model, tape, x, r, true); }, params, options);
    for (const auto& [name, err] : report.max_relative_error) {
        const auto [a, fd] = report.worst_pair.at(name);
        EXPECT_LE(std::abs(a - fd), 1e-2 * std::max(std::abs(a), std::abs(fd)) + 2e-3) << name;
    }
}

TEST(GradCheck, FullModelSkipWeightsAgreeWithinFloatNoise) {
    // 28x28 inputs put hundreds of relu units within epsilon of zero, so the
    // relu pattern is frozen and the comparison allows the float32 noise of the loss.
    for (std::uint64_t seed : {1, 2, 3}) {
        auto config = ModelConfig::mini(1, 28, 28, 10);
        config.seed = seed;
        config.initial_skip = 0.5f;
        Model model(config);
        const auto x = random_tensor({4, 1, 28, 28}, 100 + seed, 0.0f, 1.0f);
        Tensor onehot({4, 10});
        for (std::size_t i = 0; i < 4; ++i) onehot[i * 10 + (seed + 3 * i) % 10] = 1.0f;
        const auto params = model.skip_parameters();
        ASSERT_EQ(params.size(), 6u);
        const double excess = frozen_excess(
            [&](Tape& tape) { return ops::softmax_cross_entropy(model.forward(tape, x, true), onehot); }, params,
            1e-3f, 1e-2);
        EXPECT_LE(excess, 5e-4) << "seed " << seed;
    }
}

TEST(GradCheck, UnifiedGradientIsSumOfPerBlockGradients) {
    auto per_block_cfg = small_config(SkipMode::per_block(), 9);
    auto unified_cfg = small_config(SkipMode::unified(), 9);
    Model per_block(per_block_cfg);
    Model unified(unified_cfg);
    const auto x = random_tensor({3, 1, 6, 6}, 60);
    const Tensor onehot({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    {
        Tape tape;
        tape.backward(ops::softmax_cross_entropy(per_block.forward(tape, x, true), onehot));
    }
    {
        Tape tape;
        tape.backward(ops::softmax_cross_entropy(unified.forward(tape, x, true), onehot));
    }
    double sum = 0.0;
    for (const Parameter* p : per_block.skip_parameters()) sum += p->grad[0];
    ASSERT_EQ(unified.skip_parameters().size(), 1u);
    EXPECT_NEAR(unified.skip_parameters()[0]->grad[0], sum, 1e-5 * std::max(1.0, std::abs(sum)));
}

TEST(GradCheck, ActivationReplayRejectsADifferentGraph) {
    ActivationPattern pattern;
    {
        Tape tape;
        pattern.start(ActivationPattern::Mode::record);
        tape.set_activation_pattern(&pattern);
        (void)ops::relu(tape.constant(Tensor({2}, 1.0f)));
    }
    Tape tape;
    pattern.start(ActivationPattern::Mode::replay);
    tape.set_activation_pattern(&pattern);
    EXPECT_THROW((void)ops::relu(tape.constant(Tensor({3}, 1.0f))), GradientError);
}
