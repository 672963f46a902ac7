#include <array>
#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "adaresnet/nn.hpp"
#include "adaresnet/optim.hpp"
#include "support.hpp"

using namespace adaresnet;

namespace {

/// Textbook scalar Adam in the parameter dtype, written independently of adam_step.
struct ScalarAdam {
    float lr = 0.001f, b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
    float m = 0.0f, v = 0.0f;
    int t = 0;

    float step(float w, float g) {
        ++t;
        m = b1 * m + (1.0f - b1) * g;
        v = b2 * v + (1.0f - b2) * g * g;
        const float mh = m / (1.0f - std::pow(b1, static_cast<float>(t)));
        const float vh = v / (1.0f - std::pow(b2, static_cast<float>(t)));
        return w - lr * mh / (std::sqrt(vh) + eps);
    }
};

/// Same recurrence in double, used as a loose cross-check of the float trajectory.
double adam_double(const std::vector<double>& grads, double lr) {
    double w = 0.0, m = 0.0, v = 0.0;
    for (std::size_t t = 1; t <= grads.size(); ++t) {
        const double g = grads[t - 1];
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        w -= lr * (m / (1.0 - std::pow(0.9, t))) / (std::sqrt(v / (1.0 - std::pow(0.999, t))) + 1e-8);
    }
    return w;
}

Parameter scalar_param(float w, float g) {
    Parameter p("w", Tensor::scalar(w));
    p.grad[0] = g;
    return p;
}

} // namespace

TEST(Sgd, SingleStepExamples) {
    Parameter p = scalar_param(0.0f, 7.0f);
    std::vector<Parameter*> ps{&p};
    sgd_step(ps, 0.1f);
    EXPECT_EQ(p.value[0], 0.0f - 0.1f * 7.0f);
    EXPECT_FLOAT_EQ(p.value[0], -0.7f);

    Parameter q("q", Tensor({3}, {1, 2, 3}));
    q.grad = Tensor({3}, {0.5f, -1, 0});
    std::vector<Parameter*> qs{&q};
    sgd_step(qs, 0.5f);
    EXPECT_EQ(q.value, Tensor({3}, {0.75f, 2.5f, 3}));
}

TEST(Sgd, ZeroGradientAndTwoSteps) {
    Parameter p = scalar_param(1.25f, 0.0f);
    std::vector<Parameter*> ps{&p};
    sgd_step(ps, 0.3f);
    EXPECT_EQ(p.value[0], 1.25f);
    p.grad[0] = 2.0f;
    sgd_step(ps, 0.25f);
    sgd_step(ps, 0.25f);
    EXPECT_EQ(p.value[0], 1.25f - 2 * 0.25f * 2.0f);
}

TEST(Sgd, FrozenParametersAreSkipped) {
    Parameter p("frozen", Tensor::scalar(3.0f), false);
    p.grad = Tensor();
    std::vector<Parameter*> ps{&p};
    EXPECT_NO_THROW(sgd_step(ps, 1.0f));
    EXPECT_EQ(p.value[0], 3.0f);
}

TEST(Sgd, Errors) {
    Parameter missing("m", Tensor({2}));
    missing.grad = Tensor();
    std::vector<Parameter*> a{&missing};
    EXPECT_THROW(sgd_step(a, 0.1f), GradientError);
    Parameter bad = scalar_param(0.0f, std::numeric_limits<float>::quiet_NaN());
    std::vector<Parameter*> b{&bad};
    EXPECT_THROW(sgd_step(b, 0.1f), NumericError);
    EXPECT_EQ(bad.value[0], 0.0f);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    for (float g : {1e-4f, 0.5f, -3.0f, 1e3f}) {
        Parameter p = scalar_param(0.0f, g);
        std::vector<Parameter*> ps{&p};
        AdamState state;
        adam_step(ps, state);
        EXPECT_NEAR(std::abs(p.value[0]), 0.001, 1e-6) << g;
        EXPECT_EQ(std::signbit(p.value[0]), !std::signbit(g));
    }
}

TEST(Adam, ZeroGradientLeavesParameterUnchanged) {
    Parameter p = scalar_param(0.5f, 0.0f);
    std::vector<Parameter*> ps{&p};
    AdamState state;
    for (int i = 0; i < 10; ++i) adam_step(ps, state);
    EXPECT_EQ(p.value[0], 0.5f);
}

TEST(Adam, ThreeUnitStepsMatchScalarOracle) {
    Parameter p = scalar_param(0.0f, 1.0f);
    std::vector<Parameter*> ps{&p};
    AdamState state;
    ScalarAdam oracle;
    float w = 0.0f;
    for (int i = 0; i < 3; ++i) {
        adam_step(ps, state);
        w = oracle.step(w, 1.0f);
        EXPECT_NEAR(p.value[0], w, 1e-9);
    }
    EXPECT_NEAR(p.value[0], adam_double({1, 1, 1}, 0.001), 1e-6);
}

TEST(Adam, HundredStepTrajectoryMatchesScalarOracle) {
    Parameter p("v", Tensor({3}, {0.1f, -0.2f, 0.3f}));
    std::vector<Parameter*> ps{&p};
    AdamState state;
    std::array<ScalarAdam, 3> oracles{};
    std::array<float, 3> w{0.1f, -0.2f, 0.3f};
    Rng rng(42);
    for (int t = 0; t < 100; ++t) {
        for (std::size_t i = 0; i < 3; ++i) {
            p.grad[i] = rng.uniform(-2.0f, 2.0f) * static_cast<float>(i + 1);
            w[i] = oracles[i].step(w[i], p.grad[i]);
        }
        adam_step(ps, state);
        for (std::size_t i = 0; i < 3; ++i) {
            ASSERT_NEAR(p.value[i], w[i], 1e-9) << "step " << t;
        }
    }
}

TEST(Adam, MomentsAreKeptPerParameter) {
    Parameter a = scalar_param(0.0f, 1.0f);
    Parameter b = scalar_param(0.0f, -1.0f);
    b.name = "b";
    std::vector<Parameter*> ps{&a, &b};
    AdamState state;
    adam_step(ps, state);
    EXPECT_EQ(state.moments.size(), 2u);
    EXPECT_EQ(a.value[0], -b.value[0]);
}

TEST(Adam, FixedSkipConstantsNeverEnterOptimizerState) {
    auto config = ModelConfig::mini(1, 8, 8, 10);
    config.skip_mode = SkipMode::fixed(2.0f);
    Model model(config);
    for (Parameter* p : model.parameters()) {
        if (p->trainable) p->grad = Tensor(p->value.shape(), 0.01f);
    }
    Optimizer opt(OptimizerKind::adam, 1e-3f);
    opt.step(model.trainable_parameters());
    for (const auto& [name, moments] : opt.adam_state().moments) {
        EXPECT_EQ(name.find("skip"), std::string::npos) << name;
        EXPECT_EQ(name.find("running"), std::string::npos) << name;
    }
}

TEST(Adam, DeterministicGivenIdenticalInputs) {
    Parameter a("x", Tensor({4}, {1, 2, 3, 4}));
    Parameter b("x", Tensor({4}, {1, 2, 3, 4}));
    a.grad = b.grad = Tensor({4}, {0.3f, -0.1f, 2, -5});
    std::vector<Parameter*> pa{&a}, pb{&b};
    AdamState sa, sb;
    for (int i = 0; i < 5; ++i) {
        adam_step(pa, sa);
        adam_step(pb, sb);
    }
    EXPECT_EQ(a.value, b.value);
}

TEST(Optimizer, ParseNames) {
    EXPECT_EQ(parse_optimizer("sgd"), OptimizerKind::sgd);
    EXPECT_EQ(parse_optimizer("adam"), OptimizerKind::adam);
    EXPECT_THROW(parse_optimizer("rmsprop"), ConfigError);
    EXPECT_STREQ(to_string(OptimizerKind::adam), "adam");
}
