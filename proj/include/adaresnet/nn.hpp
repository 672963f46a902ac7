#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include <json.hpp>

#include "adaresnet/autograd.hpp"
#include "adaresnet/errors.hpp"
#include "adaresnet/random.hpp"
#include "adaresnet/tensor.hpp"

namespace adaresnet {

// ---------------------------------------------------------------------------
// Skip-weight policy

/// How the scalar multiplying the skip path is allocated across skip sites.
struct SkipMode {
    enum class Kind { fixed, unified, per_type, per_block };

    Kind kind = Kind::per_block;
    float fixed_value = 1.0f;

    static SkipMode fixed(float c) { return {Kind::fixed, c}; }
    static SkipMode unified() { return {Kind::unified, 0.0f}; }
    static SkipMode per_type() { return {Kind::per_type, 0.0f}; }
    static SkipMode per_block() { return {Kind::per_block, 0.0f}; }

    bool trainable() const noexcept { return kind != Kind::fixed; }

    /// "fixed:<c>", "unified", "per-type" or "per-block".
    std::string to_string() const {
        switch (kind) {
        case Kind::fixed: {
            char buf[32];
            const auto res = std::to_chars(buf, buf + sizeof buf, fixed_value);
            return "fixed:" + std::string(buf, res.ptr);
        }
        case Kind::unified: return "unified";
        case Kind::per_type: return "per-type";
        case Kind::per_block: return "per-block";
        }
        return "unknown";
    }

    static SkipMode parse(std::string_view text) {
        if (text == "unified") {
            return unified();
        }
        if (text == "per-type") {
            return per_type();
        }
        if (text == "per-block") {
            return per_block();
        }
        constexpr std::string_view prefix = "fixed:";
        if (text.starts_with(prefix)) {
            const std::string number(text.substr(prefix.size()));
            std::size_t used = 0;
            float c = 0.0f;
            try {
                c = std::stof(number, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == number.size() && used != 0 && std::isfinite(c)) {
                return fixed(c);
            }
        }
        throw ConfigError("unknown skip mode '" + std::string(text) +
                          "' (expected fixed:<c>, unified, per-type or per-block)");
    }

    friend bool operator==(const SkipMode&, const SkipMode&) = default;
};

// ---------------------------------------------------------------------------
// Architecture description

enum class BlockKind { identity, projection };

inline const char* to_string(BlockKind kind) { return kind == BlockKind::identity ? "identity" : "projection"; }

struct BlockSpec {
    BlockKind kind = BlockKind::identity;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t stride = 1;

    friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

struct ModelConfig {
    std::size_t in_channels = 1;
    std::size_t height = 28;
    std::size_t width = 28;
    std::size_t stem_channels = 16;
    std::vector<std::vector<BlockSpec>> stages;
    std::size_t num_classes = 10;
    SkipMode skip_mode = SkipMode::per_block();
    float initial_skip = 0.0f;
    std::uint64_t seed = 0;
    /// Baseline build: the skip sum is a plain addition and no skip weight exists.
    bool plain_residual = false;

    /// Three stages of [projection, identity] at 16, 32 and 64 channels; 6 skip sites.
    static ModelConfig mini(std::size_t in_channels, std::size_t height, std::size_t width,
                            std::size_t num_classes) {
        ModelConfig c;
        c.in_channels = in_channels;
        c.height = height;
        c.width = width;
        c.num_classes = num_classes;
        c.stages = {
            {{BlockKind::projection, 16, 16, 1}, {BlockKind::identity, 16, 16, 1}},
            {{BlockKind::projection, 16, 32, 2}, {BlockKind::identity, 32, 32, 1}},
            {{BlockKind::projection, 32, 64, 2}, {BlockKind::identity, 64, 64, 1}},
        };
        return c;
    }

    std::size_t site_count() const {
        std::size_t n = 0;
        for (const auto& stage : stages) {
            n += stage.size();
        }
        return n;
    }

    std::size_t output_channels() const {
        return stages.empty() || stages.back().empty() ? stem_channels : stages.back().back().out_channels;
    }

    void validate() const {
        if (in_channels == 0 || height == 0 || width == 0 || stem_channels == 0) {
            throw ConfigError("input shape and stem width must be positive");
        }
        if (num_classes < 2) {
            throw ConfigError("a classifier needs at least 2 classes, got " + std::to_string(num_classes));
        }
        std::size_t channels = stem_channels;
        for (std::size_t s = 0; s < stages.size(); ++s) {
            if (stages[s].empty()) {
                throw ConfigError("stage " + std::to_string(s + 1) + " has no blocks");
            }
            for (std::size_t b = 0; b < stages[s].size(); ++b) {
                const BlockSpec& spec = stages[s][b];
                const std::string where = "stage " + std::to_string(s + 1) + " block " + std::to_string(b + 1);
                if (spec.in_channels != channels) {
                    throw ConfigError(where + " expects " + std::to_string(spec.in_channels) +
                                      " input channels but receives " + std::to_string(channels));
                }
                if (spec.out_channels == 0 || spec.stride == 0) {
                    throw ConfigError(where + " needs positive channels and stride");
                }
                if (spec.kind == BlockKind::identity &&
                    (spec.in_channels != spec.out_channels || spec.stride != 1)) {
                    throw ConfigError(where + " is an identity block but changes shape");
                }
                channels = spec.out_channels;
            }
        }
    }
};

inline void to_json(nlohmann::json& j, const BlockSpec& b) {
    j = nlohmann::json{{"kind", to_string(b.kind)},
                       {"in_channels", b.in_channels},
                       {"out_channels", b.out_channels},
                       {"stride", b.stride}};
}

inline void from_json(const nlohmann::json& j, BlockSpec& b) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind != "identity" && kind != "projection") {
        throw ConfigError("unknown block kind '" + kind + "'");
    }
    b.kind = kind == "identity" ? BlockKind::identity : BlockKind::projection;
    j.at("in_channels").get_to(b.in_channels);
    j.at("out_channels").get_to(b.out_channels);
    j.at("stride").get_to(b.stride);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"in_channels", c.in_channels},   {"height", c.height},
                       {"width", c.width},               {"stem_channels", c.stem_channels},
                       {"stages", c.stages},             {"num_classes", c.num_classes},
                       {"skip_mode", c.skip_mode.to_string()}, {"initial_skip", c.initial_skip},
                       {"seed", c.seed},                 {"plain_residual", c.plain_residual}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("in_channels").get_to(c.in_channels);
    j.at("height").get_to(c.height);
    j.at("width").get_to(c.width);
    j.at("stem_channels").get_to(c.stem_channels);
    j.at("stages").get_to(c.stages);
    j.at("num_classes").get_to(c.num_classes);
    c.skip_mode = SkipMode::parse(j.at("skip_mode").get<std::string>());
    j.at("initial_skip").get_to(c.initial_skip);
    j.at("seed").get_to(c.seed);
    j.at("plain_residual").get_to(c.plain_residual);
}

// ---------------------------------------------------------------------------
// The skip sum

/// tfd + w * ipd with a trainable scalar w. Backward: dL/dw = sum(g * ipd), dL/dipd = w * g.
inline Var ada_skip(Var tfd, Var ipd, Var weight) {
    Tape& t = *tfd.tape;
    const Tensor& d = t.value(tfd);
    const Tensor& x = t.value(ipd);
    const Tensor& w = t.value(weight);
    if (d.shape() != x.shape()) {
        throw DimensionError("skip sum shape mismatch: transformed " + shape_string(d.shape()) + " vs input " +
                             shape_string(x.shape()));
    }
    if (w.size() != 1) {
        throw DimensionError("skip weight must be a scalar, got " + shape_string(w.shape()));
    }
    const float wv = w[0];
    Tensor out = d;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = d[i] + wv * x[i];
    }
    return t.record(std::move(out), {tfd, ipd, weight}, [tfd, ipd, weight](Tape& tape, const Tensor& g) {
        const Tensor& x = tape.value(ipd);
        const float wv = tape.value(weight)[0];
        tape.accumulate(tfd, g);
        if (tape.requires_grad(ipd)) {
            Tensor dx = g;
            for (float& v : dx.data()) {
                v = wv * v;
            }
            tape.accumulate(ipd, std::move(dx));
        }
        if (tape.requires_grad(weight)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) {
                acc += static_cast<double>(g[i]) * x[i];
            }
            tape.accumulate(weight, Tensor::scalar(static_cast<float>(acc)));
        }
    });
}

/// tfd + c * ipd with a constant c.
inline Var ada_skip(Var tfd, Var ipd, float weight) {
    Tape& t = *tfd.tape;
    const Tensor& d = t.value(tfd);
    const Tensor& x = t.value(ipd);
    if (d.shape() != x.shape()) {
        throw DimensionError("skip sum shape mismatch: transformed " + shape_string(d.shape()) + " vs input " +
                             shape_string(x.shape()));
    }
    Tensor out = d;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = d[i] + weight * x[i];
    }
    return t.record(std::move(out), {tfd, ipd}, [tfd, ipd, weight](Tape& tape, const Tensor& g) {
        tape.accumulate(tfd, g);
        if (tape.requires_grad(ipd)) {
            Tensor dx = g;
            for (float& v : dx.data()) {
                v = weight * v;
            }
            tape.accumulate(ipd, std::move(dx));
        }
    });
}

// ---------------------------------------------------------------------------
// Layers

namespace detail {

inline Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
    for (float& v : t.data()) {
        v = rng.uniform(-limit, limit);
    }
    return t;
}

} // namespace detail

/// Convolution (no bias) followed by batch normalization.
struct ConvBn {
    Parameter kernel;
    Parameter gamma;
    Parameter beta;
    Parameter running_mean;
    Parameter running_var;
    std::size_t stride = 1;
    Padding padding = Padding::same;

    ConvBn() = default;
    ConvBn(const std::string& prefix, std::size_t in, std::size_t out, std::size_t k, std::size_t stride_,
           Rng& rng)
        : kernel(prefix + ".conv.kernel", detail::he_uniform({out, in, k, k}, in * k * k, rng)),
          gamma(prefix + ".bn.gamma", Tensor({out}, 1.0f)), beta(prefix + ".bn.beta", Tensor({out}, 0.0f)),
          running_mean(prefix + ".bn.running_mean", Tensor({out}, 0.0f), false),
          running_var(prefix + ".bn.running_var", Tensor({out}, 1.0f), false), stride(stride_) {}

    Var forward(Tape& tape, Var x, bool training) {
        const Var y = ops::conv2d(x, tape.parameter(kernel), stride, padding);
        return ops::batch_norm(y, tape.parameter(gamma), tape.parameter(beta), running_mean.value,
                               running_var.value, training);
    }

    void collect(std::vector<Parameter*>& out) {
        for (Parameter* p : {&kernel, &gamma, &beta, &running_mean, &running_var}) {
            out.push_back(p);
        }
    }
};

/// What multiplies the skip path at one site.
struct SkipBinding {
    Parameter* parameter = nullptr;  // trainable weight, or null for a constant
    float constant = 1.0f;
    bool plain = false;              // plain addition, no weight at all
};

/// Two conv3x3+BN layers with relu between them form the transformed data;
/// projection blocks also carry a strided 1x1 conv+BN on the skip path.
class ResidualBlock {
  public:
    ResidualBlock() = default;
    ResidualBlock(const BlockSpec& spec, std::string site, Rng& rng) : spec_(spec), site_(std::move(site)) {
        conv1_ = ConvBn(site_ + ".conv1", spec.in_channels, spec.out_channels, 3,
                        spec.kind == BlockKind::projection ? spec.stride : 1, rng);
        conv2_ = ConvBn(site_ + ".conv2", spec.out_channels, spec.out_channels, 3, 1, rng);
        if (spec.kind == BlockKind::projection) {
            shortcut_ = ConvBn(site_ + ".shortcut", spec.in_channels, spec.out_channels, 1, spec.stride, rng);
        }
    }

    const BlockSpec& spec() const noexcept { return spec_; }
    const std::string& site() const noexcept { return site_; }
    ConvBn& conv1() { return conv1_; }
    ConvBn& conv2() { return conv2_; }
    std::optional<ConvBn>& shortcut() { return shortcut_; }

    Var forward(Tape& tape, Var x, const SkipBinding& skip, bool training) {
        const auto channels = tape.value(x).dim(1);
        if (channels != spec_.in_channels) {
            throw DimensionError(site_ + " expects " + std::to_string(spec_.in_channels) + " channels, got " +
                                 std::to_string(channels));
        }
        Var tfd = ops::relu(conv1_.forward(tape, x, training));
        tfd = conv2_.forward(tape, tfd, training);
        const Var ipd = shortcut_ ? shortcut_->forward(tape, x, training) : x;
        Var y;
        if (skip.plain) {
            y = ops::add(tfd, ipd);
        } else if (skip.parameter != nullptr) {
            y = ada_skip(tfd, ipd, tape.parameter(*skip.parameter));
        } else {
            y = ada_skip(tfd, ipd, skip.constant);
        }
        return ops::relu(y);
    }

    void collect(std::vector<Parameter*>& out) {
        conv1_.collect(out);
        conv2_.collect(out);
        if (shortcut_) {
            shortcut_->collect(out);
        }
    }

  private:
    BlockSpec spec_;
    std::string site_;
    ConvBn conv1_;
    ConvBn conv2_;
    std::optional<ConvBn> shortcut_;
};

/// One skip site as reported by extract_skip_weights.
struct SkipWeight {
    std::string site;
    std::string parameter;  // empty for constants
    float value = 0.0f;
    bool trainable = false;
};

// ---------------------------------------------------------------------------
// Model

/// stem conv3x3+BN+relu -> residual stages -> global average pool -> dense -> logits.
class Model {
  public:
    explicit Model(ModelConfig config) : config_(std::move(config)) {
        config_.validate();
        Rng rng(mix_seed(config_.seed, 0));
        stem_ = ConvBn("stem", config_.in_channels, config_.stem_channels, 3, 1, rng);
        for (std::size_t s = 0; s < config_.stages.size(); ++s) {
            for (std::size_t b = 0; b < config_.stages[s].size(); ++b) {
                const std::string site = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
                blocks_.emplace_back(config_.stages[s][b], site, rng);
            }
        }
        const std::size_t features = config_.output_channels();
        dense_weight_ = Parameter("head.dense.weight",
                                  detail::he_uniform({features, config_.num_classes}, features, rng));
        dense_bias_ = Parameter("head.dense.bias", Tensor({config_.num_classes}, 0.0f));
        allocate_skip_weights();
    }

    const ModelConfig& config() const noexcept { return config_; }
    std::span<ResidualBlock> blocks() noexcept { return blocks_; }
    std::size_t site_count() const noexcept { return blocks_.size(); }

    /// Records the forward pass on `tape` and returns the logits [N x classes].
    Var forward(Tape& tape, const Tensor& images, bool training) {
        if (images.rank() != 4 || images.dim(1) != config_.in_channels) {
            throw DimensionError("model expects N x " + std::to_string(config_.in_channels) +
                                 " x H x W images, got " + shape_string(images.shape()));
        }
        Var h = ops::relu(stem_.forward(tape, tape.constant(images), training));
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            h = blocks_[i].forward(tape, h, binding(i), training);
        }
        h = ops::global_avg_pool(h);
        h = ops::matmul(h, tape.parameter(dense_weight_));
        return ops::add_bias(h, tape.parameter(dense_bias_));
    }

    /// Inference-mode logits, evaluated in chunks without recording gradients.
    Tensor predict(const Tensor& images, std::size_t chunk = 256) {
        const std::size_t n = images.dim(0);
        const std::size_t per = images.size() / n;
        Tensor logits({n, config_.num_classes});
        for (std::size_t start = 0; start < n; start += chunk) {
            const std::size_t count = std::min(chunk, n - start);
            Shape shape = images.shape();
            shape[0] = count;
            const auto first = images.values().begin() + static_cast<std::ptrdiff_t>(start * per);
            Tensor part(shape, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(count * per)));
            Tape tape;
            tape.set_grad_enabled(false);
            const Tensor& out = tape.value(forward(tape, part, false));
            std::copy(out.data().begin(), out.data().end(),
                      logits.data().begin() + static_cast<std::ptrdiff_t>(start * config_.num_classes));
        }
        return logits;
    }

    /// Every named tensor in architectural order, including batch-norm running statistics.
    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        stem_.collect(out);
        for (auto& block : blocks_) {
            block.collect(out);
        }
        out.push_back(&dense_weight_);
        out.push_back(&dense_bias_);
        for (auto& p : skip_params_) {
            out.push_back(&p);
        }
        return out;
    }

    std::vector<Parameter*> trainable_parameters() {
        std::vector<Parameter*> out;
        for (Parameter* p : parameters()) {
            if (p->trainable) {
                out.push_back(p);
            }
        }
        return out;
    }

    /// The trainable skip weights (none in fixed mode or for the plain build).
    std::vector<Parameter*> skip_parameters() {
        std::vector<Parameter*> out;
        for (auto& p : skip_params_) {
            out.push_back(&p);
        }
        return out;
    }

    Parameter* find_parameter(std::string_view name) {
        for (Parameter* p : parameters()) {
            if (p->name == name) {
                return p;
            }
        }
        return nullptr;
    }

    /// Skip weight at every site, in architectural order.
    std::vector<SkipWeight> skip_weights() const {
        std::vector<SkipWeight> out;
        out.reserve(blocks_.size());
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            SkipWeight w{blocks_[i].site(), {}, 1.0f, false};
            if (!config_.plain_residual) {
                if (const auto idx = site_param_[i]) {
                    w.parameter = skip_params_[*idx].name;
                    w.value = skip_params_[*idx].value[0];
                    w.trainable = true;
                } else {
                    w.value = config_.skip_mode.fixed_value;
                }
            }
            out.push_back(std::move(w));
        }
        return out;
    }

  private:
    void allocate_skip_weights() {
        site_param_.assign(blocks_.size(), std::nullopt);
        if (config_.plain_residual || !config_.skip_mode.trainable()) {
            return;
        }
        const auto add = [&](std::string name) {
            skip_params_.emplace_back(std::move(name), Tensor::scalar(config_.initial_skip));
            return skip_params_.size() - 1;
        };
        switch (config_.skip_mode.kind) {
        case SkipMode::Kind::unified: {
            const auto idx = add("skip_weight");
            site_param_.assign(blocks_.size(), idx);
            break;
        }
        case SkipMode::Kind::per_type: {
            std::optional<std::size_t> identity, projection;
            for (std::size_t i = 0; i < blocks_.size(); ++i) {
                auto& slot = blocks_[i].spec().kind == BlockKind::identity ? identity : projection;
                if (!slot) {
                    slot = add(std::string("skip_weight.") + to_string(blocks_[i].spec().kind));
                }
                site_param_[i] = slot;
            }
            break;
        }
        case SkipMode::Kind::per_block:
            for (std::size_t i = 0; i < blocks_.size(); ++i) {
                site_param_[i] = add(blocks_[i].site() + ".skip_weight");
            }
            break;
        case SkipMode::Kind::fixed: break;
        }
    }

    SkipBinding binding(std::size_t site) {
        if (config_.plain_residual) {
            return {nullptr, 1.0f, true};
        }
        if (const auto idx = site_param_[site]) {
            return {&skip_params_[*idx], 0.0f, false};
        }
        return {nullptr, config_.skip_mode.fixed_value, false};
    }

    ModelConfig config_;
    ConvBn stem_;
    std::vector<ResidualBlock> blocks_;
    Parameter dense_weight_;
    Parameter dense_bias_;
    std::vector<Parameter> skip_params_;
    std::vector<std::optional<std::size_t>> site_param_;
};

inline Model build_model(const ModelConfig& config) { return Model(config); }

/// Name and current value of the skip weight at each site, in architectural order.
inline std::vector<SkipWeight> extract_skip_weights(const Model& model) { return model.skip_weights(); }

} // namespace adaresnet
