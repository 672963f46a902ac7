#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "adaresnet/analysis.hpp"
#include "adaresnet/autograd.hpp"
#include "adaresnet/checkpoint.hpp"
#include "adaresnet/data.hpp"
#include "adaresnet/errors.hpp"
#include "adaresnet/nn.hpp"
#include "adaresnet/optim.hpp"

namespace adaresnet {

struct TrainConfig {
    std::string dataset = "mnist";
    std::size_t train_subsample = 5000;  // 0 = whole split
    std::size_t test_subsample = 1000;   // 0 = whole split
    std::size_t epochs = 5;
    std::size_t batch_size = 64;
    OptimizerKind optimizer = OptimizerKind::adam;
    float lr = 0.001f;
    SkipMode mode = SkipMode::per_block();
    float initial_skip = 0.0f;
    std::uint64_t seed = 1;
    bool plain_residual = false;
    /// Write wall-clock seconds into metrics.csv. Off keeps the file byte-reproducible.
    bool record_time = false;
    std::string data_dir;
    std::string out_dir;

    void validate() const {
        if (epochs < 1) {
            throw ConfigError("epochs must be at least 1");
        }
        if (batch_size < 1) {
            throw ConfigError("batch size must be at least 1");
        }
        if (!(lr > 0.0f) || !std::isfinite(lr)) {
            throw ConfigError("learning rate must be positive");
        }
        if (dataset != "mnist" && dataset != "cifar10") {
            throw ConfigError("unknown dataset '" + dataset + "' (expected mnist or cifar10)");
        }
    }
};

/// Everything that influences results; output location is deliberately absent.
inline nlohmann::json to_json(const TrainConfig& c) {
    return nlohmann::json{{"dataset", c.dataset},
                          {"train_subsample", c.train_subsample},
                          {"test_subsample", c.test_subsample},
                          {"epochs", c.epochs},
                          {"batch_size", c.batch_size},
                          {"optimizer", to_string(c.optimizer)},
                          {"lr", c.lr},
                          {"mode", c.plain_residual ? std::string("plain") : c.mode.to_string()},
                          {"initial_skip", c.initial_skip},
                          {"seed", c.seed},
                          {"record_time", c.record_time}};
}

struct MetricsRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    double seconds = 0.0;
};

inline constexpr const char* kMetricsHeader = "epoch,train_loss,train_acc,test_acc,seconds";

inline std::string format_metrics_row(const MetricsRecord& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.3f", r.epoch, r.train_loss, r.train_acc, r.test_acc,
                  r.seconds);
    return buf;
}

/// Final skip weights: one row per site, one column per round.
struct WeightReport {
    std::vector<std::string> sites;
    std::vector<std::vector<double>> rounds;  // rounds[r][site]

    void add_round(const std::vector<SkipWeight>& weights) {
        if (sites.empty()) {
            for (const auto& w : weights) {
                sites.push_back(w.site);
            }
        } else if (weights.size() != sites.size()) {
            throw ConfigError("weight report rounds have different site counts");
        }
        std::vector<double> column;
        for (const auto& w : weights) {
            column.push_back(w.value);
        }
        rounds.push_back(std::move(column));
    }

    std::string to_csv() const {
        std::string out = "site";
        for (std::size_t r = 0; r < rounds.size(); ++r) {
            out += ",round_" + std::to_string(r + 1);
        }
        out += "\n";
        char buf[48];
        for (std::size_t s = 0; s < sites.size(); ++s) {
            out += sites[s];
            for (const auto& column : rounds) {
                std::snprintf(buf, sizeof buf, ",%.8f", column[s]);
                out += buf;
            }
            out += "\n";
        }
        return out;
    }

    WeightMatrix to_matrix(std::string name) const {
        WeightMatrix m{std::move(name), sites, {}};
        for (std::size_t s = 0; s < sites.size(); ++s) {
            std::vector<double> row;
            for (const auto& column : rounds) {
                row.push_back(column[s]);
            }
            m.values.push_back(std::move(row));
        }
        return m;
    }
};

inline std::string sha256_hex(std::span<const std::filesystem::path> files) {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    for (const auto& f : files) {
        const auto bytes = detail::read_file_bytes(f);
        EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", digest[i]);
        hex += buf;
    }
    return hex;
}

/// Train and test splits plus the content hash of the files they came from.
struct LoadedData {
    Dataset train;
    Dataset test;
    std::string sha256;
};

inline LoadedData load_experiment_data(const std::string& dataset, const std::filesystem::path& data_dir) {
    const auto files = locate_dataset(dataset, data_dir);
    auto [train, test] = load_dataset(dataset, files);
    std::vector<std::filesystem::path> all = files.train;
    all.insert(all.end(), files.test.begin(), files.test.end());
    return {std::move(train), std::move(test), sha256_hex(all)};
}

/// AdaResNet-mini sized for the dataset, with seeds derived from the run seed.
inline ModelConfig model_config_for(const TrainConfig& config, const Dataset& data) {
    ModelConfig mc = ModelConfig::mini(data.images.dim(1), data.images.dim(2), data.images.dim(3), data.num_classes);
    mc.skip_mode = config.mode;
    mc.initial_skip = config.initial_skip;
    mc.plain_residual = config.plain_residual;
    mc.seed = mix_seed(config.seed, 1);
    return mc;
}

struct TrainResult {
    Model model;
    std::vector<MetricsRecord> metrics;
    std::vector<SkipWeight> weights;
};

inline double accuracy(const Tensor& logits, std::span<const std::uint8_t> labels) {
    const std::size_t k = logits.dim(1);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const float* row = logits.data().data() + i * k;
        const auto pred = static_cast<std::size_t>(std::max_element(row, row + k) - row);
        correct += pred == labels[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw ParseError(ParseErrorKind::io, "cannot write " + path.string());
    }
    out << text;
}

inline std::string summary_text(const TrainConfig& config, const std::string& data_hash,
                                 const std::vector<MetricsRecord>& metrics, const std::vector<SkipWeight>& weights,
                                 double wall_seconds) {
    std::ostringstream out;
    out << "config: " << to_json(config).dump() << "\n";
    out << "dataset_sha256: " << data_hash << "\n";
    if (!metrics.empty()) {
        const auto& last = metrics.back();
        char buf[128];
        std::snprintf(buf, sizeof buf, "final: train_loss=%.6f train_acc=%.6f test_acc=%.6f\n", last.train_loss,
                      last.train_acc, last.test_acc);
        out << buf;
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "wall_seconds: %.3f\n", wall_seconds);
    out << buf;
    out << "skip_weights:\n";
    for (const auto& w : weights) {
        std::snprintf(buf, sizeof buf, "%.8f", w.value);
        out << "  " << w.site << " = " << buf << (w.trainable ? "" : " (fixed)") << "\n";
    }
    return out.str();
}

} // namespace detail

/// The training loop over pre-loaded splits: per batch forward, cross-entropy,
/// backward and an optimizer step; per epoch the running train metrics and the
/// test accuracy. With `config.out_dir` set, metrics.csv is appended after each
/// epoch and weights.csv, checkpoint.bin, config.json and summary.txt are
/// written at the end.
inline TrainResult train(const TrainConfig& config, const Dataset& train_split, const Dataset& test_split,
                         const std::string& data_hash = {}, std::ostream* log = nullptr) {
    config.validate();
    const auto started = std::chrono::steady_clock::now();
    const auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    };

    const Dataset train_set = config.train_subsample == 0
                                  ? train_split
                                  : subsample(train_split, config.train_subsample, mix_seed(config.seed, 2));
    const Dataset test_set = config.test_subsample == 0
                                 ? test_split
                                 : subsample(test_split, config.test_subsample, mix_seed(config.seed, 3));

    TrainResult result{build_model(model_config_for(config, train_set)), {}, {}};
    Model& model = result.model;
    Optimizer optimizer(config.optimizer, config.lr);
    const auto params = model.trainable_parameters();

    const nlohmann::json metadata{{"train_config", to_json(config)}, {"dataset_sha256", data_hash}};
    std::optional<std::ofstream> metrics_file;
    std::filesystem::path out_dir;
    if (!config.out_dir.empty()) {
        out_dir = config.out_dir;
        std::filesystem::create_directories(out_dir);
        detail::write_text(out_dir / "config.json", metadata.dump(2) + "\n");
        metrics_file.emplace(out_dir / "metrics.csv", std::ios::trunc);
        *metrics_file << kMetricsHeader << "\n" << std::flush;
    }

    const std::uint64_t shuffle_seed = mix_seed(config.seed, 4);
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        double loss_sum = 0.0;
        std::size_t correct_weighted = 0;
        const auto plan = batch_indices(train_set.size(), config.batch_size, shuffle_seed, epoch, true);
        for (std::size_t b = 0; b < plan.size(); ++b) {
            const Batch batch = make_batch(train_set, plan[b]);
            Tape tape;
            const Var logits = model.forward(tape, batch.images, true);
            const Var loss = ops::softmax_cross_entropy(logits, batch.targets);
            const float loss_value = tape.value(loss)[0];
            const auto diverge = [&] {
                if (metrics_file) {
                    detail::write_text(out_dir / "summary.txt",
                                       "diverged: non-finite loss or gradient at epoch " + std::to_string(epoch) +
                                           ", batch " + std::to_string(b + 1) + "\n");
                }
                return DivergenceError(epoch, b + 1);
            };
            if (!std::isfinite(loss_value)) {
                throw diverge();
            }
            tape.backward(loss);
            try {
                optimizer.step(params);
            } catch (const NumericError&) {
                throw diverge();
            }
            loss_sum += static_cast<double>(loss_value) * static_cast<double>(batch.labels.size());
            const double acc = accuracy(tape.value(logits), batch.labels);
            correct_weighted += static_cast<std::size_t>(std::lround(acc * static_cast<double>(batch.labels.size())));
        }
        MetricsRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(train_set.size());
        rec.train_acc = static_cast<double>(correct_weighted) / static_cast<double>(train_set.size());
        rec.test_acc = accuracy(model.predict(test_set.images), test_set.labels);
        rec.seconds = config.record_time ? elapsed() : 0.0;
        result.metrics.push_back(rec);
        if (metrics_file) {
            *metrics_file << format_metrics_row(rec) << "\n" << std::flush;
        }
        if (log != nullptr) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "[%s seed=%llu] epoch %zu/%zu loss=%.4f train_acc=%.4f test_acc=%.4f (%.1fs)\n",
                          config.plain_residual ? "plain" : config.mode.to_string().c_str(),
                          static_cast<unsigned long long>(config.seed), epoch, config.epochs, rec.train_loss,
                          rec.train_acc, rec.test_acc, elapsed());
            *log << buf << std::flush;
        }
    }

    result.weights = extract_skip_weights(model);
    if (metrics_file) {
        metrics_file->close();
        WeightReport report;
        report.add_round(result.weights);
        detail::write_text(out_dir / "weights.csv", report.to_csv());
        save_checkpoint(out_dir / "checkpoint.bin", model, metadata);
        detail::write_text(out_dir / "summary.txt",
                           detail::summary_text(config, data_hash, result.metrics, result.weights, elapsed()));
    }
    return result;
}

/// Loads the dataset named in the config from its data directory, then trains.
inline TrainResult train(const TrainConfig& config, std::ostream* log = nullptr) {
    config.validate();
    const auto data = load_experiment_data(config.dataset, resolve_data_dir(config.data_dir));
    return train(config, data.train, data.test, data.sha256, log);
}

// ---------------------------------------------------------------------------
// Mode comparison

/// One arm of a comparison: a skip mode, or the plain-addition baseline build.
struct ModeSpec {
    SkipMode mode;
    bool plain = false;

    std::string name() const { return plain ? "plain" : mode.to_string(); }
    std::string slug() const {
        std::string s = name();
        for (char& c : s) {
            if (c == ':') {
                c = '-';
            }
        }
        return s;
    }
    bool is_baseline() const { return plain || (mode.kind == SkipMode::Kind::fixed && mode.fixed_value == 1.0f); }

    static ModeSpec parse(std::string_view text) {
        if (text == "plain") {
            return {SkipMode::fixed(1.0f), true};
        }
        return {SkipMode::parse(text), false};
    }
};

struct ModeRuns {
    ModeSpec spec;
    std::vector<std::vector<MetricsRecord>> metrics;  // per round
    WeightReport weights;

    double final_test_accuracy(std::size_t round) const { return metrics.at(round).back().test_acc; }
    double mean_final_test_accuracy() const {
        double acc = 0.0;
        for (std::size_t r = 0; r < metrics.size(); ++r) {
            acc += final_test_accuracy(r);
        }
        return acc / static_cast<double>(metrics.size());
    }
};

struct Comparison {
    std::vector<ModeRuns> modes;

    const ModeRuns* baseline() const {
        for (const auto& m : modes) {
            if (!m.spec.plain && m.spec.is_baseline()) {
                return &m;
            }
        }
        return nullptr;
    }

    /// (acc_mode - acc_baseline) / acc_baseline on mean final test accuracy; empty without a fixed:1 arm.
    std::optional<double> improvement(const ModeRuns& m) const {
        const ModeRuns* base = baseline();
        if (base == nullptr) {
            return std::nullopt;
        }
        const double b = base->mean_final_test_accuracy();
        return (m.mean_final_test_accuracy() - b) / b;
    }
};

inline std::string comparison_summary(const Comparison& cmp, const TrainConfig& base, std::size_t rounds,
                                      const std::string& data_hash) {
    std::ostringstream out;
    out << "config: " << to_json(base).dump() << "\n";
    out << "dataset_sha256: " << data_hash << "\n";
    out << "rounds: " << rounds << " (seed = base seed + round)\n\n";
    char buf[160];
    out << "mode,round,seed,final_test_acc\n";
    for (const auto& m : cmp.modes) {
        for (std::size_t r = 0; r < m.metrics.size(); ++r) {
            std::snprintf(buf, sizeof buf, "%s,%zu,%llu,%.6f\n", m.spec.name().c_str(), r + 1,
                          static_cast<unsigned long long>(base.seed + r + 1), m.final_test_accuracy(r));
            out << buf;
        }
    }
    out << "\nmode,mean_final_test_acc,improvement_over_fixed_1\n";
    for (const auto& m : cmp.modes) {
        const auto imp = cmp.improvement(m);
        if (imp) {
            std::snprintf(buf, sizeof buf, "%s,%.6f,%.2f%%\n", m.spec.name().c_str(), m.mean_final_test_accuracy(),
                          *imp * 100.0);
        } else {
            std::snprintf(buf, sizeof buf, "%s,%.6f,n/a\n", m.spec.name().c_str(), m.mean_final_test_accuracy());
        }
        out << buf;
    }
    return out.str();
}

/// Trains every mode for `rounds` rounds (seed = base.seed + r). Under
/// base.out_dir writes <mode>/round_<r>/..., <mode>/weights.csv,
/// <mode>/test_accuracy.csv and summary.txt.
inline Comparison compare_modes(const TrainConfig& base, std::span<const ModeSpec> modes, std::size_t rounds,
                                const Dataset& train_split, const Dataset& test_split,
                                const std::string& data_hash = {}, std::ostream* log = nullptr) {
    if (modes.empty()) {
        throw ConfigError("compare needs at least one mode");
    }
    if (rounds < 1) {
        throw ConfigError("compare needs at least one round");
    }
    Comparison cmp;
    const std::filesystem::path root = base.out_dir;
    for (const ModeSpec& spec : modes) {
        ModeRuns runs{spec, {}, {}};
        for (std::size_t r = 1; r <= rounds; ++r) {
            TrainConfig cfg = base;
            cfg.mode = spec.mode;
            cfg.plain_residual = spec.plain;
            cfg.seed = base.seed + r;
            cfg.out_dir = root.empty() ? std::string() : (root / spec.slug() / ("round_" + std::to_string(r))).string();
            auto res = train(cfg, train_split, test_split, data_hash, log);
            runs.metrics.push_back(std::move(res.metrics));
            runs.weights.add_round(res.weights);
        }
        if (!root.empty()) {
            const auto dir = root / spec.slug();
            detail::write_text(dir / "weights.csv", runs.weights.to_csv());
            std::string acc = "epoch";
            for (std::size_t r = 1; r <= rounds; ++r) {
                acc += ",round_" + std::to_string(r);
            }
            acc += "\n";
            char buf[32];
            for (std::size_t e = 0; e < base.epochs; ++e) {
                acc += std::to_string(e + 1);
                for (const auto& m : runs.metrics) {
                    std::snprintf(buf, sizeof buf, ",%.6f", m[e].test_acc);
                    acc += buf;
                }
                acc += "\n";
            }
            detail::write_text(dir / "test_accuracy.csv", acc);
        }
        cmp.modes.push_back(std::move(runs));
    }
    if (!root.empty()) {
        detail::write_text(root / "summary.txt", comparison_summary(cmp, base, rounds, data_hash));
    }
    return cmp;
}

} // namespace adaresnet
