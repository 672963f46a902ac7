#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adaresnet/adaresnet.hpp"

using namespace adaresnet;

namespace {

struct RunFlags {
    std::string dataset = "mnist";
    std::string mode = "per-block";
    float init_weight = 0.0f;
    std::size_t epochs = 5;
    std::size_t batch_size = 64;
    float lr = 0.001f;
    std::string optimizer = "adam";
    std::uint64_t seed = 1;
    std::size_t subsample = 5000;
    std::size_t test_subsample = 1000;
    std::string data_dir;
    std::string out;
    bool plain = false;
    bool record_time = false;
    bool quiet = false;
};

void add_run_flags(CLI::App* app, RunFlags& f) {
    app->add_option("--dataset", f.dataset, "mnist or cifar10")->capture_default_str();
    app->add_option("--init-weight", f.init_weight, "Initial skip weight")->capture_default_str();
    app->add_option("--epochs", f.epochs)->capture_default_str();
    app->add_option("--batch-size", f.batch_size)->capture_default_str();
    app->add_option("--lr", f.lr, "Learning rate")->capture_default_str();
    app->add_option("--optimizer", f.optimizer, "sgd or adam")->capture_default_str();
    app->add_option("--seed", f.seed)->capture_default_str();
    app->add_option("--subsample", f.subsample, "Stratified training subset size (0 = all)")->capture_default_str();
    app->add_option("--test-subsample", f.test_subsample, "Stratified test subset size (0 = all)")
        ->capture_default_str();
    app->add_option("--data-dir", f.data_dir,
                    std::string("Dataset root (default: $") + kDataDirEnv + ", then ./data)");
    app->add_option("--out", f.out, "Output directory");
    app->add_flag("--record-time", f.record_time, "Write wall-clock seconds into metrics.csv");
    app->add_flag("-q,--quiet", f.quiet, "No per-epoch progress on stderr");
}

TrainConfig to_config(const RunFlags& f) {
    TrainConfig c;
    c.dataset = f.dataset;
    c.train_subsample = f.subsample;
    c.test_subsample = f.test_subsample;
    c.epochs = f.epochs;
    c.batch_size = f.batch_size;
    c.optimizer = parse_optimizer(f.optimizer);
    c.lr = f.lr;
    c.mode = f.plain ? SkipMode::fixed(1.0f) : SkipMode::parse(f.mode);
    c.initial_skip = f.init_weight;
    c.seed = f.seed;
    c.plain_residual = f.plain;
    c.record_time = f.record_time;
    c.data_dir = f.data_dir;
    c.out_dir = f.out;
    c.validate();
    return c;
}

void print_weights(const std::vector<SkipWeight>& weights) {
    std::printf("site,value,trainable\n");
    for (const auto& w : weights) {
        std::printf("%s,%.8f,%s\n", w.site.c_str(), w.value, w.trainable ? "true" : "false");
    }
}

int run_train(const RunFlags& flags) {
    const TrainConfig config = to_config(flags);
    const auto result = train(config, flags.quiet ? nullptr : &std::cerr);
    const auto& last = result.metrics.back();
    std::printf("final train_loss=%.6f train_acc=%.6f test_acc=%.6f\n", last.train_loss, last.train_acc,
                last.test_acc);
    print_weights(result.weights);
    return 0;
}

int run_compare(const RunFlags& flags, const std::vector<std::string>& mode_names, std::size_t rounds) {
    const TrainConfig base = to_config(flags);
    std::vector<ModeSpec> modes;
    for (const auto& name : mode_names) {
        modes.push_back(ModeSpec::parse(name));
    }
    const auto data = load_experiment_data(base.dataset, resolve_data_dir(base.data_dir));
    const auto cmp = compare_modes(base, modes, rounds, data.train, data.test, data.sha256,
                                   flags.quiet ? nullptr : &std::cerr);
    std::cout << comparison_summary(cmp, base, rounds, data.sha256);
    return 0;
}

int run_weights(const std::string& checkpoint) {
    const auto ck = load_checkpoint(checkpoint);
    print_weights(extract_skip_weights(ck.model));
    return 0;
}

int run_analyze(const std::string& a, const std::string& b) {
    std::cout << format_report(variance_report(load_weight_matrix(a), load_weight_matrix(b)));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive-skip residual networks: training, mode comparison and skip-weight analysis"};
    app.require_subcommand(1);

    RunFlags train_flags;
    auto* train_cmd = app.add_subcommand("train", "Train one model and write metrics, weights and a checkpoint");
    add_run_flags(train_cmd, train_flags);
    train_cmd->add_option("--mode", train_flags.mode, "fixed:<c>, unified, per-type or per-block")
        ->capture_default_str();
    train_cmd->add_flag("--plain-residual", train_flags.plain, "Plain addition on the skip path (no weight)");

    RunFlags compare_flags;
    std::vector<std::string> compare_modes_list{"fixed:1", "fixed:2", "unified", "per-type", "per-block"};
    std::size_t rounds = 3;
    auto* compare_cmd = app.add_subcommand("compare", "Train several skip modes for several rounds");
    add_run_flags(compare_cmd, compare_flags);
    compare_cmd->add_option("--mode,--modes", compare_modes_list, "Modes to compare (\"plain\" for the addition build)")
        ->delimiter(',')
        ->capture_default_str();
    compare_cmd->add_option("--rounds", rounds)->capture_default_str();

    std::string checkpoint;
    auto* weights_cmd = app.add_subcommand("weights", "Print the skip weights stored in a checkpoint");
    weights_cmd->add_option("checkpoint", checkpoint)->required();

    std::string group_a;
    std::string group_b;
    auto* analyze_cmd = app.add_subcommand("analyze", "Within/between-group variance of two weight tables");
    analyze_cmd->add_option("a", group_a, "weights.csv path or paper-table-1 / paper-table-2")->required();
    analyze_cmd->add_option("b", group_b, "weights.csv path or paper-table-1 / paper-table-2")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd) {
            return run_train(train_flags);
        }
        if (*compare_cmd) {
            return run_compare(compare_flags, compare_modes_list, rounds);
        }
        if (*weights_cmd) {
            return run_weights(checkpoint);
        }
        return run_analyze(group_a, group_b);
    } catch (const DivergenceError& e) {
        std::cerr << "diverged: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
