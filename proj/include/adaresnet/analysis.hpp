#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "adaresnet/errors.hpp"

namespace adaresnet {

/// Final skip weights of one group (dataset): sites x rounds.
struct WeightMatrix {
    std::string name;
    std::vector<std::string> sites;
    std::vector<std::vector<double>> values;  // values[site][round]

    std::size_t site_count() const noexcept { return values.size(); }
    std::size_t round_count() const noexcept { return values.empty() ? 0 : values.front().size(); }
};

namespace detail {

inline double population_variance(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) {
        mean += x;
    }
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) {
        var += (x - mean) * (x - mean);
    }
    return var / static_cast<double>(xs.size());
}

inline std::vector<double> absolute(const std::vector<double>& xs) {
    std::vector<double> out(xs.size());
    std::transform(xs.begin(), xs.end(), out.begin(), [](double x) { return std::abs(x); });
    return out;
}

inline void check_matrix(const WeightMatrix& m) {
    if (m.values.empty()) {
        throw ConfigError("weight matrix '" + m.name + "' has no sites");
    }
    for (const auto& row : m.values) {
        if (row.size() != m.round_count()) {
            throw ConfigError("weight matrix '" + m.name + "' has ragged rows");
        }
    }
}

} // namespace detail

/// Mean over sites of the across-rounds population variance of |w|.
inline double within_group_variance(const WeightMatrix& m) {
    detail::check_matrix(m);
    if (m.round_count() < 2) {
        throw ConfigError("within-group variance of '" + m.name + "' needs at least 2 rounds, got " +
                          std::to_string(m.round_count()));
    }
    double total = 0.0;
    for (const auto& row : m.values) {
        total += detail::population_variance(detail::absolute(row));
    }
    return total / static_cast<double>(m.site_count());
}

/// Per-site mean of |w| across rounds.
inline std::vector<double> site_mean_abs(const WeightMatrix& m) {
    detail::check_matrix(m);
    std::vector<double> means;
    for (const auto& row : m.values) {
        double acc = 0.0;
        for (double x : row) {
            acc += std::abs(x);
        }
        means.push_back(acc / static_cast<double>(row.size()));
    }
    return means;
}

/// Mean over sites of the population variance of the two groups' per-site mean |w|.
inline double between_group_variance(const WeightMatrix& a, const WeightMatrix& b) {
    if (a.site_count() != b.site_count()) {
        throw ConfigError("groups '" + a.name + "' and '" + b.name + "' have " + std::to_string(a.site_count()) +
                          " and " + std::to_string(b.site_count()) + " sites");
    }
    const auto ma = site_mean_abs(a);
    const auto mb = site_mean_abs(b);
    double total = 0.0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
        total += detail::population_variance({ma[i], mb[i]});
    }
    return total / static_cast<double>(ma.size());
}

struct VarianceReport {
    std::string group_a;
    std::string group_b;
    double within_a = 0.0;
    double within_b = 0.0;
    double between = 0.0;
    std::vector<std::string> sites;
    std::vector<double> mean_abs_a;
    std::vector<double> mean_abs_b;

    bool between_exceeds_within() const { return between > std::max(within_a, within_b); }
};

inline VarianceReport variance_report(const WeightMatrix& a, const WeightMatrix& b) {
    VarianceReport r;
    r.group_a = a.name;
    r.group_b = b.name;
    r.within_a = within_group_variance(a);
    r.within_b = within_group_variance(b);
    r.between = between_group_variance(a, b);
    r.sites = a.sites;
    r.mean_abs_a = site_mean_abs(a);
    r.mean_abs_b = site_mean_abs(b);
    return r;
}

inline std::string format_report(const VarianceReport& r) {
    std::ostringstream out;
    char buf[64];
    const auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.7f", v);
        return std::string(buf);
    };
    out << "group_a: " << r.group_a << "\n";
    out << "group_b: " << r.group_b << "\n";
    out << "within_group_variance." << r.group_a << ": " << num(r.within_a) << "\n";
    out << "within_group_variance." << r.group_b << ": " << num(r.within_b) << "\n";
    out << "between_group_variance: " << num(r.between) << "\n";
    out << "between_exceeds_within: " << (r.between_exceeds_within() ? "true" : "false") << "\n";
    out << "site,mean_abs." << r.group_a << ",mean_abs." << r.group_b << "\n";
    for (std::size_t i = 0; i < r.sites.size(); ++i) {
        out << r.sites[i] << "," << num(r.mean_abs_a[i]) << "," << num(r.mean_abs_b[i]) << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// weights.csv

/// Parses "site,round_1,...,round_R" CSV text; lines starting with '#' are skipped.
inline WeightMatrix parse_weights_csv(std::string_view text, std::string name) {
    WeightMatrix m;
    m.name = std::move(name);
    std::istringstream in{std::string(text)};
    std::string line;
    bool header_seen = false;
    std::size_t columns = 0;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty() || line.front() == '#') {
            continue;
        }
        std::vector<std::string> cells;
        std::istringstream row(line);
        std::string cell;
        while (std::getline(row, cell, ',')) {
            cells.push_back(cell);
        }
        if (!header_seen) {
            if (cells.empty() || cells.front() != "site") {
                throw ParseError(ParseErrorKind::bad_format, "weights CSV must start with a 'site,...' header");
            }
            columns = cells.size();
            header_seen = true;
            continue;
        }
        if (cells.size() != columns) {
            throw ParseError(ParseErrorKind::bad_format,
                             "weights CSV line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                                 " cells, header has " + std::to_string(columns));
        }
        m.sites.push_back(cells.front());
        std::vector<double> vals;
        for (std::size_t i = 1; i < cells.size(); ++i) {
            try {
                std::size_t used = 0;
                vals.push_back(std::stod(cells[i], &used));
                if (used != cells[i].size()) {
                    throw std::invalid_argument(cells[i]);
                }
            } catch (const std::exception&) {
                throw ParseError(ParseErrorKind::bad_format,
                                 "weights CSV line " + std::to_string(line_no) + ": '" + cells[i] + "' is not a number");
            }
        }
        m.values.push_back(std::move(vals));
    }
    if (!header_seen || m.values.empty()) {
        throw ParseError(ParseErrorKind::bad_format, "weights CSV has no data rows");
    }
    return m;
}

inline WeightMatrix read_weights_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError(ParseErrorKind::io, "cannot open " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_weights_csv(ss.str(), path.string());
}

// ---------------------------------------------------------------------------
// Published reference tables: 8 skip sites x 3 rounds of a ResNet-50 backbone.

/// Trained on CIFAR-10.
inline WeightMatrix reference_table_cifar10() {
    return {"paper-table-1",
            {"layer_1", "layer_2", "layer_3", "layer_4", "layer_5", "layer_6", "layer_7", "layer_8"},
            {{-0.28722298, 0.27989703, 0.32219923},
             {-0.41371468, -0.28776032, -0.30848},
             {-0.37947246, -0.3051696, -0.5491747},
             {0.8734257, 1.1673123, 0.84171796},
             {-1.7672663, -1.9361044, -1.9803141},
             {1.7821076, 1.7983766, 2.0427594},
             {-1.1800854, 1.2597568, 1.1798627},
             {-0.82326496, -0.8402289, -0.8131428}}};
}

/// Trained on MNIST.
inline WeightMatrix reference_table_mnist() {
    return {"paper-table-2",
            {"layer_1", "layer_2", "layer_3", "layer_4", "layer_5", "layer_6", "layer_7", "layer_8"},
            {{0.44887054, 0.4484792, -0.5003674},
             {-0.34602356, -0.35169616, -0.31584582},
             {-0.74334604, -0.5807008, 0.8818225},
             {0.5266892, 0.3835334, 0.43830293},
             {-3.0067017, -2.7609563, -2.7376952},
             {2.1653237, 2.065729, 2.4824123},
             {-2.8167214, -2.9216428, 2.5657778},
             {-0.8365008, -0.94025135, -0.9289533}}};
}

/// A fixture name ("paper-table-1", "paper-table-2") or a path to a weights.csv.
inline WeightMatrix load_weight_matrix(const std::string& source) {
    if (source == "paper-table-1") {
        return reference_table_cifar10();
    }
    if (source == "paper-table-2") {
        return reference_table_mnist();
    }
    return read_weights_csv(source);
}

} // namespace adaresnet
