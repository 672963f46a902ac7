#include <gtest/gtest.h>

#include "adaresnet/analysis.hpp"
#include "support.hpp"

using namespace adaresnet;
using testing_support::TempDir;

namespace {

WeightMatrix matrix(std::string name, std::vector<std::vector<double>> values) {
    WeightMatrix m{std::move(name), {}, std::move(values)};
    for (std::size_t i = 0; i < m.values.size(); ++i) m.sites.push_back("s" + std::to_string(i + 1));
    return m;
}

WeightMatrix random_matrix(std::uint64_t seed, std::size_t sites, std::size_t rounds) {
    Rng rng(seed);
    std::vector<std::vector<double>> v(sites, std::vector<double>(rounds));
    for (auto& row : v) {
        for (double& x : row) x = rng.uniform(-3.0f, 3.0f);
    }
    return matrix("r" + std::to_string(seed), v);
}

} // namespace

TEST(Within, IdenticalRoundsGiveZero) {
    EXPECT_EQ(within_group_variance(matrix("a", {{0.5, 0.5, 0.5}, {-2, -2, -2}})), 0.0);
}

TEST(Within, UsesAbsoluteValuesAndPopulationVariance) {
    // |w| = {1, 3}: variance ((1-2)^2 + (3-2)^2) / 2 = 1; sign flips do not count.
    EXPECT_DOUBLE_EQ(within_group_variance(matrix("a", {{-1, 3}})), 1.0);
    EXPECT_DOUBLE_EQ(within_group_variance(matrix("a", {{-1, 1}, {-1, 3}})), 0.5);
}

TEST(Within, PublishedTables) {
    EXPECT_NEAR(within_group_variance(reference_table_cifar10()), 0.0074349, 1e-7);
    EXPECT_NEAR(within_group_variance(reference_table_mnist()), 0.0112865, 1e-7);
}

TEST(Within, FewerThanTwoRoundsIsAnError) {
    EXPECT_THROW(within_group_variance(matrix("a", {{1.0}})), ConfigError);
    EXPECT_THROW(within_group_variance(matrix("a", {})), ConfigError);
    EXPECT_THROW(within_group_variance(matrix("a", {{1, 2}, {1}})), ConfigError);
}

TEST(Between, Examples) {
    EXPECT_DOUBLE_EQ(between_group_variance(matrix("a", {{1, 1}}), matrix("b", {{3, -3}})), 1.0);
    const auto t = reference_table_mnist();
    EXPECT_EQ(between_group_variance(t, t), 0.0);
    EXPECT_NEAR(between_group_variance(reference_table_cifar10(), reference_table_mnist()), 0.1204970, 1e-7);
}

TEST(Between, SiteCountMismatchIsAnError) {
    EXPECT_THROW(between_group_variance(matrix("a", {{1, 2}}), matrix("b", {{1, 2}, {3, 4}})), ConfigError);
}

TEST(Report, PublishedTablesBetweenExceedsWithin) {
    const auto r = variance_report(reference_table_cifar10(), reference_table_mnist());
    EXPECT_NEAR(r.between, 0.1205, 1e-4);
    EXPECT_NEAR(r.within_a, 0.0074, 1e-4);
    EXPECT_NEAR(r.within_b, 0.0113, 1e-4);
    EXPECT_TRUE(r.between_exceeds_within());
    const auto text = format_report(r);
    EXPECT_NE(text.find("between_group_variance: 0.1204970"), std::string::npos) << text;
    EXPECT_NE(text.find("within_group_variance.paper-table-1: 0.0074349"), std::string::npos) << text;
    EXPECT_NE(text.find("between_exceeds_within: true"), std::string::npos) << text;
}

TEST(AnalysisProperty, ScalingByCScalesVariancesByCSquared) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto a = random_matrix(seed, 6, 3);
        auto b = random_matrix(seed + 100, 6, 3);
        const double c = 0.5 + static_cast<double>(seed) / 7.0;
        auto ca = a, cb = b;
        for (auto* m : {&ca, &cb}) {
            for (auto& row : m->values) {
                for (double& x : row) x *= c;
            }
        }
        EXPECT_NEAR(within_group_variance(ca), c * c * within_group_variance(a), 1e-9);
        EXPECT_NEAR(between_group_variance(ca, cb), c * c * between_group_variance(a, b), 1e-9);
    }
}

TEST(AnalysisProperty, SignFlipsChangeNothing) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto a = random_matrix(seed, 5, 4);
        const auto b = random_matrix(seed + 50, 5, 4);
        auto flipped = a;
        Rng rng(seed);
        for (auto& row : flipped.values) {
            for (double& x : row) {
                if (rng.below(2) == 1) x = -x;
            }
        }
        EXPECT_EQ(within_group_variance(flipped), within_group_variance(a));
        EXPECT_EQ(between_group_variance(flipped, b), between_group_variance(a, b));
    }
}

TEST(AnalysisProperty, BetweenIsSymmetricAndNonNegative) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto a = random_matrix(seed, 4, 3);
        const auto b = random_matrix(seed + 7, 4, 2);
        EXPECT_EQ(between_group_variance(a, b), between_group_variance(b, a));
        EXPECT_GE(between_group_variance(a, b), 0.0);
        EXPECT_GE(within_group_variance(a), 0.0);
    }
}

TEST(WeightsCsv, ParsesRoundColumns) {
    const auto m = parse_weights_csv("site,round_1,round_2\n# comment\nstage1.block1,0.5,-0.25\r\nstage1.block2,1,2\n",
                                     "g");
    EXPECT_EQ(m.sites, (std::vector<std::string>{"stage1.block1", "stage1.block2"}));
    EXPECT_EQ(m.values, (std::vector<std::vector<double>>{{0.5, -0.25}, {1, 2}}));
    EXPECT_DOUBLE_EQ(within_group_variance(m), (0.015625 + 0.25) / 2);
}

TEST(WeightsCsv, Errors) {
    for (const char* bad : {"", "name,round_1\na,1\n", "site,round_1\n", "site,round_1\na,1,2\n",
                            "site,round_1\na,x\n", "site,round_1\na,1.5q\n"}) {
        try {
            (void)parse_weights_csv(bad, "bad");
            ADD_FAILURE() << "parsed: " << bad;
        } catch (const ParseError& e) {
            EXPECT_EQ(e.kind(), ParseErrorKind::bad_format) << bad;
        }
    }
    EXPECT_THROW(read_weights_csv("/nonexistent/weights.csv"), ParseError);
}

TEST(WeightsCsv, FixtureNamesAndFiles) {
    EXPECT_EQ(load_weight_matrix("paper-table-1").site_count(), 8u);
    EXPECT_EQ(load_weight_matrix("paper-table-2").round_count(), 3u);
    TempDir dir("csv");
    {
        std::ofstream out(dir / "w.csv");
        out << "site,round_1,round_2,round_3\na,1,2,3\nb,-1,-1,-1\n";
    }
    const auto m = load_weight_matrix((dir / "w.csv").string());
    EXPECT_EQ(m.site_count(), 2u);
    EXPECT_NEAR(within_group_variance(m), (2.0 / 3.0) / 2.0, 1e-12);
}
