#include <gtest/gtest.h>

#include <random>

#include "topoflock/kernel.hpp"

using namespace topoflock;

namespace {

KernelSpec random_kernel(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int pieces = 1 + static_cast<int>(rng() % 4);
    std::vector<double> ms{0.0, 1.0};
    for (int k = 1; k < pieces; ++k) ms.push_back(u(rng));
    std::sort(ms.begin(), ms.end());
    ms.erase(std::unique(ms.begin(), ms.end()), ms.end());
    double v = 0.5 + 4.0 * u(rng);
    std::vector<KernelBreakpoint> pts;
    for (double m : ms) {
        pts.push_back({m, v});
        v *= u(rng);
    }
    return KernelSpec(pts);
}

// composite trapezoid on a fine uniform grid
double trapezoid(const KernelSpec& k, int n) {
    double s = 0.5 * (k(0.0) + k(1.0));
    for (int i = 1; i < n; ++i) s += k(static_cast<double>(i) / n);
    return s / n;
}

}  // namespace

TEST(Kernel, GoldenValues) {
    const auto k = KernelSpec::golden();
    EXPECT_DOUBLE_EQ(k(2.0 / 3.0), 3.0);
    EXPECT_EQ(k(1.0), 0.0);
    EXPECT_EQ(k.at_zero(), 9.0);
    EXPECT_EQ(k.lipschitz_constant(), 9.0);
}

TEST(Kernel, Constant) {
    const auto k = KernelSpec::constant(2.5);
    for (double m : {0.0, 0.3, 0.77, 1.0}) EXPECT_EQ(k(m), 2.5);
    EXPECT_EQ(k.gamma(), 2.5);
    EXPECT_EQ(k.lipschitz_constant(), 0.0);
}

TEST(Kernel, DomainErrors) {
    const auto k = KernelSpec::golden();
    EXPECT_THROW(k(-1e-12), DomainError);
    EXPECT_THROW(k(1.0 + 1e-12), DomainError);
    EXPECT_THROW(k.gamma_N(1), DomainError);
    EXPECT_THROW(KernelSpec({{0.0, 1.0}, {1.0, 2.0}}), DomainError);
    EXPECT_THROW(KernelSpec({{0.0, 1.0}, {0.5, -0.1}, {1.0, -0.2}}), DomainError);
    EXPECT_THROW(KernelSpec({{0.1, 1.0}, {1.0, 0.0}}), DomainError);
}

TEST(Kernel, GammaGolden) {
    const auto k = KernelSpec::golden();
    EXPECT_DOUBLE_EQ(k.gamma(), 4.5);
    EXPECT_NEAR(trapezoid(k, 1000), 4.5, 1e-10);
}

TEST(Kernel, GammaHatAgainstQuadrature) {
    const KernelSpec hat({{0.0, 3.0}, {0.25, 3.0}, {0.5, 1.0}, {1.0, 0.0}});
    // trapezoid areas 0.75 + 0.5 + 0.25
    EXPECT_DOUBLE_EQ(hat.gamma(), 1.5);
    EXPECT_NEAR(trapezoid(hat, 4000), 1.5, 1e-10);
}

TEST(Kernel, GammaRandomAgainstQuadrature) {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 50; ++t) {
        const auto k = random_kernel(rng);
        EXPECT_NEAR(k.gamma(), trapezoid(k, 2000000), 1e-9);
    }
}

TEST(Kernel, GammaN) {
    EXPECT_DOUBLE_EQ(KernelSpec::golden().gamma_N(3), 1.0);
    for (long n : {2L, 5L, 100L}) {
        EXPECT_NEAR(KernelSpec::constant(1.0).gamma_N(n), static_cast<double>(n - 1) / n, 1e-15);
    }
    const auto k = KernelSpec::golden();
    double prev = 1e300;
    for (long n : {10L, 100L, 1000L}) {
        double direct = 0.0;
        for (long j = 2; j <= n; ++j) direct += 9.0 * (1.0 - static_cast<double>(j) / n);
        direct /= n;
        EXPECT_NEAR(k.gamma_N(n), direct, 1e-12);
        const double gap = std::abs(k.gamma_N(n) - k.gamma());
        EXPECT_LT(gap, prev);
        prev = gap;
    }
}

TEST(Kernel, RiemannSandwich) {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 50; ++t) {
        const auto k = random_kernel(rng);
        for (long n : {2L, 3L, 17L, 256L}) {
            double full = 0.0;
            for (long j = 1; j <= n; ++j) full += k(static_cast<double>(j) / n);
            full /= n;
            EXPECT_LE(k.gamma_N(n), full + 1e-15);
            EXPECT_LE(full, k.gamma() + k.at_zero() / n + 1e-12);
        }
    }
}

TEST(Kernel, MonotoneAndLipschitz) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 10; ++t) {
        const auto k = random_kernel(rng);
        for (int p = 0; p < 1000; ++p) {
            double a = u(rng), b = u(rng);
            if (a > b) std::swap(a, b);
            EXPECT_GE(k(a), k(b));
            EXPECT_GE(k(a), 0.0);
            EXPECT_LE(k(a) - k(b), k.lipschitz_constant() * (b - a) + 1e-12);
        }
    }
}

TEST(Kernel, RankWeights) {
    const auto w = KernelSpec::golden().rank_weights(3);
    ASSERT_EQ(w.size(), 4u);
    EXPECT_DOUBLE_EQ(w[2], 3.0);
    EXPECT_EQ(w[3], 0.0);
}

TEST(Kernel, JsonRoundTrip) {
    const KernelSpec k({{0.0, 2.0}, {0.4, 1.5}, {1.0, 0.25}});
    const nlohmann::json j = k;
    EXPECT_EQ(j.at("type"), "piecewise_linear");
    EXPECT_EQ(kernel_from_json(j), k);
    EXPECT_EQ(kernel_from_json(nlohmann::json::parse(R"({"type":"constant","value":3})")), KernelSpec::constant(3.0));
    EXPECT_THROW(kernel_from_json(nlohmann::json::parse(R"({"type":"gaussian"})")), ConfigError);
    EXPECT_THROW(kernel_from_json(nlohmann::json::parse(R"({"type":"piecewise_linear","breakpoints":[[0,1],[1,2]]})")),
                 ConfigError);
}
