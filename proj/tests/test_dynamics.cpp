#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "topoflock/dynamics.hpp"

using namespace topoflock;

namespace {

Ensemble random_ensemble(std::mt19937_64& rng, std::size_t n, std::size_t d) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> x(n * d), v(n * d);
    for (auto& c : x) c = u(rng);
    for (auto& c : v) c = u(rng);
    return Ensemble(d, x, v);
}

// dV by direct counting of closed-ball ranks; valid at regular configurations
std::vector<double> oracle_dv(const Ensemble& e, const KernelSpec& k) {
    const std::size_t n = e.size(), d = e.dim();
    std::vector<double> out(n * d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double r = distance(e.position(i), e.position(j));
            std::size_t c = 0;
            for (std::size_t m = 0; m < n; ++m) c += distance(e.position(i), e.position(m)) <= r;
            const double w = k(static_cast<double>(c) / static_cast<double>(n));
            for (std::size_t a = 0; a < d; ++a) out[i * d + a] += w * (e.velocity(j)[a] - e.velocity(i)[a]) / n;
        }
    }
    return out;
}

double v1_plus(double t) { return 0.5 * (1.0 - 4.0 * std::exp(-t) + std::exp(-2.0 * t)); }

}  // namespace

TEST(Rhs, ThreeAgentExample) {
    const auto d = rhs(three_agent_line(0.5), KernelSpec::golden(), TimeDirection::forward);
    EXPECT_DOUBLE_EQ(d.dV[0], 1.0);
    EXPECT_DOUBLE_EQ(d.dV[1], 1.0);
    EXPECT_DOUBLE_EQ(d.dV[2], -1.0);
    EXPECT_EQ(d.dX, (std::vector<double>{-1.0, 0.0, 1.0}));
}

TEST(Rhs, FlockingFixedPoint) {
    std::mt19937_64 rng(1);
    auto e = random_ensemble(rng, 20, 2);
    for (std::size_t i = 0; i < e.size(); ++i) {
        e.velocity(i)[0] = 0.3;
        e.velocity(i)[1] = -0.7;
    }
    const auto d = rhs(e, KernelSpec::golden(), TimeDirection::forward);
    for (double c : d.dV) EXPECT_EQ(c, 0.0);
}

TEST(Rhs, TwoAgents) {
    const KernelSpec k({{0.0, 5.0}, {1.0, 1.5}});
    const Ensemble e(1, {0.0, 2.0}, {1.0, -1.0});
    const auto d = rhs(e, k, TimeDirection::forward);
    EXPECT_DOUBLE_EQ(d.dV[0], 0.75 * (-2.0));
    EXPECT_DOUBLE_EQ(d.dV[1], 0.75 * 2.0);
}

TEST(Rhs, MatchesCountingOracle) {
    std::mt19937_64 rng(9);
    const KernelSpec k({{0.0, 4.0}, {0.3, 2.5}, {0.8, 0.5}, {1.0, 0.0}});
    for (int t = 0; t < 60; ++t) {
        const std::size_t d = 1 + t % 3;
        const auto e = random_ensemble(rng, 2 + rng() % 50, d);
        const auto got = rhs(e, k, TimeDirection::forward);
        const auto want = oracle_dv(e, k);
        for (std::size_t a = 0; a < want.size(); ++a) EXPECT_NEAR(got.dV[a], want[a], 1e-13);
    }
}

TEST(Rhs, OneDimensionalCoincidentPositions) {
    // coincident positions leave the fast path; compare with the general sort
    const Ensemble e(1, {0.0, 0.0, 1.0, -1.0, 2.0}, {0.5, -0.5, 1.0, 0.0, 0.2});
    const auto d = rhs(e, KernelSpec::golden(), TimeDirection::forward);
    for (std::size_t i = 0; i < e.size(); ++i) {
        const auto t = rank_table(e, i);
        double want = 0.0;
        for (std::size_t j = 0; j < e.size(); ++j) {
            want += KernelSpec::golden()(t.argument(j)) * (e.velocity(j)[0] - e.velocity(i)[0]) / 5.0;
        }
        EXPECT_NEAR(d.dV[i], want, 1e-15);
    }
}

TEST(Integrate, ClosedFormsAtSmallTime) {
    IntegratorConfig cfg;
    cfg.h = 1e-3;
    const auto plus = integrate(three_agent_line(0.5), KernelSpec::golden(), 0.1, cfg);
    EXPECT_NEAR(plus.final_state().velocity(0)[0], v1_plus(0.1), 1e-6);
    EXPECT_NEAR(plus.final_state().velocity(0)[0], -0.900309, 1e-6);
    const auto minus = integrate(three_agent_line(-0.5), KernelSpec::golden(), 0.1, cfg);
    EXPECT_NEAR(minus.final_state().velocity(1)[0], -0.0906346, 1e-6);
    EXPECT_EQ(plus.snapshots.size(), 101u);
    EXPECT_EQ(plus.crossing_count, 0u);
}

TEST(Integrate, RigidTranslation) {
    std::mt19937_64 rng(12);
    auto e = random_ensemble(rng, 15, 3);
    for (std::size_t i = 0; i < e.size(); ++i) {
        for (std::size_t a = 0; a < 3; ++a) e.velocity(i)[a] = 0.25 * (a + 1.0);
    }
    IntegratorConfig cfg;
    cfg.h = 0.01;
    const auto traj = integrate(e, KernelSpec::golden(), 1.0, cfg);
    const auto& f = traj.final_state();
    for (std::size_t i = 0; i < e.size(); ++i) {
        for (std::size_t a = 0; a < 3; ++a) {
            EXPECT_NEAR(f.position(i)[a], e.position(i)[a] + 0.25 * (a + 1.0), 1e-13);
            EXPECT_EQ(f.velocity(i)[a], 0.25 * (a + 1.0));
        }
    }
}

TEST(Integrate, ForwardThenBackward) {
    std::mt19937_64 rng(21);
    const auto e = random_ensemble(rng, 12, 2);
    IntegratorConfig cfg;
    cfg.h = 1e-3;
    const auto k = KernelSpec::golden();
    const auto fwd = integrate(e, k, cfg.h, cfg);
    cfg.direction = TimeDirection::backward;
    const auto back = integrate(fwd.final_state(), k, cfg.h, cfg);
    EXPECT_LT(back.times.back(), 0.0);
    const auto& r = back.final_state();
    for (std::size_t a = 0; a < e.positions().size(); ++a) {
        EXPECT_NEAR(r.positions()[a], e.positions()[a], 1e-13);
        EXPECT_NEAR(r.velocities()[a], e.velocities()[a], 1e-13);
    }
}

TEST(Integrate, StepCountAndGrid) {
    EXPECT_EQ(step_count(1.0, 0.1), 10u);
    EXPECT_EQ(step_count(0.2, 1e-3), 200u);
    EXPECT_EQ(step_count(1.05, 0.1), 10u);
    IntegratorConfig cfg;
    cfg.h = 0.1;
    cfg.scheme = Scheme::euler;
    const auto traj = integrate(three_agent_line(0.5), KernelSpec::golden(), 1.05, cfg);
    ASSERT_EQ(traj.times.size(), 11u);
    for (std::size_t s = 1; s < traj.times.size(); ++s) EXPECT_GT(traj.times[s], traj.times[s - 1]);
    EXPECT_THROW(integrate(three_agent_line(0.5), KernelSpec::golden(), -1.0, cfg), DomainError);
}

TEST(Integrate, EulerFirstStep) {
    IntegratorConfig cfg;
    cfg.h = 0.01;
    cfg.scheme = Scheme::euler;
    const auto traj = integrate(three_agent_line(0.5), KernelSpec::golden(), 0.01, cfg);
    EXPECT_DOUBLE_EQ(traj.final_state().velocity(0)[0], -1.0 + 0.01);
    EXPECT_DOUBLE_EQ(traj.final_state().position(1)[0], 0.5);
}

TEST(Integrate, CrossingsAreLogged) {
    const Ensemble e(1, {0.0, 1.0, 3.0}, {0.0, 0.0, -3.0});
    IntegratorConfig cfg;
    cfg.h = 1e-3;
    const auto traj = integrate(e, KernelSpec::constant(0.0), 1.0, cfg);
    EXPECT_GT(traj.crossing_count, 0u);
    ASSERT_FALSE(traj.events.empty());
    // focal 1 sees agents 0 and 2 equidistant when x_2 = 2, at t = 1/3
    bool focal1 = false;
    for (const auto& ev : traj.events) {
        if (ev.focal == 1) {
            EXPECT_NEAR(ev.time, 1.0 / 3.0, 2e-3);
            focal1 = true;
            break;
        }
    }
    EXPECT_TRUE(focal1);
}

TEST(Integrate, SingularEncounterWarns) {
    IntegratorConfig cfg;
    cfg.h = 1e-3;
    const auto traj = integrate(three_agent_line(0.0, 1.0), KernelSpec::golden(), 0.01, cfg);
    EXPECT_GT(traj.singular_encounters, 0u);
    EXPECT_FALSE(traj.warnings.empty());
    EXPECT_EQ(traj.classes.front(), ConfigClass::Kind::singular);
}

TEST(Integrate, NonFiniteStateThrows) {
    const Ensemble e(1, {0.0, 1.0}, {1e300, -1e300});
    IntegratorConfig cfg;
    cfg.h = 1.0;
    try {
        integrate(e, KernelSpec::constant(1e300), 3.0, cfg);
        FAIL() << "expected IntegrationError";
    } catch (const IntegrationError& err) {
        EXPECT_TRUE(err.last_valid().all_finite());
    }
}

TEST(Divergence, Examples) {
    const auto d = divergence(three_agent_line(0.5), KernelSpec::golden());
    EXPECT_DOUBLE_EQ(d.value, -3.0);
    EXPECT_FALSE(d.degenerate);
    std::mt19937_64 rng(3);
    EXPECT_EQ(divergence(random_ensemble(rng, 10, 2), KernelSpec::constant(0.0)).value, 0.0);
    EXPECT_TRUE(divergence(three_agent_line(0.0, 1.0), KernelSpec::golden()).degenerate);
}

TEST(Divergence, FiniteDifferenceOracle) {
    // divergence of the vector field by central differences of rhs
    std::mt19937_64 rng(8);
    const KernelSpec k({{0.0, 3.0}, {0.5, 2.0}, {1.0, 0.5}});
    for (int t = 0; t < 10; ++t) {
        const auto e = random_ensemble(rng, 6, 1 + t % 3);
        double div = 0.0;
        const double step = 1e-7;
        for (std::size_t a = 0; a < e.velocities().size(); ++a) {
            Ensemble p = e, m = e;
            p.velocities()[a] += step;
            m.velocities()[a] -= step;
            div += (rhs(p, k, TimeDirection::forward).dV[a] - rhs(m, k, TimeDirection::forward).dV[a]) / (2 * step);
        }
        EXPECT_NEAR(divergence(e, k).value, div, 1e-6);
    }
}

TEST(Volume, ThreeAgentContraction) {
    IntegratorConfig cfg;
    cfg.h = 1e-3;
    const auto k = KernelSpec::golden();
    const auto v = volume_contraction_check(three_agent_line(0.5), k, 0.05, cfg);
    EXPECT_FALSE(v.inconclusive);
    EXPECT_DOUBLE_EQ(v.predicted, -0.15);
    EXPECT_NEAR(v.measured, -0.15, 1.5e-5);
    const auto v2 = volume_contraction_check(three_agent_line(0.5), k, 0.1, cfg);
    EXPECT_NEAR(v2.measured, 2.0 * v.measured, 1e-4);
    const auto zero = volume_contraction_check(three_agent_line(0.5), KernelSpec::constant(0.0), 0.05, cfg);
    EXPECT_NEAR(zero.measured, 0.0, 1e-8);
}
