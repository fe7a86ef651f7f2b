#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "topoflock/harness.hpp"

using namespace topoflock;

TEST(Config, JsonRoundTrip) {
    ExperimentConfig c;
    c.tag = ExperimentTag::dw1_probe;
    c.kernel = KernelSpec::linear(2.0);
    c.density = DensitySpec::uniform_box(1, -1.0, 1.0, -0.5, 0.5);
    c.n_list = {10, 100};
    c.n_ref = 256;
    c.h = 0.02;
    c.seeds = {4, 9};
    c.candidate_sampler = SamplerStrategy::stratified;
    c.min_ref_ratio = 8;
    const nlohmann::json j = c;
    EXPECT_EQ(experiment_from_json(j), c);
    EXPECT_EQ(config_hash(experiment_from_json(j)), config_hash(c));

    ExperimentConfig e;
    e.tag = ExperimentTag::simulate;
    e.ensemble = three_agent_line(0.5);
    EXPECT_EQ(experiment_from_json(nlohmann::json(e)), e);
}

TEST(Config, Rejections) {
    EXPECT_THROW(experiment_from_json(nlohmann::json{{"experiment", "bogus"}}), ConfigError);
    EXPECT_THROW(experiment_from_json(nlohmann::json{{"experiment", "converge"}, {"n_reff", 10}}), ConfigError);
    EXPECT_THROW(experiment_from_json(nlohmann::json{{"experiment", "converge"}, {"T", -1.0}}), ConfigError);
    EXPECT_THROW(experiment_from_json(nlohmann::json{{"experiment", "converge"}, {"n_list", {0}}}), ConfigError);
    EXPECT_THROW(experiment_from_json(nlohmann::json{{"experiment", "converge"}, {"n_ref", "many"}}), ConfigError);
    EXPECT_THROW(experiment_from_json(nlohmann::json{{"experiment", "converge"}, {"candidate_sampler", "sobol"}}),
                 ConfigError);
    EXPECT_THROW(experiment_from_json(nlohmann::json::array()), ConfigError);
    EXPECT_THROW(experiment_from_json(nlohmann::json{{"T", 1.0}}), ConfigError);
}

TEST(Config, HashDistinguishes) {
    ExperimentConfig a, b;
    b.T = 2.0;
    EXPECT_NE(config_hash(a), config_hash(b));
    EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
}

TEST(Golden, ClosedFormValues) {
    EXPECT_NEAR(three_agent_velocities(-0.5, 0.2)[2], 0.5 * (-1.0 + 4.0 * std::exp(-0.2) - std::exp(-0.4)), 1e-15);
    EXPECT_NEAR(three_agent_velocities(-0.5, 0.2)[2], 0.8023015, 1e-7);
    EXPECT_NEAR(three_agent_velocities(0.5, 0.2)[1], 0.1648400, 1e-7);
    EXPECT_NEAR(three_agent_velocities(-0.5, 0.1)[0], -0.9093654, 1e-7);
    for (double eps : {-0.5, 0.5}) {
        const auto v0 = three_agent_velocities(eps, 0.0);
        EXPECT_DOUBLE_EQ(v0[0], -1.0);
        EXPECT_DOUBLE_EQ(v0[1], 0.0);
        EXPECT_DOUBLE_EQ(v0[2], 1.0);
    }
}

TEST(Golden, SuitePasses) {
    const auto rep = run_golden();
    ASSERT_EQ(rep.branches.size(), 2u);
    EXPECT_TRUE(rep.pass);
    EXPECT_FALSE(rep.invalidated);
    for (const auto& b : rep.branches) {
        EXPECT_LT(b.max_error, 1e-6);
        EXPECT_TRUE(b.crossing_free);
    }
}

TEST(Discontinuity, SmallGap) {
    const auto rep = run_discontinuity(1e-6);
    EXPECT_GE(rep.separation, 0.85);
    EXPECT_LE(rep.separation, 0.88);
    EXPECT_NEAR(rep.closed_form_separation, 1.0 - std::exp(-2.0), 1e-15);
    EXPECT_LT(rep.deviation_plus, 1e-6);
    EXPECT_LT(rep.deviation_minus, 1e-6);
}

TEST(Discontinuity, WiderGap) {
    const auto rep = run_discontinuity(1e-2);
    EXPECT_GT(rep.separation, 0.8);
    EXPECT_THROW(run_discontinuity(0.0), ConfigError);
    EXPECT_THROW(run_discontinuity(0.5), ConfigError);
}

TEST(Budget, GuardRejectsHugeRuns) {
    ExperimentConfig c;
    c.density = DensitySpec::uniform_box(1, -1.0, 1.0, -1.0, 1.0);
    c.h = 0.02;
    c.min_ref_ratio = 8;
    EXPECT_NO_THROW(check_budget(c));
    c.budget_cap = 1e6;
    EXPECT_THROW(check_budget(c), BudgetError);
    EXPECT_THROW(run_convergence(c), BudgetError);
}

TEST(Dw1, SingleAtomConstant) {
    // one atom at x in [0,1]: W1 = x^2/2 + (1-x)^2/2; the ball {x} gives D = 1
    ExperimentConfig c;
    c.n_list = {1};
    c.seeds = {1};
    const auto rep = run_dw1_probe(c);
    const double x = stratified_unit_sample(1, 1)[0];
    const double w1 = 0.5 * (x * x + (1.0 - x) * (1.0 - x));
    EXPECT_NEAR(rep.points[0].w1, w1, 1e-14);
    EXPECT_EQ(rep.points[0].discrepancy, 1.0);
    EXPECT_NEAR(rep.points[0].C, 1.0 / std::sqrt(w1), 1e-12);
}

TEST(Dw1, ProbeNonIncreasing) {
    ExperimentConfig c;
    c.tag = ExperimentTag::dw1_probe;
    c.n_list = {10, 100, 1000, 10000};
    const auto rep = run_dw1_probe(c);
    EXPECT_TRUE(rep.non_increasing);
    EXPECT_TRUE(rep.inequality_holds);
    for (std::size_t k = 0; k < rep.points.size(); ++k) {
        EXPECT_LE(rep.points[k].discrepancy, 2.0 / static_cast<double>(rep.points[k].n) + 1e-12);
    }
}

TEST(Convergence, SelfComparisonIsZero) {
    ExperimentConfig c;
    c.density = DensitySpec::uniform_box(1, -1.0, 1.0, -1.0, 1.0);
    c.n_ref = 64;
    c.n_list = {64};
    c.seeds = {0};
    c.reference_seed = 0;
    c.candidate_sampler = SamplerStrategy::stratified;
    c.T = 0.2;
    c.h = 0.01;
    c.min_ref_ratio = 1;
    c.compute_delta = false;
    const auto rep = run_convergence(c);
    ASSERT_EQ(rep.entries.size(), 1u);
    EXPECT_EQ(rep.entries[0].w1_initial, 0.0);
    EXPECT_EQ(rep.entries[0].w1_sup, 0.0);
}

TEST(Convergence, RatioMinRefEnforced) {
    ExperimentConfig c;
    c.density = DensitySpec::uniform_box(1, -1.0, 1.0, -1.0, 1.0);
    c.n_ref = 256;
    c.n_list = {64};
    EXPECT_THROW(run_convergence(c), ConfigError);
    ExperimentConfig no_density;
    EXPECT_THROW(run_convergence(no_density), ConfigError);
}

TEST(Convergence, SmallStudyShape) {
    ExperimentConfig c;
    c.density = DensitySpec::uniform_box(1, -1.0, 1.0, -1.0, 1.0);
    c.n_ref = 512;
    c.n_list = {16, 32};
    c.seeds = {1, 2};
    c.T = 0.2;
    c.h = 0.02;
    const auto rep = run_convergence(c);
    EXPECT_EQ(rep.entries.size(), 4u);
    EXPECT_EQ(rep.per_n.size(), 2u);
    EXPECT_EQ(rep.rows.size(), 4u * c.checkpoints);
    for (const auto& e : rep.entries) {
        EXPECT_GT(e.w1_initial, 0.0);
        EXPECT_GE(e.w1_sup, e.w1_initial);
        EXPECT_NEAR(e.ratio, e.w1_sup / std::max(e.w1_initial, std::sqrt(e.w1_initial)), 1e-15);
        EXPECT_TRUE(std::isfinite(e.delta_final));
    }
    std::ostringstream csv, dat;
    write_convergence_csv(csv, rep);
    write_rate_dat(dat, rep);
    EXPECT_NE(csv.str().find("W1_phase"), std::string::npos);
    EXPECT_FALSE(dat.str().empty());
}

TEST(Invariants, SimulationReport) {
    ExperimentConfig c;
    c.tag = ExperimentTag::simulate;
    c.density = DensitySpec::uniform_box(2, -1.0, 1.0, -1.0, 1.0);
    c.n_list = {20};
    c.T = 0.5;
    c.h = 0.01;
    const auto rep = run_simulation(c);
    EXPECT_TRUE(rep.invariants.holds());
    EXPECT_FALSE(rep.divergence_degenerate);
    EXPECT_NEAR(rep.divergence, rep.divergence_predicted, 1e-12 * std::abs(rep.divergence_predicted));
    std::ostringstream os;
    write_trajectory_csv(os, rep.trajectory);
    const std::string text = os.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 51 * 20);
}

TEST(Invariants, DetectsViolation) {
    Trajectory t;
    t.times = {0.0, 1.0};
    t.snapshots = {Ensemble(1, {0.0}, {1.0}), Ensemble(1, {3.0}, {1.5})};
    const auto chk = check_invariants(t);
    EXPECT_NEAR(chk.speed_excess, 0.5, 1e-15);
    EXPECT_NEAR(chk.support_excess, 2.0, 1e-15);
    EXPECT_FALSE(chk.holds());
}
