#pragma once

// Experiment orchestration: configs, the three-agent golden suite, the
// discontinuity demo, the mean-field convergence study, the D <= C sqrt(W1)
// probe, result emission and provenance.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "topoflock/dynamics.hpp"
#include "topoflock/ensemble.hpp"
#include "topoflock/error.hpp"
#include "topoflock/kernel.hpp"
#include "topoflock/meanfield.hpp"
#include "topoflock/metrics/discrepancy.hpp"
#include "topoflock/metrics/line.hpp"
#include "topoflock/metrics/measure.hpp"
#include "topoflock/metrics/transport.hpp"

namespace topoflock {

inline constexpr const char* version_tag = "topoflock-0.1.0";

enum class ExperimentTag { golden, discontinuity, invariants, metric_props, converge, dw1_probe, simulate };

inline const char* to_string(ExperimentTag t) {
    switch (t) {
        case ExperimentTag::golden: return "golden";
        case ExperimentTag::discontinuity: return "discontinuity";
        case ExperimentTag::invariants: return "invariants";
        case ExperimentTag::metric_props: return "metric_props";
        case ExperimentTag::converge: return "converge";
        case ExperimentTag::dw1_probe: return "dw1_probe";
        case ExperimentTag::simulate: return "simulate";
    }
    return "?";
}

inline ExperimentTag experiment_tag_from(const std::string& s) {
    for (auto t : {ExperimentTag::golden, ExperimentTag::discontinuity, ExperimentTag::invariants,
                   ExperimentTag::metric_props, ExperimentTag::converge, ExperimentTag::dw1_probe,
                   ExperimentTag::simulate}) {
        if (s == to_string(t)) return t;
    }
    throw ConfigError("unknown experiment tag '" + s + "'");
}

struct ExperimentConfig {
    ExperimentTag tag = ExperimentTag::converge;
    KernelSpec kernel = KernelSpec::golden();
    std::optional<DensitySpec> density;
    std::optional<Ensemble> ensemble;
    std::vector<std::size_t> n_list{128, 256, 512, 1024};
    std::size_t n_ref = 8192;
    double T = 1.0;
    std::optional<double> h;  ///< default: IntegratorConfig::for_kernel
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::string out_dir = "out";

    std::uint64_t reference_seed = 0;
    SamplerStrategy candidate_sampler = SamplerStrategy::iid;
    std::size_t min_ref_ratio = 16;
    std::size_t checkpoints = 5;
    bool compute_delta = true;
    double eps_small = 1e-6;
    double budget_cap = 1e13;
    std::size_t threads = 1;

    double step() const { return h ? *h : IntegratorConfig::for_kernel(kernel).h; }

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = nlohmann::json{{"experiment", to_string(c.tag)},
                       {"kernel", c.kernel},
                       {"n_list", c.n_list},
                       {"n_ref", c.n_ref},
                       {"T", c.T},
                       {"seeds", c.seeds},
                       {"out_dir", c.out_dir},
                       {"reference_seed", c.reference_seed},
                       {"candidate_sampler", c.candidate_sampler == SamplerStrategy::iid ? "iid" : "stratified"},
                       {"min_ref_ratio", c.min_ref_ratio},
                       {"checkpoints", c.checkpoints},
                       {"compute_delta", c.compute_delta},
                       {"eps_small", c.eps_small},
                       {"budget_cap", c.budget_cap},
                       {"threads", c.threads}};
    if (c.h) j["h"] = *c.h;
    if (c.density) j["density"] = *c.density;
    if (c.ensemble) j["ensemble"] = *c.ensemble;
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known{"experiment",  "kernel",        "density",        "ensemble",
                                                "n_list",      "n_ref",         "T",              "h",
                                                "seeds",       "out_dir",       "reference_seed", "candidate_sampler",
                                                "min_ref_ratio", "checkpoints", "compute_delta",  "eps_small",
                                                "budget_cap",  "threads"};
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown config key '" + key + "'");
    }
    ExperimentConfig c;
    try {
        c.tag = experiment_tag_from(j.at("experiment").get<std::string>());
        if (j.contains("kernel")) c.kernel = kernel_from_json(j.at("kernel"));
        if (j.contains("density")) c.density = density_from_json(j.at("density"));
        if (j.contains("ensemble")) c.ensemble = ensemble_from_json(j.at("ensemble"));
        c.n_list = j.value("n_list", c.n_list);
        c.n_ref = j.value("n_ref", c.n_ref);
        c.T = j.value("T", c.T);
        if (j.contains("h")) c.h = j.at("h").get<double>();
        c.seeds = j.value("seeds", c.seeds);
        c.out_dir = j.value("out_dir", c.out_dir);
        c.reference_seed = j.value("reference_seed", c.reference_seed);
        const auto sampler = j.value("candidate_sampler", std::string("iid"));
        if (sampler == "iid") {
            c.candidate_sampler = SamplerStrategy::iid;
        } else if (sampler == "stratified") {
            c.candidate_sampler = SamplerStrategy::stratified;
        } else {
            throw ConfigError("candidate_sampler must be iid or stratified");
        }
        c.min_ref_ratio = j.value("min_ref_ratio", c.min_ref_ratio);
        c.checkpoints = j.value("checkpoints", c.checkpoints);
        c.compute_delta = j.value("compute_delta", c.compute_delta);
        c.eps_small = j.value("eps_small", c.eps_small);
        c.budget_cap = j.value("budget_cap", c.budget_cap);
        c.threads = j.value("threads", c.threads);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad experiment config: ") + e.what());
    }
    if (!(c.T > 0.0)) throw ConfigError("T must be positive");
    if (c.h && !(*c.h > 0.0)) throw ConfigError("h must be positive");
    if (c.n_list.empty() || std::find(c.n_list.begin(), c.n_list.end(), 0u) != c.n_list.end()) {
        throw ConfigError("n_list must hold positive sizes");
    }
    if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
    if (c.checkpoints < 2) throw ConfigError("checkpoints must be at least 2");
    if (c.threads == 0) throw ConfigError("threads must be positive");
    return c;
}

// ---------------------------------------------------------------------------
// Provenance.

struct Provenance {
    std::string config_hash;
    std::string version = version_tag;
    double wall_seconds = 0.0;
};

inline std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

inline std::string config_hash(const ExperimentConfig& c) { return fnv1a_hex(nlohmann::json(c).dump()); }

inline void to_json(nlohmann::json& j, const Provenance& p) {
    j = nlohmann::json{{"config_hash", p.config_hash}, {"version", p.version}, {"wall_seconds", p.wall_seconds}};
}

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------
// Golden three-agent suite.

/// Closed-form velocities of the three-agent line while its initial rank
/// structure persists: eps > 0 and eps < 0 branches.
inline std::array<double, 3> three_agent_velocities(double eps, double t) {
    const double e1 = std::exp(-t), e2 = std::exp(-2.0 * t);
    if (eps > 0.0) return {0.5 * (1.0 - 4.0 * e1 + e2), 0.5 * (1.0 - e2), 0.5 * (1.0 + e2)};
    return {-0.5 * (1.0 + e2), -0.5 * (1.0 - e2), 0.5 * (-1.0 + 4.0 * e1 - e2)};
}

struct GoldenBranch {
    double eps = 0.0;
    double max_error = 0.0;
    bool crossing_free = true;
    std::size_t crossings = 0;
};

struct GoldenReport {
    std::vector<GoldenBranch> branches;
    double tolerance = 1e-6;
    bool invalidated = false;  ///< a crossing occurred inside the window
    bool pass = false;
    Provenance provenance;
};

inline GoldenReport run_golden(double h = 1e-3, double T = 0.2, double tolerance = 1e-6) {
    Stopwatch clock;
    GoldenReport rep;
    rep.tolerance = tolerance;
    const auto kernel = KernelSpec::golden();
    IntegratorConfig cfg;
    cfg.h = h;
    for (double eps : {0.5, -0.5}) {
        const auto traj = integrate(three_agent_line(eps), kernel, T, cfg);
        GoldenBranch b;
        b.eps = eps;
        b.crossings = traj.crossing_count;
        b.crossing_free = traj.crossing_count == 0;
        for (std::size_t s = 0; s < traj.snapshots.size(); ++s) {
            const auto exact = three_agent_velocities(eps, traj.times[s]);
            for (std::size_t i = 0; i < 3; ++i) {
                b.max_error = std::max(b.max_error, std::abs(traj.snapshots[s].velocity(i)[0] - exact[i]));
            }
        }
        rep.invalidated = rep.invalidated || !b.crossing_free;
        rep.branches.push_back(b);
    }
    rep.pass = !rep.invalidated;
    for (const auto& b : rep.branches) rep.pass = rep.pass && b.max_error < tolerance;
    rep.provenance.config_hash = fnv1a_hex("golden:" + std::to_string(h) + ":" + std::to_string(T));
    rep.provenance.wall_seconds = clock.seconds();
    return rep;
}

inline void to_json(nlohmann::json& j, const GoldenReport& r) {
    nlohmann::json b = nlohmann::json::array();
    for (const auto& x : r.branches) {
        b.push_back({{"eps", x.eps}, {"max_error", x.max_error}, {"crossing_free", x.crossing_free},
                     {"crossings", x.crossings}});
    }
    j = nlohmann::json{{"branches", b},          {"tolerance", r.tolerance},   {"invalidated", r.invalidated},
                       {"pass", r.pass},         {"provenance", r.provenance}};
}

// ---------------------------------------------------------------------------
// Discontinuity demo.

struct DiscontinuityReport {
    double eps_small = 0.0;
    double T = 1.0;
    double v2_plus = 0.0;
    double v2_minus = 0.0;
    double separation = 0.0;
    double closed_form_separation = 0.0;
    double deviation_plus = 0.0;   ///< max |V - closed form| before the first crossing
    double deviation_minus = 0.0;
    std::size_t crossings_plus = 0;
    std::size_t crossings_minus = 0;
    Provenance provenance;
};

inline DiscontinuityReport run_discontinuity(double eps_small, double T = 1.0, double h = 1e-3) {
    if (!(eps_small > 0.0) || !(eps_small < 0.1)) throw ConfigError("eps_small must lie in (0, 0.1)");
    Stopwatch clock;
    DiscontinuityReport rep;
    rep.eps_small = eps_small;
    rep.T = T;
    const auto kernel = KernelSpec::golden();
    IntegratorConfig cfg;
    cfg.h = h;
    auto branch = [&](double eps, double& v2, double& dev, std::size_t& crossings) {
        const auto traj = integrate(three_agent_line(eps), kernel, T, cfg);
        v2 = traj.final_state().velocity(1)[0];
        crossings = traj.crossing_count;
        const std::size_t stop = traj.events.empty() ? traj.snapshots.size() : traj.events.front().step;
        for (std::size_t s = 0; s < stop; ++s) {
            const auto exact = three_agent_velocities(eps, traj.times[s]);
            for (std::size_t i = 0; i < 3; ++i) {
                dev = std::max(dev, std::abs(traj.snapshots[s].velocity(i)[0] - exact[i]));
            }
        }
    };
    branch(eps_small, rep.v2_plus, rep.deviation_plus, rep.crossings_plus);
    branch(-eps_small, rep.v2_minus, rep.deviation_minus, rep.crossings_minus);
    rep.separation = std::abs(rep.v2_plus - rep.v2_minus);
    rep.closed_form_separation = 1.0 - std::exp(-2.0 * T);
    rep.provenance.config_hash = fnv1a_hex("discontinuity:" + std::to_string(eps_small));
    rep.provenance.wall_seconds = clock.seconds();
    return rep;
}

inline void to_json(nlohmann::json& j, const DiscontinuityReport& r) {
    j = nlohmann::json{{"eps_small", r.eps_small},
                       {"T", r.T},
                       {"v2_plus", r.v2_plus},
                       {"v2_minus", r.v2_minus},
                       {"separation", r.separation},
                       {"closed_form_separation", r.closed_form_separation},
                       {"deviation_plus", r.deviation_plus},
                       {"deviation_minus", r.deviation_minus},
                       {"crossings_plus", r.crossings_plus},
                       {"crossings_minus", r.crossings_minus},
                       {"provenance", r.provenance}};
}

// ---------------------------------------------------------------------------
// Budget guard.

/// Predicted operation count: steps x stages x N^2 log N per dynamics run,
/// N^3 per transport solve, steps x stages x N (N + N_ref) per intermediate run.
inline double predicted_cost(const ExperimentConfig& c) {
    const double steps = std::ceil(c.T / c.step());
    auto dyn = [&](double n) { return steps * 4.0 * n * n * std::log2(std::max(2.0, n)); };
    double total = dyn(static_cast<double>(c.n_ref));
    const auto seeds = static_cast<double>(c.seeds.size());
    for (auto n : c.n_list) {
        const double nn = static_cast<double>(n);
        total += seeds * dyn(nn);
        if (c.compute_delta) total += seeds * steps * 4.0 * nn * (nn + static_cast<double>(c.n_ref));
        total += seeds * static_cast<double>(c.checkpoints) * nn * nn * nn;
    }
    return total;
}

inline void check_budget(const ExperimentConfig& c) {
    const double cost = predicted_cost(c);
    if (cost > c.budget_cap) {
        std::ostringstream os;
        os << "predicted cost " << cost << " exceeds budget cap " << c.budget_cap
           << "; reduce n_ref, the largest N, the number of seeds, or T/h";
        throw BudgetError(os.str());
    }
}

// ---------------------------------------------------------------------------
// Mean-field convergence study.

struct ConvergenceRow {
    std::uint64_t seed = 0;
    std::size_t n = 0;
    double t = 0.0;
    double w1_phase = 0.0;
    double w1_spatial = 0.0;
    double discrepancy_lower = 0.0;
    double delta = std::nan("");
};

struct ConvergenceEntry {
    std::uint64_t seed = 0;
    std::size_t n = 0;
    double w1_initial = 0.0;
    double w1_sup = 0.0;
    double ratio = 0.0;  ///< w1_sup / max(w1_initial, sqrt(w1_initial))
    double delta_final = std::nan("");
};

struct ConvergenceSummary {
    std::size_t n = 0;
    double median_w1_sup = 0.0;
    double median_ratio = 0.0;
    double median_delta = std::nan("");
};

struct ConvergenceReport {
    std::vector<ConvergenceRow> rows;
    std::vector<ConvergenceEntry> entries;
    std::vector<ConvergenceSummary> per_n;
    double fitted_C = 0.0;      ///< max ratio over all entries
    double trend_slope = 0.0;   ///< least-squares slope of log median ratio vs log N
    bool sup_decreasing = false;
    double ratio_spread = 0.0;  ///< max / min of per-N median ratios
    std::optional<double> reference_resolution_w1;
    Provenance provenance;
};

namespace detail {

inline double median(std::vector<double> v) {
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline double slope_loglog(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n < 2) return 0.0;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const double a = std::log(x[k]), b = std::log(y[k]);
        sx += a;
        sy += b;
        sxx += a * a;
        sxy += a * b;
    }
    const double den = static_cast<double>(n) * sxx - sx * sx;
    return den == 0.0 ? 0.0 : (static_cast<double>(n) * sxy - sx * sy) / den;
}

/// Runs `jobs` on up to `threads` workers; each job writes only its own slot.
inline void run_jobs(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& job) {
    if (threads <= 1 || count <= 1) {
        for (std::size_t k = 0; k < count; ++k) job(k);
        return;
    }
    std::mutex mu;
    std::size_t next = 0;
    std::exception_ptr failure;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(threads, count); ++w) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t k;
                {
                    std::lock_guard lock(mu);
                    if (next >= count || failure) return;
                    k = next++;
                }
                try {
                    job(k);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace detail

inline ConvergenceReport run_convergence(const ExperimentConfig& c) {
    Stopwatch clock;
    if (!c.density) throw ConfigError("converge needs a density");
    const std::size_t max_n = *std::max_element(c.n_list.begin(), c.n_list.end());
    if (c.n_ref < c.min_ref_ratio * max_n) {
        throw ConfigError("n_ref must be at least " + std::to_string(c.min_ref_ratio) + " x the largest N");
    }
    check_budget(c);

    IntegratorConfig icfg;
    icfg.h = c.step();
    icfg.track_crossings = false;
    ReferenceOptions ropt;
    ropt.max_n_ref = std::max<std::size_t>(ropt.max_n_ref, c.n_ref);
    ropt.spatial_resolution_check = c.density->dim() == 1;
    const auto ref = reference_solution(*c.density, c.n_ref, c.kernel, c.T, icfg, c.reference_seed, ropt);

    const std::size_t steps = ref.trajectory.snapshots.size() - 1;
    std::vector<std::size_t> marks;
    for (std::size_t k = 0; k < c.checkpoints; ++k) {
        const auto s = static_cast<std::size_t>(
            std::llround(static_cast<double>(steps) * static_cast<double>(k) / static_cast<double>(c.checkpoints - 1)));
        if (marks.empty() || marks.back() != s) marks.push_back(s);
    }

    struct Job {
        std::uint64_t seed;
        std::size_t n;
        std::vector<ConvergenceRow> rows;
        ConvergenceEntry entry;
    };
    std::vector<Job> jobs;
    for (auto n : c.n_list) {
        for (auto seed : c.seeds) jobs.push_back({seed, n, {}, {}});
    }

    detail::run_jobs(jobs.size(), c.threads, [&](std::size_t k) {
        Job& job = jobs[k];
        const Ensemble ens0 = c.density->sample(job.n, c.candidate_sampler, job.seed);
        Trajectory traj;
        std::optional<DeltaSeries> delta;
        if (c.compute_delta && 16 * job.n <= c.n_ref) {
            auto res = intermediate_dynamics(ref, ens0, c.kernel, c.T, icfg);
            traj = std::move(res.plain);
            delta = std::move(res.delta);
        } else {
            traj = integrate(ens0, c.kernel, c.T, icfg);
        }
        job.entry.seed = job.seed;
        job.entry.n = job.n;
        for (auto s : marks) {
            const auto& a = ref.trajectory.snapshots[s];
            const auto& b = traj.snapshots[s];
            ConvergenceRow row;
            row.seed = job.seed;
            row.n = job.n;
            row.t = traj.times[s];
            row.w1_phase = wasserstein1_weighted(WeightedMeasure(phase_measure(a)), WeightedMeasure(phase_measure(b)));
            const WeightedMeasure sa(spatial_measure(a)), sb(spatial_measure(b));
            row.w1_spatial = wasserstein1_weighted(sa, sb);
            row.discrepancy_lower = discrepancy_bounds(sa, sb).lower;
            if (delta) row.delta = delta->delta[s];
            if (s == 0) job.entry.w1_initial = row.w1_phase;
            job.entry.w1_sup = std::max(job.entry.w1_sup, row.w1_phase);
            job.rows.push_back(row);
        }
        const double w0 = job.entry.w1_initial;
        const double scale = std::max(w0, std::sqrt(w0));
        job.entry.ratio = scale > 0.0 ? job.entry.w1_sup / scale : 0.0;
        if (delta) job.entry.delta_final = delta->delta.back();
    });

    ConvergenceReport rep;
    std::sort(jobs.begin(), jobs.end(), [](const Job& a, const Job& b) {
        return a.n != b.n ? a.n < b.n : a.seed < b.seed;
    });
    for (auto& job : jobs) {
        rep.rows.insert(rep.rows.end(), job.rows.begin(), job.rows.end());
        rep.entries.push_back(job.entry);
        rep.fitted_C = std::max(rep.fitted_C, job.entry.ratio);
    }
    std::vector<std::size_t> ns(c.n_list);
    std::sort(ns.begin(), ns.end());
    ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
    std::vector<double> xs, ys;
    for (auto n : ns) {
        std::vector<double> sup, ratio, del;
        for (const auto& e : rep.entries) {
            if (e.n != n) continue;
            sup.push_back(e.w1_sup);
            ratio.push_back(e.ratio);
            if (!std::isnan(e.delta_final)) del.push_back(e.delta_final);
        }
        ConvergenceSummary s{n, detail::median(sup), detail::median(ratio), detail::median(del)};
        rep.per_n.push_back(s);
        xs.push_back(static_cast<double>(n));
        ys.push_back(s.median_ratio);
    }
    rep.trend_slope = detail::slope_loglog(xs, ys);
    rep.sup_decreasing = true;
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (std::size_t k = 0; k < rep.per_n.size(); ++k) {
        if (k > 0 && !(rep.per_n[k].median_w1_sup < rep.per_n[k - 1].median_w1_sup)) rep.sup_decreasing = false;
        lo = std::min(lo, rep.per_n[k].median_ratio);
        hi = std::max(hi, rep.per_n[k].median_ratio);
    }
    rep.ratio_spread = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    rep.reference_resolution_w1 = ref.resolution_w1_spatial;
    rep.provenance.config_hash = config_hash(c);
    rep.provenance.wall_seconds = clock.seconds();
    return rep;
}

inline void to_json(nlohmann::json& j, const ConvergenceReport& r) {
    nlohmann::json per_n = nlohmann::json::array(), entries = nlohmann::json::array();
    auto num = [](double x) { return std::isnan(x) ? nlohmann::json(nullptr) : nlohmann::json(x); };
    for (const auto& s : r.per_n) {
        per_n.push_back({{"N", s.n},
                         {"median_sup_w1", s.median_w1_sup},
                         {"median_ratio", s.median_ratio},
                         {"median_delta_T", num(s.median_delta)}});
    }
    for (const auto& e : r.entries) {
        entries.push_back({{"seed", e.seed},
                           {"N", e.n},
                           {"w1_initial", e.w1_initial},
                           {"w1_sup", e.w1_sup},
                           {"ratio", e.ratio},
                           {"delta_T", num(e.delta_final)}});
    }
    j = nlohmann::json{{"per_n", per_n},
                       {"entries", entries},
                       {"fitted_C", r.fitted_C},
                       {"trend_slope", r.trend_slope},
                       {"sup_decreasing", r.sup_decreasing},
                       {"ratio_spread", r.ratio_spread},
                       {"provenance", r.provenance}};
    if (r.reference_resolution_w1) j["reference_resolution_w1_spatial"] = *r.reference_resolution_w1;
}

inline bool convergence_pass(const ConvergenceReport& r) { return r.sup_decreasing && r.ratio_spread <= 2.0; }

// ---------------------------------------------------------------------------
// D <= C sqrt(W1) probe on the line.

struct Dw1Point {
    std::size_t n = 0;
    double w1 = 0.0;          ///< median over seeds
    double discrepancy = 0.0;  ///< median over seeds
    double C = 0.0;            ///< D / sqrt(W1) of the medians
    bool holds_with_fit = true;
};

struct Dw1Report {
    std::vector<Dw1Point> points;
    double C_fit = 0.0;  ///< fitted at the smallest N
    bool non_increasing = false;
    bool inequality_holds = false;
    Provenance provenance;
};

/// Stratified sample of the uniform density on [0, 1]: one point per cell.
inline std::vector<double> stratified_unit_sample(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> x(n);
    for (std::size_t k = 0; k < n; ++k) x[k] = (static_cast<double>(k) + rng.uniform()) / static_cast<double>(n);
    return x;
}

inline Dw1Report run_dw1_probe(const ExperimentConfig& c) {
    Stopwatch clock;
    Dw1Report rep;
    const auto rho = LineMeasure::uniform(0.0, 1.0);
    for (auto n : c.n_list) {
        std::vector<double> w1s, ds;
        for (auto seed : c.seeds) {
            const EmpiricalMeasure mu(1, stratified_unit_sample(n, seed), Projection::spatial);
            const auto line = LineMeasure::from(mu);
            w1s.push_back(wasserstein1_line(line, rho));
            ds.push_back(discrepancy_line(line, rho));
        }
        Dw1Point p;
        p.n = n;
        p.w1 = detail::median(w1s);
        p.discrepancy = detail::median(ds);
        p.C = p.w1 > 0.0 ? p.discrepancy / std::sqrt(p.w1) : 0.0;
        rep.points.push_back(p);
    }
    std::sort(rep.points.begin(), rep.points.end(), [](const Dw1Point& a, const Dw1Point& b) { return a.n < b.n; });
    rep.C_fit = rep.points.front().C;
    rep.non_increasing = true;
    rep.inequality_holds = true;
    for (std::size_t k = 0; k < rep.points.size(); ++k) {
        auto& p = rep.points[k];
        p.holds_with_fit = p.discrepancy <= rep.C_fit * std::sqrt(p.w1) * (1.0 + 1e-12);
        rep.inequality_holds = rep.inequality_holds && p.holds_with_fit;
        if (k > 0 && p.C > rep.points[k - 1].C) rep.non_increasing = false;
    }
    rep.provenance.config_hash = config_hash(c);
    rep.provenance.wall_seconds = clock.seconds();
    return rep;
}

inline void to_json(nlohmann::json& j, const Dw1Report& r) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : r.points) {
        pts.push_back({{"N", p.n}, {"w1", p.w1}, {"discrepancy", p.discrepancy}, {"C", p.C},
                       {"holds_with_fit", p.holds_with_fit}});
    }
    j = nlohmann::json{{"points", pts},
                       {"C_fit", r.C_fit},
                       {"non_increasing", r.non_increasing},
                       {"inequality_holds", r.inequality_holds},
                       {"provenance", r.provenance}};
}

// ---------------------------------------------------------------------------
// Max-speed and support invariants along a trajectory.

struct InvariantCheck {
    double speed_excess = 0.0;    ///< max_k (max_i |V_i(t_k)| - max_i |V_i(0)|), clipped at 0
    double support_excess = 0.0;  ///< max_k (max_i |X_i(t_k)| - R_x - t_k R_v), clipped at 0
    bool holds(double slack = 1e-9) const { return speed_excess <= slack && support_excess <= slack; }
};

inline InvariantCheck check_invariants(const Trajectory& traj) {
    InvariantCheck out;
    const auto& s0 = traj.snapshots.front();
    const double rv = s0.max_speed(), rx = s0.max_radius();
    for (std::size_t k = 0; k < traj.snapshots.size(); ++k) {
        const double t = std::abs(traj.times[k]);
        out.speed_excess = std::max(out.speed_excess, traj.snapshots[k].max_speed() - rv);
        out.support_excess = std::max(out.support_excess, traj.snapshots[k].max_radius() - rx - t * rv);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Simulation run.

struct SimulationReport {
    Trajectory trajectory;
    InvariantCheck invariants;
    double divergence = 0.0;
    double divergence_predicted = 0.0;
    bool divergence_degenerate = false;
    Provenance provenance;
};

inline Ensemble initial_ensemble(const ExperimentConfig& c) {
    if (c.ensemble) return *c.ensemble;
    if (c.density) return c.density->sample(c.n_list.front(), SamplerStrategy::stratified, c.seeds.front());
    throw ConfigError("config needs an ensemble or a density");
}

inline SimulationReport run_simulation(const ExperimentConfig& c) {
    Stopwatch clock;
    SimulationReport rep;
    const Ensemble ens0 = initial_ensemble(c);
    IntegratorConfig icfg;
    icfg.h = c.step();
    rep.trajectory = integrate(ens0, c.kernel, c.T, icfg);
    rep.invariants = check_invariants(rep.trajectory);
    if (ens0.size() >= 2) {
        const auto div = divergence(ens0, c.kernel);
        rep.divergence = div.value;
        rep.divergence_degenerate = div.degenerate;
        rep.divergence_predicted = -static_cast<double>(ens0.dim()) * static_cast<double>(ens0.size()) *
                                   c.kernel.gamma_N(static_cast<long>(ens0.size()));
    }
    rep.provenance.config_hash = config_hash(c);
    rep.provenance.wall_seconds = clock.seconds();
    return rep;
}

// ---------------------------------------------------------------------------
// Writers.

/// CSV trajectory: t, agent_id, x_1..x_d, v_1..v_d.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
    const std::size_t d = traj.snapshots.front().dim();
    os << "t,agent_id";
    for (std::size_t k = 1; k <= d; ++k) os << ",x_" << k;
    for (std::size_t k = 1; k <= d; ++k) os << ",v_" << k;
    os << '\n';
    const auto old = os.precision(17);
    for (std::size_t s = 0; s < traj.snapshots.size(); ++s) {
        const auto& e = traj.snapshots[s];
        for (std::size_t i = 0; i < e.size(); ++i) {
            os << traj.times[s] << ',' << i;
            for (double c : e.position(i)) os << ',' << c;
            for (double c : e.velocity(i)) os << ',' << c;
            os << '\n';
        }
    }
    os.precision(old);
}

inline void write_convergence_csv(std::ostream& os, const ConvergenceReport& r) {
    os << "seed,N,t,W1_phase,W1_spatial,discrepancy_lower,delta\n";
    const auto old = os.precision(17);
    for (const auto& row : r.rows) {
        os << row.seed << ',' << row.n << ',' << row.t << ',' << row.w1_phase << ',' << row.w1_spatial << ','
           << row.discrepancy_lower << ',';
        if (!std::isnan(row.delta)) os << row.delta;
        os << '\n';
    }
    os.precision(old);
}

/// gnuplot-ready rate table: N, median sup W1, median ratio.
inline void write_rate_dat(std::ostream& os, const ConvergenceReport& r) {
    os << "# N median_sup_W1 median_ratio\n";
    const auto old = os.precision(17);
    for (const auto& s : r.per_n) os << s.n << ' ' << s.median_w1_sup << ' ' << s.median_ratio << '\n';
    os.precision(old);
}

inline void write_dw1_dat(std::ostream& os, const Dw1Report& r) {
    os << "# N W1 D C\n";
    const auto old = os.precision(17);
    for (const auto& p : r.points) os << p.n << ' ' << p.w1 << ' ' << p.discrepancy << ' ' << p.C << '\n';
    os.precision(old);
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write " + path.string());
    os << j.dump(2) << '\n';
}

}  // namespace topoflock
