#pragma once

// Mean-field side of the model: bounded compactly supported initial
// densities, their samplers, the interaction field
//
//   W[rho, f](x, v) = int K(M[rho](x, |x - y|)) (w - v) f(dy, dw),
//
// a large-N reference run standing in for the kinetic solution f_t, and the
// intermediate dynamics whose ranks come from the reference's spatial
// distribution while velocities are averaged over the evolving N agents.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "topoflock/dynamics.hpp"
#include "topoflock/ensemble.hpp"
#include "topoflock/error.hpp"
#include "topoflock/kernel.hpp"
#include "topoflock/metrics/line.hpp"
#include "topoflock/metrics/measure.hpp"
#include "topoflock/metrics/transport.hpp"

namespace topoflock {

/// Uniform doubles in [0, 1) from a 64-bit engine; identical on every
/// standard library, unlike std::uniform_real_distribution.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

private:
    std::mt19937_64 engine_;
};

/// One product-form component: on the box [x_lo, x_hi]^d x [v_lo, v_hi]^d,
/// an isotropic Gaussian in x and in v truncated to the box. A nonpositive
/// sigma means uniform along that block.
struct DensityComponent {
    double x_lo = -1.0, x_hi = 1.0, v_lo = -1.0, v_hi = 1.0;
    double x_mean = 0.0, x_sigma = 0.0;
    double v_mean = 0.0, v_sigma = 0.0;

    friend bool operator==(const DensityComponent&, const DensityComponent&) = default;
};

namespace detail {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// 1-D factor of a component: truncated Gaussian or uniform on [lo, hi].
struct Factor {
    double lo, hi, mean, sigma;

    bool uniform() const { return !(sigma > 0.0); }
    double norm() const {
        return uniform() ? hi - lo : sigma * (normal_cdf((hi - mean) / sigma) - normal_cdf((lo - mean) / sigma));
    }
    double pdf(double t) const {
        if (t < lo || t > hi) return 0.0;
        if (uniform()) return 1.0 / (hi - lo);
        const double z = (t - mean) / sigma;
        return std::exp(-0.5 * z * z) / (std::sqrt(2.0 * M_PI) * norm());
    }
    double prob(double a, double b) const {
        a = std::max(a, lo);
        b = std::min(b, hi);
        if (!(b > a)) return 0.0;
        if (uniform()) return (b - a) / (hi - lo);
        return sigma * (normal_cdf((b - mean) / sigma) - normal_cdf((a - mean) / sigma)) / norm();
    }
    double sup_on(double a, double b) const {
        a = std::max(a, lo);
        b = std::min(b, hi);
        if (!(b >= a)) return 0.0;
        return pdf(std::clamp(mean, a, b));
    }
};

}  // namespace detail

enum class SamplerStrategy { iid, stratified };

/// Bounded, compactly supported initial density: a finite mixture of
/// product-form components.
class DensitySpec {
public:
    DensitySpec(std::size_t dim, std::vector<DensityComponent> comps, std::vector<double> weights, std::string tag)
        : dim_(dim), comps_(std::move(comps)), weights_(std::move(weights)), tag_(std::move(tag)) {
        if (dim_ == 0) throw DomainError("density dimension must be positive");
        if (comps_.empty() || comps_.size() != weights_.size()) throw DomainError("density components and weights differ");
        double total = 0.0;
        for (double w : weights_) {
            if (!(w >= 0.0)) throw DomainError("negative mixture weight");
            total += w;
        }
        if (std::abs(total - 1.0) > 1e-12) throw DomainError("mixture weights must sum to 1");
        for (const auto& c : comps_) {
            if (!(c.x_hi > c.x_lo) || !(c.v_hi > c.v_lo)) throw DomainError("empty density support box");
        }
    }

    static DensitySpec uniform_box(std::size_t dim, double x_lo, double x_hi, double v_lo, double v_hi) {
        DensityComponent c{x_lo, x_hi, v_lo, v_hi, 0.0, 0.0, 0.0, 0.0};
        return DensitySpec(dim, {c}, {1.0}, "uniform_box");
    }

    static DensitySpec truncated_gaussian(std::size_t dim, double x_mean, double x_sigma, double v_mean, double v_sigma,
                                          double x_lo, double x_hi, double v_lo, double v_hi) {
        DensityComponent c{x_lo, x_hi, v_lo, v_hi, x_mean, x_sigma, v_mean, v_sigma};
        return DensitySpec(dim, {c}, {1.0}, "truncated_gaussian");
    }

    static DensitySpec two_bump(std::size_t dim, DensityComponent a, DensityComponent b, double weight_a) {
        return DensitySpec(dim, {a, b}, {weight_a, 1.0 - weight_a}, "two_bump");
    }

    std::size_t dim() const { return dim_; }
    const std::string& tag() const { return tag_; }
    const std::vector<DensityComponent>& components() const { return comps_; }
    const std::vector<double>& weights() const { return weights_; }

    double operator()(std::span<const double> x, std::span<const double> v) const {
        double total = 0.0;
        for (std::size_t c = 0; c < comps_.size(); ++c) {
            const auto [fx, fv] = factors(comps_[c]);
            double p = weights_[c];
            for (std::size_t k = 0; k < dim_ && p > 0.0; ++k) p *= fx.pdf(x[k]) * fv.pdf(v[k]);
            total += p;
        }
        return total;
    }

    /// ||f0||_inf: exact for one component, a bound (sum of peaks) for mixtures.
    double sup_norm() const {
        double total = 0.0;
        for (std::size_t c = 0; c < comps_.size(); ++c) {
            const auto [fx, fv] = factors(comps_[c]);
            total += weights_[c] * std::pow(fx.sup_on(fx.lo, fx.hi) * fv.sup_on(fv.lo, fv.hi), static_cast<double>(dim_));
        }
        return total;
    }

    /// Smallest R_x, R_v with supp f0 inside B_{R_x} x B_{R_v}.
    double radius_x() const { return block_radius(true); }
    double radius_v() const { return block_radius(false); }

    /// Spatial mass M[S f0](x, r) of the closed ball. Exact in d = 1; for
    /// d >= 2 midpoint quadrature with `cells` points per axis.
    double spatial_ball_mass(std::span<const double> x, double r, std::size_t cells = 64) const {
        if (r < 0.0) throw DomainError("ball radius must be nonnegative");
        double total = 0.0;
        for (std::size_t c = 0; c < comps_.size(); ++c) {
            const auto fx = factors(comps_[c]).first;
            if (dim_ == 1) {
                total += weights_[c] * fx.prob(x[0] - r, x[0] + r);
                continue;
            }
            std::vector<double> lo(dim_), hi(dim_);
            std::size_t total_cells = 1;
            for (std::size_t k = 0; k < dim_; ++k) {
                lo[k] = std::max(fx.lo, x[k] - r);
                hi[k] = std::min(fx.hi, x[k] + r);
                if (!(hi[k] > lo[k])) return total;
                total_cells *= cells;
            }
            double acc = 0.0;
            std::vector<double> p(dim_);
            for (std::size_t idx = 0; idx < total_cells; ++idx) {
                std::size_t rest = idx;
                double dens = 1.0, d2 = 0.0, vol = 1.0;
                for (std::size_t k = 0; k < dim_; ++k) {
                    const double h = (hi[k] - lo[k]) / static_cast<double>(cells);
                    p[k] = lo[k] + (static_cast<double>(rest % cells) + 0.5) * h;
                    rest /= cells;
                    dens *= fx.pdf(p[k]);
                    d2 += (p[k] - x[k]) * (p[k] - x[k]);
                    vol *= h;
                }
                if (d2 <= r * r) acc += dens * vol;
            }
            total += weights_[c] * acc;
        }
        return total;
    }

    /// Spatial marginal on the line as uniform pieces: exact for uniform
    /// components, `bins` equal-width pieces per Gaussian component.
    LineMeasure spatial_line_marginal(std::size_t bins = 4096) const {
        if (dim_ != 1) throw DomainError("line marginal needs d = 1");
        LineMeasure out;
        for (std::size_t c = 0; c < comps_.size(); ++c) {
            const auto fx = factors(comps_[c]).first;
            if (fx.uniform()) {
                out.pieces.push_back({fx.lo, fx.hi, weights_[c]});
                continue;
            }
            const double h = (fx.hi - fx.lo) / static_cast<double>(bins);
            for (std::size_t b = 0; b < bins; ++b) {
                const double a = fx.lo + h * static_cast<double>(b);
                out.pieces.push_back({a, a + h, weights_[c] * fx.prob(a, a + h)});
            }
        }
        return out;
    }

    /// N agents drawn from f0; deterministic given the seed. The stratified
    /// strategy splits the phase-space box into at least N equal cells,
    /// allocates points to cells by systematic sampling on the cell masses
    /// and rejection-samples each point inside its cell.
    Ensemble sample(std::size_t n, SamplerStrategy strategy, std::uint64_t seed, std::size_t max_attempts = 100000) const {
        if (n == 0) throw DomainError("sample size must be positive");
        Rng rng(seed);
        std::vector<double> x, v;
        x.reserve(n * dim_);
        v.reserve(n * dim_);
        const std::size_t dims = 2 * dim_;
        std::vector<double> lo(dims), hi(dims), pt(dims);
        bounding_box(lo, hi);

        auto draw_in = [&](const std::vector<double>& a, const std::vector<double>& b) {
            const double bound = sup_on_box(a, b);
            if (!(bound > 0.0)) throw SamplerError("sampling cell carries no density");
            for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
                for (std::size_t k = 0; k < dims; ++k) pt[k] = rng.uniform(a[k], b[k]);
                const double f = (*this)(std::span<const double>(pt.data(), dim_),
                                         std::span<const double>(pt.data() + dim_, dim_));
                if (rng.uniform() * bound < f) {
                    x.insert(x.end(), pt.begin(), pt.begin() + static_cast<std::ptrdiff_t>(dim_));
                    v.insert(v.end(), pt.begin() + static_cast<std::ptrdiff_t>(dim_), pt.end());
                    return;
                }
            }
            throw SamplerError("rejection sampling failed after " + std::to_string(max_attempts) +
                               " attempts; density too concentrated inside its sampling box");
        };

        if (strategy == SamplerStrategy::iid) {
            for (std::size_t i = 0; i < n; ++i) draw_in(lo, hi);
            return Ensemble(dim_, std::move(x), std::move(v));
        }

        const auto per_axis = static_cast<std::size_t>(
            std::ceil(std::pow(static_cast<double>(n), 1.0 / static_cast<double>(dims)) - 1e-9));
        std::size_t cells = 1;
        for (std::size_t k = 0; k < dims; ++k) cells *= per_axis;
        std::vector<double> cum(cells);
        std::vector<double> a(dims), b(dims);
        // velocity axes vary fastest so each spatial column is a contiguous run
        auto cell_box = [&](std::size_t idx) {
            for (std::size_t k = dims; k-- > 0;) {
                const double w = (hi[k] - lo[k]) / static_cast<double>(per_axis);
                const std::size_t c = idx % per_axis;
                idx /= per_axis;
                a[k] = lo[k] + w * static_cast<double>(c);
                b[k] = c + 1 == per_axis ? hi[k] : lo[k] + w * static_cast<double>(c + 1);
            }
        };
        double run = 0.0;
        for (std::size_t idx = 0; idx < cells; ++idx) {
            cell_box(idx);
            run += box_mass(a, b);
            cum[idx] = run;
        }
        const double offset = rng.uniform();
        std::size_t cell = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double target = (static_cast<double>(i) + offset) / static_cast<double>(n) * run;
            while (cell + 1 < cells && cum[cell] <= target) ++cell;
            cell_box(cell);
            draw_in(a, b);
        }
        return Ensemble(dim_, std::move(x), std::move(v));
    }

    friend bool operator==(const DensitySpec& p, const DensitySpec& q) {
        return p.dim_ == q.dim_ && p.comps_ == q.comps_ && p.weights_ == q.weights_ && p.tag_ == q.tag_;
    }

private:
    static std::pair<detail::Factor, detail::Factor> factors(const DensityComponent& c) {
        return {detail::Factor{c.x_lo, c.x_hi, c.x_mean, c.x_sigma}, detail::Factor{c.v_lo, c.v_hi, c.v_mean, c.v_sigma}};
    }

    double block_radius(bool spatial) const {
        double r = 0.0;
        for (const auto& c : comps_) {
            const double lo = spatial ? c.x_lo : c.v_lo;
            const double hi = spatial ? c.x_hi : c.v_hi;
            const double m = std::max(std::abs(lo), std::abs(hi));
            r = std::max(r, m * std::sqrt(static_cast<double>(dim_)));
        }
        return r;
    }

    void bounding_box(std::vector<double>& lo, std::vector<double>& hi) const {
        std::fill(lo.begin(), lo.end(), std::numeric_limits<double>::infinity());
        std::fill(hi.begin(), hi.end(), -std::numeric_limits<double>::infinity());
        for (const auto& c : comps_) {
            for (std::size_t k = 0; k < dim_; ++k) {
                lo[k] = std::min(lo[k], c.x_lo);
                hi[k] = std::max(hi[k], c.x_hi);
                lo[dim_ + k] = std::min(lo[dim_ + k], c.v_lo);
                hi[dim_ + k] = std::max(hi[dim_ + k], c.v_hi);
            }
        }
    }

    double box_mass(const std::vector<double>& a, const std::vector<double>& b) const {
        double total = 0.0;
        for (std::size_t c = 0; c < comps_.size(); ++c) {
            const auto [fx, fv] = factors(comps_[c]);
            double p = weights_[c];
            for (std::size_t k = 0; k < dim_; ++k) p *= fx.prob(a[k], b[k]) * fv.prob(a[dim_ + k], b[dim_ + k]);
            total += p;
        }
        return total;
    }

    double sup_on_box(const std::vector<double>& a, const std::vector<double>& b) const {
        double total = 0.0;
        for (std::size_t c = 0; c < comps_.size(); ++c) {
            const auto [fx, fv] = factors(comps_[c]);
            double p = weights_[c];
            for (std::size_t k = 0; k < dim_; ++k) p *= fx.sup_on(a[k], b[k]) * fv.sup_on(a[dim_ + k], b[dim_ + k]);
            total += p;
        }
        return total;
    }

    std::size_t dim_;
    std::vector<DensityComponent> comps_;
    std::vector<double> weights_;
    std::string tag_;
};

inline Ensemble sample(const DensitySpec& f0, std::size_t n, SamplerStrategy strategy, std::uint64_t seed) {
    return f0.sample(n, strategy, seed);
}

// ---------------------------------------------------------------------------
// JSON: {"type":"uniform_box","dim":1,"x":[lo,hi],"v":[lo,hi]}
//       {"type":"truncated_gaussian", ..., "x_mean", "x_sigma", "v_mean", "v_sigma"}
//       {"type":"two_bump","dim":1,"components":[{...},{...}],"weights":[w,1-w]}

namespace detail {
inline nlohmann::json component_json(const DensityComponent& c) {
    nlohmann::json j{{"x", {c.x_lo, c.x_hi}}, {"v", {c.v_lo, c.v_hi}}};
    if (c.x_sigma > 0.0) {
        j["x_mean"] = c.x_mean;
        j["x_sigma"] = c.x_sigma;
    }
    if (c.v_sigma > 0.0) {
        j["v_mean"] = c.v_mean;
        j["v_sigma"] = c.v_sigma;
    }
    return j;
}

inline DensityComponent component_from(const nlohmann::json& j) {
    DensityComponent c;
    const auto x = j.at("x").get<std::vector<double>>();
    const auto v = j.at("v").get<std::vector<double>>();
    if (x.size() != 2 || v.size() != 2) throw ConfigError("density box must be [lo, hi]");
    c.x_lo = x[0];
    c.x_hi = x[1];
    c.v_lo = v[0];
    c.v_hi = v[1];
    c.x_mean = j.value("x_mean", 0.0);
    c.x_sigma = j.value("x_sigma", 0.0);
    c.v_mean = j.value("v_mean", 0.0);
    c.v_sigma = j.value("v_sigma", 0.0);
    return c;
}
}  // namespace detail

inline void to_json(nlohmann::json& j, const DensitySpec& f) {
    if (f.components().size() == 1) {
        j = detail::component_json(f.components()[0]);
        j["type"] = f.tag();
        j["dim"] = f.dim();
        return;
    }
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : f.components()) comps.push_back(detail::component_json(c));
    j = nlohmann::json{{"type", f.tag()}, {"dim", f.dim()}, {"components", comps}, {"weights", f.weights()}};
}

inline DensitySpec density_from_json(const nlohmann::json& j) {
    try {
        const auto type = j.at("type").get<std::string>();
        const auto dim = j.value("dim", std::size_t{1});
        if (type == "uniform_box" || type == "truncated_gaussian") {
            return DensitySpec(dim, {detail::component_from(j)}, {1.0}, type);
        }
        if (type == "two_bump" || type == "mixture") {
            std::vector<DensityComponent> comps;
            for (const auto& c : j.at("components")) comps.push_back(detail::component_from(c));
            return DensitySpec(dim, std::move(comps), j.at("weights").get<std::vector<double>>(), type);
        }
        throw ConfigError("unknown density type '" + type + "'");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad density spec: ") + e.what());
    } catch (const DomainError& e) {
        throw ConfigError(std::string("invalid density: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Interaction field.

/// W[rho, f](x, v) for an empirical spatial measure rho and empirical phase
/// measure f given as an ensemble.
inline std::vector<double> field_W(const EmpiricalMeasure& spatial, const Ensemble& phase, std::span<const double> x,
                                   std::span<const double> v, const KernelSpec& kernel) {
    if (spatial.dim != phase.dim() || x.size() != phase.dim() || v.size() != phase.dim()) {
        throw DomainError("field_W: dimension mismatch");
    }
    const std::size_t d = phase.dim();
    std::vector<double> ref;
    ref.reserve(spatial.size());
    for (std::size_t k = 0; k < spatial.size(); ++k) ref.push_back(distance(spatial.atom(k), x));
    std::sort(ref.begin(), ref.end());
    const double inv = 1.0 / static_cast<double>(spatial.size());
    std::vector<double> out(d, 0.0);
    for (std::size_t k = 0; k < phase.size(); ++k) {
        const double r = distance(phase.position(k), x);
        const auto within = std::upper_bound(ref.begin(), ref.end(), r) - ref.begin();
        const double w = kernel.eval_unchecked(std::min(1.0, static_cast<double>(within) * inv));
        if (w == 0.0) continue;
        for (std::size_t c = 0; c < d; ++c) out[c] += w * (phase.velocity(k)[c] - v[c]);
    }
    for (double& c : out) c /= static_cast<double>(phase.size());
    return out;
}

/// W[S f0, f](x, v) with the rank counter taken from a density's spatial marginal.
inline std::vector<double> field_W(const DensitySpec& spatial, const Ensemble& phase, std::span<const double> x,
                                   std::span<const double> v, const KernelSpec& kernel) {
    if (spatial.dim() != phase.dim() || x.size() != phase.dim() || v.size() != phase.dim()) {
        throw DomainError("field_W: dimension mismatch");
    }
    const std::size_t d = phase.dim();
    std::vector<double> out(d, 0.0);
    for (std::size_t k = 0; k < phase.size(); ++k) {
        const double m = std::clamp(spatial.spatial_ball_mass(x, distance(phase.position(k), x)), 0.0, 1.0);
        const double w = kernel.eval_unchecked(m);
        if (w == 0.0) continue;
        for (std::size_t c = 0; c < d; ++c) out[c] += w * (phase.velocity(k)[c] - v[c]);
    }
    for (double& c : out) c /= static_cast<double>(phase.size());
    return out;
}

// ---------------------------------------------------------------------------
// Reference solution and intermediate dynamics.

struct ReferenceSolution {
    Trajectory trajectory;
    std::size_t n_ref = 0;
    SamplerStrategy sampler = SamplerStrategy::stratified;
    std::uint64_t seed = 0;
    double h = 0.0;
    std::optional<double> resolution_w1_spatial;  ///< W1(S mu_0^{N_ref}, S mu_0^{2 N_ref})
    std::optional<double> resolution_w1_phase;

    const Ensemble& initial() const { return trajectory.snapshots.front(); }
};

struct ReferenceOptions {
    std::size_t max_n_ref = 8192;
    bool spatial_resolution_check = true;
    bool phase_resolution_check = false;
};

inline ReferenceSolution reference_solution(const DensitySpec& f0, std::size_t n_ref, const KernelSpec& kernel, double T,
                                            const IntegratorConfig& cfg, std::uint64_t seed,
                                            const ReferenceOptions& opts = {}) {
    if (n_ref > opts.max_n_ref) {
        throw BudgetError("N_ref = " + std::to_string(n_ref) + " exceeds the cap of " + std::to_string(opts.max_n_ref));
    }
    ReferenceSolution ref;
    ref.n_ref = n_ref;
    ref.seed = seed;
    ref.h = cfg.h;
    const Ensemble ens0 = f0.sample(n_ref, SamplerStrategy::stratified, seed);
    if (opts.spatial_resolution_check || opts.phase_resolution_check) {
        const Ensemble check = f0.sample(2 * n_ref, SamplerStrategy::stratified, seed ^ 0x5bd1e995ULL);
        if (opts.spatial_resolution_check) {
            ref.resolution_w1_spatial = wasserstein1_weighted(WeightedMeasure(spatial_measure(ens0)),
                                                              WeightedMeasure(spatial_measure(check)));
        }
        if (opts.phase_resolution_check) {
            ref.resolution_w1_phase =
                wasserstein1_weighted(WeightedMeasure(phase_measure(ens0)), WeightedMeasure(phase_measure(check)));
        }
    }
    IntegratorConfig run_cfg = cfg;
    run_cfg.direction = TimeDirection::forward;
    ref.trajectory = integrate(ens0, kernel, T, run_cfg);
    return ref;
}

struct DeltaSeries {
    std::vector<double> times;
    std::vector<double> delta;  ///< max_i |X_i^f - X_i^N| + |V_i^f - V_i^N|
};

struct IntermediateResult {
    Trajectory intermediate;  ///< nu_t^N
    Trajectory plain;         ///< mu_t^N
    DeltaSeries delta;
};

namespace detail {

/// Rank weights from the reference's spatial distribution, frozen at the
/// start of each step; velocity averaging over the N evolving agents.
class IntermediateField {
public:
    IntermediateField(const ReferenceSolution& ref, const KernelSpec& kernel, double h)
        : ref_(&ref), kernel_(&kernel), h_(h) {
        stride_ = static_cast<std::size_t>(std::llround(h / ref.h));
        select(0);
    }

    void begin_step(double t) {
        const auto step = static_cast<std::size_t>(std::llround(t / h_));
        select(std::min(step * stride_, ref_->trajectory.snapshots.size() - 1));
    }

    TieCounts operator()(const Ensemble& s, double, std::vector<double>& dX, std::vector<double>& dV,
                         std::vector<std::uint64_t>* fp) {
        const std::size_t n = s.size();
        const std::size_t d = s.dim();
        const auto& v = s.velocities();
        dX.assign(v.begin(), v.end());
        dV.assign(n * d, 0.0);
        if (fp) fp->assign(n, 0);
        const double inv_ref = 1.0 / static_cast<double>(ref_n_);
        auto weight = [&](std::size_t within) {
            return kernel_->eval_unchecked(std::min(1.0, static_cast<double>(within) * inv_ref));
        };
        if (d == 1) {
            line_field(s, dV, weight);
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                const auto xi = s.position(i);
                dist_.clear();
                for (std::size_t k = 0; k < ref_n_; ++k) dist_.push_back(distance(snap_->position(k), xi));
                std::sort(dist_.begin(), dist_.end());
                for (std::size_t j = 0; j < n; ++j) {
                    if (j == i) continue;
                    const double r = distance(s.position(j), xi);
                    const auto within =
                        static_cast<std::size_t>(std::upper_bound(dist_.begin(), dist_.end(), r) - dist_.begin());
                    const double w = weight(within);
                    if (w == 0.0) continue;
                    for (std::size_t k = 0; k < d; ++k) dV[i * d + k] += w * (v[j * d + k] - v[i * d + k]);
                }
            }
        }
        for (double& c : dV) c *= 1.0 / static_cast<double>(n);
        return {};
    }

private:
    void select(std::size_t index) {
        snap_ = &ref_->trajectory.snapshots[index];
        ref_n_ = snap_->size();
        if (snap_->dim() == 1) {
            sorted_ = snap_->positions();
            std::sort(sorted_.begin(), sorted_.end());
        }
    }
    /// d = 1: for each focal agent walk its neighbours outward on each side;
    /// the reference ball count is then tracked by two monotone pointers.
    template <typename Weight>
    void line_field(const Ensemble& s, std::vector<double>& dV, Weight weight) {
        const std::size_t n = s.size();
        const auto& x = s.positions();
        const auto& v = s.velocities();
        order_.resize(n);
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        std::sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
        const std::size_t m = sorted_.size();
        for (std::size_t p = 0; p < n; ++p) {
            const std::size_t i = order_[p];
            const double xi = x[i];
            const auto pivot = static_cast<std::size_t>(std::lower_bound(sorted_.begin(), sorted_.end(), xi) - sorted_.begin());
            auto sweep = [&](auto next_j, std::size_t count) {
                std::size_t lo = pivot, hi = pivot;
                for (std::size_t q = 0; q < count; ++q) {
                    const std::size_t j = next_j(q);
                    const double r = std::abs(x[j] - xi);
                    while (hi < m && sorted_[hi] - xi <= r) ++hi;
                    while (lo > 0 && xi - sorted_[lo - 1] <= r) --lo;
                    const double w = weight(hi - lo);
                    if (w != 0.0) dV[i] += w * (v[j] - v[i]);
                }
            };
            sweep([&](std::size_t q) { return order_[p + 1 + q]; }, n - 1 - p);
            sweep([&](std::size_t q) { return order_[p - 1 - q]; }, p);
        }
    }

    const ReferenceSolution* ref_;
    const KernelSpec* kernel_;
    double h_;
    std::size_t stride_ = 1;
    const Ensemble* snap_ = nullptr;
    std::size_t ref_n_ = 0;
    std::vector<double> sorted_;
    std::vector<double> dist_;
    std::vector<std::size_t> order_;
};

}  // namespace detail

/// Integrates the intermediate dynamics and the plain N-agent dynamics from
/// the same initial data and records delta(t) on the common time grid.
inline IntermediateResult intermediate_dynamics(const ReferenceSolution& ref, const Ensemble& ens0,
                                                const KernelSpec& kernel, double T, IntegratorConfig cfg) {
    if (ens0.dim() != ref.initial().dim()) throw ConfigError("intermediate dynamics: dimension mismatch");
    if (16 * ens0.size() > ref.n_ref) {
        throw ConfigError("intermediate dynamics needs N <= N_ref / 16 (N = " + std::to_string(ens0.size()) +
                          ", N_ref = " + std::to_string(ref.n_ref) + ")");
    }
    const double ratio = cfg.h / ref.h;
    if (!(ratio >= 1.0 - 1e-9) || std::abs(ratio - std::round(ratio)) > 1e-9 * ratio) {
        throw ConfigError("intermediate step must be a whole multiple of the reference step");
    }
    const double ref_T = ref.trajectory.times.back();
    if (T > ref_T + 1e-9 * std::max(1.0, T)) throw ConfigError("reference trajectory is shorter than T");
    cfg.direction = TimeDirection::forward;

    IntermediateResult out;
    out.intermediate = detail::run_fixed_step(ens0, T, cfg, detail::IntermediateField(ref, kernel, cfg.h));
    out.plain = integrate(ens0, kernel, T, cfg);
    for (std::size_t s = 0; s < out.plain.snapshots.size(); ++s) {
        const auto& a = out.intermediate.snapshots[s];
        const auto& b = out.plain.snapshots[s];
        double worst = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            worst = std::max(worst, distance(a.position(i), b.position(i)) + distance(a.velocity(i), b.velocity(i)));
        }
        out.delta.times.push_back(out.plain.times[s]);
        out.delta.delta.push_back(worst);
    }
    return out;
}

}  // namespace topoflock
