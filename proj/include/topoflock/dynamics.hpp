#pragma once

// N-agent topological Cucker-Smale dynamics:
//
//   dX_i/dt = V_i,   dV_i/dt = (1/N) sum_j K(n_j / N) (V_j - V_i)
//
// where n_j is the 1-based proximity rank of agent j seen from agent i.
// Ranks are recomputed at every Runge-Kutta stage; equidistant agents are
// ordered by the iso-rank tie-break of rank_table().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "topoflock/ensemble.hpp"
#include "topoflock/kernel.hpp"

namespace topoflock {

enum class Scheme { rk4, euler };

struct IntegratorConfig {
    double h = 1e-3;
    Scheme scheme = Scheme::rk4;
    TimeDirection direction = TimeDirection::forward;
    bool track_crossings = true;
    std::size_t max_logged_events = 100000;

    /// Step scaled to the force Lipschitz scale K(0).
    static IntegratorConfig for_kernel(const KernelSpec& k) {
        IntegratorConfig cfg;
        cfg.h = 1e-3 / std::max(1.0, k.at_zero());
        return cfg;
    }
};

struct CrossingEvent {
    std::size_t step;  ///< rank table differs between snapshot step-1 and step
    double time;
    std::size_t focal;
};

struct Trajectory {
    std::vector<double> times;
    std::vector<Ensemble> snapshots;
    std::vector<ConfigClass::Kind> classes;  ///< per snapshot, as seen by the exact-tie rank sort
    std::vector<CrossingEvent> events;       ///< capped at IntegratorConfig::max_logged_events
    std::size_t crossing_count = 0;          ///< total (step, focal) rank changes
    std::size_t singular_encounters = 0;
    std::vector<std::string> warnings;

    const Ensemble& final_state() const { return snapshots.back(); }
};

class IntegrationError : public std::runtime_error {
public:
    IntegrationError(const std::string& what, Ensemble last_valid, double time)
        : std::runtime_error(what), last_valid_(std::move(last_valid)), time_(time) {}

    const Ensemble& last_valid() const { return last_valid_; }
    double time() const { return time_; }

private:
    Ensemble last_valid_;
    double time_;
};

/// Number of fixed steps covering [0, T]: floor(T/h), tolerant of T/h
/// landing a rounding error below an integer.
inline std::size_t step_count(double T, double h) {
    const double ratio = T / h;
    const double nearest = std::round(ratio);
    if (std::abs(ratio - nearest) <= 1e-9 * std::max(1.0, ratio)) return static_cast<std::size_t>(nearest);
    return static_cast<std::size_t>(std::floor(ratio));
}

struct Derivative {
    std::vector<double> dX;
    std::vector<double> dV;
    TieCounts ties;
};

/// Reusable buffers for repeated right-hand-side evaluation.
class RhsWorkspace {
public:
    const std::vector<double>& weights_for(const KernelSpec& kernel, std::size_t n) {
        if (!cached_kernel_ || !(*cached_kernel_ == kernel) || table_.size() != n + 1) {
            cached_kernel_ = kernel;
            table_ = kernel.rank_weights(n);
        }
        return table_;
    }

    std::vector<detail::RankEntry> scratch;
    std::vector<std::size_t> order;
    std::vector<std::size_t> sorted;
    std::vector<double> xs;
    std::vector<double> vs;
    std::vector<std::uint64_t> fingerprints;

private:
    std::optional<KernelSpec> cached_kernel_;
    std::vector<double> table_;
};

namespace detail {

inline std::uint64_t mix_rank(std::uint64_t h, std::uint64_t r) {
    h ^= r + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return h;
}

/// One-dimensional rank sweeps for the focal agents at sorted positions
/// p0 .. p0 + lanes - 1, run in lockstep: for each, a two-pointer merge of
/// its left and right neighbours accumulating sum_j K(n_j/N) (v_j - v_i) as
/// ranks are assigned. `xs` and `vs` hold positions and velocities in
/// position order, padded with one sentinel on each side (xs = -inf / +inf).
/// ok[k] turns false when lane k meets an equal distance on one side; the
/// caller re-ranks that agent with the general sort.
template <std::size_t Lanes>
void merge_ranks_1d(const std::vector<double>& xs, const std::vector<double>& vs,
                    const std::vector<std::size_t>& sorted, std::size_t p0, std::size_t lanes, TimeDirection dir,
                    const std::vector<double>& weight, double* acc, std::uint64_t* fp, bool* ok, TieCounts& ties) {
    const std::size_t n = sorted.size();
    const bool forward = dir == TimeDirection::forward;
    double xi[Lanes], vi[Lanes], last_l[Lanes], last_r[Lanes], sum[Lanes];
    std::size_t l[Lanes], r[Lanes];
    std::uint64_t h[Lanes];
    TieCounts local[Lanes];
    for (std::size_t k = 0; k < Lanes; ++k) {
        const std::size_t p = std::min(p0 + k, n - 1);  // idle lanes repeat the last agent
        xi[k] = xs[p + 1];
        vi[k] = vs[p + 1];
        l[k] = p;
        r[k] = p + 2;
        last_l[k] = last_r[k] = -1.0;
        sum[k] = 0.0;
        h[k] = fp ? mix_rank(0, sorted[p]) : 0;
        ok[k] = true;
    }
    for (std::size_t next = 2; next <= n; ++next) {
        const double w = weight[next];
        for (std::size_t k = 0; k < Lanes; ++k) {
            const double dl = xi[k] - xs[l[k]];
            const double dr = xs[r[k]] - xi[k];
            bool take_left = dl < dr;
            if (dl == dr) [[unlikely]] {
                const double radial_l = vi[k] - vs[l[k]];  // (v_j - v_i) * (-1)
                const double radial_r = vs[r[k]] - vi[k];
                if (radial_l == radial_r) {
                    take_left = sorted[l[k] - 1] < sorted[r[k] - 1];
                    ++local[k].residual;
                } else {
                    take_left = forward ? radial_l < radial_r : radial_l > radial_r;
                    ++local[k].by_velocity;
                }
            }
            const std::size_t idx = take_left ? l[k] : r[k];
            const double dist = take_left ? dl : dr;
            if (dist == (take_left ? last_l[k] : last_r[k])) [[unlikely]] ok[k] = false;
            last_l[k] = take_left ? dl : last_l[k];
            last_r[k] = take_left ? last_r[k] : dr;
            l[k] -= take_left;
            r[k] += !take_left;
            sum[k] += w * (vs[idx] - vi[k]);
            if (fp) h[k] = mix_rank(h[k], sorted[idx - 1]);
        }
    }
    for (std::size_t k = 0; k < lanes; ++k) {
        acc[k] = sum[k];
        if (fp) fp[k] = h[k];
        if (ok[k]) ties += local[k];
    }
}

}  // namespace detail

/// Right-hand side into preallocated outputs. When `fingerprints` is given it
/// receives one hash of each focal agent's rank assignment.
inline TieCounts rhs_into(const Ensemble& ens, const KernelSpec& kernel, TimeDirection dir, std::vector<double>& dX,
                          std::vector<double>& dV, RhsWorkspace& ws, std::vector<std::uint64_t>* fingerprints = nullptr) {
    const std::size_t n = ens.size();
    const std::size_t d = ens.dim();
    const auto& weight = ws.weights_for(kernel, n);
    const auto& x = ens.positions();
    const auto& v = ens.velocities();
    dX.assign(v.begin(), v.end());
    dV.assign(n * d, 0.0);
    if (fingerprints) fingerprints->assign(n, 0);
    const double inv_n = 1.0 / static_cast<double>(n);
    TieCounts ties;

    bool fast_1d = d == 1 && n > 2;
    if (fast_1d) {
        ws.sorted.resize(n);
        std::iota(ws.sorted.begin(), ws.sorted.end(), std::size_t{0});
        std::sort(ws.sorted.begin(), ws.sorted.end(),
                  [&](std::size_t a, std::size_t b) { return x[a] < x[b] || (x[a] == x[b] && a < b); });
        ws.xs.resize(n + 2);
        ws.xs.front() = -std::numeric_limits<double>::infinity();
        ws.xs.back() = std::numeric_limits<double>::infinity();
        ws.vs.resize(n + 2);
        ws.vs.front() = ws.vs.back() = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            ws.xs[k + 1] = x[ws.sorted[k]];
            ws.vs[k + 1] = v[ws.sorted[k]];
        }
        for (std::size_t k = 1; k < n && fast_1d; ++k) {
            if (ws.xs[k + 1] == ws.xs[k]) fast_1d = false;
        }
    }

    auto general = [&](std::size_t i) {
        std::uint64_t fp = 0;
        ties += detail::sort_by_rank(ens, i, dir, ws.scratch, ws.order);
        for (std::size_t p = 0; p < n; ++p) {
            const std::size_t j = ws.order[p];
            if (fingerprints) fp = detail::mix_rank(fp, j);
            if (j == i) continue;
            const double w = weight[p + 1];
            if (w == 0.0) continue;
            for (std::size_t k = 0; k < d; ++k) dV[i * d + k] += w * (v[j * d + k] - v[i * d + k]);
        }
        for (std::size_t k = 0; k < d; ++k) dV[i * d + k] *= inv_n;
        if (fingerprints) (*fingerprints)[i] = fp;
    };

    if (!fast_1d) {
        for (std::size_t i = 0; i < n; ++i) general(i);
        return ties;
    }
    constexpr std::size_t lanes = 4;
    double acc[lanes];
    std::uint64_t fp[lanes];
    bool ok[lanes];
    for (std::size_t q = 0; q < n; q += lanes) {
        const std::size_t count = std::min(lanes, n - q);
        detail::merge_ranks_1d<lanes>(ws.xs, ws.vs, ws.sorted, q, count, dir, weight, acc,
                                      fingerprints ? fp : nullptr, ok, ties);
        for (std::size_t k = 0; k < count; ++k) {
            const std::size_t i = ws.sorted[q + k];
            if (!ok[k]) {
                general(i);
                continue;
            }
            dV[i] = acc[k] * inv_n;
            if (fingerprints) (*fingerprints)[i] = fp[k];
        }
    }
    return ties;
}

/// dX_i = V_i, dV_i = (1/N) sum_j K(n_j/N) (V_j - V_i).
inline Derivative rhs(const Ensemble& ens, const KernelSpec& kernel, TimeDirection dir = TimeDirection::forward) {
    Derivative out;
    RhsWorkspace ws;
    out.ties = rhs_into(ens, kernel, dir, out.dX, out.dV, ws);
    return out;
}

namespace detail {

inline ConfigClass::Kind kind_from_ties(const TieCounts& t) {
    if (t.residual > 0) return ConfigClass::Kind::singular;
    if (t.by_velocity > 0) return ConfigClass::Kind::iso_rank_regular;
    return ConfigClass::Kind::regular;
}

/// Generic fixed-step driver shared by the plain and intermediate dynamics.
/// `field(state, t, dX, dV, fingerprints)` returns the tie counts seen.
template <typename Field>
class Stepper {
public:
    Stepper(Scheme scheme, Field field) : scheme_(scheme), field_(std::move(field)) {}

    /// Advances `state` from time t by dt. Returns the ties of the first stage.
    TieCounts step(Ensemble& state, double t, double dt, std::vector<std::uint64_t>* fingerprints) {
        const std::size_t m = state.positions().size();
        TieCounts first = field_(state, t, k1x_, k1v_, fingerprints);
        if (scheme_ == Scheme::euler) {
            auto& X = state.positions();
            auto& V = state.velocities();
            for (std::size_t a = 0; a < m; ++a) {
                X[a] += dt * k1x_[a];
                V[a] += dt * k1v_[a];
            }
            return first;
        }
        stage(state, k1x_, k1v_, 0.5 * dt);
        field_(work_, t + 0.5 * dt, k2x_, k2v_, nullptr);
        stage(state, k2x_, k2v_, 0.5 * dt);
        field_(work_, t + 0.5 * dt, k3x_, k3v_, nullptr);
        stage(state, k3x_, k3v_, dt);
        field_(work_, t + dt, k4x_, k4v_, nullptr);
        auto& X = state.positions();
        auto& V = state.velocities();
        const double c = dt / 6.0;
        for (std::size_t a = 0; a < m; ++a) {
            X[a] += c * (k1x_[a] + 2.0 * k2x_[a] + 2.0 * k3x_[a] + k4x_[a]);
            V[a] += c * (k1v_[a] + 2.0 * k2v_[a] + 2.0 * k3v_[a] + k4v_[a]);
        }
        return first;
    }

    Field& field() { return field_; }

private:
    void stage(const Ensemble& base, const std::vector<double>& kx, const std::vector<double>& kv, double c) {
        work_ = base;
        auto& X = work_.positions();
        auto& V = work_.velocities();
        for (std::size_t a = 0; a < X.size(); ++a) {
            X[a] += c * kx[a];
            V[a] += c * kv[a];
        }
    }

    Scheme scheme_;
    Field field_;
    Ensemble work_;
    std::vector<double> k1x_, k1v_, k2x_, k2v_, k3x_, k3v_, k4x_, k4v_;
};

/// Runs a stepper over [0, T] recording every snapshot, rank crossings and
/// per-snapshot classes.
template <typename Field>
Trajectory run_fixed_step(const Ensemble& ens0, double T, const IntegratorConfig& cfg, Field field) {
    if (!(T > 0.0)) throw DomainError("integration horizon must be positive");
    if (!(cfg.h > 0.0)) throw DomainError("integration step must be positive");
    const std::size_t steps = step_count(T, cfg.h);
    const double sign = cfg.direction == TimeDirection::forward ? 1.0 : -1.0;

    Trajectory traj;
    traj.times.reserve(steps + 1);
    traj.snapshots.reserve(steps + 1);
    traj.classes.reserve(steps + 1);

    Stepper<Field> stepper(cfg.scheme, std::move(field));
    Ensemble state = ens0;
    std::vector<std::uint64_t> prev_fp, fp;
    auto* fp_ptr = cfg.track_crossings ? &fp : nullptr;

    auto note_fingerprints = [&](std::size_t step) {
        if (!cfg.track_crossings) return;
        if (!prev_fp.empty()) {
            for (std::size_t i = 0; i < fp.size(); ++i) {
                if (fp[i] != prev_fp[i]) {
                    ++traj.crossing_count;
                    if (traj.events.size() < cfg.max_logged_events) {
                        traj.events.push_back({step, sign * cfg.h * static_cast<double>(step), i});
                    }
                }
            }
        }
        prev_fp.swap(fp);
    };
    auto note_class = [&](const TieCounts& ties, double t) {
        const auto kind = kind_from_ties(ties);
        traj.classes.push_back(kind);
        if (kind == ConfigClass::Kind::singular) {
            ++traj.singular_encounters;
            if (traj.warnings.size() < 64) {
                traj.warnings.push_back("residual iso-rank tie at t=" + std::to_string(t) +
                                        "; ordered by agent index");
            }
        }
    };

    for (std::size_t s = 0; s < steps; ++s) {
        const double t = sign * cfg.h * static_cast<double>(s);
        traj.times.push_back(t);
        traj.snapshots.push_back(state);
        if constexpr (requires(Field& f) { f.begin_step(t); }) stepper.field().begin_step(t);
        const TieCounts ties = stepper.step(state, t, sign * cfg.h, fp_ptr);
        note_class(ties, t);
        note_fingerprints(s);
        if (!state.all_finite()) {
            throw IntegrationError("non-finite state at t=" + std::to_string(t + sign * cfg.h),
                                   traj.snapshots.back(), t);
        }
    }
    const double t_end = sign * cfg.h * static_cast<double>(steps);
    traj.times.push_back(t_end);
    traj.snapshots.push_back(state);
    // classify and fingerprint the final snapshot with one more field evaluation
    std::vector<double> dx, dv;
    const TieCounts ties = stepper.field()(state, t_end, dx, dv, fp_ptr);
    note_class(ties, t_end);
    note_fingerprints(steps);
    return traj;
}

}  // namespace detail

/// Fixed-step integration of the N-agent system over [0, T] (or [-T, 0] for
/// backward direction, stepping with -h).
inline Trajectory integrate(const Ensemble& ens0, const KernelSpec& kernel, double T, const IntegratorConfig& cfg) {
    auto field = [&kernel, dir = cfg.direction, ws = RhsWorkspace{}](const Ensemble& s, double, std::vector<double>& dX,
                                                                     std::vector<double>& dV,
                                                                     std::vector<std::uint64_t>* fp) mutable {
        return rhs_into(s, kernel, dir, dX, dV, ws, fp);
    };
    return detail::run_fixed_step(ens0, T, cfg, std::move(field));
}

struct DivergenceResult {
    double value = 0.0;
    bool degenerate = false;  ///< configuration was not a regular point
};

/// Phase-space divergence of the vector field, -(d/N) sum_i sum_{j != i} p_ij
/// with p_ij = K(M(X_i, |X_i - X_j|)) read straight from the closed-ball
/// counter. At regular points the ranks are a permutation and this is
/// -d N gamma_N.
inline DivergenceResult divergence(const Ensemble& ens, const KernelSpec& kernel) {
    const std::size_t n = ens.size();
    std::vector<double> dist;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dist.clear();
        for (std::size_t j = 0; j < n; ++j) dist.push_back(distance(ens.position(i), ens.position(j)));
        std::vector<double> sorted = dist;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const auto within = static_cast<std::size_t>(
                std::upper_bound(sorted.begin(), sorted.end(), dist[j]) - sorted.begin());
            total += kernel.eval_unchecked(static_cast<double>(within) / static_cast<double>(n));
        }
    }
    DivergenceResult out;
    out.value = -static_cast<double>(ens.dim()) / static_cast<double>(n) * total;
    out.degenerate = classify(ens).kind != ConfigClass::Kind::regular;
    return out;
}

struct VolumeCheck {
    double measured = 0.0;   ///< log|det D Phi_t| by central differences
    double predicted = 0.0;  ///< -d N gamma_N t
    bool inconclusive = false;
};

namespace detail {

/// log|det A| by LU with partial pivoting; A is n x n row-major.
inline double log_abs_det(std::vector<double> a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r) {
            if (std::abs(a[r * n + c]) > std::abs(a[piv * n + c])) piv = r;
        }
        if (a[piv * n + c] == 0.0) return -std::numeric_limits<double>::infinity();
        if (piv != c) {
            for (std::size_t k = 0; k < n; ++k) std::swap(a[c * n + k], a[piv * n + k]);
        }
        const double p = a[c * n + c];
        acc += std::log(std::abs(p));
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = a[r * n + c] / p;
            if (f == 0.0) continue;
            for (std::size_t k = c; k < n; ++k) a[r * n + k] -= f * a[c * n + k];
        }
    }
    return acc;
}

}  // namespace detail

/// Compares the log-determinant of the finite-difference Jacobian of the
/// time-t flow map with the constant contraction rate -d N gamma_N.
inline VolumeCheck volume_contraction_check(const Ensemble& ens0, const KernelSpec& kernel, double t,
                                            IntegratorConfig cfg, double fd_step = 1e-5) {
    if (ens0.size() < 2) throw DomainError("volume check needs N >= 2");
    cfg.direction = TimeDirection::forward;
    const std::size_t nd = ens0.positions().size();
    const std::size_t m = 2 * nd;

    VolumeCheck out;
    out.predicted = -static_cast<double>(ens0.dim()) * static_cast<double>(ens0.size()) *
                    kernel.gamma_N(static_cast<long>(ens0.size())) * t;

    auto flow = [&](const Ensemble& start, bool& clean) {
        const Trajectory traj = integrate(start, kernel, t, cfg);
        clean = traj.crossing_count == 0 &&
                std::all_of(traj.classes.begin(), traj.classes.end(),
                            [](auto k) { return k == ConfigClass::Kind::regular; });
        std::vector<double> z(traj.final_state().positions());
        const auto& vv = traj.final_state().velocities();
        z.insert(z.end(), vv.begin(), vv.end());
        return z;
    };

    bool clean = true;
    flow(ens0, clean);
    if (!clean || classify(ens0).kind != ConfigClass::Kind::regular) out.inconclusive = true;

    std::vector<double> jac(m * m);
    for (std::size_t c = 0; c < m; ++c) {
        Ensemble plus = ens0, minus = ens0;
        if (c < nd) {
            plus.positions()[c] += fd_step;
            minus.positions()[c] -= fd_step;
        } else {
            plus.velocities()[c - nd] += fd_step;
            minus.velocities()[c - nd] -= fd_step;
        }
        bool cp = true, cm = true;
        const auto zp = flow(plus, cp);
        const auto zm = flow(minus, cm);
        if (!cp || !cm) out.inconclusive = true;
        for (std::size_t r = 0; r < m; ++r) jac[r * m + c] = (zp[r] - zm[r]) / (2.0 * fd_step);
    }
    out.measured = detail::log_abs_det(std::move(jac), m);
    return out;
}

}  // namespace topoflock
