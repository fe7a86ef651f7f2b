#pragma once

// Discrepancy D(a, b) = sup over closed balls B of |a(B) - b(B)|.
//
// On the line the supremum is computed exactly. In higher dimension no
// finite procedure reaches every centre, so a bracket is returned:
//   lower: balls centred at every atom of either measure, every radius that
//          changes the ball's content (a sup over an explicit family);
//   upper: a grid of centres with half-diagonal s over the bounding box of
//          the atoms enlarged by the atom-set diameter; every ball centred in
//          that box is sandwiched between B(g, r - s) and B(g, r + s) for
//          its nearest grid point g. Successive dyadic grids are tried and
//          the smallest upper value kept.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "topoflock/error.hpp"
#include "topoflock/metrics/line.hpp"
#include "topoflock/metrics/measure.hpp"

namespace topoflock {

struct DiscrepancyBounds {
    double lower = 0.0;
    double upper = 1.0;
    bool exact = false;
};

namespace detail {

struct SignedAtom {
    double dist;
    double mass;  ///< +w for the first measure, -w for the second
};

inline void radial_profile(std::span<const double> center, const WeightedMeasure& a, const WeightedMeasure& b,
                           std::vector<SignedAtom>& out) {
    out.clear();
    for (std::size_t i = 0; i < a.size(); ++i) out.push_back({distance(a.atom(i), center), a.weights[i]});
    for (std::size_t i = 0; i < b.size(); ++i) out.push_back({distance(b.atom(i), center), -b.weights[i]});
    std::sort(out.begin(), out.end(), [](const SignedAtom& p, const SignedAtom& q) { return p.dist < q.dist; });
}

/// sup over closed radii of |a(B(c,r)) - b(B(c,r))|.
inline double best_radius(const std::vector<SignedAtom>& prof) {
    double diff = 0.0, best = 0.0;
    std::size_t k = 0;
    while (k < prof.size()) {
        const double r = prof[k].dist;
        while (k < prof.size() && prof[k].dist == r) diff += prof[k++].mass;
        best = std::max(best, std::abs(diff));
    }
    return best;
}

/// sup_r [ p(B(g, r + s)) - q(B_open(g, r - s)) ] for radial profiles of a
/// single measure each, sorted by distance.
inline double sandwich(const std::vector<double>& pd, const std::vector<double>& pw, const std::vector<double>& qd,
                       const std::vector<double>& qw, double s) {
    // candidate outer radii u = r + s >= s: u = s and every jump of p beyond s
    double best = 0.0;
    double p_mass = 0.0;
    std::size_t ip = 0, iq = 0;
    double q_open = 0.0;
    auto eval = [&](double u) {
        while (ip < pd.size() && pd[ip] <= u) p_mass += pw[ip++];
        const double inner = u - 2.0 * s;
        while (iq < qd.size() && qd[iq] < inner) q_open += qw[iq++];
        best = std::max(best, p_mass - q_open);
    };
    eval(s);
    for (std::size_t k = 0; k < pd.size(); ++k) {
        if (pd[k] > s) eval(pd[k]);
    }
    return best;
}

}  // namespace detail

inline DiscrepancyBounds discrepancy_bounds(const WeightedMeasure& a, const WeightedMeasure& b,
                                            std::size_t max_grid_points = 4096) {
    if (a.dim != b.dim) throw DomainError("discrepancy: dimension mismatch");
    DiscrepancyBounds out;
    if (a.dim == 1) {
        out.lower = out.upper = discrepancy_line(LineMeasure::from(a), LineMeasure::from(b));
        out.exact = true;
        return out;
    }
    const std::size_t d = a.dim;

    std::vector<detail::SignedAtom> prof;
    auto scan_centers = [&](const WeightedMeasure& m) {
        for (std::size_t i = 0; i < m.size(); ++i) {
            detail::radial_profile(m.atom(i), a, b, prof);
            out.lower = std::max(out.lower, detail::best_radius(prof));
        }
    };
    scan_centers(a);
    scan_centers(b);

    std::vector<double> lo(d, std::numeric_limits<double>::infinity()), hi(d, -lo[0]);
    for (const WeightedMeasure* m : {&a, &b}) {
        for (std::size_t i = 0; i < m->size(); ++i) {
            for (std::size_t k = 0; k < d; ++k) {
                lo[k] = std::min(lo[k], m->atom(i)[k]);
                hi[k] = std::max(hi[k], m->atom(i)[k]);
            }
        }
    }
    double diam = 0.0;
    for (std::size_t k = 0; k < d; ++k) diam += (hi[k] - lo[k]) * (hi[k] - lo[k]);
    diam = std::sqrt(diam);
    for (std::size_t k = 0; k < d; ++k) {
        lo[k] -= diam;
        hi[k] += diam;
    }

    std::vector<double> ad, aw, bd, bw, g(d);
    std::vector<std::pair<double, double>> tmp;
    auto profile_of = [&](const WeightedMeasure& m, std::vector<double>& dist, std::vector<double>& w) {
        tmp.clear();
        for (std::size_t i = 0; i < m.size(); ++i) tmp.emplace_back(distance(m.atom(i), g), m.weights[i]);
        std::sort(tmp.begin(), tmp.end());
        dist.clear();
        w.clear();
        for (const auto& [x, y] : tmp) {
            dist.push_back(x);
            w.push_back(y);
        }
    };

    out.upper = 1.0;
    for (std::size_t per_axis = 2;; per_axis *= 2) {
        std::size_t total = 1;
        for (std::size_t k = 0; k < d; ++k) total *= per_axis;
        if (total > max_grid_points) break;
        double half_diag = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            const double cell = (hi[k] - lo[k]) / static_cast<double>(per_axis);
            half_diag += 0.25 * cell * cell;
        }
        half_diag = std::sqrt(half_diag);
        double level_upper = 0.0;
        for (std::size_t idx = 0; idx < total; ++idx) {
            std::size_t rest = idx;
            for (std::size_t k = 0; k < d; ++k) {
                const std::size_t c = rest % per_axis;
                rest /= per_axis;
                g[k] = lo[k] + (static_cast<double>(c) + 0.5) * (hi[k] - lo[k]) / static_cast<double>(per_axis);
            }
            profile_of(a, ad, aw);
            profile_of(b, bd, bw);
            level_upper = std::max({level_upper, detail::sandwich(ad, aw, bd, bw, half_diag),
                                    detail::sandwich(bd, bw, ad, aw, half_diag)});
        }
        out.upper = std::min(out.upper, level_upper);
    }
    out.upper = std::max(out.upper, out.lower);
    return out;
}

inline DiscrepancyBounds discrepancy_bounds(const EmpiricalMeasure& a, const EmpiricalMeasure& b,
                                            std::size_t max_grid_points = 4096) {
    return discrepancy_bounds(WeightedMeasure(a), WeightedMeasure(b), max_grid_points);
}

/// Exact discrepancy on the line; throws for d >= 2 (use discrepancy_bounds).
inline double discrepancy(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
    if (a.dim != b.dim) throw DomainError("discrepancy: dimension mismatch");
    if (a.dim != 1) throw DomainError("exact discrepancy is one-dimensional; use discrepancy_bounds");
    return discrepancy_line(LineMeasure::from(a), LineMeasure::from(b));
}

inline double discrepancy(const EmpiricalMeasure& a, const LineMeasure& rho) {
    if (a.dim != 1) throw DomainError("discrepancy against a line density needs d = 1");
    return discrepancy_line(LineMeasure::from(a), rho);
}

}  // namespace topoflock
