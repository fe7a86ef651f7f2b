#pragma once

// Probability measures on the real line made of atoms and uniform pieces.
// Their distribution functions are piecewise linear with jumps, so both the
// interval discrepancy and W1 = int |F - G| are computed exactly.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "topoflock/error.hpp"
#include "topoflock/metrics/measure.hpp"

namespace topoflock {

struct LineMeasure {
    struct Atom {
        double x;
        double mass;
    };
    struct Piece {
        double lo;
        double hi;
        double mass;  ///< spread uniformly over [lo, hi]
    };
    std::vector<Atom> atoms;
    std::vector<Piece> pieces;

    static LineMeasure from(const WeightedMeasure& w) {
        if (w.dim != 1) throw DomainError("line measure needs a one-dimensional point measure");
        LineMeasure out;
        for (std::size_t i = 0; i < w.size(); ++i) out.atoms.push_back({w.points[i], w.weights[i]});
        return out;
    }
    static LineMeasure from(const EmpiricalMeasure& e) { return from(WeightedMeasure(e)); }

    static LineMeasure uniform(double lo, double hi) {
        if (!(hi > lo)) throw DomainError("uniform piece needs lo < hi");
        LineMeasure out;
        out.pieces.push_back({lo, hi, 1.0});
        return out;
    }

    double total_mass() const {
        double t = 0.0;
        for (const auto& a : atoms) t += a.mass;
        for (const auto& p : pieces) t += p.mass;
        return t;
    }
};

namespace detail {

/// Samples of G = F_a - F_b at every breakpoint x_k: left limit and value.
struct CdfDifference {
    std::vector<double> x;
    std::vector<double> left;   ///< G(x_k-)
    std::vector<double> right;  ///< G(x_k)
};

inline CdfDifference cdf_difference(const LineMeasure& a, const LineMeasure& b) {
    struct Event {
        double x;
        double jump;        ///< atom mass change of G at x
        double slope_step;  ///< change of dG/dx starting at x
    };
    std::vector<Event> ev;
    auto add = [&ev](const LineMeasure& m, double sign) {
        for (const auto& at : m.atoms) ev.push_back({at.x, sign * at.mass, 0.0});
        for (const auto& p : m.pieces) {
            const double dens = p.mass / (p.hi - p.lo);
            ev.push_back({p.lo, 0.0, sign * dens});
            ev.push_back({p.hi, 0.0, -sign * dens});
        }
    };
    add(a, 1.0);
    add(b, -1.0);
    std::sort(ev.begin(), ev.end(), [](const Event& p, const Event& q) { return p.x < q.x; });

    CdfDifference out;
    double g = 0.0, slope = 0.0, prev_x = 0.0;
    bool first = true;
    std::size_t k = 0;
    while (k < ev.size()) {
        const double x = ev[k].x;
        if (!first) g += slope * (x - prev_x);
        first = false;
        const double left = g;
        while (k < ev.size() && ev[k].x == x) {
            g += ev[k].jump;
            slope += ev[k].slope_step;
            ++k;
        }
        out.x.push_back(x);
        out.left.push_back(left);
        out.right.push_back(g);
        prev_x = x;
    }
    return out;
}

}  // namespace detail

/// sup over closed intervals I of |a(I) - b(I)|, exact. A degenerate interval
/// is the limit of shrinking balls, so point masses count.
inline double discrepancy_line(const LineMeasure& a, const LineMeasure& b) {
    const auto g = detail::cdf_difference(a, b);
    // interval [s, t] has mass difference G(t) - G(s-); scan the ordered
    // sequence G(x_0-), G(x_0), G(x_1-), G(x_1), ... for ordered pairs
    double run_min = 0.0, run_max = 0.0, best = 0.0;
    for (std::size_t k = 0; k < g.x.size(); ++k) {
        for (double val : {g.left[k], g.right[k]}) {
            run_min = std::min(run_min, val);
            run_max = std::max(run_max, val);
            best = std::max({best, val - run_min, run_max - val});
        }
    }
    return best;
}

/// int |F_a - F_b| dx, exact for atoms and uniform pieces.
inline double wasserstein1_line(const LineMeasure& a, const LineMeasure& b) {
    const auto g = detail::cdf_difference(a, b);
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < g.x.size(); ++k) {
        const double len = g.x[k + 1] - g.x[k];
        const double g0 = g.right[k];
        const double g1 = g.left[k + 1];
        if ((g0 >= 0.0) == (g1 >= 0.0)) {
            total += 0.5 * std::abs(g0 + g1) * len;
        } else {
            // linear segment crosses zero
            const double cut = len * std::abs(g0) / (std::abs(g0) + std::abs(g1));
            total += 0.5 * (std::abs(g0) * cut + std::abs(g1) * (len - cut));
        }
    }
    return total;
}

}  // namespace topoflock
