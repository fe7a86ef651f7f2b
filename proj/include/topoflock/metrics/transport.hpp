#pragma once

// Exact optimal transport between finite point measures with Euclidean
// ground cost. The solver is a successive-shortest-path min-cost flow on the
// bipartite supply/demand graph: each augmentation runs Dijkstra on reduced
// costs from one source with remaining supply and stops at the first sink
// with spare capacity. Equal-weight inputs are scaled to integer units so the
// flow amounts are exact; general weights use real-valued amounts.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <type_traits>
#include <vector>

#include "topoflock/error.hpp"
#include "topoflock/metrics/measure.hpp"

namespace topoflock {

namespace detail {

template <typename Amount>
struct FlowEntry {
    std::size_t row;
    double cost;
    Amount amount;
};

struct Arc {
    std::uint32_t col;
    double cost;
};

/// Min-cost transportation over a (possibly sparse) bipartite arc set.
/// Potentials keep every residual arc at nonnegative reduced cost
/// c_ij + pi_row_i - pi_col_j, so the final potentials certify optimality
/// against any arc, including arcs outside the working set.
template <typename Amount>
class TransportSolver {
public:
    TransportSolver(std::vector<Amount> supply, std::vector<Amount> capacity, std::vector<std::vector<Arc>> arcs)
        : supply_(std::move(supply)), cap_(std::move(capacity)), arcs_(std::move(arcs)) {
        m_ = supply_.size();
        n_ = cap_.size();
    }

    /// False when the working arc set cannot route all supply.
    bool solve() {
        constexpr double inf = std::numeric_limits<double>::infinity();
        const auto& arcs = arcs_;
        pi_col_.assign(n_, inf);
        for (std::size_t i = 0; i < m_; ++i) {
            for (const auto& a : arcs[i]) pi_col_[a.col] = std::min(pi_col_[a.col], a.cost);
        }
        for (auto& p : pi_col_) {
            if (p == inf) p = 0.0;
        }
        pi_row_.assign(m_, 0.0);
        flows_.assign(n_, {});
        // tight greedy start: each row fills its cheapest reduced-cost column
        for (std::size_t i = 0; i < m_; ++i) {
            double best = inf;
            const Arc* arg = nullptr;
            for (const auto& a : arcs[i]) {
                const double rc = a.cost - pi_col_[a.col];
                if (rc < best) {
                    best = rc;
                    arg = &a;
                }
            }
            if (!arg) return false;
            pi_row_[i] = -best;
            const Amount amt = std::min(supply_[i], cap_[arg->col]);
            if (amt > eps()) {
                flows_[arg->col].push_back({i, arg->cost, amt});
                supply_[i] -= amt;
                cap_[arg->col] -= amt;
            }
        }
        dist_.assign(m_ + n_, inf);
        pred_.assign(m_ + n_, 0);
        done_.assign(m_ + n_, 0);
        return resume();
    }

    /// Routes all remaining supply from the current potentials.
    bool resume() {
        for (std::size_t s = 0; s < m_; ++s) {
            while (supply_[s] > eps()) {
                if (!augment(s)) return false;
            }
        }
        return true;
    }

    /// Adds arcs to row i, withdraws its flow and lifts its potential so every
    /// arc of the row has nonnegative reduced cost again. Call resume() after.
    void reset_row(std::size_t i, const std::vector<Arc>& extra) {
        for (const auto& a : extra) arcs_[i].push_back(a);
        for (std::size_t j = 0; j < n_; ++j) {
            auto& list = flows_[j];
            for (std::size_t k = 0; k < list.size(); ++k) {
                if (list[k].row != i) continue;
                supply_[i] += list[k].amount;
                cap_[j] += list[k].amount;
                list[k] = list.back();
                list.pop_back();
                break;
            }
        }
        double lift = -std::numeric_limits<double>::infinity();
        for (const auto& a : arcs_[i]) lift = std::max(lift, pi_col_[a.col] - a.cost);
        pi_row_[i] = lift;
    }

    double total_cost() const {
        double total = 0.0;
        for (std::size_t j = 0; j < n_; ++j) {
            for (const auto& f : flows_[j]) total += static_cast<double>(f.amount) * f.cost;
        }
        return total;
    }

    double row_potential(std::size_t i) const { return pi_row_[i]; }
    double col_potential(std::size_t j) const { return pi_col_[j]; }

private:
    static constexpr Amount eps() {
        if constexpr (std::is_floating_point_v<Amount>) {
            return Amount(1e-15);
        } else {
            return Amount(0);
        }
    }

    bool augment(std::size_t s) {
        constexpr double inf = std::numeric_limits<double>::infinity();
        const auto& arcs = arcs_;
        touched_.clear();
        using Item = std::pair<double, std::size_t>;
        heap_.clear();
        auto push = [&](double d, std::size_t node) {
            heap_.push_back({d, node});
            std::push_heap(heap_.begin(), heap_.end(), std::greater<Item>{});
        };
        dist_[s] = 0.0;
        touched_.push_back(s);
        push(0.0, s);

        std::size_t target = n_;
        double reach = inf;
        while (!heap_.empty()) {
            std::pop_heap(heap_.begin(), heap_.end(), std::greater<Item>{});
            const auto [d, node] = heap_.back();
            heap_.pop_back();
            if (done_[node] || d > dist_[node]) continue;
            done_[node] = 1;
            if (node < m_) {
                const std::size_t i = node;
                const double base = d + pi_row_[i];
                for (const auto& a : arcs[i]) {
                    const std::size_t cj = m_ + a.col;
                    if (done_[cj]) continue;
                    const double nd = std::max(d, base + a.cost - pi_col_[a.col]);
                    if (nd < dist_[cj]) {
                        if (dist_[cj] == inf) touched_.push_back(cj);
                        dist_[cj] = nd;
                        pred_[cj] = i;
                        push(nd, cj);
                    }
                }
            } else {
                const std::size_t j = node - m_;
                if (cap_[j] > eps()) {
                    target = j;
                    reach = d;
                    break;
                }
                for (const auto& f : flows_[j]) {
                    if (done_[f.row]) continue;
                    const double nd = std::max(d, d - f.cost + pi_col_[j] - pi_row_[f.row]);
                    if (nd < dist_[f.row]) {
                        if (dist_[f.row] == inf) touched_.push_back(f.row);
                        dist_[f.row] = nd;
                        pred_[f.row] = j;
                        push(nd, f.row);
                    }
                }
            }
        }
        if (target == n_) {
            reset_marks();
            return false;
        }

        Amount delta = std::min(supply_[s], cap_[target]);
        for (std::size_t j = target;;) {
            const std::size_t i = pred_[m_ + j];
            if (i == s) break;
            const std::size_t jp = pred_[i];
            delta = std::min(delta, flow_of(i, jp));
            j = jp;
        }
        for (std::size_t j = target;;) {
            const std::size_t i = pred_[m_ + j];
            add_flow(i, j, delta, arc_cost(i, j));
            if (i == s) break;
            const std::size_t jp = pred_[i];
            add_flow(i, jp, -delta, 0.0);
            j = jp;
        }
        supply_[s] -= delta;
        cap_[target] -= delta;

        // pi += min(dist, reach) on settled nodes, reach elsewhere
        for (std::size_t i = 0; i < m_; ++i) pi_row_[i] += done_[i] ? std::min(dist_[i], reach) : reach;
        for (std::size_t j = 0; j < n_; ++j) pi_col_[j] += done_[m_ + j] ? std::min(dist_[m_ + j], reach) : reach;
        reset_marks();
        return true;
    }

    void reset_marks() {
        constexpr double inf = std::numeric_limits<double>::infinity();
        for (std::size_t node : touched_) {
            dist_[node] = inf;
            done_[node] = 0;
        }
    }

    double arc_cost(std::size_t i, std::size_t j) const {
        for (const auto& a : arcs_[i]) {
            if (a.col == j) return a.cost;
        }
        return 0.0;
    }

    Amount flow_of(std::size_t i, std::size_t j) const {
        for (const auto& f : flows_[j]) {
            if (f.row == i) return f.amount;
        }
        return Amount(0);
    }

    void add_flow(std::size_t i, std::size_t j, Amount delta, double cost) {
        auto& list = flows_[j];
        for (std::size_t k = 0; k < list.size(); ++k) {
            if (list[k].row == i) {
                list[k].amount += delta;
                if (list[k].amount <= eps()) {
                    list[k] = list.back();
                    list.pop_back();
                }
                return;
            }
        }
        list.push_back({i, cost, delta});
    }

    std::size_t m_ = 0, n_ = 0;
    std::vector<Amount> supply_, cap_;
    std::vector<std::vector<Arc>> arcs_;
    std::vector<double> pi_row_, pi_col_, dist_;
    std::vector<std::size_t> pred_, touched_;
    std::vector<char> done_;
    std::vector<std::pair<double, std::size_t>> heap_;
    std::vector<std::vector<FlowEntry<Amount>>> flows_;
};

inline double euclidean(const double* p, const double* q, std::size_t dim) {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
        const double d = p[k] - q[k];
        s += d * d;
    }
    return std::sqrt(s);
}

/// Solves on the k nearest columns of every row, then checks the final
/// potentials against all m*n arcs. Rows with a violated arc receive those
/// arcs and are re-routed warm; the loop ends when the dual check passes,
/// which certifies the plan as optimal on the complete graph.
template <typename Amount>
double transport_certified(const std::vector<double>& src, const std::vector<double>& dst, std::size_t dim,
                           const std::vector<Amount>& supply, const std::vector<Amount>& cap) {
    const std::size_t m = supply.size();
    const std::size_t n = cap.size();
    auto cost = [&](std::size_t i, std::size_t j) { return euclidean(src.data() + i * dim, dst.data() + j * dim, dim); };
    std::vector<std::pair<double, std::uint32_t>> row;
    for (std::size_t k = std::min<std::size_t>(n, 16);; k = std::min(n, 2 * k)) {
        std::vector<std::vector<Arc>> arcs(m);
        for (std::size_t i = 0; i < m; ++i) {
            row.resize(n);
            for (std::size_t j = 0; j < n; ++j) row[j] = {cost(i, j), static_cast<std::uint32_t>(j)};
            if (k < n) std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k), row.end());
            arcs[i].reserve(k);
            for (std::size_t q = 0; q < k; ++q) arcs[i].push_back({row[q].second, row[q].first});
        }
        TransportSolver<Amount> solver(supply, cap, std::move(arcs));
        bool feasible = solver.solve();
        std::vector<Arc> extra;
        while (feasible && k < n) {
            double scale = 0.0;
            for (std::size_t i = 0; i < m; ++i) scale = std::max(scale, std::abs(solver.row_potential(i)));
            for (std::size_t j = 0; j < n; ++j) scale = std::max(scale, std::abs(solver.col_potential(j)));
            const double tol = 1e-12 * std::max(1.0, scale);
            bool violated = false;
            for (std::size_t i = 0; i < m; ++i) {
                extra.clear();
                for (std::size_t j = 0; j < n; ++j) {
                    const double c = cost(i, j);
                    if (c + solver.row_potential(i) - solver.col_potential(j) < -tol) {
                        extra.push_back({static_cast<std::uint32_t>(j), c});
                    }
                }
                if (!extra.empty()) {
                    solver.reset_row(i, extra);
                    violated = true;
                }
            }
            if (!violated) break;
            feasible = solver.resume();
        }
        if (feasible) return solver.total_cost();
        if (k == n) throw DomainError("transport problem infeasible");
    }
}

/// Exact W1 on the real line: integral of |F - G| over the merged support.
inline double wasserstein1_line(const WeightedMeasure& a, const WeightedMeasure& b) {
    struct Event {
        double x;
        double dw;  ///< jump of F - G
    };
    std::vector<Event> ev;
    ev.reserve(a.size() + b.size());
    for (std::size_t i = 0; i < a.size(); ++i) ev.push_back({a.points[i], a.weights[i]});
    for (std::size_t i = 0; i < b.size(); ++i) ev.push_back({b.points[i], -b.weights[i]});
    std::sort(ev.begin(), ev.end(), [](const Event& p, const Event& q) { return p.x < q.x; });
    double diff = 0.0, total = 0.0;
    for (std::size_t k = 0; k + 1 < ev.size(); ++k) {
        diff += ev[k].dw;
        total += std::abs(diff) * (ev[k + 1].x - ev[k].x);
    }
    return total;
}

}  // namespace detail

/// Minimum-cost transport between two arbitrary point measures.
inline double wasserstein1_weighted(const WeightedMeasure& mu, const WeightedMeasure& nu) {
    if (mu.dim != nu.dim) throw DomainError("wasserstein1: dimension mismatch");
    if (mu.size() == 0 || nu.size() == 0) throw DomainError("wasserstein1: empty measure");
    if (mu.dim == 1) return detail::wasserstein1_line(mu, nu);

    // the larger side supplies so each augmentation scans the shorter side
    const bool swap_sides = mu.size() < nu.size();
    const WeightedMeasure& src = swap_sides ? nu : mu;
    const WeightedMeasure& dst = swap_sides ? mu : nu;
    if (src.uniform() && dst.uniform()) {
        const auto m = static_cast<std::int64_t>(src.size());
        const auto n = static_cast<std::int64_t>(dst.size());
        const std::int64_t g = std::gcd(m, n);
        std::vector<std::int64_t> supply(src.size(), n / g), cap(dst.size(), m / g);
        return detail::transport_certified<std::int64_t>(src.points, dst.points, src.dim, supply, cap) /
               static_cast<double>(m * (n / g));
    }
    // absorb the allowed 1e-12 normalisation slack on the demand side
    std::vector<double> cap(dst.weights);
    double sum_src = std::accumulate(src.weights.begin(), src.weights.end(), 0.0);
    double sum_dst = std::accumulate(cap.begin(), cap.end(), 0.0);
    cap.back() += std::max(0.0, sum_src - sum_dst) + 1e-13;
    return detail::transport_certified<double>(src.points, dst.points, src.dim, src.weights, cap) / sum_src;
}

/// W1 between equal-count empirical measures: the optimal assignment cost
/// averaged over atoms. In one dimension the sorted coupling is optimal.
inline double wasserstein1(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
    if (mu.dim != nu.dim) throw DomainError("wasserstein1: dimension mismatch");
    if (mu.size() != nu.size()) throw DomainError("wasserstein1: atom counts differ; use wasserstein1_weighted");
    if (mu.size() == 0) throw DomainError("wasserstein1: empty measure");
    if (mu.dim == 1) {
        std::vector<double> a(mu.points), b(nu.points);
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        double total = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
        return total / static_cast<double>(a.size());
    }
    std::vector<std::int64_t> ones(mu.size(), 1);
    return detail::transport_certified<std::int64_t>(mu.points, nu.points, mu.dim, ones, ones) /
           static_cast<double>(mu.size());
}

}  // namespace topoflock
