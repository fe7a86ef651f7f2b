#pragma once

// Communication kernel K: [0,1] -> R+, applied to the normalized proximity
// rank of a neighbour. Only piecewise-linear shapes are supported, which keeps
// the integral, the Riemann sums and the Lipschitz constant exact.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "topoflock/error.hpp"

namespace topoflock {

struct KernelBreakpoint {
    double m;
    double value;

    friend bool operator==(const KernelBreakpoint&, const KernelBreakpoint&) = default;
};

class KernelSpec {
public:
    /// Breakpoints must start at m = 0, end at m = 1, be strictly increasing
    /// in m, and carry nonnegative nonincreasing values.
    explicit KernelSpec(std::vector<KernelBreakpoint> breakpoints)
        : points_(std::move(breakpoints)) {
        validate();
        lipschitz_ = 0.0;
        for (std::size_t k = 1; k < points_.size(); ++k) {
            const double slope = (points_[k].value - points_[k - 1].value) /
                                 (points_[k].m - points_[k - 1].m);
            lipschitz_ = std::max(lipschitz_, std::abs(slope));
        }
    }

    static KernelSpec constant(double c) { return KernelSpec({{0.0, c}, {1.0, c}}); }

    /// a * (1 - m): linear decay to zero at full rank.
    static KernelSpec linear(double a) { return KernelSpec({{0.0, a}, {1.0, 0.0}}); }

    /// 9(1-m), the smallest linear kernel with K(2/3) = 3 and K(1) = 0.
    static KernelSpec golden() { return linear(9.0); }

    std::span<const KernelBreakpoint> breakpoints() const { return points_; }
    double lipschitz_constant() const { return lipschitz_; }
    double at_zero() const { return points_.front().value; }

    double operator()(double m) const {
        if (!(m >= 0.0 && m <= 1.0)) {
            throw DomainError("kernel argument outside [0,1]: " + std::to_string(m));
        }
        return eval_unchecked(m);
    }

    /// Caller guarantees m in [0,1].
    double eval_unchecked(double m) const {
        auto it = std::upper_bound(points_.begin(), points_.end(), m,
                                   [](double x, const KernelBreakpoint& p) { return x < p.m; });
        if (it == points_.end()) return points_.back().value;
        if (it == points_.begin()) return points_.front().value;
        const auto& hi = *it;
        const auto& lo = *(it - 1);
        if (m == lo.m) return lo.value;
        const double w = (m - lo.m) / (hi.m - lo.m);
        return lo.value + w * (hi.value - lo.value);
    }

    /// Integral of K over [0,1] (exact trapezoid sum).
    double gamma() const {
        double total = 0.0;
        for (std::size_t k = 1; k < points_.size(); ++k) {
            total += 0.5 * (points_[k].value + points_[k - 1].value) *
                     (points_[k].m - points_[k - 1].m);
        }
        return total;
    }

    /// (1/N) * sum_{n=2}^{N} K(n/N).
    double gamma_N(long N) const {
        if (N < 2) throw DomainError("gamma_N requires N >= 2");
        double total = 0.0;
        for (long n = 2; n <= N; ++n) total += eval_unchecked(static_cast<double>(n) / N);
        return total / static_cast<double>(N);
    }

    /// table[n] = K(n/N) for n = 0..N; index by 1-based rank.
    std::vector<double> rank_weights(std::size_t N) const {
        std::vector<double> table(N + 1);
        for (std::size_t n = 0; n <= N; ++n) {
            table[n] = eval_unchecked(static_cast<double>(n) / static_cast<double>(N));
        }
        return table;
    }

    friend bool operator==(const KernelSpec& a, const KernelSpec& b) { return a.points_ == b.points_; }

private:
    void validate() const {
        if (points_.size() < 2) throw DomainError("kernel needs at least two breakpoints");
        if (points_.front().m != 0.0 || points_.back().m != 1.0) {
            throw DomainError("kernel breakpoints must span exactly [0,1]");
        }
        for (std::size_t k = 0; k < points_.size(); ++k) {
            const auto& p = points_[k];
            if (!std::isfinite(p.m) || !std::isfinite(p.value)) throw DomainError("non-finite kernel breakpoint");
            if (p.value < 0.0) throw DomainError("kernel must be nonnegative");
            if (k > 0) {
                if (!(p.m > points_[k - 1].m)) throw DomainError("kernel breakpoints must be strictly increasing");
                if (p.value > points_[k - 1].value) throw DomainError("kernel must be nonincreasing");
            }
        }
    }

    std::vector<KernelBreakpoint> points_;
    double lipschitz_ = 0.0;
};

// JSON form: {"type":"piecewise_linear","breakpoints":[[m,value],...]}
inline void to_json(nlohmann::json& j, const KernelSpec& k) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : k.breakpoints()) pts.push_back({p.m, p.value});
    j = nlohmann::json{{"type", "piecewise_linear"}, {"breakpoints", pts}};
}

inline KernelSpec kernel_from_json(const nlohmann::json& j) {
    try {
        const auto type = j.at("type").get<std::string>();
        if (type == "constant") return KernelSpec::constant(j.at("value").get<double>());
        if (type != "piecewise_linear") throw ConfigError("unknown kernel type '" + type + "'");
        std::vector<KernelBreakpoint> pts;
        for (const auto& p : j.at("breakpoints")) {
            if (!p.is_array() || p.size() != 2) throw ConfigError("kernel breakpoint must be [m, value]");
            pts.push_back({p[0].get<double>(), p[1].get<double>()});
        }
        return KernelSpec(std::move(pts));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad kernel spec: ") + e.what());
    } catch (const DomainError& e) {
        throw ConfigError(std::string("invalid kernel: ") + e.what());
    }
}

}  // namespace topoflock
