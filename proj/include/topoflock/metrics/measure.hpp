#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "topoflock/ensemble.hpp"
#include "topoflock/error.hpp"

namespace topoflock {

enum class Projection { phase, spatial, none };

/// Equal-weight point measure (1/N) sum_i delta_{p_i}.
struct EmpiricalMeasure {
    std::size_t dim = 1;
    std::vector<double> points;  ///< flat, N * dim
    Projection projection = Projection::none;

    EmpiricalMeasure() = default;
    EmpiricalMeasure(std::size_t d, std::vector<double> pts, Projection p = Projection::none)
        : dim(d), points(std::move(pts)), projection(p) {
        if (dim == 0 || points.size() % dim != 0) throw DomainError("point array does not match dimension");
    }

    std::size_t size() const { return points.size() / dim; }
    std::span<const double> atom(std::size_t i) const { return {points.data() + i * dim, dim}; }
};

/// General point measure sum_i w_i delta_{p_i} with w_i >= 0 summing to 1.
struct WeightedMeasure {
    std::size_t dim = 1;
    std::vector<double> points;
    std::vector<double> weights;

    WeightedMeasure() = default;
    WeightedMeasure(std::size_t d, std::vector<double> pts, std::vector<double> w)
        : dim(d), points(std::move(pts)), weights(std::move(w)) {
        if (dim == 0 || points.size() != weights.size() * dim) throw DomainError("weights do not match points");
        double total = 0.0;
        for (double x : weights) {
            if (!(x >= 0.0)) throw DomainError("negative measure weight");
            total += x;
        }
        if (std::abs(total - 1.0) > 1e-12) {
            throw DomainError("measure weights sum to " + std::to_string(total) + ", not 1");
        }
    }

    explicit WeightedMeasure(const EmpiricalMeasure& e)
        : dim(e.dim), points(e.points), weights(e.size(), 1.0 / static_cast<double>(e.size())) {}

    std::size_t size() const { return weights.size(); }
    std::span<const double> atom(std::size_t i) const { return {points.data() + i * dim, dim}; }

    /// True when every weight equals 1/size() exactly.
    bool uniform() const {
        const double w = 1.0 / static_cast<double>(size());
        for (double x : weights) {
            if (x != w) return false;
        }
        return true;
    }
};

/// Phase-space empirical measure (X_i, V_i) of an ensemble.
inline EmpiricalMeasure phase_measure(const Ensemble& ens) {
    const std::size_t d = ens.dim();
    std::vector<double> pts;
    pts.reserve(2 * d * ens.size());
    for (std::size_t i = 0; i < ens.size(); ++i) {
        pts.insert(pts.end(), ens.position(i).begin(), ens.position(i).end());
        pts.insert(pts.end(), ens.velocity(i).begin(), ens.velocity(i).end());
    }
    return EmpiricalMeasure(2 * d, std::move(pts), Projection::phase);
}

/// Spatial projection S mu: positions only.
inline EmpiricalMeasure spatial_measure(const Ensemble& ens) {
    return EmpiricalMeasure(ens.dim(), ens.positions(), Projection::spatial);
}

}  // namespace topoflock
