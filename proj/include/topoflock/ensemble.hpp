#pragma once

// Phase-space state of N agents plus the proximity-rank machinery: the
// normalized neighbour counter M, per-agent rank tables with the iso-rank
// tie-break, and classification of configurations into regular points,
// regular iso-rank points and singular points.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "topoflock/error.hpp"

namespace topoflock {

enum class TimeDirection { forward, backward };

/// N agents in R^d x R^d, stored as flat row-major arrays (agent-major).
class Ensemble {
public:
    Ensemble() = default;

    Ensemble(std::size_t dim, std::vector<double> positions, std::vector<double> velocities)
        : dim_(dim), x_(std::move(positions)), v_(std::move(velocities)) {
        if (dim_ == 0) throw DomainError("ensemble dimension must be positive");
        if (x_.size() != v_.size()) throw DomainError("positions and velocities differ in count");
        if (x_.size() % dim_ != 0 || x_.empty()) throw DomainError("ensemble needs N >= 1 agents of dimension d");
        for (std::size_t k = 0; k < x_.size(); ++k) {
            if (!std::isfinite(x_[k]) || !std::isfinite(v_[k])) throw DomainError("non-finite ensemble coordinate");
        }
    }

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return dim_ == 0 ? 0 : x_.size() / dim_; }

    std::span<const double> position(std::size_t i) const { return {x_.data() + i * dim_, dim_}; }
    std::span<const double> velocity(std::size_t i) const { return {v_.data() + i * dim_, dim_}; }
    std::span<double> position(std::size_t i) { return {x_.data() + i * dim_, dim_}; }
    std::span<double> velocity(std::size_t i) { return {v_.data() + i * dim_, dim_}; }

    const std::vector<double>& positions() const { return x_; }
    const std::vector<double>& velocities() const { return v_; }
    std::vector<double>& positions() { return x_; }
    std::vector<double>& velocities() { return v_; }

    bool all_finite() const {
        return std::all_of(x_.begin(), x_.end(), [](double a) { return std::isfinite(a); }) &&
               std::all_of(v_.begin(), v_.end(), [](double a) { return std::isfinite(a); });
    }

    double max_speed() const {
        double best = 0.0;
        for (std::size_t i = 0; i < size(); ++i) best = std::max(best, norm(velocity(i)));
        return best;
    }
    double max_radius() const {
        double best = 0.0;
        for (std::size_t i = 0; i < size(); ++i) best = std::max(best, norm(position(i)));
        return best;
    }

    static double norm(std::span<const double> a) {
        double s = 0.0;
        for (double c : a) s += c * c;
        return std::sqrt(s);
    }

    friend bool operator==(const Ensemble&, const Ensemble&) = default;

private:
    std::size_t dim_ = 0;
    std::vector<double> x_;
    std::vector<double> v_;
};

/// Euclidean distance between two points.
inline double distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return std::sqrt(s);
}

/// (1/N) * #{k : |X_k - center| <= radius}, closed ball.
inline double count_M(std::span<const double> positions, std::size_t dim, std::span<const double> center,
                      double radius) {
    if (radius < 0.0) throw DomainError("count_M radius must be nonnegative");
    const std::size_t n = positions.size() / dim;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (distance(positions.subspan(k * dim, dim), center) <= radius) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

inline double count_M(const Ensemble& ens, std::span<const double> center, double radius) {
    return count_M(ens.positions(), ens.dim(), center, radius);
}

/// Rate of change of |x_j - x_i| along the current velocities. For coincident
/// points the distance grows at |v_j - v_i|.
inline double radial_velocity(const Ensemble& ens, std::size_t focal, std::size_t j) {
    const auto xi = ens.position(focal);
    const auto xj = ens.position(j);
    const auto vi = ens.velocity(focal);
    const auto vj = ens.velocity(j);
    double dist2 = 0.0, dot = 0.0, dv2 = 0.0;
    for (std::size_t k = 0; k < xi.size(); ++k) {
        const double dx = xj[k] - xi[k];
        const double dv = vj[k] - vi[k];
        dist2 += dx * dx;
        dot += dv * dx;
        dv2 += dv * dv;
    }
    if (dist2 == 0.0) return std::sqrt(dv2);
    return dot / std::sqrt(dist2);
}

/// Ordering key of agent j seen from the focal agent: |dx| in one dimension,
/// squared distance otherwise (monotone in the distance, no sqrt rounding).
inline double distance_key(const Ensemble& ens, std::size_t focal, std::size_t j) {
    const auto xi = ens.position(focal);
    const auto xj = ens.position(j);
    if (xi.size() == 1) return std::abs(xj[0] - xi[0]);
    double s = 0.0;
    for (std::size_t k = 0; k < xi.size(); ++k) {
        const double d = xj[k] - xi[k];
        s += d * d;
    }
    return s;
}

struct TieCounts {
    std::size_t by_velocity = 0;  ///< ties resolved by radial velocity
    std::size_t residual = 0;     ///< ties left to index order

    TieCounts& operator+=(const TieCounts& o) {
        by_velocity += o.by_velocity;
        residual += o.residual;
        return *this;
    }
};

struct RankTable {
    std::size_t focal = 0;
    std::vector<std::size_t> order;       ///< agents nearest first; order[0] is the focal agent
    std::vector<std::size_t> rank;        ///< rank[j] = 1-based position of agent j in `order`
    std::vector<bool> tied;               ///< per position: distance equal to a neighbour in the order
    std::vector<bool> residual_tie;       ///< per position: distance and radial velocity both tied
    TieCounts ties;

    double argument(std::size_t j) const {
        return static_cast<double>(rank[j]) / static_cast<double>(rank.size());
    }
};

namespace detail {

struct RankEntry {
    double key;
    std::size_t index;
};

/// Fills `order` for one focal agent; reusable scratch avoids reallocation.
inline TieCounts sort_by_rank(const Ensemble& ens, std::size_t focal, TimeDirection dir,
                              std::vector<RankEntry>& scratch, std::vector<std::size_t>& order,
                              std::vector<bool>* tied = nullptr, std::vector<bool>* residual = nullptr) {
    const std::size_t n = ens.size();
    scratch.clear();
    for (std::size_t j = 0; j < n; ++j) {
        if (j == focal) continue;
        scratch.push_back({distance_key(ens, focal, j), j});
    }
    std::sort(scratch.begin(), scratch.end(), [](const RankEntry& a, const RankEntry& b) {
        return a.key < b.key || (a.key == b.key && a.index < b.index);
    });

    TieCounts counts;
    order.assign(1, focal);
    if (tied) tied->assign(n, false);
    if (residual) residual->assign(n, false);

    const double sign = dir == TimeDirection::forward ? 1.0 : -1.0;
    std::vector<std::pair<double, std::size_t>> group;
    std::size_t a = 0;
    while (a < scratch.size()) {
        std::size_t b = a + 1;
        while (b < scratch.size() && scratch[b].key == scratch[a].key) ++b;
        if (b - a == 1) {
            order.push_back(scratch[a].index);
        } else {
            // equidistant group: smaller signed radial velocity is nearer, index last
            group.clear();
            for (std::size_t k = a; k < b; ++k) {
                group.emplace_back(sign * radial_velocity(ens, focal, scratch[k].index), scratch[k].index);
            }
            std::sort(group.begin(), group.end());
            const std::size_t base = order.size();
            for (std::size_t k = 0; k < group.size(); ++k) {
                order.push_back(group[k].second);
                if (tied) (*tied)[base + k] = true;
                const bool same_prev = k > 0 && group[k - 1].first == group[k].first;
                const bool same_next = k + 1 < group.size() && group[k + 1].first == group[k].first;
                if (same_prev || same_next) {
                    if (residual) (*residual)[base + k] = true;
                }
                if (k > 0) {
                    if (same_prev) {
                        ++counts.residual;
                    } else {
                        ++counts.by_velocity;
                    }
                }
            }
        }
        a = b;
    }
    return counts;
}

}  // namespace detail

/// Agents sorted by distance from agent `focal` with the iso-rank tie-break:
/// among equidistant agents the one whose distance grows more slowly ranks
/// nearer for forward time (reversed for backward time); exact residual ties
/// fall back to agent index and are flagged.
inline RankTable rank_table(const Ensemble& ens, std::size_t focal, TimeDirection dir = TimeDirection::forward) {
    if (focal >= ens.size()) throw DomainError("focal agent index out of range");
    RankTable table;
    table.focal = focal;
    std::vector<detail::RankEntry> scratch;
    table.ties = detail::sort_by_rank(ens, focal, dir, scratch, table.order, &table.tied, &table.residual_tie);
    table.rank.assign(ens.size(), 0);
    for (std::size_t p = 0; p < table.order.size(); ++p) table.rank[table.order[p]] = p + 1;
    return table;
}

struct Triad {
    std::size_t i;
    std::size_t j;
    std::size_t k;  ///< focal agent: |x_i - x_k| == |x_j - x_k|

    friend bool operator==(const Triad&, const Triad&) = default;
};

struct ConfigClass {
    enum class Kind { regular, iso_rank_regular, singular };
    Kind kind = Kind::regular;
    std::vector<Triad> iso_rank;  ///< every equidistant triad found
    std::vector<Triad> singular;  ///< the subset failing the separation test
};

inline const char* to_string(ConfigClass::Kind k) {
    switch (k) {
        case ConfigClass::Kind::regular: return "regular";
        case ConfigClass::Kind::iso_rank_regular: return "iso_rank_regular";
        case ConfigClass::Kind::singular: return "singular";
    }
    return "?";
}

/// Classifies a configuration. Two distances are considered equal when they
/// differ by at most `tol`; radial velocities likewise.
inline ConfigClass classify(const Ensemble& ens, double tol = 0.0) {
    if (tol < 0.0) throw DomainError("classification tolerance must be nonnegative");
    ConfigClass out;
    const std::size_t n = ens.size();
    std::vector<std::pair<double, std::size_t>> dists;
    for (std::size_t k = 0; k < n; ++k) {
        dists.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j != k) dists.emplace_back(distance(ens.position(j), ens.position(k)), j);
        }
        std::sort(dists.begin(), dists.end());
        for (std::size_t a = 0; a < dists.size(); ++a) {
            for (std::size_t b = a + 1; b < dists.size() && dists[b].first - dists[a].first <= tol; ++b) {
                const std::size_t i = std::min(dists[a].second, dists[b].second);
                const std::size_t j = std::max(dists[a].second, dists[b].second);
                out.iso_rank.push_back({i, j, k});
                const bool distinct_points = dists[a].first > tol && dists[b].first > tol &&
                                             distance(ens.position(i), ens.position(j)) > tol;
                const double ri = radial_velocity(ens, k, i);
                const double rj = radial_velocity(ens, k, j);
                if (!distinct_points || std::abs(ri - rj) <= tol) out.singular.push_back({i, j, k});
            }
        }
    }
    if (!out.singular.empty()) {
        out.kind = ConfigClass::Kind::singular;
    } else if (!out.iso_rank.empty()) {
        out.kind = ConfigClass::Kind::iso_rank_regular;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization. CSV columns: agent_id, x_1..x_d, v_1..v_d.

inline void write_csv(std::ostream& os, const Ensemble& ens) {
    const std::size_t d = ens.dim();
    os << "agent_id";
    for (std::size_t k = 1; k <= d; ++k) os << ",x_" << k;
    for (std::size_t k = 1; k <= d; ++k) os << ",v_" << k;
    os << '\n';
    const auto old = os.precision(17);
    for (std::size_t i = 0; i < ens.size(); ++i) {
        os << i;
        for (double c : ens.position(i)) os << ',' << c;
        for (double c : ens.velocity(i)) os << ',' << c;
        os << '\n';
    }
    os.precision(old);
}

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        cells.push_back(cell);
    }
    return cells;
}
}  // namespace detail

inline Ensemble read_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("empty ensemble CSV");
    const auto header = detail::split_csv_line(line);
    if (header.size() < 3 || (header.size() - 1) % 2 != 0 || header[0] != "agent_id") {
        throw ConfigError("ensemble CSV header must be agent_id,x_1..x_d,v_1..v_d");
    }
    const std::size_t d = (header.size() - 1) / 2;
    std::vector<double> x, v;
    std::size_t row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) throw ConfigError("ensemble CSV row " + std::to_string(row) + " has wrong width");
        try {
            for (std::size_t k = 0; k < d; ++k) x.push_back(std::stod(cells[1 + k]));
            for (std::size_t k = 0; k < d; ++k) v.push_back(std::stod(cells[1 + d + k]));
        } catch (const std::exception&) {
            throw ConfigError("ensemble CSV row " + std::to_string(row) + " is not numeric");
        }
    }
    try {
        return Ensemble(d, std::move(x), std::move(v));
    } catch (const DomainError& e) {
        throw ConfigError(std::string("invalid ensemble CSV: ") + e.what());
    }
}

// JSON form: {"dim": d, "positions": [[...], ...], "velocities": [[...], ...]}
inline void to_json(nlohmann::json& j, const Ensemble& ens) {
    nlohmann::json xs = nlohmann::json::array(), vs = nlohmann::json::array();
    for (std::size_t i = 0; i < ens.size(); ++i) {
        xs.push_back(std::vector<double>(ens.position(i).begin(), ens.position(i).end()));
        vs.push_back(std::vector<double>(ens.velocity(i).begin(), ens.velocity(i).end()));
    }
    j = nlohmann::json{{"dim", ens.dim()}, {"positions", xs}, {"velocities", vs}};
}

inline Ensemble ensemble_from_json(const nlohmann::json& j) {
    try {
        const auto& xs = j.at("positions");
        const auto& vs = j.at("velocities");
        std::size_t d = j.contains("dim") ? j.at("dim").get<std::size_t>() : 0;
        std::vector<double> x, v;
        for (const auto& p : xs) {
            const auto row = p.is_array() ? p.get<std::vector<double>>() : std::vector<double>{p.get<double>()};
            if (d == 0) d = row.size();
            if (row.size() != d) throw ConfigError("ensemble position has wrong dimension");
            x.insert(x.end(), row.begin(), row.end());
        }
        for (const auto& p : vs) {
            const auto row = p.is_array() ? p.get<std::vector<double>>() : std::vector<double>{p.get<double>()};
            if (row.size() != d) throw ConfigError("ensemble velocity has wrong dimension");
            v.insert(v.end(), row.begin(), row.end());
        }
        return Ensemble(d, std::move(x), std::move(v));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad ensemble spec: ") + e.what());
    } catch (const DomainError& e) {
        throw ConfigError(std::string("invalid ensemble: ") + e.what());
    }
}

/// The three-agent line configuration X = (-1, eps, 1), V = (-1, 0, v3).
inline Ensemble three_agent_line(double eps, double v3 = 1.0) {
    return Ensemble(1, {-1.0, eps, 1.0}, {-1.0, 0.0, v3});
}

}  // namespace topoflock
