// topoflock command-line driver.
//
//   topoflock simulate|golden|demo-discontinuity|converge|dw1-probe --config <file.json> --out <dir>
//   topoflock metrics <a.csv> <b.csv> [--out <dir>]
//
// Exit status: 0 pass, 1 check failed, 2 configuration error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "topoflock/topoflock.hpp"

namespace fs = std::filesystem;
using namespace topoflock;

namespace {

constexpr int exit_pass = 0;
constexpr int exit_fail = 1;
constexpr int exit_config = 2;

nlohmann::json load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config '" + path + "'");
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
}

ExperimentConfig load_config(const std::string& path, ExperimentTag expected) {
    if (path.empty()) {
        ExperimentConfig c;
        c.tag = expected;
        return c;
    }
    auto c = experiment_from_json(load_json(path));
    if (c.tag != expected) {
        throw ConfigError(std::string("config is for '") + to_string(c.tag) + "', not '" + to_string(expected) + "'");
    }
    return c;
}

fs::path prepare(const std::string& out) {
    fs::path dir(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + out + "'");
    return dir;
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream os(p);
    if (!os) throw ConfigError("cannot write " + p.string());
    return os;
}

/// Point cloud from CSV: header row, one point per line; an agent_id
/// column is dropped, every other column is a coordinate.
EmpiricalMeasure read_points(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("'" + path + "' is empty");
    const auto header = detail::split_csv_line(line);
    const std::size_t skip = !header.empty() && header[0] == "agent_id" ? 1 : 0;
    const std::size_t d = header.size() - skip;
    if (d == 0) throw ConfigError("'" + path + "' has no coordinate columns");
    std::vector<double> pts;
    while (std::getline(is, line)) {
        if (line.empty() || line == "\r") continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) throw ConfigError("'" + path + "': row width differs from header");
        try {
            for (std::size_t k = skip; k < cells.size(); ++k) pts.push_back(std::stod(cells[k]));
        } catch (const std::exception&) {
            throw ConfigError("'" + path + "': non-numeric cell");
        }
    }
    if (pts.empty()) throw ConfigError("'" + path + "' has no points");
    return EmpiricalMeasure(d, std::move(pts));
}

int cmd_golden(const std::string& out) {
    const auto rep = run_golden();
    const auto dir = prepare(out);
    write_json_file(dir / "golden.json", rep);
    for (const auto& b : rep.branches) {
        std::cout << "eps = " << b.eps << ": max error " << b.max_error << (b.crossing_free ? "" : " (crossing)") << '\n';
    }
    if (rep.invalidated) std::cout << "golden window invalidated by a rank crossing\n";
    std::cout << (rep.pass ? "golden: pass" : "golden: FAIL") << '\n';
    return rep.pass ? exit_pass : exit_fail;
}

int cmd_discontinuity(const std::string& config, const std::string& out) {
    double eps = 1e-6;
    if (!config.empty()) eps = load_config(config, ExperimentTag::discontinuity).eps_small;
    const auto rep = run_discontinuity(eps);
    const auto dir = prepare(out);
    write_json_file(dir / "discontinuity.json", rep);
    const bool ok = rep.separation >= 0.85 && rep.separation <= 0.88;
    std::cout << "separation " << rep.separation << " (closed form " << rep.closed_form_separation << ")\n";
    return ok ? exit_pass : exit_fail;
}

int cmd_simulate(const std::string& config, const std::string& out) {
    if (config.empty()) throw ConfigError("simulate needs --config");
    const auto c = load_config(config, ExperimentTag::simulate);
    const auto rep = run_simulation(c);
    const auto dir = prepare(out);
    {
        auto os = open_out(dir / "trajectory.csv");
        write_trajectory_csv(os, rep.trajectory);
    }
    nlohmann::json speeds = nlohmann::json::array();
    for (const auto& s : rep.trajectory.snapshots) speeds.push_back(s.max_speed());
    nlohmann::json summary{{"times", rep.trajectory.times},
                           {"max_speed", speeds},
                           {"crossing_count", rep.trajectory.crossing_count},
                           {"singular_encounters", rep.trajectory.singular_encounters},
                           {"speed_excess", rep.invariants.speed_excess},
                           {"support_excess", rep.invariants.support_excess},
                           {"divergence", rep.divergence},
                           {"divergence_predicted", rep.divergence_predicted},
                           {"divergence_degenerate", rep.divergence_degenerate},
                           {"provenance", rep.provenance}};
    write_json_file(dir / "summary.json", summary);
    const bool div_ok = rep.divergence_degenerate ||
                        std::abs(rep.divergence - rep.divergence_predicted) <= 1e-12 * std::abs(rep.divergence_predicted);
    const bool ok = rep.invariants.holds() && div_ok;
    std::cout << "simulate: " << rep.trajectory.snapshots.size() << " snapshots, " << rep.trajectory.crossing_count
              << " crossings, " << (ok ? "invariants hold" : "CHECK FAILED") << '\n';
    return ok ? exit_pass : exit_fail;
}

int cmd_converge(const std::string& config, const std::string& out) {
    if (config.empty()) throw ConfigError("converge needs --config");
    const auto c = load_config(config, ExperimentTag::converge);
    const auto rep = run_convergence(c);
    const auto dir = prepare(out);
    {
        auto os = open_out(dir / "convergence.csv");
        write_convergence_csv(os, rep);
    }
    {
        auto os = open_out(dir / "rate.dat");
        write_rate_dat(os, rep);
    }
    write_json_file(dir / "summary.json", rep);
    for (const auto& s : rep.per_n) {
        std::cout << "N = " << s.n << ": median sup W1 " << s.median_w1_sup << ", median ratio " << s.median_ratio << '\n';
    }
    const bool ok = convergence_pass(rep);
    std::cout << (ok ? "converge: pass" : "converge: FAIL") << '\n';
    return ok ? exit_pass : exit_fail;
}

int cmd_dw1(const std::string& config, const std::string& out) {
    auto c = load_config(config, ExperimentTag::dw1_probe);
    if (config.empty()) c.n_list = {10, 100, 1000, 10000};
    const auto rep = run_dw1_probe(c);
    const auto dir = prepare(out);
    {
        auto os = open_out(dir / "dw1.dat");
        write_dw1_dat(os, rep);
    }
    write_json_file(dir / "dw1.json", rep);
    for (const auto& p : rep.points) std::cout << "N = " << p.n << ": C = " << p.C << '\n';
    return rep.non_increasing ? exit_pass : exit_fail;
}

int cmd_metrics(const std::string& a_path, const std::string& b_path, const std::string& out) {
    const auto a = read_points(a_path);
    const auto b = read_points(b_path);
    if (a.dim != b.dim) throw ConfigError("point files differ in dimension");
    const WeightedMeasure wa(a), wb(b);
    const double w1 = wasserstein1_weighted(wa, wb);
    const auto d = discrepancy_bounds(wa, wb);
    const nlohmann::json j{{"wasserstein1", w1}, {"discrepancy_lower", d.lower}, {"discrepancy_upper", d.upper}};
    if (!out.empty()) write_json_file(prepare(out) / "metrics.json", j);
    std::cout << j.dump(2) << '\n';
    return exit_pass;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"topological Cucker-Smale simulation and verification"};
    app.require_subcommand(1);
    std::string config, out = "out", a_path, b_path;

    auto with_io = [&](CLI::App* sub) {
        sub->add_option("--config", config, "JSON configuration")->check(CLI::ExistingFile);
        sub->add_option("--out", out, "output directory");
        return sub;
    };
    auto* simulate = with_io(app.add_subcommand("simulate", "integrate one ensemble"));
    auto* golden = with_io(app.add_subcommand("golden", "three-agent closed-form suite"));
    auto* demo = with_io(app.add_subcommand("demo-discontinuity", "eps -> 0 discontinuity demo"));
    auto* converge = with_io(app.add_subcommand("converge", "mean-field convergence study"));
    auto* dw1 = with_io(app.add_subcommand("dw1-probe", "D <= C sqrt(W1) probe"));
    auto* metrics = app.add_subcommand("metrics", "W1 and discrepancy of two point clouds");
    metrics->add_option("a", a_path, "first CSV point file")->required()->check(CLI::ExistingFile);
    metrics->add_option("b", b_path, "second CSV point file")->required()->check(CLI::ExistingFile);
    metrics->add_option("--out", out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_pass : exit_config;
    }

    try {
        if (*simulate) return cmd_simulate(config, out);
        if (*golden) return cmd_golden(out);
        if (*demo) return cmd_discontinuity(config, out);
        if (*converge) return cmd_converge(config, out);
        if (*dw1) return cmd_dw1(config, out);
        if (*metrics) return cmd_metrics(a_path, b_path, metrics->count("--out") ? out : std::string());
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const BudgetError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const SamplerError& e) {
        std::cerr << "sampler error: " << e.what() << '\n';
        return exit_fail;
    } catch (const DomainError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    }
    return exit_pass;
}
