// Experiment harness: runs a configured solver, compares runs, reports
// memory footprints and validates model/partition pairs.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cme/dense.hpp"
#include "cme/errors.hpp"
#include "cme/initial.hpp"
#include "cme/model.hpp"
#include "cme/psttn.hpp"
#include "cme/ssa.hpp"
#include "cme/ttn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

json load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw cme::ValidationError("cannot open config file: " + path);
    try {
        return json::parse(is);
    } catch (const json::parse_error& e) {
        throw cme::ParseError("config " + path + ": " + e.what());
    }
}

struct ModelSpec {
    cme::ReactionNetwork net;
    std::vector<long> default_lower, default_upper;
};

ModelSpec make_model(const json& cfg) {
    ModelSpec m;
    const json& jm = cfg.at("model");
    if (jm.is_object()) {
        std::ifstream is(jm.at("file").get<std::string>());
        if (!is) throw cme::ValidationError("model: cannot open file");
        std::stringstream ss;
        ss << is.rdbuf();
        m.net = cme::parse_model(ss.str());
        return m;
    }
    const std::string name = jm.get<std::string>();
    if (name == "schloegl") {
        m.net = cme::builtin_schloegl();
        m.default_lower = {0};
        m.default_upper = {799};
    } else if (name == "lambda_phage") {
        m.net = cme::builtin_lambda_phage();
        m.default_lower = {0, 0, 0, 0, 0};
        m.default_upper = {15, 40, 10, 10, 10};
    } else if (name.rfind("cascade:", 0) == 0) {
        const int n = std::stoi(name.substr(8));
        m.net = cme::builtin_cascade(n);
        m.default_lower.assign(static_cast<size_t>(n), 0);
        m.default_upper.assign(static_cast<size_t>(n), 63);
    } else {
        throw cme::ValidationError("model: unknown builtin '" + name + "'");
    }
    return m;
}

cme::TruncatedStateSpace make_space(const json& cfg, const ModelSpec& m) {
    cme::TruncatedStateSpace space;
    if (cfg.contains("bounds")) {
        space.lower = cfg.at("bounds").at("lower").get<std::vector<long>>();
        space.upper = cfg.at("bounds").at("upper").get<std::vector<long>>();
    } else {
        if (m.default_lower.empty())
            throw cme::ValidationError("bounds: required for file-based models");
        space.lower = m.default_lower;
        space.upper = m.default_upper;
    }
    if (static_cast<int>(space.lower.size()) != m.net.num_species() ||
        static_cast<int>(space.upper.size()) != m.net.num_species())
        throw cme::ValidationError("bounds: length must match the species count");
    return space;
}

std::vector<double> output_times(const json& cfg, double t_end) {
    if (cfg.contains("output_times")) return cfg.at("output_times").get<std::vector<double>>();
    return {t_end};
}

cme::DenseDistribution initial_dense(const json& cfg, const cme::TruncatedStateSpace& space) {
    const json ji = cfg.value("initial", json{{"type", "delta"}});
    const std::string type = ji.value("type", "delta");
    if (type == "delta") {
        std::vector<long> x(space.lower);
        if (ji.contains("x")) x = ji.at("x").get<std::vector<long>>();
        return cme::delta_dense(space, x);
    }
    if (type == "multinomial")
        return cme::multinomial_initial(space, ji.at("n").get<int>(), ji.at("p").get<double>());
    throw cme::ValidationError("initial: unknown type '" + type + "'");
}

cme::TTNState initial_ttn(const json& cfg, const cme::PartitionTree& tree,
                          const cme::TruncatedStateSpace& space) {
    const json ji = cfg.value("initial", json{{"type", "delta"}});
    const std::string type = ji.value("type", "delta");
    if (type == "delta") {
        std::vector<long> x(space.lower);
        if (ji.contains("x")) x = ji.at("x").get<std::vector<long>>();
        return cme::from_product(cme::delta_product(tree, space, x), tree, space);
    }
    if (type == "multinomial")
        return cme::from_dense(cme::multinomial_initial(space, ji.at("n").get<int>(),
                                                        ji.at("p").get<double>()),
                               tree);
    throw cme::ValidationError("initial: unknown type '" + type + "'");
}

void write_dense_dump(const std::string& path, const cme::DenseDistribution& d) {
    std::ofstream os(path, std::ios::binary);
    os.write("DENSE1", 6);
    const std::int32_t ns = d.space.num_species();
    os.write(reinterpret_cast<const char*>(&ns), sizeof ns);
    for (int s = 0; s < ns; ++s) {
        const std::int64_t lo = d.space.lower[static_cast<size_t>(s)];
        const std::int64_t hi = d.space.upper[static_cast<size_t>(s)];
        os.write(reinterpret_cast<const char*>(&lo), sizeof lo);
        os.write(reinterpret_cast<const char*>(&hi), sizeof hi);
    }
    os.write(reinterpret_cast<const char*>(d.p.data()),
             static_cast<std::streamsize>(sizeof(double)) * d.p.size());
}

cme::DenseDistribution read_dense_dump(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw cme::ValidationError("cannot open distribution dump: " + path);
    char magic[6];
    is.read(magic, 6);
    if (std::string(magic, 6) != "DENSE1") throw cme::ParseError(path + ": bad magic");
    std::int32_t ns = 0;
    is.read(reinterpret_cast<char*>(&ns), sizeof ns);
    cme::DenseDistribution d;
    d.space.lower.resize(static_cast<size_t>(ns));
    d.space.upper.resize(static_cast<size_t>(ns));
    for (int s = 0; s < ns; ++s) {
        std::int64_t lo = 0, hi = 0;
        is.read(reinterpret_cast<char*>(&lo), sizeof lo);
        is.read(reinterpret_cast<char*>(&hi), sizeof hi);
        d.space.lower[static_cast<size_t>(s)] = static_cast<long>(lo);
        d.space.upper[static_cast<size_t>(s)] = static_cast<long>(hi);
    }
    d.p.resize(d.space.size());
    is.read(reinterpret_cast<char*>(d.p.data()),
            static_cast<std::streamsize>(sizeof(double)) * d.p.size());
    if (!is) throw cme::ParseError(path + ": truncated payload");
    return d;
}

struct ObservableRow {
    double time = 0.0, mass = 0.0;
    std::vector<double> mean, stddev;
};

void write_observables(const std::string& dir, const cme::ReactionNetwork& net,
                       const std::vector<ObservableRow>& rows) {
    std::ofstream os(dir + "/observables.csv");
    os << "time,mass";
    for (const auto& s : net.species) os << ",mean_" << s << ",std_" << s;
    os << "\n";
    for (const auto& r : rows) {
        os << fmt(r.time) << "," << fmt(r.mass);
        for (size_t s = 0; s < r.mean.size(); ++s)
            os << "," << fmt(r.mean[s]) << "," << fmt(r.stddev[s]);
        os << "\n";
    }
}

void write_marginals(const std::string& dir,
                     const std::vector<std::pair<double, std::vector<Eigen::VectorXd>>>& rows,
                     const cme::TruncatedStateSpace& space) {
    std::ofstream os(dir + "/marginals.csv");
    os << "time,species,count,value\n";
    for (const auto& [t, per_species] : rows)
        for (size_t s = 0; s < per_species.size(); ++s)
            for (Eigen::Index c = 0; c < per_species[s].size(); ++c)
                os << fmt(t) << "," << s << ","
                   << space.lower[s] + static_cast<long>(c) << ","
                   << fmt(per_species[s][c]) << "\n";
}

int cmd_run(const std::string& config_path, std::string out_dir,
            std::optional<std::uint64_t> seed_override) {
    const json cfg = load_json(config_path);
    if (out_dir.empty()) out_dir = cfg.value("out", "out");
    fs::create_directories(out_dir);

    const ModelSpec model = make_model(cfg);
    const std::string solver = cfg.at("solver").get<std::string>();
    const double dt = cfg.value("dt", 1e-3);
    const double t_end = cfg.value("t_end", 1.0);
    const std::vector<double> times = output_times(cfg, t_end);
    const auto wall_start = std::chrono::steady_clock::now();

    std::vector<ObservableRow> obs;
    std::vector<std::pair<double, std::vector<Eigen::VectorXd>>> margs;
    std::ostringstream summary;

    if (solver == "ode") {
        const double x0 = cfg.value("ode", json::object()).value("x0", 0.0);
        const auto traj = cme::schloegl_ode(x0, t_end, dt);
        std::ofstream os(out_dir + "/trajectory.csv");
        os << "time,x\n";
        for (const auto& [t, x] : traj) os << fmt(t) << "," << fmt(x) << "\n";
        summary << "final x: " << fmt(traj.back().second) << "\n";
    } else if (solver == "dense") {
        const cme::TruncatedStateSpace space = make_space(cfg, model);
        if (space.size_as_double() > static_cast<double>(cme::kDenseGuard))
            throw cme::ValidationError("dense solver: state count exceeds the guard");
        const cme::Scheme scheme =
            cfg.value("scheme", "explicit") == "implicit" ? cme::Scheme::Implicit
                                                          : cme::Scheme::Explicit;
        const cme::CMEOperator op = cme::make_operator(model.net, space);
        const cme::DenseDistribution p0 = initial_dense(cfg, space);
        const cme::DenseTrajectory traj = cme::integrate_dense(op, p0.p, times, dt, scheme);
        for (size_t i = 0; i < traj.times.size(); ++i) {
            cme::DenseDistribution d{space, traj.states[i]};
            ObservableRow row;
            row.time = traj.times[i];
            row.mass = d.p.sum();
            std::vector<Eigen::VectorXd> per_species;
            for (int s = 0; s < space.num_species(); ++s) {
                const Eigen::VectorXd m = cme::dense_marginal(d, s);
                double m1 = 0, m2 = 0;
                for (Eigen::Index c = 0; c < m.size(); ++c) {
                    const double v = static_cast<double>(space.lower[static_cast<size_t>(s)] + c);
                    m1 += v * m[c];
                    m2 += v * v * m[c];
                }
                row.mean.push_back(m1);
                row.stddev.push_back(std::sqrt(std::max(0.0, m2 - m1 * m1)));
                per_species.push_back(m);
            }
            obs.push_back(std::move(row));
            margs.emplace_back(traj.times[i], std::move(per_species));
            char name[64];
            std::snprintf(name, sizeof name, "/dist_%03zu.bin", i);
            write_dense_dump(out_dir + name, d);
        }
        summary << "dense entries: " << fmt(space.size_as_double()) << " ("
                << fmt(space.size_as_double() * 8.0 / 1e6) << " MB)\n";
    } else if (solver == "psttn") {
        const cme::TruncatedStateSpace space = make_space(cfg, model);
        const cme::PartitionTree tree = cme::parse_partition(
            cfg.at("partition").get<std::string>(), cfg.value("ranks", std::vector<int>{}));
        cme::SolverConfig sc;
        sc.dt = dt;
        sc.t_end = t_end;
        sc.scheme = cfg.value("scheme", "explicit") == "implicit" ? cme::Scheme::Implicit
                                                                  : cme::Scheme::Explicit;
        sc.substeps = cfg.value("substeps", 1);
        sc.output_times = times;
        sc.keep_snapshots = cfg.value("snapshots", false) || cfg.value("dump_dense", false);
        cme::PsttnSolver solver_obj(initial_ttn(cfg, tree, space), model.net, sc);
        const cme::RunResult res = solver_obj.run();
        for (size_t i = 0; i < res.times.size(); ++i) {
            obs.push_back({res.times[i], res.mass[i], res.mean[i], res.stddev[i]});
            if (sc.keep_snapshots) {
                const cme::TTNState& snap = res.snapshots[i];
                std::vector<Eigen::VectorXd> per_species;
                for (int s = 0; s < space.num_species(); ++s)
                    per_species.push_back(cme::marginal(snap, s));
                margs.emplace_back(res.times[i], std::move(per_species));
                char name[64];
                if (cfg.value("snapshots", false)) {
                    std::snprintf(name, sizeof name, "/snap_%03zu.ttn", i);
                    cme::save_snapshot(snap, out_dir + name);
                }
                if (cfg.value("dump_dense", false)) {
                    std::snprintf(name, sizeof name, "/dist_%03zu.bin", i);
                    write_dense_dump(out_dir + name, cme::eval_full(snap));
                }
            } else {
                std::vector<Eigen::VectorXd> per_species;
                for (int s = 0; s < space.num_species(); ++s)
                    per_species.push_back(cme::marginal(solver_obj.state(), s));
                margs.emplace_back(res.times[i], std::move(per_species));
            }
        }
        const cme::MemoryFootprint mf = cme::memory_footprint(tree, space);
        summary << "network entries: " << fmt(mf.entries) << " (" << fmt(mf.bytes / 1e6)
                << " MB)\n"
                << "dense equivalent: " << fmt(space.size_as_double() * 8.0 / 1e6) << " MB\n";
    } else if (solver == "ssa") {
        const cme::TruncatedStateSpace space = make_space(cfg, model);
        const json js = cfg.value("ssa", json::object());
        const long long n_runs = js.value("runs", 10000LL);
        std::uint64_t seed = js.value("seed", 1ULL);
        if (seed_override) seed = *seed_override;
        std::vector<long> x0(space.lower);
        const json ji = cfg.value("initial", json{{"type", "delta"}});
        if (ji.contains("x")) x0 = ji.at("x").get<std::vector<long>>();
        const cme::EnsembleSummary sum =
            cme::run_ensemble(model.net, x0, times, space, n_runs, seed);
        for (size_t i = 0; i < sum.times.size(); ++i) {
            ObservableRow row;
            row.time = sum.times[i];
            row.mass = 1.0;
            std::vector<Eigen::VectorXd> per_species;
            for (int s = 0; s < space.num_species(); ++s) {
                row.mean.push_back(sum.mean[i][static_cast<size_t>(s)]);
                row.stddev.push_back(sum.stderr_[i][static_cast<size_t>(s)] *
                                     std::sqrt(static_cast<double>(n_runs)));
                per_species.push_back(sum.marginal(static_cast<int>(i), s));
            }
            obs.push_back(std::move(row));
            margs.emplace_back(sum.times[i], std::move(per_species));
        }
        summary << "runs: " << n_runs << ", clipped samples: " << sum.clipped << "\n";
    } else {
        throw cme::ValidationError("solver: must be psttn, dense, ssa or ode");
    }

    if (solver != "ode") {
        const cme::TruncatedStateSpace space = make_space(cfg, model);
        write_observables(out_dir, model.net, obs);
        write_marginals(out_dir, margs, space);
    }
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    summary << "wall time: " << fmt(wall) << " s\n";
    std::ofstream(out_dir + "/summary.txt") << summary.str();
    std::cout << summary.str();
    return 0;
}

// per-time concatenated-marginal vectors from a marginals.csv
std::map<double, std::vector<double>> load_marginals(const std::string& dir) {
    std::ifstream is(dir + "/marginals.csv");
    if (!is) throw cme::ValidationError("cannot open " + dir + "/marginals.csv");
    std::string line;
    std::getline(is, line); // header
    std::map<double, std::vector<double>> out;
    while (std::getline(is, line)) {
        std::stringstream ss(line);
        std::string t, s, c, v;
        std::getline(ss, t, ',');
        std::getline(ss, s, ',');
        std::getline(ss, c, ',');
        std::getline(ss, v, ',');
        out[std::stod(t)].push_back(std::stod(v));
    }
    return out;
}

int cmd_compare(const std::string& config_path, std::string out_dir) {
    const json cfg = load_json(config_path);
    const std::string dir_a = cfg.at("run_a").get<std::string>();
    const std::string dir_b = cfg.at("run_b").get<std::string>();
    if (out_dir.empty()) out_dir = cfg.value("out", "compare_out");
    fs::create_directories(out_dir);

    std::vector<std::pair<double, double>> errors;
    // prefer full distributions when both runs dumped them
    size_t idx = 0;
    bool full = true;
    for (;; ++idx) {
        char name[64];
        std::snprintf(name, sizeof name, "/dist_%03zu.bin", idx);
        const bool ha = fs::exists(dir_a + name), hb = fs::exists(dir_b + name);
        if (!ha && !hb) break;
        if (ha != hb) {
            full = false;
            break;
        }
        const cme::DenseDistribution da = read_dense_dump(dir_a + name);
        const cme::DenseDistribution db = read_dense_dump(dir_b + name);
        if (da.space.lower != db.space.lower || da.space.upper != db.space.upper)
            throw cme::ValidationError("compare: truncation boxes differ");
        errors.emplace_back(static_cast<double>(idx), (da.p - db.p).norm());
    }
    if (idx == 0 || !full) {
        errors.clear();
        const auto ma = load_marginals(dir_a);
        const auto mb = load_marginals(dir_b);
        if (ma.size() != mb.size())
            throw cme::ValidationError("compare: runs have different output times");
        for (const auto& [t, va] : ma) {
            const auto it = mb.find(t);
            if (it == mb.end() || it->second.size() != va.size())
                throw cme::ValidationError("compare: output grids differ at t=" + fmt(t));
            double acc = 0.0;
            for (size_t i = 0; i < va.size(); ++i) {
                const double d = va[i] - it->second[i];
                acc += d * d;
            }
            errors.emplace_back(t, std::sqrt(acc));
        }
    }
    std::ofstream os(out_dir + "/error.csv");
    os << "time,error\n";
    double max_err = 0.0;
    for (const auto& [t, e] : errors) {
        os << fmt(t) << "," << fmt(e) << "\n";
        max_err = std::max(max_err, e);
    }
    std::cout << "max error: " << fmt(max_err) << "\n";
    if (!errors.empty()) std::cout << "final error: " << fmt(errors.back().second) << "\n";
    return 0;
}

int cmd_footprint(const std::string& config_path) {
    const json cfg = load_json(config_path);
    const ModelSpec model = make_model(cfg);
    const cme::TruncatedStateSpace space = make_space(cfg, model);
    std::cout << "dense entries: " << fmt(space.size_as_double()) << " ("
              << fmt(space.size_as_double() * 8.0 / 1e6) << " MB)\n";
    if (cfg.contains("partition")) {
        const cme::PartitionTree tree = cme::parse_partition(
            cfg.at("partition").get<std::string>(), cfg.value("ranks", std::vector<int>{}));
        const cme::MemoryFootprint mf = cme::memory_footprint(tree, space);
        std::cout << "network entries: " << fmt(mf.entries) << " (" << fmt(mf.bytes / 1e6)
                  << " MB)\n";
    }
    return 0;
}

int cmd_validate(const std::string& config_path) {
    const json cfg = load_json(config_path);
    const ModelSpec model = make_model(cfg);
    if (cfg.contains("bounds") || !model.default_lower.empty()) make_space(cfg, model);
    if (cfg.contains("partition")) {
        const cme::PartitionTree tree = cme::parse_partition(
            cfg.at("partition").get<std::string>(), cfg.value("ranks", std::vector<int>{}));
        cme::validate_factorization(model.net, tree);
        std::cout << "model and partition are compatible\n";
    } else {
        std::cout << "model is valid\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Chemical master equation solver suite"};
    app.require_subcommand(1);

    std::string config, out;
    std::optional<std::uint64_t> seed;

    auto add_common = [&](CLI::App* sub, bool needs_out) {
        sub->add_option("--config", config, "config file (JSON)")->required();
        if (needs_out) sub->add_option("--out", out, "output directory");
        sub->add_option("--seed", seed, "RNG seed override");
    };
    CLI::App* run = app.add_subcommand("run", "run a configured solver");
    add_common(run, true);
    CLI::App* compare = app.add_subcommand("compare", "error report between two runs");
    add_common(compare, true);
    CLI::App* footprint = app.add_subcommand("footprint", "report memory footprints");
    add_common(footprint, false);
    CLI::App* validate = app.add_subcommand("validate", "check model and partition");
    add_common(validate, false);

    try {
        app.parse(argc, argv);
        if (run->parsed()) return cmd_run(config, out, seed);
        if (compare->parsed()) return cmd_compare(config, out);
        if (footprint->parsed()) return cmd_footprint(config);
        return cmd_validate(config);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const cme::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
