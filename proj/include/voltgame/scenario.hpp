#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "voltgame/dso_agents.hpp"
#include "voltgame/errors.hpp"
#include "voltgame/grid_model.hpp"
#include "voltgame/schedule.hpp"

namespace voltgame {

/// A scheduled change of one DSO's reactive power box.
struct Disturbance {
    long at_outer_iter = 0;
    int dso_index = 0;  ///< zero-based game index
    double new_q_min = 0.0;
    double new_q_max = 0.0;

    void validate() const {
        if (!(new_q_min <= new_q_max))
            throw ValidationError("disturbance: new_q_min must not exceed new_q_max");
        if (at_outer_iter < 0)
            throw ValidationError("disturbance: at_outer_iter must be nonnegative");
    }
};

enum class MeasurementMode {
    Feedback,        ///< voltages measured from the AC power flow plant
    LinearAnalysis,  ///< voltages taken from the linear model
};

/// Fully validated scenario: grid, loads, followers, incentive parameters,
/// algorithm schedules and the disturbance script. Random cost coefficients
/// are resolved at load time from the scenario seed, so a loaded config is
/// plain deterministic data.
struct ScenarioConfig {
    std::string network_path;
    std::optional<GridModel> grid;

    Eigen::VectorXd loads;         ///< p per non-slack bus, in bus-id order
    std::vector<DsoProfile> dsos;  ///< game order = file order

    double gamma = 0.0;
    double rho = 0.0;
    double v_lo = 0.0;
    double v_hi = 0.0;
    Eigen::VectorXd v_ref_init;

    double eta = 0.0;
    Schedule sigma;
    long max_inner = 10000;

    Schedule epsilon;
    long outer_iterations = 5000;
    double grad_tol = 1e-6;

    std::vector<Disturbance> disturbances;

    MeasurementMode mode = MeasurementMode::Feedback;
    unsigned long long seed = 0;
    int threads = 1;
    bool allow_nonmonotone = false;

    int n_dsos() const { return static_cast<int>(dsos.size()); }

    /// Game index -> position among the non-slack buses (bus-id order).
    std::vector<int> game_to_nonslack() const {
        const GridModel& g = *grid;
        std::vector<int> ns = g.nonslack();
        std::vector<int> perm;
        perm.reserve(dsos.size());
        for (const DsoProfile& d : dsos) {
            const int internal = g.index_of(d.bus);
            const auto it = std::find(ns.begin(), ns.end(), internal);
            perm.push_back(static_cast<int>(it - ns.begin()));
        }
        return perm;
    }

    /// Active loads permuted into game order.
    Eigen::VectorXd loads_game_order() const {
        const std::vector<int> perm = game_to_nonslack();
        Eigen::VectorXd p(loads.size());
        for (int i = 0; i < p.size(); ++i) p(i) = loads(perm[static_cast<std::size_t>(i)]);
        return p;
    }
};

namespace detail {

struct ScenarioDoc {
    // raw key/value records grouped by section, in file order
    struct Record {
        std::string section;
        std::string key;
        std::vector<std::string> values;
        int line;
    };
    std::vector<Record> records;
    std::string name;

    const Record* find(const std::string& section, const std::string& key) const {
        const Record* hit = nullptr;
        for (const auto& r : records)
            if (r.section == section && r.key == key) hit = &r;
        return hit;
    }

    std::vector<const Record*> all(const std::string& section, const std::string& key) const {
        std::vector<const Record*> out;
        for (const auto& r : records)
            if (r.section == section && r.key == key) out.push_back(&r);
        return out;
    }
};

inline ScenarioDoc parse_scenario_doc(std::string_view text, const std::string& name) {
    ScenarioDoc doc;
    doc.name = name;
    std::string section;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t end = text.find('\n', pos);
        std::string_view raw = text.substr(pos, end == std::string_view::npos ? text.size() - pos
                                                                              : end - pos);
        pos = (end == std::string_view::npos) ? text.size() + 1 : end + 1;
        ++line_no;
        const std::size_t hash = raw.find('#');
        if (hash != std::string_view::npos) raw = raw.substr(0, hash);
        auto tokens = split_ws(raw);
        if (tokens.empty()) continue;
        if (tokens.size() == 1 && tokens[0].size() >= 2 && tokens[0].front() == '[' &&
            tokens[0].back() == ']') {
            section = tokens[0].substr(1, tokens[0].size() - 2);
            continue;
        }
        if (tokens.size() < 3 || tokens[1] != "=")
            throw ParseError(name + ":" + std::to_string(line_no) +
                             ": expected '[section]' or 'key = value...'");
        if (section.empty())
            throw ParseError(name + ":" + std::to_string(line_no) + ": key outside any section");
        ScenarioDoc::Record rec;
        rec.section = section;
        rec.key = tokens[0];
        rec.values.assign(tokens.begin() + 2, tokens.end());
        rec.line = line_no;
        doc.records.push_back(std::move(rec));
    }
    return doc;
}

inline double uniform_from(std::mt19937_64& rng, double lo, double hi) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + u * (hi - lo);
}

}  // namespace detail

/// Parses and validates a scenario document. `base_dir` resolves the network
/// file reference; `load_network` permits tests to inject network text.
inline ScenarioConfig load_scenario_text(std::string_view text, const std::string& name,
                                         const std::filesystem::path& base_dir) {
    using detail::ScenarioDoc;
    const ScenarioDoc doc = detail::parse_scenario_doc(text, name);

    auto where = [&name](const ScenarioDoc::Record* r) {
        return name + ":" + std::to_string(r->line);
    };
    auto required = [&](const std::string& sec, const std::string& key) -> const ScenarioDoc::Record* {
        const auto* r = doc.find(sec, key);
        if (r == nullptr)
            throw ParseError(name + ": missing required key '" + key + "' in section [" + sec + "]");
        return r;
    };
    auto num1 = [&](const ScenarioDoc::Record* r) {
        if (r->values.size() != 1)
            throw ParseError(where(r) + ": expected a single number for '" + r->key + "'");
        return detail::parse_double(r->values[0], where(r));
    };

    ScenarioConfig cfg;

    // [network]
    const auto* netfile = required("network", "file");
    if (netfile->values.size() != 1)
        throw ParseError(where(netfile) + ": network file takes one path");
    const std::filesystem::path net_path = base_dir / netfile->values[0];
    cfg.network_path = net_path.string();
    std::ifstream net_in(net_path);
    if (!net_in)
        throw ParseError(name + ": cannot open network file '" + cfg.network_path + "'");
    std::ostringstream net_text;
    net_text << net_in.rdbuf();
    cfg.grid = parse_network(net_text.str(), net_path.filename().string());
    const GridModel& grid = *cfg.grid;

    // [run] (seed needed before cost resolution)
    cfg.mode = MeasurementMode::Feedback;
    if (const auto* r = doc.find("run", "mode")) {
        const std::string& m = r->values.at(0);
        if (m == "feedback")
            cfg.mode = MeasurementMode::Feedback;
        else if (m == "linear-analysis")
            cfg.mode = MeasurementMode::LinearAnalysis;
        else
            throw ParseError(where(r) + ": mode must be 'feedback' or 'linear-analysis'");
    }
    bool have_seed = false;
    if (const auto* r = doc.find("run", "seed")) {
        cfg.seed = static_cast<unsigned long long>(detail::parse_long(r->values.at(0), where(r)));
        have_seed = true;
    }
    if (const auto* r = doc.find("run", "threads")) {
        cfg.threads = static_cast<int>(detail::parse_long(r->values.at(0), where(r)));
        if (cfg.threads < 1) throw ValidationError(where(r) + ": threads must be >= 1");
    }
    if (const auto* r = doc.find("run", "allow_nonmonotone")) {
        const std::string& v = r->values.at(0);
        if (v == "true")
            cfg.allow_nonmonotone = true;
        else if (v == "false")
            cfg.allow_nonmonotone = false;
        else
            throw ParseError(where(r) + ": allow_nonmonotone must be true or false");
    }

    // [loads]
    const auto* ploads = required("loads", "p");
    if (static_cast<int>(ploads->values.size()) != grid.n_nonslack())
        throw ValidationError(where(ploads) + ": expected " + std::to_string(grid.n_nonslack()) +
                              " load values (one per non-slack bus)");
    cfg.loads.resize(grid.n_nonslack());
    for (int i = 0; i < cfg.loads.size(); ++i)
        cfg.loads(i) = detail::parse_double(ploads->values[static_cast<std::size_t>(i)],
                                            where(ploads));

    // [dsos]
    double cost_lo = 0.0, cost_hi = 0.0;
    bool have_range = false;
    if (const auto* r = doc.find("dsos", "cost_range")) {
        if (r->values.size() != 2)
            throw ParseError(where(r) + ": cost_range takes '<lo> <hi>'");
        cost_lo = detail::parse_double(r->values[0], where(r));
        cost_hi = detail::parse_double(r->values[1], where(r));
        if (!(cost_lo > 0.0) || !(cost_hi >= cost_lo))
            throw ValidationError(where(r) + ": cost_range must satisfy 0 < lo <= hi");
        have_range = true;
    }
    const auto dso_records = doc.all("dsos", "dso");
    if (dso_records.empty())
        throw ParseError(name + ": no DSOs declared in [dsos]");
    bool any_rand = false;
    for (const auto* r : dso_records)
        if (r->values.size() >= 2 && r->values[1] == "rand") any_rand = true;
    if (any_rand && !have_range)
        throw ValidationError(name + ": 'rand' costs require a cost_range");
    if (any_rand && !have_seed)
        throw ValidationError(name + ": 'rand' costs require a seed in [run]");

    std::mt19937_64 rng(cfg.seed);
    std::set<int> seen_buses;
    for (const auto* r : dso_records) {
        if (r->values.size() != 4)
            throw ParseError(where(r) + ": dso takes '<bus> <cost|rand> <q_min> <q_max>'");
        DsoProfile d;
        d.bus = static_cast<int>(detail::parse_long(r->values[0], where(r)));
        d.cost_coeff = (r->values[1] == "rand")
                           ? detail::uniform_from(rng, cost_lo, cost_hi)
                           : detail::parse_double(r->values[1], where(r));
        d.q_min = detail::parse_double(r->values[2], where(r));
        d.q_max = detail::parse_double(r->values[3], where(r));
        const int internal = grid.index_of(d.bus);
        if (internal < 0)
            throw ValidationError(where(r) + ": DSO bus " + std::to_string(d.bus) +
                                  " does not exist in the network");
        if (internal == grid.slack_bus())
            throw ValidationError(where(r) + ": DSO bus " + std::to_string(d.bus) +
                                  " is the slack bus");
        if (!seen_buses.insert(d.bus).second)
            throw ValidationError(where(r) + ": duplicate DSO bus " + std::to_string(d.bus));
        d.validate();
        cfg.dsos.push_back(d);
    }
    if (static_cast<int>(cfg.dsos.size()) != grid.n_nonslack())
        throw ValidationError(name + ": every non-slack bus must host exactly one DSO (" +
                              std::to_string(cfg.dsos.size()) + " DSOs, " +
                              std::to_string(grid.n_nonslack()) + " non-slack buses)");

    // [incentive]
    cfg.gamma = num1(required("incentive", "gamma"));
    cfg.rho = num1(required("incentive", "rho"));
    cfg.v_lo = num1(required("incentive", "v_lo"));
    cfg.v_hi = num1(required("incentive", "v_hi"));
    if (!(cfg.gamma > 0.0)) throw ValidationError(name + ": gamma must be positive");
    if (!(cfg.rho > 0.0)) throw ValidationError(name + ": rho must be positive");
    if (!(cfg.v_lo < cfg.v_hi)) throw ValidationError(name + ": v_lo must be below v_hi");
    const auto* vri = required("incentive", "v_ref_init");
    const int n = static_cast<int>(cfg.dsos.size());
    if (vri->values.size() == 1) {
        cfg.v_ref_init = Eigen::VectorXd::Constant(n, detail::parse_double(vri->values[0],
                                                                           where(vri)));
    } else if (static_cast<int>(vri->values.size()) == n) {
        cfg.v_ref_init.resize(n);
        for (int i = 0; i < n; ++i)
            cfg.v_ref_init(i) = detail::parse_double(vri->values[static_cast<std::size_t>(i)],
                                                     where(vri));
    } else {
        throw ValidationError(where(vri) + ": v_ref_init takes one value or one per DSO");
    }

    // [inner]
    cfg.eta = num1(required("inner", "eta"));
    if (!(cfg.eta > 0.0)) throw ValidationError(name + ": eta must be positive");
    if (const auto* r = doc.find("inner", "sigma"))
        cfg.sigma = Schedule::parse(r->values);
    else
        cfg.sigma = Schedule::geometric(1e-3, 0.9, 1e-8);
    if (const auto* r = doc.find("inner", "max_inner")) {
        cfg.max_inner = detail::parse_long(r->values.at(0), where(r));
        if (cfg.max_inner <= 0) throw ValidationError(where(r) + ": max_inner must be positive");
    }

    // [outer]
    if (const auto* r = doc.find("outer", "epsilon"))
        cfg.epsilon = Schedule::parse(r->values);
    else
        cfg.epsilon = Schedule::constant(1e-4);
    cfg.outer_iterations = detail::parse_long(required("outer", "iterations")->values.at(0),
                                              name + ":[outer]");
    if (cfg.outer_iterations <= 0)
        throw ValidationError(name + ": outer iterations must be positive");
    if (const auto* r = doc.find("outer", "grad_tol")) {
        cfg.grad_tol = detail::parse_double(r->values.at(0), where(r));
        if (cfg.grad_tol < 0.0) throw ValidationError(where(r) + ": grad_tol must be nonnegative");
    }

    // [disturbances]
    for (const auto* r : doc.all("disturbances", "disturbance")) {
        if (r->values.size() != 4)
            throw ParseError(where(r) +
                             ": disturbance takes '<at_iter> <dso index> <q_min> <q_max>'");
        Disturbance d;
        d.at_outer_iter = detail::parse_long(r->values[0], where(r));
        const long idx1 = detail::parse_long(r->values[1], where(r));
        if (idx1 < 1 || idx1 > n)
            throw ValidationError(where(r) + ": DSO index out of range");
        d.dso_index = static_cast<int>(idx1 - 1);
        d.new_q_min = detail::parse_double(r->values[2], where(r));
        d.new_q_max = detail::parse_double(r->values[3], where(r));
        d.validate();
        cfg.disturbances.push_back(d);
    }
    std::stable_sort(cfg.disturbances.begin(), cfg.disturbances.end(),
                     [](const Disturbance& a, const Disturbance& b) {
                         return a.at_outer_iter < b.at_outer_iter;
                     });

    return cfg;
}

/// Loads a scenario file; the network path is resolved relative to it.
inline ScenarioConfig load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open scenario file '" + path.string() + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return load_scenario_text(text.str(), path.filename().string(),
                              path.has_parent_path() ? path.parent_path()
                                                     : std::filesystem::path("."));
}

/// Canonical re-serialization of a loaded config (costs already resolved).
/// load_scenario_text of the result reproduces an equal config.
inline std::string format_scenario(const ScenarioConfig& cfg,
                                   const std::string& network_file_name) {
    std::ostringstream os;
    os.precision(17);
    os << "[network]\nfile = " << network_file_name << "\n\n";
    os << "[loads]\np =";
    for (int i = 0; i < cfg.loads.size(); ++i) os << " " << cfg.loads(i);
    os << "\n\n[dsos]\n";
    for (const DsoProfile& d : cfg.dsos)
        os << "dso = " << d.bus << " " << d.cost_coeff << " " << d.q_min << " " << d.q_max << "\n";
    os << "\n[incentive]\n";
    os << "gamma = " << cfg.gamma << "\nrho = " << cfg.rho << "\nv_lo = " << cfg.v_lo
       << "\nv_hi = " << cfg.v_hi << "\nv_ref_init =";
    for (int i = 0; i < cfg.v_ref_init.size(); ++i) os << " " << cfg.v_ref_init(i);
    os << "\n\n[inner]\neta = " << cfg.eta << "\nsigma = " << cfg.sigma.str()
       << "\nmax_inner = " << cfg.max_inner;
    os << "\n\n[outer]\nepsilon = " << cfg.epsilon.str()
       << "\niterations = " << cfg.outer_iterations << "\ngrad_tol = " << cfg.grad_tol << "\n";
    if (!cfg.disturbances.empty()) {
        os << "\n[disturbances]\n";
        for (const Disturbance& d : cfg.disturbances)
            os << "disturbance = " << d.at_outer_iter << " " << (d.dso_index + 1) << " "
               << d.new_q_min << " " << d.new_q_max << "\n";
    }
    os << "\n[run]\nmode = "
       << (cfg.mode == MeasurementMode::Feedback ? "feedback" : "linear-analysis")
       << "\nseed = " << cfg.seed << "\nthreads = " << cfg.threads;
    if (cfg.allow_nonmonotone) os << "\nallow_nonmonotone = true";
    os << "\n";
    return os.str();
}

}  // namespace voltgame
