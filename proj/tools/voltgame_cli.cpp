// Command line front end: runs scenarios, inspects game conditioning,
// and checks the solver against its closed-form oracles.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "voltgame/voltgame.hpp"

namespace {

namespace fs = std::filesystem;
using namespace voltgame;

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;      // parse or validation failure
constexpr int kExitNumerical = 2;  // stall or infeasible plant
constexpr int kExitOracle = 3;     // oracle verification failure

fs::path output_dir(const std::string& cli_value) {
    if (!cli_value.empty()) return cli_value;
    if (const char* env = std::getenv("VOLTGAME_OUT")) return env;
    return "out";
}

void print_final_state(const ScenarioTrace& trace) {
    if (trace.rows.empty()) {
        std::cout << "no iterations recorded\n";
        return;
    }
    const TraceRow& last = trace.final_row();
    std::cout << "iterations:      " << trace.iterations() << "\n"
              << "stop reason:     " << trace.stop_reason << "\n"
              << "final grad norm: " << last.grad_norm << "\n"
              << "final phi_e:     " << last.phi_e << "\n";
    std::cout << "final v:        ";
    for (int i = 0; i < last.v.size(); ++i) std::cout << " " << last.v(i);
    std::cout << "\nfinal v_ref:    ";
    for (int i = 0; i < last.v_ref.size(); ++i) std::cout << " " << last.v_ref(i);
    std::cout << "\nfinal xi:       ";
    for (int i = 0; i < last.xi.size(); ++i) std::cout << " " << last.xi(i);
    std::cout << "\nfinal payments: ";
    for (int i = 0; i < last.payments.size(); ++i) std::cout << " " << last.payments(i);
    std::cout << "\n";
}

/// Linear-model game data extracted once per scenario.
struct GameSetup {
    LinearSensitivities sens;
    Eigen::VectorXd p_game;
};

GameSetup make_setup(const ScenarioConfig& cfg) {
    const Eigen::VectorXd q0 = Eigen::VectorXd::Zero(cfg.grid->n_nonslack());
    LinearSensitivities sens_ns = linearize(*cfg.grid, cfg.loads, q0);
    return GameSetup{sens_ns.permuted(cfg.game_to_nonslack()), cfg.loads_game_order()};
}

int cmd_run(const std::string& scenario_path, const std::string& out, int threads_override) {
    ScenarioConfig cfg = load_scenario(scenario_path);
    if (threads_override > 0) cfg.threads = threads_override;
    ScenarioTrace trace;
    try {
        run_codesign(cfg, trace);
    } catch (const Error&) {
        // flush whatever was recorded before rethrowing
        if (!trace.rows.empty()) write_trace(trace, output_dir(out));
        throw;
    }
    const GameSetup setup = make_setup(cfg);
    trace.oracle_digests.push_back(oracles::verify_ne(trace.final_row().xi, cfg.dsos, setup.sens,
                                                      cfg.gamma, trace.final_row().v_ref,
                                                      setup.p_game, 1e-2));
    const TraceFiles files = write_trace(trace, output_dir(out));
    print_final_state(trace);
    std::cout << "trace:   " << files.table.string() << "\n"
              << "summary: " << files.summary.string() << "\n";
    return kExitOk;
}

int cmd_inner(const std::string& scenario_path, double sigma_override) {
    ScenarioConfig cfg = load_scenario(scenario_path);
    const GameSetup setup = make_setup(cfg);

    MeasureFn measure;
    AcPowerFlow plant(*cfg.grid);
    const std::vector<int> perm = cfg.game_to_nonslack();
    if (cfg.mode == MeasurementMode::Feedback) {
        measure = [&](const Eigen::VectorXd& xi) {
            Eigen::VectorXd q = Eigen::VectorXd::Zero(cfg.grid->n_nonslack());
            for (int i = 0; i < xi.size(); ++i) q(perm[static_cast<std::size_t>(i)]) = xi(i);
            const PowerFlowSolution sol = plant.solve(cfg.loads, q);
            Eigen::VectorXd v(xi.size());
            for (int i = 0; i < v.size(); ++i) v(i) = sol.v(perm[static_cast<std::size_t>(i)]);
            return v;
        };
    } else {
        measure = make_linear_measurement(setup.sens, setup.p_game);
    }

    const double sigma = sigma_override > 0.0 ? sigma_override : cfg.sigma.at(0);
    const InnerLoopResult res =
        run_inner_loop(cfg.dsos, GameIterate::cold_start(cfg.n_dsos()), cfg.v_ref_init, cfg.gamma,
                       cfg.eta, sigma, setup.sens, measure, cfg.max_inner, cfg.threads);
    std::cout << "inner loop converged in " << res.iterations << " iterations (residual "
              << res.residual << ", sigma " << sigma << ")\n";
    std::cout << "equilibrium xi:";
    for (int i = 0; i < res.iterate.xi.size(); ++i) std::cout << " " << res.iterate.xi(i);
    std::cout << "\nmeasured v:    ";
    for (int i = 0; i < res.iterate.v_meas.size(); ++i) std::cout << " " << res.iterate.v_meas(i);
    std::cout << "\nsensitivity s (row i = d xi_i / d v_ref):\n" << res.iterate.s << "\n";
    const auto rep = oracles::verify_ne(res.iterate.xi, cfg.dsos, setup.sens, cfg.gamma,
                                        cfg.v_ref_init, setup.p_game,
                                        cfg.mode == MeasurementMode::Feedback ? 1e-2 : 1e-6);
    std::cout << rep.to_line() << "\n";
    return kExitOk;
}

int cmd_check(const std::string& scenario_path) {
    ScenarioConfig cfg = load_scenario(scenario_path);
    const GameSetup setup = make_setup(cfg);
    const GameConditioning cond = check_conditioning(cfg.dsos, setup.sens, cfg.gamma, cfg.eta);
    std::cout << "mu        = " << cond.mu << (cond.monotone ? "  (strongly monotone)" : "  (VIOLATED)")
              << "\n"
              << "L_F       = " << cond.L_F << "\n"
              << "eta       = " << cfg.eta << "  (eta_max = " << cond.eta_max << ")\n"
              << "theta     = " << cond.theta << "\n"
              << "gamma     = " << cfg.gamma << "  (gamma_max = " << cond.gamma_max << ")\n";
    return cond.monotone ? kExitOk : kExitNumerical;
}

int cmd_verify(const std::string& scenario_path) {
    ScenarioConfig cfg = load_scenario(scenario_path);
    const GameSetup setup = make_setup(cfg);
    const MeasureFn measure = make_linear_measurement(setup.sens, setup.p_game);

    bool all_pass = true;
    auto note = [&all_pass](const oracles::OracleReport& rep) {
        std::cout << rep.to_line() << "\n";
        all_pass = all_pass && rep.pass;
    };

    // equilibrium: fixed-point dynamics vs closed form
    const InnerLoopResult res =
        run_inner_loop(cfg.dsos, GameIterate::cold_start(cfg.n_dsos()), cfg.v_ref_init, cfg.gamma,
                       cfg.eta, 1e-8, setup.sens, measure, 20 * cfg.max_inner, cfg.threads);
    const Eigen::VectorXd q_star = oracles::closed_form_ne(cfg.dsos, setup.sens, cfg.gamma,
                                                           cfg.v_ref_init, setup.p_game);
    note(oracles::make_report("nash_equilibrium_sup_error",
                              (res.iterate.xi - q_star).cwiseAbs().maxCoeff(), 0.0, 1e-6));
    note(oracles::verify_ne(res.iterate.xi, cfg.dsos, setup.sens, cfg.gamma, cfg.v_ref_init,
                            setup.p_game, 1e-6));

    // sensitivity: learned s vs implicit differentiation (interior rows)
    Eigen::MatrixXd jf = -cfg.gamma * setup.sens.Xtilde();
    for (int i = 0; i < cfg.n_dsos(); ++i) jf(i, i) += cfg.dsos[static_cast<std::size_t>(i)].cost_coeff;
    const Eigen::MatrixXd s_star = -cfg.gamma * jf.inverse();
    double s_err = 0.0;
    bool any_interior = false;
    for (int i = 0; i < cfg.n_dsos(); ++i) {
        const DsoProfile& d = cfg.dsos[static_cast<std::size_t>(i)];
        if (q_star(i) > d.q_min + 1e-9 && q_star(i) < d.q_max - 1e-9) {
            any_interior = true;
            s_err = std::max(s_err, (res.iterate.s.row(i) - s_star.row(i)).norm());
        } else {
            s_err = std::max(s_err, res.iterate.s.row(i).norm());
        }
    }
    if (any_interior)
        note(oracles::make_report("sensitivity_row_error", s_err, 0.0, 1e-6));

    // hypergradient vs finite differences of phi_e
    const Eigen::VectorXd v_lin = linearized_voltage(setup.sens, setup.p_game, q_star);
    const HypergradientReport rep = hypergradient(cfg.v_ref_init, v_lin, q_star, s_star,
                                                  setup.sens.X(), cfg.gamma, cfg.rho, cfg.v_lo,
                                                  cfg.v_hi);
    const Eigen::VectorXd fd = oracles::fd_hypergradient(cfg.dsos, setup.sens, setup.p_game,
                                                         cfg.gamma, cfg.rho, cfg.v_lo, cfg.v_hi,
                                                         cfg.v_ref_init, 1e-5);
    note(oracles::make_report("hypergradient_sup_error", (rep.grad - fd).cwiseAbs().maxCoeff(),
                              0.0, 1e-4 * std::max(1.0, fd.cwiseAbs().maxCoeff())));

    std::cout << (all_pass ? "all oracle checks passed" : "oracle checks FAILED") << "\n";
    return all_pass ? kExitOk : kExitOracle;
}

int cmd_disturb_demo(const std::string& out) {
    // materialize the bundled fixtures and run them end to end
    const fs::path dir = output_dir(out);
    fs::create_directories(dir);
    const fs::path net = dir / "five_bus.network";
    const fs::path scen = dir / "five_bus.scenario";
    std::ofstream(net) << five_bus_network_text;
    std::ofstream(scen) << five_bus_scenario_text;

    ScenarioConfig cfg = load_scenario(scen);
    ScenarioTrace trace = run_codesign(cfg);
    const TraceFiles files = write_trace(trace, dir);

    long k_dist = -1;
    for (const TraceRow& row : trace.rows)
        if (!row.disturbances_applied.empty()) k_dist = row.k;
    std::cout << "disturbance demo: DSO 1 injection capped at 0.40 p.u. at outer iteration "
              << k_dist << "\n";
    if (k_dist > 0) {
        const TraceRow& pre = trace.rows[static_cast<std::size_t>(k_dist - 1)];
        const TraceRow& post = trace.final_row();
        std::cout << "payments before -> after (per DSO):\n";
        for (int i = 0; i < pre.payments.size(); ++i)
            std::cout << "  dso " << (i + 1) << ": " << pre.payments(i) << " -> "
                      << post.payments(i) << "\n";
    }
    print_final_state(trace);
    std::cout << "trace:   " << files.table.string() << "\n"
              << "summary: " << files.summary.string() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"voltgame: reactive power procurement as a TSO-DSO incentive game"};
    app.require_subcommand(1);

    std::string scenario;
    std::string out;
    int threads = 0;
    double sigma = 0.0;

    auto* run = app.add_subcommand("run", "run a scenario end to end and write its trace");
    run->add_option("scenario", scenario, "scenario file")->required();
    run->add_option("--out", out, "output directory (default $VOLTGAME_OUT or ./out)");
    run->add_option("--threads", threads, "override the scenario's thread count");

    auto* inner = app.add_subcommand("inner", "run one inner loop to convergence");
    inner->add_option("scenario", scenario, "scenario file")->required();
    inner->add_option("--sigma", sigma, "override the inner tolerance");

    auto* check = app.add_subcommand("check", "report game conditioning for a scenario");
    check->add_option("scenario", scenario, "scenario file")->required();

    auto* verify = app.add_subcommand("verify", "run the oracle suite for a scenario");
    verify->add_option("scenario", scenario, "scenario file")->required();

    auto* demo = app.add_subcommand("disturb-demo",
                                    "run the bundled five-bus disturbance scenario end to end");
    demo->add_option("--out", out, "output directory (default $VOLTGAME_OUT or ./out)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(scenario, out, threads);
        if (inner->parsed()) return cmd_inner(scenario, sigma);
        if (check->parsed()) return cmd_check(scenario);
        if (verify->parsed()) return cmd_verify(scenario);
        if (demo->parsed()) return cmd_disturb_demo(out);
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kExitInput;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitInput;
    } catch (const InnerLoopStall& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const PlantInfeasible& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const PowerFlowError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitOk;
}
