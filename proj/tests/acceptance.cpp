// Acceptance suite: end-to-end checks of the shipped five-bus scenario and
// the solver's closed-form oracles. Prints one PASS/FAIL line per criterion
// and exits nonzero if any fail.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "voltgame/voltgame.hpp"

using namespace voltgame;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what, const std::string& detail) {
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << criterion << ": " << what;
    if (!detail.empty()) std::cout << " [" << detail << "]";
    std::cout << "\n";
    if (!pass) ++g_failures;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (static_cast<double>(rng() >> 11) * 0x1.0p-53) * (hi - lo);
}

struct RandomGame {
    std::vector<DsoProfile> profiles;
    LinearSensitivities sens;
    Eigen::VectorXd p;
    Eigen::VectorXd v_ref;
    double gamma;
};

RandomGame random_game(std::mt19937_64& rng, int n, bool wide_boxes) {
    Eigen::MatrixXd x(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
            if (i == j)
                x(i, i) = -uniform(rng, 0.05, 0.30);
            else
                x(i, j) = x(j, i) = uniform(rng, -0.05, 0.05);
        }
    std::vector<DsoProfile> profiles;
    for (int i = 0; i < n; ++i) {
        DsoProfile d;
        d.bus = i + 1;
        d.cost_coeff = uniform(rng, 0.2, 0.8);
        d.q_min = wide_boxes ? -50.0 : -uniform(rng, 0.05, 0.6);
        d.q_max = wide_boxes ? 50.0 : uniform(rng, 0.05, 0.6);
        profiles.push_back(d);
    }
    const double gamma = uniform(rng, 0.5, 2.0);
    for (int attempt = 0; attempt < 64; ++attempt) {
        const LinearSensitivities sens(-0.02 * Eigen::MatrixXd::Identity(n, n), x,
                                       Eigen::VectorXd::Ones(n));
        if (check_conditioning(profiles, sens, gamma, 0.0).mu > 0.05) break;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (i != j) x(i, j) *= 0.5;
    }
    Eigen::VectorXd v0(n), p(n), v_ref(n);
    for (int i = 0; i < n; ++i) {
        v0(i) = uniform(rng, 0.97, 1.02);
        p(i) = uniform(rng, 0.0, 1.0);
        v_ref(i) = uniform(rng, 0.95, 1.10);
    }
    return RandomGame{std::move(profiles),
                      LinearSensitivities(-0.02 * Eigen::MatrixXd::Identity(n, n), x, v0),
                      std::move(p), std::move(v_ref), gamma};
}

double stable_eta(const GameConditioning& cond) {
    return std::min(1.0 / cond.L_F, 1.5 * cond.mu / (cond.L_F * cond.L_F));
}

Eigen::MatrixXd dense_sensitivity(const std::vector<DsoProfile>& profiles,
                                  const LinearSensitivities& sens, double gamma) {
    const int n = static_cast<int>(profiles.size());
    Eigen::MatrixXd jf = -gamma * sens.Xtilde();
    for (int i = 0; i < n; ++i) jf(i, i) += profiles[static_cast<std::size_t>(i)].cost_coeff;
    return -gamma * jf.fullPivLu().inverse();
}

std::string fmt(double x) {
    std::ostringstream os;
    os << std::setprecision(6) << x;
    return os.str();
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path data_dir = argc > 1 ? fs::path(argv[1]) : fs::path("data");
    const fs::path scenario_path = data_dir / "five_bus.scenario";

    // ---- criteria 1 and 2: the bundled scenario end to end -----------------
    ScenarioConfig cfg = load_scenario(scenario_path);
    const auto t0 = std::chrono::steady_clock::now();
    const ScenarioTrace trace = run_codesign(cfg);
    const double run_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    {
        const TraceRow& first = trace.rows.front();
        int below = 0;
        for (int i = 0; i < first.v.size(); ++i)
            if (first.v(i) < 0.96) ++below;

        const long rows = trace.iterations();
        const long start20 = rows - rows / 5;
        bool tail_in_band = true;
        double tail_vmin = 1e9, tail_vmax = -1e9;
        for (long k = start20; k < rows; ++k) {
            const TraceRow& row = trace.rows[static_cast<std::size_t>(k)];
            tail_vmin = std::min(tail_vmin, row.v.minCoeff());
            tail_vmax = std::max(tail_vmax, row.v.maxCoeff());
            tail_in_band =
                tail_in_band && row.v.minCoeff() >= 0.96 && row.v.maxCoeff() <= 1.04;
        }
        report(1,
               below == 2 && tail_in_band && run_seconds < 60.0,
               "two buses start below 0.96 p.u. and all DSO buses hold [0.96, 1.04] over the "
               "final 20% of iterations",
               "below at k=0: " + std::to_string(below) + ", tail v in [" + fmt(tail_vmin) + ", " +
                   fmt(tail_vmax) + "], runtime " + fmt(run_seconds) + " s");
    }

    {
        const Disturbance& dist = cfg.disturbances.at(0);
        const long kd = dist.at_outer_iter;
        bool pinned_fast = false;
        for (long k = kd; k <= kd + 2 && k < trace.iterations(); ++k)
            pinned_fast = pinned_fast ||
                          trace.rows[static_cast<std::size_t>(k)].xi(dist.dso_index) ==
                              dist.new_q_min;
        const TraceRow& pre = trace.rows[static_cast<std::size_t>(kd - 1)];
        const TraceRow& post = trace.final_row();
        const bool end_in_band = post.v.minCoeff() >= 0.96 && post.v.maxCoeff() <= 1.04;
        double others_pre = 0.0, others_post = 0.0;
        for (int i = 0; i < pre.payments.size(); ++i) {
            if (i == dist.dso_index) continue;
            others_pre += pre.payments(i);
            others_post += post.payments(i);
        }
        const bool dso1_down = post.payments(dist.dso_index) < pre.payments(dist.dso_index);
        const bool others_up = others_post > others_pre;
        report(2, pinned_fast && end_in_band && dso1_down && others_up && run_seconds < 60.0,
               "0.40 p.u. capacity cut pins DSO 1 within 3 iterations, voltages recover, and "
               "payments redistribute",
               "dso1 payment " + fmt(pre.payments(dist.dso_index)) + " -> " +
                   fmt(post.payments(dist.dso_index)) + ", others " + fmt(others_pre) + " -> " +
                   fmt(others_post));
    }

    // ---- criterion 3: equilibrium oracle equivalence ------------------------
    {
        const auto t3 = std::chrono::steady_clock::now();
        std::mt19937_64 rng(1003);
        const int sizes[] = {1, 2, 4};
        bool all_ok = true;
        double worst = 0.0;
        for (int trial = 0; trial < 54; ++trial) {
            const RandomGame g = random_game(rng, sizes[trial % 3], trial % 2 == 0);
            const GameConditioning cond = check_conditioning(g.profiles, g.sens, g.gamma, 0.0);
            const double eta = stable_eta(cond);
            const InnerLoopResult res = run_inner_loop(
                g.profiles, GameIterate::cold_start(static_cast<int>(g.profiles.size())), g.v_ref,
                g.gamma, eta, 1e-8, g.sens, make_linear_measurement(g.sens, g.p), 500000);
            const Eigen::VectorXd q_star =
                oracles::closed_form_ne(g.profiles, g.sens, g.gamma, g.v_ref, g.p);
            const double err = (res.iterate.xi - q_star).cwiseAbs().maxCoeff();
            worst = std::max(worst, err);
            all_ok = all_ok && err <= 1e-6 &&
                     oracles::verify_ne(res.iterate.xi, g.profiles, g.sens, g.gamma, g.v_ref, g.p,
                                        1e-6)
                         .pass;
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t3).count();
        report(3, all_ok && secs < 30.0,
               "inner loop matches the closed-form equilibrium on 54 randomized instances",
               "worst sup error " + fmt(worst) + ", " + fmt(secs) + " s");
    }

    // ---- criterion 4: contraction rate --------------------------------------
    {
        std::mt19937_64 rng(1004);
        bool all_ok = true;
        double worst_excess = -1.0;
        for (int trial = 0; trial < 12; ++trial) {
            const int n = 2 + static_cast<int>(rng() % 3);
            const RandomGame g = random_game(rng, n, true);
            GameConditioning cond = check_conditioning(g.profiles, g.sens, g.gamma, 0.0);
            const double eta = stable_eta(cond);
            cond = check_conditioning(g.profiles, g.sens, g.gamma, eta);
            const Eigen::VectorXd q_star =
                oracles::closed_form_ne(g.profiles, g.sens, g.gamma, g.v_ref, g.p);
            const MeasureFn measure = make_linear_measurement(g.sens, g.p);
            GameIterate it = GameIterate::cold_start(n);
            double err_prev = (it.xi - q_star).norm();
            for (int l = 0; l < 3000; ++l) {
                it.v_meas = measure(it.xi);
                it = inner_step(g.profiles, std::move(it), g.v_ref, g.gamma, eta, g.sens);
                const double err = (it.xi - q_star).norm();
                if (err < 1e-11 || err_prev < 1e-11) break;
                const double ratio = err / err_prev;
                worst_excess = std::max(worst_excess, ratio - cond.theta);
                all_ok = all_ok && ratio <= cond.theta + 0.05;
                err_prev = err;
            }
        }
        report(4, all_ok, "per-iteration error ratio never exceeds theta + 0.05 on 12 instances",
               "worst ratio excess over theta " + fmt(worst_excess));
    }

    // ---- criterion 5: sensitivity correctness -------------------------------
    {
        std::mt19937_64 rng(1005);
        bool all_ok = true;
        double worst_interior = 0.0;
        int saturated_rows = 0;
        for (int trial = 0; trial < 14; ++trial) {
            const int n = 2 + static_cast<int>(rng() % 3);
            const bool wide = trial % 2 == 0;
            RandomGame g = random_game(rng, n, wide);
            if (!wide) {
                // squeeze the boxes so several coordinates saturate
                for (DsoProfile& d : g.profiles) {
                    d.q_min = std::max(d.q_min, -0.02);
                    d.q_max = std::min(d.q_max, 0.02);
                }
            }
            const GameConditioning cond = check_conditioning(g.profiles, g.sens, g.gamma, 0.0);
            const double eta = stable_eta(cond);
            const InnerLoopResult res =
                run_inner_loop(g.profiles, GameIterate::cold_start(n), g.v_ref, g.gamma, eta,
                               1e-11, g.sens, make_linear_measurement(g.sens, g.p), 500000);
            const Eigen::VectorXd q_star =
                oracles::closed_form_ne(g.profiles, g.sens, g.gamma, g.v_ref, g.p);
            bool all_interior = true;
            for (int i = 0; i < n; ++i) {
                const DsoProfile& d = g.profiles[static_cast<std::size_t>(i)];
                const bool interior =
                    q_star(i) > d.q_min + 1e-8 && q_star(i) < d.q_max - 1e-8;
                all_interior = all_interior && interior;
                if (!interior) {
                    ++saturated_rows;
                    all_ok = all_ok && res.iterate.s.row(i).isZero();
                }
            }
            if (all_interior) {
                const Eigen::MatrixXd s_star = dense_sensitivity(g.profiles, g.sens, g.gamma);
                const double err = (res.iterate.s - s_star).norm();
                worst_interior = std::max(worst_interior, err);
                all_ok = all_ok && err <= 1e-6;
            }
        }
        report(5, all_ok && saturated_rows > 0,
               "converged sensitivity matches -gamma (C - gamma Xtilde)^-1; saturated rows are "
               "exactly zero",
               "worst interior Frobenius error " + fmt(worst_interior) + ", " +
                   std::to_string(saturated_rows) + " saturated rows checked");
    }

    // ---- criterion 6: hypergradient vs finite differences -------------------
    {
        std::mt19937_64 rng(1006);
        bool all_ok = true;
        double worst_rel = 0.0;
        int points = 0;
        while (points < 20) {
            const int n = 1 + static_cast<int>(rng() % 4);
            const RandomGame g = random_game(rng, n, true);
            const double rho = 200.0, v_lo = 0.90, v_hi = 1.08;
            const Eigen::VectorXd q_star =
                oracles::closed_form_ne(g.profiles, g.sens, g.gamma, g.v_ref, g.p);
            const Eigen::VectorXd v = linearized_voltage(g.sens, g.p, q_star);
            // stay away from the penalty kinks
            bool near_kink = false;
            for (int i = 0; i < n; ++i)
                near_kink = near_kink || std::abs(v(i) - v_lo) < 1e-3 ||
                            std::abs(v(i) - v_hi) < 1e-3;
            if (near_kink) continue;
            const Eigen::MatrixXd s_star = dense_sensitivity(g.profiles, g.sens, g.gamma);
            const HypergradientReport rep = hypergradient(g.v_ref, v, q_star, s_star, g.sens.X(),
                                                          g.gamma, rho, v_lo, v_hi);
            const Eigen::VectorXd fd = oracles::fd_hypergradient(g.profiles, g.sens, g.p, g.gamma,
                                                                 rho, v_lo, v_hi, g.v_ref, 1e-5);
            bool usable = true;
            for (int i = 0; i < n; ++i) usable = usable && std::abs(fd(i)) > 1e-4;
            if (!usable) continue;
            for (int i = 0; i < n; ++i) {
                const double rel = std::abs(rep.grad(i) - fd(i)) / std::abs(fd(i));
                worst_rel = std::max(worst_rel, rel);
                all_ok = all_ok && rel <= 1e-4;
            }
            ++points;
        }
        report(6, all_ok,
               "hypergradient matches finite differences of phi_e at 20 interior points",
               "worst componentwise relative error " + fmt(worst_rel));
    }

    // ---- criterion 7: conditioning gate --------------------------------------
    {
        const Eigen::VectorXd q0 = Eigen::VectorXd::Zero(cfg.grid->n_nonslack());
        const LinearSensitivities sens =
            linearize(*cfg.grid, cfg.loads, q0).permuted(cfg.game_to_nonslack());
        const GameConditioning bundled = check_conditioning(cfg.dsos, sens, cfg.gamma, cfg.eta);

        Eigen::MatrixXd x(2, 2);
        x << -0.1, 2.2, 2.2, -0.1;  // lambda_max(Xtilde) = 2.0 > 0
        const LinearSensitivities meshed(Eigen::MatrixXd::Zero(2, 2), x, Eigen::VectorXd::Ones(2));
        std::vector<DsoProfile> uniform_costs{DsoProfile{1, 0.5, -1, 1}, DsoProfile{2, 0.5, -1, 1}};
        const GameConditioning ok = check_conditioning(uniform_costs, meshed, 0.1, 0.0);
        const GameConditioning bad = check_conditioning(uniform_costs, meshed, 0.3, 0.0);

        const bool pass = bundled.monotone && bundled.mu > 0.0 &&
                          std::abs(ok.gamma_max - 0.25) < 1e-12 && ok.monotone && !bad.monotone;
        report(7, pass,
               "conditioning: bundled mu > 0; meshed instance yields gamma_max = c_min / "
               "lambda_max(Xtilde) and flags violations",
               "bundled mu " + fmt(bundled.mu) + ", meshed gamma_max " + fmt(ok.gamma_max) +
                   ", mu at gamma = 0.3: " + fmt(bad.mu));
    }

    // ---- criterion 8: plant fidelity -----------------------------------------
    {
        const GridModel grid = build_five_bus();
        const Eigen::VectorXd p0 = cfg.loads;
        const Eigen::VectorXd q0 = Eigen::VectorXd::Zero(4);
        const LinearSensitivities sens = linearize(grid, p0, q0);
        std::mt19937_64 rng(1008);
        double worst = 0.0, worst_mismatch = 0.0;
        for (int trial = 0; trial < 50; ++trial) {
            Eigen::VectorXd q(4);
            for (int i = 0; i < 4; ++i) q(i) = uniform(rng, -0.05, 0.05);
            const PowerFlowSolution sol = solve_ac_power_flow(grid, p0, q);
            worst_mismatch = std::max(worst_mismatch, sol.mismatch);
            worst = std::max(worst,
                             (sol.v - linearized_voltage(sens, p0, q)).cwiseAbs().maxCoeff());
        }
        report(8, worst < 1e-3 && worst_mismatch <= 1e-8,
               "linear model within 1e-3 p.u. of the AC solver over +/- 0.05 p.u. perturbations; "
               "mismatch <= 1e-8 at every success",
               "worst divergence " + fmt(worst) + ", worst mismatch " + fmt(worst_mismatch));
    }

    // ---- criterion 9: determinism --------------------------------------------
    {
        ScenarioConfig again = load_scenario(scenario_path);
        const std::string csv_a = trace_to_csv(trace);
        const std::string csv_b = trace_to_csv(run_codesign(again));
        again.threads = 4;
        const std::string csv_c = trace_to_csv(run_codesign(again));
        report(9, csv_a == csv_b && csv_a == csv_c,
               "repeated runs and different inner-loop thread counts give byte-identical traces",
               csv_a == csv_b ? "tables identical" : "tables differ");
    }

    if (g_failures == 0) {
        std::cout << "acceptance: all criteria passed\n";
        return 0;
    }
    std::cout << "acceptance: " << g_failures << " criteria FAILED\n";
    return 1;
}
