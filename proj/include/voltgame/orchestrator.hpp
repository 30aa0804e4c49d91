#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "voltgame/dso_agents.hpp"
#include "voltgame/errors.hpp"
#include "voltgame/grid_model.hpp"
#include "voltgame/oracles.hpp"
#include "voltgame/scenario.hpp"
#include "voltgame/tso_controller.hpp"

namespace voltgame {

/// One recorded outer iteration.
struct TraceRow {
    long k = 0;
    Eigen::VectorXd v_ref;
    Eigen::VectorXd v;         ///< plant (or linear-model) voltages
    Eigen::VectorXd xi;
    Eigen::VectorXd payments;  ///< gamma (v_i - v_ref_i) xi_i
    double phi_e = 0.0;
    double grad_norm = 0.0;
    long inner_iters = 0;
    std::vector<int> disturbances_applied;  ///< indices into the scenario's list
};

/// Metadata captured at run start so traces are self-describing.
struct TraceMeta {
    double gamma = 0.0;
    double rho = 0.0;
    double v_lo = 0.0;
    double v_hi = 0.0;
    std::string mode;
    unsigned long long seed = 0;
    int n_dsos = 0;
};

/// Full time-indexed record of a co-design run.
struct ScenarioTrace {
    TraceMeta meta;
    std::vector<TraceRow> rows;
    bool grad_converged = false;   ///< stopped on the gradient-norm test
    std::string stop_reason;
    std::vector<oracles::OracleReport> oracle_digests;

    long iterations() const { return static_cast<long>(rows.size()); }
    const TraceRow& final_row() const { return rows.back(); }
};

/// Replaces one DSO's reactive power box and clamps the live xi into it.
/// The plant sees the clamped value at the next measurement.
inline void apply_disturbance(std::vector<DsoProfile>& profiles, Eigen::VectorXd& xi,
                              const Disturbance& d) {
    if (d.dso_index < 0 || d.dso_index >= static_cast<int>(profiles.size()))
        throw ValidationError("apply_disturbance: DSO index out of range");
    d.validate();
    DsoProfile& prof = profiles[static_cast<std::size_t>(d.dso_index)];
    prof.q_min = d.new_q_min;
    prof.q_max = d.new_q_max;
    xi(d.dso_index) = std::clamp(xi(d.dso_index), prof.q_min, prof.q_max);
}

namespace detail {

/// Sequential plant measurement chain: one AC solve per call, warm-started
/// from the previous solution of the chain.
class PlantMeasurement {
public:
    PlantMeasurement(const AcPowerFlow& pf, Eigen::VectorXd p_nonslack, std::vector<int> perm)
        : pf_(pf), p_(std::move(p_nonslack)), perm_(std::move(perm)) {}

    Eigen::VectorXd operator()(const Eigen::VectorXd& xi_game) {
        Eigen::VectorXd q = Eigen::VectorXd::Zero(p_.size());
        for (int i = 0; i < xi_game.size(); ++i) q(perm_[static_cast<std::size_t>(i)]) = xi_game(i);
        last_ = last_ ? pf_.solve(p_, q, *last_) : pf_.solve(p_, q);
        Eigen::VectorXd v_game(xi_game.size());
        for (int i = 0; i < v_game.size(); ++i) v_game(i) = last_->v(perm_[static_cast<std::size_t>(i)]);
        return v_game;
    }

private:
    const AcPowerFlow& pf_;
    Eigen::VectorXd p_;
    std::vector<int> perm_;
    std::optional<PowerFlowSolution> last_;
};

}  // namespace detail

/// Runs the incentives-and-automation co-design loop end to end, appending
/// one row per completed outer iteration to `trace`. On PlantInfeasible or
/// InnerLoopStall the rows recorded so far stay valid.
inline void run_codesign(const ScenarioConfig& cfg, ScenarioTrace& trace) {
    if (!cfg.grid.has_value())
        throw ValidationError("run_codesign: scenario has no grid attached");
    const GridModel& grid = *cfg.grid;
    const int n = cfg.n_dsos();

    trace.meta.gamma = cfg.gamma;
    trace.meta.rho = cfg.rho;
    trace.meta.v_lo = cfg.v_lo;
    trace.meta.v_hi = cfg.v_hi;
    trace.meta.mode = cfg.mode == MeasurementMode::Feedback ? "feedback" : "linear-analysis";
    trace.meta.seed = cfg.seed;
    trace.meta.n_dsos = n;

    // validation: plant solvable at base load, then model extraction
    const AcPowerFlow plant(grid);
    const Eigen::VectorXd q0 = Eigen::VectorXd::Zero(grid.n_nonslack());
    LinearSensitivities sens_ns = [&] {
        try {
            (void)plant.solve(cfg.loads, q0);
            return linearize(grid, cfg.loads, q0);
        } catch (const PowerFlowError& e) {
            throw PlantInfeasible(std::string("scenario base load is not solvable: ") + e.what(),
                                  -1);
        }
    }();
    const std::vector<int> perm = cfg.game_to_nonslack();
    const LinearSensitivities sens = sens_ns.permuted(perm);
    const Eigen::VectorXd p_game = cfg.loads_game_order();

    std::vector<DsoProfile> profiles = cfg.dsos;
    const GameConditioning cond = check_conditioning(profiles, sens, cfg.gamma, cfg.eta);
    if (!cond.monotone && !cfg.allow_nonmonotone) {
        std::ostringstream os;
        os << "run_codesign: pseudo-gradient not strongly monotone (mu = " << cond.mu
           << "); lower gamma below gamma_max = " << cond.gamma_max
           << " or set allow_nonmonotone";
        throw ValidationError(os.str());
    }

    detail::PlantMeasurement plant_measure(plant, cfg.loads, perm);
    MeasureFn measure;
    if (cfg.mode == MeasurementMode::Feedback) {
        measure = [&plant_measure](const Eigen::VectorXd& xi) { return plant_measure(xi); };
    } else {
        measure = make_linear_measurement(sens, p_game);
    }

    IncentiveState state;
    state.v_ref = cfg.v_ref_init;
    state.gamma = cfg.gamma;
    state.rho = cfg.rho;
    state.v_lo = cfg.v_lo;
    state.v_hi = cfg.v_hi;
    state.epsilon = cfg.epsilon;
    state.sigma = cfg.sigma;
    state.validate();

    GameIterate iterate = GameIterate::cold_start(n);
    std::size_t next_disturbance = 0;

    for (long k = 0; k < cfg.outer_iterations; ++k) {
        TraceRow row;
        row.k = k;
        while (next_disturbance < cfg.disturbances.size() &&
               cfg.disturbances[next_disturbance].at_outer_iter == k) {
            apply_disturbance(profiles, iterate.xi, cfg.disturbances[next_disturbance]);
            row.disturbances_applied.push_back(static_cast<int>(next_disturbance));
            ++next_disturbance;
        }

        InnerLoopResult inner;
        try {
            inner = run_inner_loop(profiles, std::move(iterate), state.v_ref, cfg.gamma, cfg.eta,
                                   state.sigma.at(k), sens, measure, cfg.max_inner, cfg.threads);
        } catch (const InnerLoopStall& e) {
            throw InnerLoopStall("outer iteration " + std::to_string(k) + ": " + e.what(),
                                 e.residual, e.iterations);
        } catch (const PowerFlowError& e) {
            throw PlantInfeasible("outer iteration " + std::to_string(k) +
                                      ": plant diverged during inner loop: " + e.what(),
                                  static_cast<int>(k));
        }
        iterate = std::move(inner.iterate);

        Eigen::VectorXd v_k;
        try {
            v_k = measure(iterate.xi);
        } catch (const PowerFlowError& e) {
            throw PlantInfeasible("outer iteration " + std::to_string(k) +
                                      ": plant diverged at measurement: " + e.what(),
                                  static_cast<int>(k));
        }

        const HypergradientReport rep = hypergradient(state.v_ref, v_k, iterate.xi, iterate.s,
                                                      sens.X(), cfg.gamma, cfg.rho, cfg.v_lo,
                                                      cfg.v_hi);

        row.v_ref = state.v_ref;
        row.v = v_k;
        row.xi = iterate.xi;
        row.payments.resize(n);
        for (int i = 0; i < n; ++i)
            row.payments(i) = incentive_payment(iterate.xi(i), v_k(i), state.v_ref(i), cfg.gamma);
        row.phi_e = rep.objective;
        row.grad_norm = rep.grad.norm();
        row.inner_iters = inner.iterations;
        trace.rows.push_back(std::move(row));

        const bool disturbances_pending = next_disturbance < cfg.disturbances.size();
        if (rep.grad.norm() <= cfg.grad_tol && !disturbances_pending) {
            trace.grad_converged = true;
            trace.stop_reason = "gradient norm below tolerance";
            return;
        }
        state = update_incentive(std::move(state), rep);
    }
    trace.stop_reason = "outer iteration budget exhausted";
}

/// Convenience overload returning the trace.
inline ScenarioTrace run_codesign(const ScenarioConfig& cfg) {
    ScenarioTrace trace;
    run_codesign(cfg, trace);
    return trace;
}

}  // namespace voltgame
