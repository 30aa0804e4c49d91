#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <vector>

#include "voltgame/errors.hpp"
#include "voltgame/grid_model.hpp"
#include "voltgame/parallel.hpp"

namespace voltgame {

/// One follower: quadratic cost (1/2) C xi^2 and a reactive power box.
struct DsoProfile {
    int bus = 0;             ///< bus id the DSO is connected to
    double cost_coeff = 0.0; ///< C_i, currency per (p.u. reactive power)^2
    double q_min = 0.0;      ///< p.u., demand-positive convention
    double q_max = 0.0;      ///< p.u.

    void validate() const {
        if (!(cost_coeff > 0.0))
            throw ValidationError("dso: cost coefficient must be positive");
        if (!(q_min <= q_max))
            throw ValidationError("dso: q_min must not exceed q_max");
    }
};

/// Joint follower state carried across inner-loop iterations.
struct GameIterate {
    Eigen::VectorXd xi;     ///< reactive power demands, p.u.
    Eigen::MatrixXd s;      ///< row i = d xi_i / d v_ref
    Eigen::VectorXd v_meas; ///< last measured voltages, p.u.
    long inner_iter = 0;    ///< cumulative inner iterations

    static GameIterate cold_start(int n) {
        GameIterate it;
        it.xi = Eigen::VectorXd::Zero(n);
        it.s = Eigen::MatrixXd::Zero(n, n);
        it.v_meas = Eigen::VectorXd::Zero(n);
        return it;
    }
};

/// Strong-monotonicity / Lipschitz data of the pseudo-gradient map.
struct GameConditioning {
    double mu = 0.0;        ///< lambda_min(C - gamma Xtilde)
    double L_F = 0.0;       ///< ||C - gamma Xtilde||
    double theta = std::numeric_limits<double>::quiet_NaN();  ///< contraction rate at eta
    double gamma_max = std::numeric_limits<double>::infinity();
    double eta_max = 0.0;   ///< 2 mu / L_F^2 when monotone
    bool monotone = false;  ///< mu > 0
};

/// Payment to a DSO: gamma (v_i - v_ref_i) q_i; positive means the TSO pays.
inline double incentive_payment(double q_i, double v_i, double v_ref_i, double gamma) {
    return gamma * (v_i - v_ref_i) * q_i;
}

/// Pseudo-gradient of DSO i's cost in its own decision:
/// C_i xi_i - gamma (v_i - v_ref_i) - gamma xi_i dv_dxi,
/// where dv_dxi is the local self-sensitivity X_ii of the linear model.
inline double pseudo_gradient_i(const DsoProfile& profile, double xi_i, double v_i_measured,
                                double v_ref_i, double gamma, double dv_dxi) {
    return profile.cost_coeff * xi_i - gamma * (v_i_measured - v_ref_i) - gamma * xi_i * dv_dxi;
}

/// Derivative surrogate of the box projection: 1 on [q_min, q_max]
/// (inclusive at both bounds), 0 outside.
inline int projection_derivative(double x, double q_min, double q_max) {
    return (x >= q_min && x <= q_max) ? 1 : 0;
}

/// One synchronous projected pseudo-gradient step for all DSOs.
/// iterate.v_meas must hold the voltages for the current xi.
inline GameIterate inner_step(const std::vector<DsoProfile>& profiles, GameIterate iterate,
                              const Eigen::VectorXd& v_ref, double gamma, double eta,
                              const LinearSensitivities& sens, int threads = 1) {
    const int n = static_cast<int>(profiles.size());
    if (iterate.xi.size() != n || v_ref.size() != n || iterate.v_meas.size() != n ||
        sens.size() != n)
        throw DimensionError("inner_step: state dimensions disagree");
    const Eigen::VectorXd xi_prev = iterate.xi;
    parallel_for(n, threads, [&](int i) {
        const DsoProfile& prof = profiles[static_cast<std::size_t>(i)];
        const double f = pseudo_gradient_i(prof, xi_prev(i), iterate.v_meas(i), v_ref(i), gamma,
                                           sens.X()(i, i));
        iterate.xi(i) = std::clamp(xi_prev(i) - eta * f, prof.q_min, prof.q_max);
    });
    ++iterate.inner_iter;
    return iterate;
}

/// Sensitivity learning step. Must run after inner_step: the projection
/// indicator is evaluated at the pre-projection argument of the new iterate,
/// with the same measured voltages.
inline GameIterate sensitivity_step(const std::vector<DsoProfile>& profiles, GameIterate iterate,
                                    const Eigen::VectorXd& v_ref, double gamma, double eta,
                                    const LinearSensitivities& sens, int threads = 1) {
    const int n = static_cast<int>(profiles.size());
    if (iterate.s.rows() != n || iterate.s.cols() != n)
        throw DimensionError("sensitivity_step: s must be n x n");
    const Eigen::MatrixXd s_prev = iterate.s;
    const Eigen::MatrixXd& xt = sens.Xtilde();
    parallel_for(n, threads, [&](int i) {
        const DsoProfile& prof = profiles[static_cast<std::size_t>(i)];
        const double f = pseudo_gradient_i(prof, iterate.xi(i), iterate.v_meas(i), v_ref(i), gamma,
                                           sens.X()(i, i));
        const int g = projection_derivative(iterate.xi(i) - eta * f, prof.q_min, prof.q_max);
        if (g == 0) {
            iterate.s.row(i).setZero();
            return;
        }
        // row i of (C - gamma Xtilde)
        Eigen::RowVectorXd jf = -gamma * xt.row(i);
        jf(i) += prof.cost_coeff;
        // J2 h_i s + J1 h_i  with J1 F_i = gamma e_i^T
        Eigen::RowVectorXd row = s_prev.row(i) - eta * (jf * s_prev);
        row(i) -= eta * gamma;
        iterate.s.row(i) = row;
    });
    return iterate;
}

/// Voltage source callback: maps the current xi to measured voltages.
using MeasureFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Linear-model voltage source v = v0 + R p + X xi for analysis mode.
inline MeasureFn make_linear_measurement(const LinearSensitivities& sens,
                                         const Eigen::VectorXd& p) {
    if (p.size() != sens.size())
        throw DimensionError("make_linear_measurement: p size mismatch");
    const Eigen::VectorXd offset = sens.v0() + sens.R() * p;
    const Eigen::MatrixXd x = sens.X();
    return [offset, x](const Eigen::VectorXd& xi) -> Eigen::VectorXd { return offset + x * xi; };
}

struct InnerLoopResult {
    GameIterate iterate;
    long iterations = 0;     ///< iterations used by this call
    double residual = 0.0;   ///< final max(||dxi||, ||ds||_F)
};

/// Online distributed inner loop: repeat {measure, equilibrium step,
/// sensitivity step} until max(||xi' - xi||, ||s' - s||_F) <= sigma,
/// warm-starting from the supplied iterate. Throws InnerLoopStall when the
/// iteration cap is reached first.
inline InnerLoopResult run_inner_loop(const std::vector<DsoProfile>& profiles, GameIterate iterate,
                                      const Eigen::VectorXd& v_ref, double gamma, double eta,
                                      double sigma, const LinearSensitivities& sens,
                                      const MeasureFn& measure, long max_iterations = 10000,
                                      int threads = 1) {
    if (!(sigma > 0.0)) throw ValidationError("run_inner_loop: sigma must be positive");
    if (!(eta > 0.0)) throw ValidationError("run_inner_loop: eta must be positive");
    InnerLoopResult res;
    double residual = std::numeric_limits<double>::infinity();
    for (long l = 0; l < max_iterations; ++l) {
        iterate.v_meas = measure(iterate.xi);
        const Eigen::VectorXd xi_prev = iterate.xi;
        const Eigen::MatrixXd s_prev = iterate.s;
        iterate = inner_step(profiles, std::move(iterate), v_ref, gamma, eta, sens, threads);
        iterate = sensitivity_step(profiles, std::move(iterate), v_ref, gamma, eta, sens, threads);
        residual = std::max((iterate.xi - xi_prev).norm(), (iterate.s - s_prev).norm());
        if (residual <= sigma) {
            res.iterate = std::move(iterate);
            res.iterations = l + 1;
            res.residual = residual;
            return res;
        }
    }
    std::ostringstream os;
    os << "inner loop: no convergence after " << max_iterations << " iterations (residual "
       << residual << ", tolerance " << sigma
       << "); eta may be too large or conditioning violated";
    throw InnerLoopStall(os.str(), residual, max_iterations);
}

/// Computes mu = lambda_min(C - gamma Xtilde), L_F = ||C - gamma Xtilde||,
/// the contraction rate theta for step size eta, and the tariff bound
/// gamma_max = c_min / lambda_max(Xtilde) when lambda_max(Xtilde) > 0.
inline GameConditioning check_conditioning(const std::vector<DsoProfile>& profiles,
                                           const LinearSensitivities& sens, double gamma,
                                           double eta) {
    const int n = static_cast<int>(profiles.size());
    if (sens.size() != n)
        throw DimensionError("check_conditioning: profile/sensitivity size mismatch");
    Eigen::MatrixXd jf = -gamma * sens.Xtilde();
    double c_min = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
        jf(i, i) += profiles[static_cast<std::size_t>(i)].cost_coeff;
        c_min = std::min(c_min, profiles[static_cast<std::size_t>(i)].cost_coeff);
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_jf(jf);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_xt(sens.Xtilde());

    GameConditioning cond;
    cond.mu = eig_jf.eigenvalues().minCoeff();
    cond.L_F = eig_jf.eigenvalues().cwiseAbs().maxCoeff();
    cond.monotone = cond.mu > 0.0;
    const double xt_max = eig_xt.eigenvalues().maxCoeff();
    cond.gamma_max = xt_max > 0.0 ? c_min / xt_max : std::numeric_limits<double>::infinity();
    if (cond.monotone) {
        cond.eta_max = 2.0 * cond.mu / (cond.L_F * cond.L_F);
        if (eta > 0.0 && eta < cond.eta_max)
            cond.theta = std::sqrt(1.0 - eta * (2.0 * cond.mu - eta * cond.L_F * cond.L_F));
    }
    return cond;
}

}  // namespace voltgame
