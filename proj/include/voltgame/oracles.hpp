#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "voltgame/dso_agents.hpp"
#include "voltgame/errors.hpp"
#include "voltgame/grid_model.hpp"
#include "voltgame/tso_controller.hpp"

namespace voltgame {
namespace oracles {

/// One verification record; pass holds exactly when the error is within tol.
struct OracleReport {
    std::string quantity;
    double algorithm_value = 0.0;
    double oracle_value = 0.0;
    double abs_error = 0.0;
    double rel_error = 0.0;
    double tolerance = 0.0;
    bool pass = false;

    /// Single-line structured record for test logs.
    std::string to_line() const {
        std::ostringstream os;
        os.precision(12);
        os << "oracle quantity=" << quantity << " algo=" << algorithm_value
           << " oracle=" << oracle_value << " abs_err=" << abs_error << " rel_err=" << rel_error
           << " tol=" << tolerance << " status=" << (pass ? "PASS" : "FAIL");
        return os.str();
    }
};

inline OracleReport make_report(std::string quantity, double algo, double oracle, double tol) {
    OracleReport r;
    r.quantity = std::move(quantity);
    r.algorithm_value = algo;
    r.oracle_value = oracle;
    r.abs_error = std::abs(algo - oracle);
    r.rel_error = r.abs_error / std::max(std::abs(oracle), 1e-300);
    r.tolerance = tol;
    r.pass = r.abs_error <= tol;
    return r;
}

/// Exact best response of DSO i given the other components of xi:
/// clamp(gamma K_i / (C_i - 2 gamma X_ii)) with
/// K_i = sum_{j != i} X_ij xi_j + v0_i + (R p)_i - v_ref_i.
inline double best_response_i(int i, const Eigen::VectorXd& xi,
                              const std::vector<DsoProfile>& profiles,
                              const LinearSensitivities& sens, double gamma,
                              const Eigen::VectorXd& v_ref, const Eigen::VectorXd& rp) {
    const DsoProfile& prof = profiles[static_cast<std::size_t>(i)];
    double k = sens.v0()(i) + rp(i) - v_ref(i);
    for (Eigen::Index j = 0; j < xi.size(); ++j)
        if (j != i) k += sens.X()(i, j) * xi(j);
    const double denom = prof.cost_coeff - 2.0 * gamma * sens.X()(i, i);
    return std::clamp(gamma * k / denom, prof.q_min, prof.q_max);
}

/// Nash equilibrium of the lower-level game under the linear voltage model,
/// computed independently of the projected pseudo-gradient dynamics: a dense
/// solve of the unconstrained stationarity system, then cyclic exact
/// best-response sweeps whenever a box constraint is active.
inline Eigen::VectorXd closed_form_ne(const std::vector<DsoProfile>& profiles,
                                      const LinearSensitivities& sens, double gamma,
                                      const Eigen::VectorXd& v_ref, const Eigen::VectorXd& p,
                                      long max_sweeps = 100000, double sweep_tol = 1e-14) {
    const int n = static_cast<int>(profiles.size());
    if (sens.size() != n || v_ref.size() != n || p.size() != n)
        throw DimensionError("closed_form_ne: size mismatch");

    Eigen::MatrixXd jf = -gamma * sens.Xtilde();
    for (int i = 0; i < n; ++i) jf(i, i) += profiles[static_cast<std::size_t>(i)].cost_coeff;
    const Eigen::VectorXd rp = sens.R() * p;
    const Eigen::VectorXd rhs = gamma * (sens.v0() + rp - v_ref);
    Eigen::VectorXd q = jf.fullPivLu().solve(rhs);

    bool feasible = true;
    for (int i = 0; i < n; ++i) {
        const DsoProfile& prof = profiles[static_cast<std::size_t>(i)];
        if (q(i) < prof.q_min || q(i) > prof.q_max) {
            feasible = false;
            q(i) = std::clamp(q(i), prof.q_min, prof.q_max);
        }
    }
    if (!feasible) {
        long sweep = 0;
        for (; sweep < max_sweeps; ++sweep) {
            double change = 0.0;
            for (int i = 0; i < n; ++i) {
                const double next = best_response_i(i, q, profiles, sens, gamma, v_ref, rp);
                change = std::max(change, std::abs(next - q(i)));
                q(i) = next;
            }
            if (change <= sweep_tol) break;
        }
        if (sweep == max_sweeps)
            throw Error("closed_form_ne: best-response sweep did not converge "
                        "(conditioning violated?)");
    }

    // cross-check the scalar KKT conditions
    for (int i = 0; i < n; ++i) {
        const DsoProfile& prof = profiles[static_cast<std::size_t>(i)];
        double f = prof.cost_coeff * q(i) - 2.0 * gamma * sens.X()(i, i) * q(i);
        double k = sens.v0()(i) + rp(i) - v_ref(i);
        for (int j = 0; j < n; ++j)
            if (j != i) k += sens.X()(i, j) * q(j);
        f -= gamma * k;
        const bool at_lower = q(i) <= prof.q_min + 1e-12;
        const bool at_upper = q(i) >= prof.q_max - 1e-12;
        const bool ok = (at_lower && f >= -1e-10) || (at_upper && f <= 1e-10) ||
                        (std::abs(f) <= 1e-10);
        if (!ok)
            throw Error("closed_form_ne: KKT residual check failed (residual " +
                        std::to_string(f) + " at DSO " + std::to_string(i + 1) + ")");
    }
    return q;
}

/// Single-level objective phi_e(v_ref) under the linear model at the exact
/// constrained equilibrium.
inline double phi_e_linear(const std::vector<DsoProfile>& profiles,
                           const LinearSensitivities& sens, const Eigen::VectorXd& p, double gamma,
                           double rho, double v_lo, double v_hi, const Eigen::VectorXd& v_ref) {
    const Eigen::VectorXd q = closed_form_ne(profiles, sens, gamma, v_ref, p);
    const Eigen::VectorXd v = linearized_voltage(sens, p, q);
    return augmented_objective(v_ref, v, q, gamma, rho, v_lo, v_hi);
}

/// Central finite differences of phi_e, recomputing the closed-form
/// equilibrium at each perturbed reference. Never calls hypergradient().
inline Eigen::VectorXd fd_hypergradient(const std::vector<DsoProfile>& profiles,
                                        const LinearSensitivities& sens, const Eigen::VectorXd& p,
                                        double gamma, double rho, double v_lo, double v_hi,
                                        const Eigen::VectorXd& v_ref, double h) {
    if (!(h > 0.0)) throw ValidationError("fd_hypergradient: h must be positive");
    const int n = static_cast<int>(v_ref.size());
    Eigen::VectorXd g(n);
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd hi = v_ref, lo = v_ref;
        hi(i) += h;
        lo(i) -= h;
        const double fp = phi_e_linear(profiles, sens, p, gamma, rho, v_lo, v_hi, hi);
        const double fm = phi_e_linear(profiles, sens, p, gamma, rho, v_lo, v_hi, lo);
        g(i) = (fp - fm) / (2.0 * h);
    }
    return g;
}

/// Checks that each component of q_candidate is the exact best response to
/// the others; reports the worst deviation.
inline OracleReport verify_ne(const Eigen::VectorXd& q_candidate,
                              const std::vector<DsoProfile>& profiles,
                              const LinearSensitivities& sens, double gamma,
                              const Eigen::VectorXd& v_ref, const Eigen::VectorXd& p, double tol) {
    const int n = static_cast<int>(profiles.size());
    if (q_candidate.size() != n)
        throw DimensionError("verify_ne: candidate size mismatch");
    const Eigen::VectorXd rp = sens.R() * p;
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
        const double br = best_response_i(i, q_candidate, profiles, sens, gamma, v_ref, rp);
        worst = std::max(worst, std::abs(br - q_candidate(i)));
    }
    OracleReport r;
    r.quantity = "nash_best_response_deviation";
    r.algorithm_value = worst;
    r.oracle_value = 0.0;
    r.abs_error = worst;
    r.rel_error = worst;
    r.tolerance = tol;
    r.pass = worst <= tol;
    return r;
}

}  // namespace oracles
}  // namespace voltgame
