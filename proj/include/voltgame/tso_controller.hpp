#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "voltgame/dso_agents.hpp"
#include "voltgame/errors.hpp"
#include "voltgame/schedule.hpp"

namespace voltgame {

/// The leader's decision state and tuning.
struct IncentiveState {
    Eigen::VectorXd v_ref;  ///< per-bus voltage references, p.u.
    double gamma = 0.0;     ///< tariff, currency per p.u.-volt per p.u.-MVar
    double rho = 0.0;       ///< penalty weight
    double v_lo = 0.0;      ///< lower secure voltage bound, p.u.
    double v_hi = 0.0;      ///< upper secure voltage bound, p.u.
    Schedule epsilon;       ///< outer step sizes
    Schedule sigma;         ///< inner tolerances
    long outer_iter = 0;

    void validate() const {
        if (!(v_lo < v_hi)) throw ValidationError("incentive: v_lo must be below v_hi");
        if (!(gamma > 0.0)) throw ValidationError("incentive: gamma must be positive");
        if (!(rho > 0.0)) throw ValidationError("incentive: rho must be positive");
    }
};

/// Hypergradient decomposition; grad is always the exact sum of the terms.
struct HypergradientReport {
    Eigen::VectorXd grad;
    Eigen::VectorXd term_direct;       ///< d phi / d v_ref at fixed (v, q)
    Eigen::VectorXd term_voltage;      ///< (J_q v . s)^T d phi / d v
    Eigen::VectorXd term_equilibrium;  ///< s^T d phi / d q
    double objective = 0.0;            ///< augmented phi at the evaluation point
};

/// Quadratic hinge penalty on the voltage band:
/// sum_i rho max(0, v_i - v_hi)^2 + rho max(0, v_lo - v_i)^2.
inline double penalty(const Eigen::VectorXd& v, double v_lo, double v_hi, double rho) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double over = std::max(0.0, v(i) - v_hi);
        const double under = std::max(0.0, v_lo - v(i));
        total += rho * over * over + rho * under * under;
    }
    return total;
}

/// Per-bus derivative of penalty: 2 rho max(0, v - v_hi) - 2 rho max(0, v_lo - v).
/// Zero inside the band and at exact boundary contact.
inline Eigen::VectorXd penalty_gradient(const Eigen::VectorXd& v, double v_lo, double v_hi,
                                        double rho) {
    Eigen::VectorXd g(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i)
        g(i) = 2.0 * rho * std::max(0.0, v(i) - v_hi) - 2.0 * rho * std::max(0.0, v_lo - v(i));
    return g;
}

/// Total incentive payments plus band penalty.
inline double augmented_objective(const Eigen::VectorXd& v_ref, const Eigen::VectorXd& v,
                                  const Eigen::VectorXd& q, double gamma, double rho, double v_lo,
                                  double v_hi) {
    if (v.size() != v_ref.size() || q.size() != v_ref.size())
        throw DimensionError("augmented_objective: size mismatch");
    double payments = 0.0;
    for (Eigen::Index i = 0; i < q.size(); ++i)
        payments += incentive_payment(q(i), v(i), v_ref(i), gamma);
    return payments + penalty(v, v_lo, v_hi, rho);
}

/// Approximate hypergradient of the single-level objective, built from the
/// inner loop's sensitivity estimate s and measured voltages. The voltage
/// sensitivity J_q v is taken as the reactance matrix X of the linear model.
inline HypergradientReport hypergradient(const Eigen::VectorXd& v_ref,
                                         const Eigen::VectorXd& v_meas,
                                         const Eigen::VectorXd& xi, const Eigen::MatrixXd& s,
                                         const Eigen::MatrixXd& X, double gamma, double rho,
                                         double v_lo, double v_hi) {
    const Eigen::Index n = v_ref.size();
    if (v_meas.size() != n || xi.size() != n || s.rows() != n || s.cols() != n ||
        X.rows() != n || X.cols() != n)
        throw DimensionError("hypergradient: size mismatch");

    const Eigen::VectorXd grad1 = -gamma * xi;
    const Eigen::VectorXd grad2 = gamma * xi + penalty_gradient(v_meas, v_lo, v_hi, rho);
    const Eigen::VectorXd grad3 = gamma * (v_meas - v_ref);

    HypergradientReport rep;
    rep.term_direct = grad1;
    rep.term_voltage = (X * s).transpose() * grad2;
    rep.term_equilibrium = s.transpose() * grad3;
    rep.grad = rep.term_direct + rep.term_voltage + rep.term_equilibrium;
    rep.objective = augmented_objective(v_ref, v_meas, xi, gamma, rho, v_lo, v_hi);
    return rep;
}

/// Gradient step on the incentive signal: v_ref <- v_ref - eps_k grad.
inline IncentiveState update_incentive(IncentiveState state, const HypergradientReport& report) {
    if (report.grad.size() != state.v_ref.size())
        throw DimensionError("update_incentive: gradient size mismatch");
    const double eps = state.epsilon.at(state.outer_iter);
    if (!(eps > 0.0)) throw ValidationError("update_incentive: step size must be positive");
    state.v_ref -= eps * report.grad;
    ++state.outer_iter;
    return state;
}

}  // namespace voltgame
