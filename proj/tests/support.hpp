#pragma once

// Shared helpers for the test suites: deterministic random game instances
// and access to the bundled data directory.

#include <cstdlib>
#include <filesystem>
#include <random>
#include <vector>

#include "voltgame/voltgame.hpp"

namespace testsupport {

inline std::filesystem::path data_dir() {
    if (const char* env = std::getenv("VOLTGAME_DATA_DIR")) return env;
    return std::filesystem::path("data");
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + u * (hi - lo);
}

/// A random lower-level game under the linear voltage model.
struct RandomGame {
    std::vector<voltgame::DsoProfile> profiles;
    voltgame::LinearSensitivities sens;
    Eigen::VectorXd p;
    Eigen::VectorXd v_ref;
    double gamma;
};

/// Draws a game with C in [0.2, 0.8], symmetric negative-diagonal X, and
/// couplings rescaled until the pseudo-gradient is strongly monotone.
/// `wide_boxes` makes every equilibrium interior.
inline RandomGame make_random_game(std::mt19937_64& rng, int n, bool wide_boxes) {
    using namespace voltgame;
    Eigen::MatrixXd x(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            if (i == j) {
                x(i, i) = -uniform(rng, 0.05, 0.30);
            } else {
                x(i, j) = uniform(rng, -0.05, 0.05);
                x(j, i) = x(i, j);
            }
        }
    }
    std::vector<DsoProfile> profiles;
    for (int i = 0; i < n; ++i) {
        DsoProfile d;
        d.bus = i + 1;
        d.cost_coeff = uniform(rng, 0.2, 0.8);
        if (wide_boxes) {
            d.q_min = -50.0;
            d.q_max = 50.0;
        } else {
            d.q_min = -uniform(rng, 0.05, 0.6);
            d.q_max = uniform(rng, 0.05, 0.6);
        }
        profiles.push_back(d);
    }
    const double gamma = uniform(rng, 0.5, 2.0);

    // shrink off-diagonal couplings until C - gamma * Xtilde is positive definite
    for (int attempt = 0; attempt < 64; ++attempt) {
        LinearSensitivities sens(Eigen::MatrixXd::Identity(n, n) * (-0.02), x,
                                 Eigen::VectorXd::Ones(n));
        const GameConditioning cond = check_conditioning(profiles, sens, gamma, 0.0);
        if (cond.mu > 0.05) break;
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
    RandomGame g{std::move(profiles),
                 voltgame::LinearSensitivities(Eigen::MatrixXd::Identity(n, n) * (-0.02), x, v0),
                 std::move(p), std::move(v_ref), gamma};
    return g;
}

/// A step size satisfying eta < 2 mu / L_F^2 with margin.
inline double safe_eta(const voltgame::GameConditioning& cond) {
    return std::min(1.0 / cond.L_F, 1.5 * cond.mu / (cond.L_F * cond.L_F));
}

}  // namespace testsupport
