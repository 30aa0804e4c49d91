#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "support.hpp"
#include "voltgame/voltgame.hpp"

using namespace voltgame;
using oracles::closed_form_ne;
using oracles::fd_hypergradient;
using oracles::verify_ne;
using testsupport::make_random_game;
using testsupport::safe_eta;

TEST_CASE("closed-form equilibrium: unconstrained case equals the dense solve") {
    std::mt19937_64 rng(41);
    const auto g = make_random_game(rng, 4, /*wide_boxes=*/true);
    const Eigen::VectorXd q = closed_form_ne(g.profiles, g.sens, g.gamma, g.v_ref, g.p);

    Eigen::MatrixXd jf = -g.gamma * g.sens.Xtilde();
    for (int i = 0; i < 4; ++i) jf(i, i) += g.profiles[static_cast<std::size_t>(i)].cost_coeff;
    const Eigen::VectorXd rhs = g.gamma * (g.sens.v0() + g.sens.R() * g.p - g.v_ref);
    const Eigen::VectorXd q_direct = jf.fullPivLu().solve(rhs);
    CHECK((q - q_direct).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("closed-form equilibrium: single-DSO value") {
    std::vector<DsoProfile> profiles{DsoProfile{1, 0.5, -100.0, 100.0}};
    const LinearSensitivities sens(Eigen::MatrixXd::Zero(1, 1),
                                   -0.1 * Eigen::MatrixXd::Identity(1, 1),
                                   Eigen::VectorXd::Ones(1));
    const Eigen::VectorXd q = closed_form_ne(profiles, sens, 0.1,
                                             Eigen::VectorXd::Constant(1, 1.05),
                                             Eigen::VectorXd::Zero(1));
    CHECK(q(0) == Catch::Approx(-9.6154e-3).epsilon(1e-4));
}

TEST_CASE("closed-form equilibrium: active bound carries a valid multiplier") {
    // unconstrained optimum far beyond q_max: coordinate pins at the bound and
    // the pseudo-gradient there points outward (nonpositive at an upper bound)
    std::vector<DsoProfile> profiles{DsoProfile{1, 0.2, -0.05, 0.05}};
    const LinearSensitivities sens(Eigen::MatrixXd::Zero(1, 1),
                                   -0.1 * Eigen::MatrixXd::Identity(1, 1),
                                   Eigen::VectorXd::Ones(1));
    const Eigen::VectorXd v_ref = Eigen::VectorXd::Constant(1, 0.8);  // price pushes demand up
    const Eigen::VectorXd q =
        closed_form_ne(profiles, sens, 1.0, v_ref, Eigen::VectorXd::Zero(1));
    CHECK(q(0) == 0.05);
    const double f = pseudo_gradient_i(profiles[0], q(0), 1.0 + (-0.1) * q(0), v_ref(0), 1.0,
                                       -0.1);
    CHECK(f <= 1e-10);  // KKT at an upper bound
    CHECK(verify_ne(q, profiles, sens, 1.0, v_ref, Eigen::VectorXd::Zero(1), 1e-10).pass);
}

TEST_CASE("verify_ne rejects non-equilibrium points") {
    std::mt19937_64 rng(42);
    const auto g = make_random_game(rng, 3, /*wide_boxes=*/true);
    Eigen::VectorXd q = closed_form_ne(g.profiles, g.sens, g.gamma, g.v_ref, g.p);
    q(1) += 0.05;
    const auto rep = verify_ne(q, g.profiles, g.sens, g.gamma, g.v_ref, g.p, 1e-6);
    CHECK_FALSE(rep.pass);
    CHECK(rep.abs_error > 1e-3);
    CHECK(rep.to_line().find("status=FAIL") != std::string::npos);
}

TEST_CASE("finite-difference hypergradient") {
    std::vector<DsoProfile> profiles{DsoProfile{1, 0.5, -100.0, 100.0}};
    const LinearSensitivities sens(Eigen::MatrixXd::Zero(1, 1),
                                   -0.1 * Eigen::MatrixXd::Identity(1, 1),
                                   Eigen::VectorXd::Ones(1));
    const Eigen::VectorXd p = Eigen::VectorXd::Zero(1);
    const double gamma = 0.1, rho = 100.0;

    SECTION("halving h changes the estimate at second order") {
        const Eigen::VectorXd v_ref = Eigen::VectorXd::Constant(1, 1.03);
        const double g1 = fd_hypergradient(profiles, sens, p, gamma, rho, 0.9, 1.1, v_ref, 2e-3)(0);
        const double g2 = fd_hypergradient(profiles, sens, p, gamma, rho, 0.9, 1.1, v_ref, 1e-3)(0);
        const double g3 = fd_hypergradient(profiles, sens, p, gamma, rho, 0.9, 1.1, v_ref, 5e-4)(0);
        // phi_e is quadratic away from kinks here, so the h^2 error terms shrink 4x
        const double d12 = std::abs(g1 - g2), d23 = std::abs(g2 - g3);
        if (d23 > 1e-13)  // guard: exactly quadratic regions difference ~ 0
            CHECK(d12 / d23 == Catch::Approx(4.0).margin(1.5));
        CHECK(std::abs(g1 - g3) < 1e-6);
    }

    SECTION("fully saturated equilibrium reduces to the direct term") {
        std::vector<DsoProfile> tight{DsoProfile{1, 0.5, -0.01, 0.01}};
        const Eigen::VectorXd v_ref = Eigen::VectorXd::Constant(1, 1.4);  // pins at q_min
        const Eigen::VectorXd q = closed_form_ne(tight, sens, gamma, v_ref, p);
        REQUIRE(q(0) == -0.01);
        const Eigen::VectorXd fd =
            fd_hypergradient(tight, sens, p, gamma, rho, 0.9, 1.1, v_ref, 1e-5);
        CHECK(fd(0) == Catch::Approx(-gamma * q(0)).margin(1e-8));
    }
}

TEST_CASE("agreement suite: dynamics vs closed form on randomized instances") {
    std::mt19937_64 rng(43);
    int done = 0;
    const int sizes[] = {1, 2, 4};
    while (done < 54) {
        const int n = sizes[done % 3];
        const auto g = make_random_game(rng, n, done % 2 == 0);
        const GameConditioning cond = check_conditioning(g.profiles, g.sens, g.gamma, 0.0);
        REQUIRE(cond.monotone);
        const double eta = safe_eta(cond);
        const MeasureFn measure = make_linear_measurement(g.sens, g.p);
        const InnerLoopResult res = run_inner_loop(g.profiles, GameIterate::cold_start(n),
                                                   g.v_ref, g.gamma, eta, 1e-10, g.sens, measure,
                                                   500000);
        const Eigen::VectorXd q_star = closed_form_ne(g.profiles, g.sens, g.gamma, g.v_ref, g.p);
        CHECK((res.iterate.xi - q_star).cwiseAbs().maxCoeff() < 1e-6);
        CHECK(verify_ne(res.iterate.xi, g.profiles, g.sens, g.gamma, g.v_ref, g.p, 1e-6).pass);

        // sensitivity agreement on unsaturated coordinates
        Eigen::MatrixXd jf = -g.gamma * g.sens.Xtilde();
        for (int i = 0; i < n; ++i)
            jf(i, i) += g.profiles[static_cast<std::size_t>(i)].cost_coeff;
        const Eigen::MatrixXd s_star = -g.gamma * jf.fullPivLu().inverse();
        bool all_interior = true;
        for (int j = 0; j < n; ++j) {
            const DsoProfile& dj = g.profiles[static_cast<std::size_t>(j)];
            all_interior =
                all_interior && q_star(j) > dj.q_min + 1e-8 && q_star(j) < dj.q_max - 1e-8;
        }
        for (int i = 0; i < n; ++i) {
            const DsoProfile& d = g.profiles[static_cast<std::size_t>(i)];
            const bool interior = q_star(i) > d.q_min + 1e-8 && q_star(i) < d.q_max - 1e-8;
            if (!interior) {
                CHECK(res.iterate.s.row(i).isZero());
            } else if (all_interior) {
                // the dense inverse is the whole-game sensitivity, so row
                // comparison is exact only when no box is active
                CHECK((res.iterate.s.row(i) - s_star.row(i)).cwiseAbs().maxCoeff() < 1e-6);
            }
        }
        ++done;
    }
}

TEST_CASE("oracle report line format") {
    const auto rep = oracles::make_report("test_quantity", 1.25, 1.25, 1e-6);
    CHECK(rep.pass);
    const std::string line = rep.to_line();
    CHECK(line.find("oracle quantity=test_quantity") == 0);
    CHECK(line.find("status=PASS") != std::string::npos);
}
