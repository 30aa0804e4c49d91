#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <complex>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "voltgame/bundled_data.hpp"
#include "voltgame/errors.hpp"

namespace voltgame {

/// One transmission line as a pi-section.
struct Line {
    int from = 0;  ///< internal bus index
    int to = 0;    ///< internal bus index
    double r = 0.0;  ///< series resistance, p.u.
    double x = 0.0;  ///< series reactance, p.u.
    double b = 0.0;  ///< total shunt (charging) susceptance, p.u.
};

/// Transmission network with one slack bus; all other buses are PQ.
///
/// Buses are stored in ascending id order; internal indices are positions in
/// that order. Vectors indexed "over non-slack buses" follow the same order
/// with the slack removed.
class GridModel {
public:
    GridModel(std::vector<int> bus_ids, int slack_pos, std::vector<Line> lines,
              double base_mva, double base_kv, double v_slack)
        : bus_ids_(std::move(bus_ids)),
          slack_(slack_pos),
          lines_(std::move(lines)),
          base_mva_(base_mva),
          base_kv_(base_kv),
          v_slack_(v_slack) {
        validate();
    }

    int n_bus() const { return static_cast<int>(bus_ids_.size()); }
    int slack_bus() const { return slack_; }
    int n_nonslack() const { return n_bus() - 1; }
    const std::vector<int>& bus_ids() const { return bus_ids_; }
    const std::vector<Line>& lines() const { return lines_; }
    double base_mva() const { return base_mva_; }
    double base_kv() const { return base_kv_; }
    double v_slack() const { return v_slack_; }

    /// Internal indices of the non-slack buses, in bus-id order.
    std::vector<int> nonslack() const {
        std::vector<int> out;
        out.reserve(static_cast<std::size_t>(n_nonslack()));
        for (int i = 0; i < n_bus(); ++i)
            if (i != slack_) out.push_back(i);
        return out;
    }

    /// Internal index of a bus id, or -1.
    int index_of(int bus_id) const {
        auto it = std::lower_bound(bus_ids_.begin(), bus_ids_.end(), bus_id);
        if (it == bus_ids_.end() || *it != bus_id) return -1;
        return static_cast<int>(it - bus_ids_.begin());
    }

    /// Dense bus admittance matrix.
    Eigen::MatrixXcd ybus() const {
        using cplx = std::complex<double>;
        Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n_bus(), n_bus());
        for (const Line& ln : lines_) {
            const cplx ys = 1.0 / cplx(ln.r, ln.x);
            const cplx ysh(0.0, ln.b / 2.0);
            y(ln.from, ln.from) += ys + ysh;
            y(ln.to, ln.to) += ys + ysh;
            y(ln.from, ln.to) -= ys;
            y(ln.to, ln.from) -= ys;
        }
        return y;
    }

private:
    void validate() const {
        if (n_bus() < 2)
            throw ValidationError("grid: at least two buses required");
        if (!std::is_sorted(bus_ids_.begin(), bus_ids_.end()) ||
            std::adjacent_find(bus_ids_.begin(), bus_ids_.end()) != bus_ids_.end())
            throw ValidationError("grid: bus ids must be unique");
        if (slack_ < 0 || slack_ >= n_bus())
            throw ValidationError("grid: slack index out of range");
        if (!(base_mva_ > 0.0) || !(base_kv_ > 0.0))
            throw ValidationError("grid: base quantities must be positive");
        if (!(v_slack_ > 0.0))
            throw ValidationError("grid: slack voltage must be positive");
        for (const Line& ln : lines_) {
            if (ln.from < 0 || ln.from >= n_bus() || ln.to < 0 || ln.to >= n_bus() ||
                ln.from == ln.to)
                throw ValidationError("grid: line endpoints invalid");
            if (!(ln.x > 0.0))
                throw ValidationError("grid: line reactance must be strictly positive");
            if (ln.r < 0.0)
                throw ValidationError("grid: line resistance must be nonnegative");
        }
        // connectivity via breadth-first sweep
        std::vector<int> seen(static_cast<std::size_t>(n_bus()), 0);
        std::vector<int> stack{0};
        seen[0] = 1;
        while (!stack.empty()) {
            const int u = stack.back();
            stack.pop_back();
            for (const Line& ln : lines_) {
                const int v = (ln.from == u) ? ln.to : (ln.to == u ? ln.from : -1);
                if (v >= 0 && !seen[static_cast<std::size_t>(v)]) {
                    seen[static_cast<std::size_t>(v)] = 1;
                    stack.push_back(v);
                }
            }
        }
        if (std::find(seen.begin(), seen.end(), 0) != seen.end())
            throw ValidationError("grid: topology is not connected");
    }

    std::vector<int> bus_ids_;
    int slack_;
    std::vector<Line> lines_;
    double base_mva_;
    double base_kv_;
    double v_slack_;
};

/// Converged power flow state over the non-slack buses.
struct PowerFlowSolution {
    Eigen::VectorXd v;      ///< voltage magnitudes, p.u.
    Eigen::VectorXd theta;  ///< voltage angles, rad
    double mismatch = 0.0;  ///< max |power residual| at exit, p.u.
    int iterations = 0;
};

/// Newton-Raphson AC power flow in polar form.
///
/// Inputs p, q are bus power demands over the non-slack buses (positive =
/// consumption), so injections are their negatives. solve() is a pure
/// function of its arguments; concurrent calls do not interfere.
class AcPowerFlow {
public:
    explicit AcPowerFlow(GridModel grid, double tolerance = 1e-8, int max_iterations = 50)
        : grid_(std::move(grid)),
          ybus_(grid_.ybus()),
          pq_(grid_.nonslack()),
          tol_(tolerance),
          max_iter_(max_iterations) {}

    const GridModel& grid() const { return grid_; }
    double tolerance() const { return tol_; }

    /// Flat-start solve.
    PowerFlowSolution solve(const Eigen::VectorXd& p, const Eigen::VectorXd& q) const {
        return solve_impl(p, q, nullptr);
    }

    /// Warm-start solve from a previous solution at a nearby operating point.
    PowerFlowSolution solve(const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                            const PowerFlowSolution& start) const {
        return solve_impl(p, q, &start);
    }

private:
    PowerFlowSolution solve_impl(const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                                 const PowerFlowSolution* start) const {
        const int n = grid_.n_bus();
        const int m = static_cast<int>(pq_.size());
        if (p.size() != m || q.size() != m)
            throw DimensionError("power flow: p and q must cover the non-slack buses");

        Eigen::VectorXd vm = Eigen::VectorXd::Ones(n);
        Eigen::VectorXd th = Eigen::VectorXd::Zero(n);
        vm(grid_.slack_bus()) = grid_.v_slack();
        if (start != nullptr && start->v.size() == m) {
            for (int g = 0; g < m; ++g) {
                vm(pq_[static_cast<std::size_t>(g)]) = start->v(g);
                th(pq_[static_cast<std::size_t>(g)]) = start->theta(g);
            }
        }

        // demand-positive convention: injection = -demand
        Eigen::VectorXd p_inj = Eigen::VectorXd::Zero(n);
        Eigen::VectorXd q_inj = Eigen::VectorXd::Zero(n);
        for (int g = 0; g < m; ++g) {
            p_inj(pq_[static_cast<std::size_t>(g)]) = -p(g);
            q_inj(pq_[static_cast<std::size_t>(g)]) = -q(g);
        }

        const Eigen::MatrixXd g_mat = ybus_.real();
        const Eigen::MatrixXd b_mat = ybus_.imag();

        Eigen::VectorXd p_calc(n), q_calc(n), rhs(2 * m);
        Eigen::MatrixXd jac(2 * m, 2 * m);

        double max_mis = 0.0;
        for (int iter = 0; iter <= max_iter_; ++iter) {
            // calculated injections
            for (int i = 0; i < n; ++i) {
                double pi = 0.0, qi = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double tij = th(i) - th(j);
                    const double c = std::cos(tij), s = std::sin(tij);
                    pi += vm(j) * (g_mat(i, j) * c + b_mat(i, j) * s);
                    qi += vm(j) * (g_mat(i, j) * s - b_mat(i, j) * c);
                }
                p_calc(i) = vm(i) * pi;
                q_calc(i) = vm(i) * qi;
            }
            for (int a = 0; a < m; ++a) {
                const int i = pq_[static_cast<std::size_t>(a)];
                rhs(a) = p_inj(i) - p_calc(i);
                rhs(m + a) = q_inj(i) - q_calc(i);
            }
            max_mis = rhs.cwiseAbs().maxCoeff();
            if (!std::isfinite(max_mis))
                throw PowerFlowError(PowerFlowError::Kind::SingularJacobian,
                                     "power flow: non-finite state (collapse region)",
                                     max_mis, iter);
            if (max_mis <= tol_) {
                PowerFlowSolution sol;
                sol.v.resize(m);
                sol.theta.resize(m);
                for (int g2 = 0; g2 < m; ++g2) {
                    sol.v(g2) = vm(pq_[static_cast<std::size_t>(g2)]);
                    sol.theta(g2) = th(pq_[static_cast<std::size_t>(g2)]);
                }
                sol.mismatch = max_mis;
                sol.iterations = iter;
                return sol;
            }
            if (iter == max_iter_) break;

            // polar Jacobian over the PQ buses
            for (int a = 0; a < m; ++a) {
                const int i = pq_[static_cast<std::size_t>(a)];
                for (int bcol = 0; bcol < m; ++bcol) {
                    const int j = pq_[static_cast<std::size_t>(bcol)];
                    if (i == j) {
                        jac(a, bcol) = -q_calc(i) - b_mat(i, i) * vm(i) * vm(i);
                        jac(a, m + bcol) = p_calc(i) / vm(i) + g_mat(i, i) * vm(i);
                        jac(m + a, bcol) = p_calc(i) - g_mat(i, i) * vm(i) * vm(i);
                        jac(m + a, m + bcol) = q_calc(i) / vm(i) - b_mat(i, i) * vm(i);
                    } else {
                        const double tij = th(i) - th(j);
                        const double c = std::cos(tij), s = std::sin(tij);
                        const double gij = g_mat(i, j), bij = b_mat(i, j);
                        jac(a, bcol) = vm(i) * vm(j) * (gij * s - bij * c);
                        jac(a, m + bcol) = vm(i) * (gij * c + bij * s);
                        jac(m + a, bcol) = -vm(i) * vm(j) * (gij * c + bij * s);
                        jac(m + a, m + bcol) = vm(i) * (gij * s - bij * c);
                    }
                }
            }

            Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
            if (!lu.isInvertible())
                throw PowerFlowError(PowerFlowError::Kind::SingularJacobian,
                                     "power flow: singular Jacobian (collapse region)",
                                     max_mis, iter);
            const Eigen::VectorXd dx = lu.solve(rhs);
            if (!dx.allFinite())
                throw PowerFlowError(PowerFlowError::Kind::SingularJacobian,
                                     "power flow: non-finite Newton step",
                                     max_mis, iter);
            for (int a = 0; a < m; ++a) {
                const int i = pq_[static_cast<std::size_t>(a)];
                th(i) += dx(a);
                vm(i) += dx(m + a);
                if (vm(i) <= 0.0)
                    throw PowerFlowError(PowerFlowError::Kind::SingularJacobian,
                                         "power flow: voltage magnitude left the feasible region",
                                         max_mis, iter);
            }
        }
        std::ostringstream os;
        os << "power flow: no convergence after " << max_iter_
           << " iterations (max mismatch " << max_mis << " p.u.)";
        throw PowerFlowError(PowerFlowError::Kind::NonConvergence, os.str(), max_mis, max_iter_);
    }

    GridModel grid_;
    Eigen::MatrixXcd ybus_;
    std::vector<int> pq_;
    double tol_;
    int max_iter_;
};

/// Convenience wrapper around AcPowerFlow for one-off solves.
inline PowerFlowSolution solve_ac_power_flow(const GridModel& grid, const Eigen::VectorXd& p,
                                             const Eigen::VectorXd& q, double tolerance = 1e-8,
                                             int max_iterations = 50) {
    return AcPowerFlow(grid, tolerance, max_iterations).solve(p, q);
}

/// Affine voltage model v = R p + X q + v0 over the non-slack buses,
/// with X symmetric and diag(X) < 0 (demand-positive convention).
class LinearSensitivities {
public:
    LinearSensitivities(Eigen::MatrixXd R, Eigen::MatrixXd X, Eigen::VectorXd v0)
        : r_(std::move(R)), x_(std::move(X)), v0_(std::move(v0)) {
        const auto n = v0_.size();
        if (r_.rows() != n || r_.cols() != n || x_.rows() != n || x_.cols() != n)
            throw DimensionError("linear sensitivities: R, X, v0 sizes disagree");
        x_ = 0.5 * (x_ + x_.transpose().eval());
        for (Eigen::Index i = 0; i < n; ++i)
            if (!(x_(i, i) < 0.0))
                throw SignConventionViolation(
                    "linear sensitivities: X diagonal must be strictly negative "
                    "(positive q must depress voltage)");
        xtilde_ = x_;
        xtilde_.diagonal() += x_.diagonal();
    }

    int size() const { return static_cast<int>(v0_.size()); }
    const Eigen::MatrixXd& R() const { return r_; }
    const Eigen::MatrixXd& X() const { return x_; }
    const Eigen::VectorXd& v0() const { return v0_; }
    /// X + diag(X_ii), the game-coupling matrix.
    const Eigen::MatrixXd& Xtilde() const { return xtilde_; }

    /// Reorders buses: row/col i of the result is row/col perm[i] of this.
    LinearSensitivities permuted(const std::vector<int>& perm) const {
        const int n = size();
        if (static_cast<int>(perm.size()) != n)
            throw DimensionError("linear sensitivities: permutation size mismatch");
        Eigen::MatrixXd rp(n, n), xp(n, n);
        Eigen::VectorXd vp(n);
        for (int i = 0; i < n; ++i) {
            vp(i) = v0_(perm[static_cast<std::size_t>(i)]);
            for (int j = 0; j < n; ++j) {
                rp(i, j) = r_(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
                xp(i, j) = x_(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
            }
        }
        return LinearSensitivities(std::move(rp), std::move(xp), std::move(vp));
    }

private:
    Eigen::MatrixXd r_;
    Eigen::MatrixXd x_;
    Eigen::VectorXd v0_;
    Eigen::MatrixXd xtilde_;
};

/// Evaluates the affine map R p + X q + v0.
inline Eigen::VectorXd linearized_voltage(const LinearSensitivities& sens,
                                          const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
    if (p.size() != sens.size() || q.size() != sens.size())
        throw DimensionError("linearized_voltage: p/q size mismatch");
    return sens.R() * p + sens.X() * q + sens.v0();
}

/// Central finite-difference Jacobians of the AC solution at (p0, q0),
/// anchored so the affine map reproduces the AC voltages exactly there.
/// Differencing uses a tighter solver tolerance than the 1e-8 default so the
/// quotients are not polluted by solver state noise (~tol / step).
inline LinearSensitivities linearize(const GridModel& grid, const Eigen::VectorXd& p0,
                                     const Eigen::VectorXd& q0, double step = 1e-4) {
    const AcPowerFlow pf(grid, 1e-12, 60);
    const int n = grid.n_nonslack();
    if (p0.size() != n || q0.size() != n)
        throw DimensionError("linearize: p0/q0 must cover the non-slack buses");
    const PowerFlowSolution base = pf.solve(p0, q0);

    Eigen::MatrixXd r_mat(n, n), x_mat(n, n);
    for (int j = 0; j < n; ++j) {
        Eigen::VectorXd dq = Eigen::VectorXd::Zero(n);
        dq(j) = step;
        x_mat.col(j) = (pf.solve(p0, q0 + dq, base).v - pf.solve(p0, q0 - dq, base).v) / (2.0 * step);
        r_mat.col(j) = (pf.solve(p0 + dq, q0, base).v - pf.solve(p0 - dq, q0, base).v) / (2.0 * step);
    }
    // the constructor symmetrizes X and rejects nonnegative diagonals
    Eigen::MatrixXd x_sym = 0.5 * (x_mat + x_mat.transpose().eval());
    Eigen::VectorXd v0 = base.v - r_mat * p0 - x_sym * q0;
    return LinearSensitivities(std::move(r_mat), std::move(x_sym), std::move(v0));
}

namespace detail {

inline std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
        if (j > i) out.emplace_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

inline double parse_double(const std::string& tok, const std::string& where) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size())
        throw ParseError(where + ": bad number '" + tok + "'");
    return v;
}

inline long parse_long(const std::string& tok, const std::string& where) {
    long v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size())
        throw ParseError(where + ": bad integer '" + tok + "'");
    return v;
}

}  // namespace detail

/// Parses a network document: `key = value...` lines, `#` comments.
/// Recognized keys: base_mva, base_kv, bus, line.
inline GridModel parse_network(std::string_view text, const std::string& name = "<network>") {
    struct BusDecl {
        int id;
        bool slack;
        double v_set;
    };
    std::vector<BusDecl> buses;
    struct LineDecl {
        int from_id, to_id;
        double r, x, b;
    };
    std::vector<LineDecl> lines;
    std::optional<double> base_mva, base_kv;

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
        auto tokens = detail::split_ws(raw);
        if (tokens.empty()) continue;
        const std::string where = name + ":" + std::to_string(line_no);
        if (tokens.size() < 3 || tokens[1] != "=")
            throw ParseError(where + ": expected 'key = value...'");
        const std::string& key = tokens[0];
        std::vector<std::string> vals(tokens.begin() + 2, tokens.end());
        if (key == "base_mva") {
            base_mva = detail::parse_double(vals.at(0), where);
        } else if (key == "base_kv") {
            base_kv = detail::parse_double(vals.at(0), where);
        } else if (key == "bus") {
            if (vals.size() < 2)
                throw ParseError(where + ": bus needs '<id> <slack|pq>'");
            BusDecl b{};
            b.id = static_cast<int>(detail::parse_long(vals[0], where));
            if (vals[1] == "slack") {
                b.slack = true;
                b.v_set = vals.size() >= 3 ? detail::parse_double(vals[2], where) : 1.0;
            } else if (vals[1] == "pq") {
                b.slack = false;
                b.v_set = 0.0;
            } else {
                throw ParseError(where + ": bus type must be slack or pq");
            }
            buses.push_back(b);
        } else if (key == "line") {
            if (vals.size() != 5)
                throw ParseError(where + ": line needs '<from> <to> <r> <x> <b>'");
            LineDecl l{};
            l.from_id = static_cast<int>(detail::parse_long(vals[0], where));
            l.to_id = static_cast<int>(detail::parse_long(vals[1], where));
            l.r = detail::parse_double(vals[2], where);
            l.x = detail::parse_double(vals[3], where);
            l.b = detail::parse_double(vals[4], where);
            lines.push_back(l);
        } else {
            throw ParseError(where + ": unknown key '" + key + "'");
        }
    }

    if (buses.empty()) throw ParseError(name + ": no buses declared");
    if (!base_mva) throw ParseError(name + ": base_mva missing");
    if (!base_kv) throw ParseError(name + ": base_kv missing");

    std::vector<int> ids;
    ids.reserve(buses.size());
    for (const auto& b : buses) ids.push_back(b.id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
        throw ParseError(name + ": duplicate bus id");

    auto idx = [&ids, &name](int id) {
        auto it = std::lower_bound(ids.begin(), ids.end(), id);
        if (it == ids.end() || *it != id)
            throw ParseError(name + ": line references unknown bus " + std::to_string(id));
        return static_cast<int>(it - ids.begin());
    };

    int slack_pos = -1;
    double v_slack = 1.0;
    int slack_count = 0;
    for (const auto& b : buses) {
        if (b.slack) {
            ++slack_count;
            slack_pos = idx(b.id);
            v_slack = b.v_set;
        }
    }
    if (slack_count != 1)
        throw ParseError(name + ": exactly one slack bus required, found " +
                         std::to_string(slack_count));

    std::vector<Line> internal;
    internal.reserve(lines.size());
    for (const auto& l : lines)
        internal.push_back(Line{idx(l.from_id), idx(l.to_id), l.r, l.x, l.b});

    return GridModel(std::move(ids), slack_pos, std::move(internal), *base_mva, *base_kv, v_slack);
}

/// The bundled PJM-style five-bus network (one slack, four DSO buses).
inline GridModel build_five_bus() {
    return parse_network(five_bus_network_text, "five_bus.network");
}

}  // namespace voltgame
