#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "json.hpp"
#include "voltgame/errors.hpp"
#include "voltgame/orchestrator.hpp"

namespace voltgame {

/// Shortest round-trip decimal form of a double; reparsing yields the same
/// bits, which keeps trace tables byte-stable and exactly reloadable.
inline std::string format_double(double x) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    if (ec != std::errc{}) throw Error("format_double: conversion failed");
    return std::string(buf, p);
}

/// Paths produced by write_trace.
struct TraceFiles {
    std::filesystem::path table;    ///< CSV, one row per outer iteration
    std::filesystem::path summary;  ///< JSON summary
};

inline std::string trace_csv_header(int n) {
    std::ostringstream os;
    os << "k";
    const char* groups[] = {"v_ref", "v", "xi", "payment"};
    for (const char* g : groups)
        for (int i = 1; i <= n; ++i) os << "," << g << "_" << i;
    os << ",phi_e,grad_norm,inner_iters";
    return os.str();
}

/// Renders the trace table as CSV text.
inline std::string trace_to_csv(const ScenarioTrace& trace) {
    std::ostringstream os;
    os << trace_csv_header(trace.meta.n_dsos) << "\n";
    for (const TraceRow& row : trace.rows) {
        os << row.k;
        for (const auto* vec : {&row.v_ref, &row.v, &row.xi, &row.payments})
            for (int i = 0; i < vec->size(); ++i) os << "," << format_double((*vec)(i));
        os << "," << format_double(row.phi_e) << "," << format_double(row.grad_norm) << ","
           << row.inner_iters << "\n";
    }
    return os.str();
}

/// JSON summary with the final state, convergence flags and oracle digests.
inline std::string trace_to_summary_json(const ScenarioTrace& trace) {
    nlohmann::json j;
    j["mode"] = trace.meta.mode;
    j["seed"] = trace.meta.seed;
    j["gamma"] = trace.meta.gamma;
    j["rho"] = trace.meta.rho;
    j["v_lo"] = trace.meta.v_lo;
    j["v_hi"] = trace.meta.v_hi;
    j["n_dsos"] = trace.meta.n_dsos;
    j["outer_iterations"] = trace.iterations();
    j["grad_converged"] = trace.grad_converged;
    j["stop_reason"] = trace.stop_reason;
    if (!trace.rows.empty()) {
        const TraceRow& last = trace.final_row();
        auto vec = [](const Eigen::VectorXd& v) {
            std::vector<double> out(v.data(), v.data() + v.size());
            return out;
        };
        j["final"]["k"] = last.k;
        j["final"]["v_ref"] = vec(last.v_ref);
        j["final"]["v"] = vec(last.v);
        j["final"]["xi"] = vec(last.xi);
        j["final"]["payments"] = vec(last.payments);
        j["final"]["phi_e"] = last.phi_e;
        j["final"]["grad_norm"] = last.grad_norm;
        bool in_band = true;
        for (int i = 0; i < last.v.size(); ++i)
            in_band = in_band && last.v(i) >= trace.meta.v_lo && last.v(i) <= trace.meta.v_hi;
        j["final"]["voltages_in_band"] = in_band;
    }
    std::vector<int> disturbed_rows;
    for (const TraceRow& row : trace.rows)
        if (!row.disturbances_applied.empty()) disturbed_rows.push_back(static_cast<int>(row.k));
    j["disturbance_iterations"] = disturbed_rows;
    j["oracle_reports"] = nlohmann::json::array();
    for (const auto& rep : trace.oracle_digests) {
        nlohmann::json r;
        r["quantity"] = rep.quantity;
        r["algorithm_value"] = rep.algorithm_value;
        r["oracle_value"] = rep.oracle_value;
        r["abs_error"] = rep.abs_error;
        r["rel_error"] = rep.rel_error;
        r["tolerance"] = rep.tolerance;
        r["pass"] = rep.pass;
        j["oracle_reports"].push_back(r);
    }
    return j.dump(2) + "\n";
}

/// Writes trace.csv and summary.json into out_dir (created if missing).
inline TraceFiles write_trace(const ScenarioTrace& trace, const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec)
        throw Error("write_trace: cannot create directory '" + out_dir.string() +
                    "': " + ec.message());
    TraceFiles files;
    files.table = out_dir / "trace.csv";
    files.summary = out_dir / "summary.json";
    {
        std::ofstream out(files.table, std::ios::binary);
        if (!out) throw Error("write_trace: cannot open '" + files.table.string() + "'");
        out << trace_to_csv(trace);
        if (!out) throw Error("write_trace: write failed for '" + files.table.string() + "'");
    }
    {
        std::ofstream out(files.summary, std::ios::binary);
        if (!out) throw Error("write_trace: cannot open '" + files.summary.string() + "'");
        out << trace_to_summary_json(trace);
        if (!out) throw Error("write_trace: write failed for '" + files.summary.string() + "'");
    }
    return files;
}

/// Minimal CSV reader for trace tables (numbers only, comma separated).
inline std::vector<std::vector<double>> read_csv_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("read_csv_table: cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw Error("read_csv_table: empty file");
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            std::size_t comma = line.find(',', pos);
            if (comma == std::string::npos) comma = line.size();
            double v = 0.0;
            auto [p, errc2] = std::from_chars(line.data() + pos, line.data() + comma, v);
            if (errc2 != std::errc{} || p != line.data() + comma)
                throw Error("read_csv_table: bad number in '" + path.string() + "'");
            row.push_back(v);
            pos = comma + 1;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace voltgame
