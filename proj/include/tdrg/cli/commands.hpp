#pragma once

/// Subcommand implementations behind the `tdrg` executable. Each returns the
/// process exit code: 0 clean, 2 constraint violation, 1 error (errors are
/// thrown as tdrg::Error and mapped to 1 by the caller).

#include "tdrg/cli/csv.hpp"
#include "tdrg/cli/json_io.hpp"
#include "tdrg/cli/presets.hpp"
#include "tdrg/scenario.hpp"
#include "tdrg/stability.hpp"
#include "tdrg/synthesis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <iomanip>
#include <limits>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace tdrg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitViolation = 2;

struct CommonOptions {
    LoadOverrides overrides;
    std::string out;
    bool quiet = false;
};

// ---------------------------------------------------------------------------
// Scenario sources

inline constexpr std::string_view kPresetPrefix = "preset:";

/// Loads "preset:NAME" or a scenario file path.
inline LoadedScenario load_source(const std::string& source, const LoadOverrides& ov) {
    if (source.rfind(kPresetPrefix, 0) == 0) {
        const std::string name = source.substr(kPresetPrefix.size());
        auto doc = preset_scenario(name);
        if (!doc)
            throw InvalidArgument("unknown preset '" + name + "'");
        return load_scenario_text(doc->dump(2), source, ov);
    }
    return load_scenario_file(source, ov);
}

inline json load_source_document(const std::string& source) {
    if (source.rfind(kPresetPrefix, 0) == 0) {
        const std::string name = source.substr(kPresetPrefix.size());
        auto doc = preset_scenario(name);
        if (!doc)
            throw InvalidArgument("unknown preset '" + name + "'");
        return *doc;
    }
    const std::string text = read_file(source);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ScenarioError(source + ": parse error: " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Threads

/// Worker count: ERG_NUM_THREADS if set to a positive integer, otherwise the
/// hardware concurrency; never more than `jobs`.
inline unsigned worker_count(std::size_t jobs) {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("ERG_NUM_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0)
            n = static_cast<unsigned>(v);
    }
    return static_cast<unsigned>(std::max<std::size_t>(1, std::min<std::size_t>(n, jobs)));
}

/// Runs fn(i) for i in [0, jobs) on a small pool. The first exception is
/// rethrown after all workers finish.
inline void parallel_for(std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs == 0)
        return;
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure)
                    failure = std::current_exception();
            }
        }
    };
    const unsigned n = worker_count(jobs);
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < n; ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& th : pool)
        th.join();
    if (failure)
        std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// simulate / reproduce

inline void print_summary(std::ostream& os, const std::string& label, const TraceSummary& s) {
    os << std::setprecision(6);
    os << label << ":\n";
    for (Eigen::Index i = 0; i < s.max_x.size(); ++i)
        os << "  max x_" << i + 1 << "        " << s.max_x(i) << "\n";
    for (Eigen::Index i = 0; i < s.final_x.size(); ++i)
        os << "  final x_" << i + 1 << "      " << s.final_x(i) << "\n";
    os << "  settling time  " << s.settling_time << "\n";
    os << "  min residual   " << s.min_residual << "\n";
    os << "  min Delta      " << s.min_delta << "\n";
    os << "  violation      " << (s.violated ? "yes" : "no") << "\n";
}

struct RunOutcome {
    Trace trace;
    TraceSummary summary;
    int exit_code;
};

inline RunOutcome run_loaded(const LoadedScenario& loaded) {
    Trace trace = run_scenario(loaded.scenario);
    TraceSummary summary = summarize(trace);
    const int code = summary.violated ? kExitViolation : kExitOk;
    return {std::move(trace), std::move(summary), code};
}

inline int cmd_simulate(const std::string& source, const CommonOptions& opt, std::ostream& out, std::ostream& log) {
    const LoadedScenario loaded = load_source(source, opt.overrides);
    if (!opt.quiet)
        for (const auto& w : loaded.warnings)
            log << "warning: " << w << "\n";
    const RunOutcome res = run_loaded(loaded);
    const std::string path = opt.out.empty() ? loaded.scenario.output.path : opt.out;
    const int decimation = loaded.scenario.output.decimation;
    if (path.empty() || path == "-")
        write_trace(out, res.trace, decimation);
    else
        write_trace_file(path, res.trace, decimation);
    if (!opt.quiet)
        print_summary(log, source, res.summary);
    return res.exit_code;
}

inline int cmd_reproduce(const std::string& name, const CommonOptions& opt, std::ostream& out, std::ostream& log) {
    if (!preset_scenario(name))
        throw InvalidArgument("unknown preset '" + name + "' (one of norg, erg1, erg2, erg3, erg4, aggressive-norg, "
                              "aggressive-erg1, aggressive-erg4)");
    const LoadedScenario loaded = load_source(std::string(kPresetPrefix) + name, opt.overrides);
    const RunOutcome res = run_loaded(loaded);
    if (!opt.out.empty())
        write_trace_file(opt.out, res.trace, loaded.scenario.output.decimation);
    if (!opt.quiet)
        print_summary(out, name, res.summary);
    (void)log;
    return res.exit_code;
}

// ---------------------------------------------------------------------------
// lmi

struct LmiScanOptions {
    std::vector<Variant> variants{Variant::Razumikhin, Variant::KrasovskiiQ, Variant::KrasovskiiR};
    double k_min = -2.0;
    double k_max = 2.0;
    int steps = 41;
    /// Boundaries are bisected until the bracket is at most this wide.
    double resolution = 0.005;
    SynthesisOptions synthesis;
    /// Direction of the gain: K = k * direction (default: all ones).
    std::optional<Matrix> direction;
};

struct LmiPoint {
    double k = 0.0;
    bool feasible = false;
    double best_margin = 0.0;
};

struct LmiBoundary {
    Variant variant;
    /// Bracket [k_lo, k_hi] with different feasibility at the two ends.
    double k_lo = 0.0;
    double k_hi = 0.0;
    bool feasible_at_lo = false;
    double estimate() const { return 0.5 * (k_lo + k_hi); }
};

struct LmiScan {
    std::vector<std::pair<Variant, std::vector<LmiPoint>>> grid;
    std::vector<LmiBoundary> boundaries;
};

inline LmiPoint lmi_probe(const DelaySystem& sys, const Matrix& direction, Variant variant, double k,
                          const SynthesisOptions& opts) {
    const PrimaryGain gain{k * direction};
    const SynthesisResult res = synthesize(variant, sys, gain, opts);
    return {k, res.certificate.has_value(), res.best_margin};
}

/// Grid sweep of k followed by bisection of every feasibility change.
inline LmiScan lmi_scan(const DelaySystem& sys, const LmiScanOptions& opt) {
    if (opt.steps < 2 || !(opt.k_max > opt.k_min))
        throw InvalidArgument("lmi: need steps >= 2 and k_max > k_min");
    const Matrix direction = opt.direction ? *opt.direction : Matrix::Ones(sys.m(), sys.n());
    tdrg::detail::require_dims(direction.rows() == sys.m() && direction.cols() == sys.n(),
                         "lmi: gain direction must be m x n");

    LmiScan scan;
    for (Variant v : opt.variants) {
        std::vector<LmiPoint> pts(static_cast<std::size_t>(opt.steps));
        parallel_for(pts.size(), [&](std::size_t i) {
            const double k = opt.k_min + (opt.k_max - opt.k_min) * static_cast<double>(i) / (opt.steps - 1);
            pts[i] = lmi_probe(sys, direction, v, k, opt.synthesis);
        });

        std::vector<LmiBoundary> found;
        for (std::size_t i = 0; i + 1 < pts.size(); ++i)
            if (pts[i].feasible != pts[i + 1].feasible)
                found.push_back({v, pts[i].k, pts[i + 1].k, pts[i].feasible});
        parallel_for(found.size(), [&](std::size_t j) {
            LmiBoundary& b = found[j];
            while (b.k_hi - b.k_lo > opt.resolution) {
                const double mid = 0.5 * (b.k_lo + b.k_hi);
                if (lmi_probe(sys, direction, v, mid, opt.synthesis).feasible == b.feasible_at_lo)
                    b.k_lo = mid;
                else
                    b.k_hi = mid;
            }
        });
        scan.boundaries.insert(scan.boundaries.end(), found.begin(), found.end());
        scan.grid.emplace_back(v, std::move(pts));
    }
    return scan;
}

inline void print_lmi_scan(std::ostream& os, const LmiScan& scan, bool notes) {
    os << "variant,k,feasible,best_margin\n";
    for (const auto& [v, pts] : scan.grid)
        for (const auto& p : pts)
            os << to_string(v) << ',' << format_number(p.k) << ',' << (p.feasible ? 1 : 0) << ','
               << format_number(p.best_margin) << '\n';
    os << std::fixed << std::setprecision(3);
    for (const auto& b : scan.boundaries)
        os << "# boundary " << to_string(b.variant) << ": k in [" << b.k_lo << ", " << b.k_hi << "], estimate "
           << b.estimate() << " (" << (b.feasible_at_lo ? "feasible below" : "feasible above") << ")\n";
    os.unsetf(std::ios::floatfield);
    if (!notes)
        return;
    for (const auto& [v, pts] : scan.grid) {
        if (v == Variant::KrasovskiiR) {
            os << "# note: krasovskii_r feasibility comes from a budgeted local search; \"infeasible\" means no "
                  "certificate was found within the budget, not that none exists.\n";
            os << "# note: krasovskii_q does not depend on tau, so a gain range that depends on the delay belongs "
                  "to krasovskii_r even where it is labeled otherwise.\n";
        }
    }
}

inline int cmd_lmi(const std::string& source, const LmiScanOptions& scan_opt, const CommonOptions& opt,
                   std::ostream& out) {
    const LoadedScenario loaded = load_source(source, opt.overrides);
    LmiScanOptions o = scan_opt;
    if (opt.overrides.seed)
        o.synthesis.seed = *opt.overrides.seed;
    const LmiScan scan = lmi_scan(loaded.scenario.system, o);
    if (!opt.out.empty()) {
        std::ofstream f(opt.out, std::ios::binary);
        if (!f)
            throw Error("cannot open '" + opt.out + "' for writing");
        print_lmi_scan(f, scan, !opt.quiet);
    } else {
        print_lmi_scan(out, scan, !opt.quiet);
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep

/// Parses a grid: "" (empty), "a,b,c", or "lo:hi:count" (inclusive, evenly spaced).
inline std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> out;
    if (text.empty())
        return out;
    if (text.find(':') != std::string::npos) {
        const auto parts = split_commas(text);
        if (parts.size() != 1)
            throw InvalidArgument("grid: use either a comma list or lo:hi:count");
        std::vector<std::string_view> f;
        std::string_view rest = text;
        for (std::size_t c; (c = rest.find(':')) != std::string_view::npos; rest.remove_prefix(c + 1))
            f.push_back(rest.substr(0, c));
        f.push_back(rest);
        if (f.size() != 3)
            throw InvalidArgument("grid: expected lo:hi:count");
        const double lo = parse_number(f[0]), hi = parse_number(f[1]);
        const double cnt = parse_number(f[2]);
        if (cnt < 0 || cnt != std::floor(cnt))
            throw InvalidArgument("grid: count must be a non-negative integer");
        const int n = static_cast<int>(cnt);
        for (int i = 0; i < n; ++i)
            out.push_back(n == 1 ? lo : lo + (hi - lo) * i / (n - 1));
        return out;
    }
    for (auto cell : split_commas(text))
        out.push_back(parse_number(cell));
    return out;
}

/// Converts "erg.kappa2" or "/erg/kappa2" into a JSON pointer.
inline json::json_pointer parameter_pointer(const std::string& path) {
    if (path.empty())
        throw InvalidArgument("sweep: empty parameter path");
    std::string ptr = path;
    if (ptr.front() != '/') {
        std::replace(ptr.begin(), ptr.end(), '.', '/');
        ptr.insert(ptr.begin(), '/');
    }
    try {
        return json::json_pointer(ptr);
    } catch (const json::exception& e) {
        throw InvalidArgument("sweep: invalid parameter path '" + path + "': " + e.what());
    }
}

struct SweepRow {
    double value = 0.0;
    std::optional<TraceSummary> summary;
    std::string error;
};

inline std::vector<std::string> sweep_header(int n) {
    std::vector<std::string> h{"value"};
    for (int i = 1; i <= n; ++i) h.push_back("max_x_" + std::to_string(i));
    for (int i = 1; i <= n; ++i) h.push_back("final_x_" + std::to_string(i));
    for (const char* c : {"settling_time", "min_residual", "min_delta", "exit_code"}) h.emplace_back(c);
    return h;
}

inline int cmd_sweep(const std::string& source, const std::string& param, const std::vector<double>& grid,
                     const CommonOptions& opt, std::ostream& out, std::ostream& log) {
    const json base = load_source_document(source);
    const json::json_pointer ptr = parameter_pointer(param);
    if (!base.contains(ptr) || !base.at(ptr).is_number())
        throw InvalidArgument("sweep: '" + param + "' does not address a numeric scenario field");
    const LoadedScenario reference = load_scenario_json(base, source, JsonLineIndex(base.dump(2)), opt.overrides);
    const int n = reference.scenario.system.n();

    std::vector<SweepRow> rows(grid.size());
    parallel_for(grid.size(), [&](std::size_t i) {
        rows[i].value = grid[i];
        try {
            json doc = base;
            doc[ptr] = grid[i];
            const std::string text = doc.dump(2);
            const LoadedScenario sc = load_scenario_json(doc, source, JsonLineIndex(text), opt.overrides);
            rows[i].summary = summarize(run_scenario(sc.scenario));
        } catch (const Error& e) {
            rows[i].error = e.what();
        }
    });

    std::ostringstream csv;
    write_row(csv, sweep_header(n));
    int code = kExitOk;
    for (const auto& r : rows) {
        std::vector<std::string> cells{format_number(r.value)};
        if (r.summary) {
            const auto& s = *r.summary;
            for (int i = 0; i < n; ++i) cells.push_back(format_number(s.max_x(i)));
            for (int i = 0; i < n; ++i) cells.push_back(format_number(s.final_x(i)));
            cells.push_back(format_number(s.settling_time));
            cells.push_back(format_number(s.min_residual));
            cells.push_back(format_number(s.min_delta));
            cells.push_back(std::to_string(s.violated ? kExitViolation : kExitOk));
            if (s.violated && code == kExitOk)
                code = kExitViolation;
        } else {
            for (int i = 0; i < 2 * n + 3; ++i) cells.push_back("nan");
            cells.push_back(std::to_string(kExitError));
            code = kExitError;
            if (!opt.quiet)
                log << "error: " << param << " = " << format_number(r.value) << ": " << r.error << "\n";
        }
        write_row(csv, cells);
    }
    if (opt.out.empty() || opt.out == "-") {
        out << csv.str();
    } else {
        std::ofstream f(opt.out, std::ios::binary);
        if (!(f << csv.str()))
            throw Error("cannot write '" + opt.out + "'");
    }
    return code;
}

// ---------------------------------------------------------------------------
// synthesize

inline int cmd_synthesize(const std::string& source, Variant variant, bool optimize, const CommonOptions& opt,
                          std::ostream& out, std::ostream& log) {
    const LoadedScenario loaded = load_source(source, opt.overrides);
    const Scenario& sc = loaded.scenario;
    SynthesisOptions so;
    if (opt.overrides.seed)
        so.seed = *opt.overrides.seed;
    const SynthesisResult res = optimize ? optimize_p_volume(sc.constraints, sc.system, sc.gain, variant, so)
                                         : synthesize(variant, sc.system, sc.gain, so);
    if (!res) {
        log << "error: no " << to_string(variant) << " certificate found within " << res.restarts_used
            << " restarts (best margin " << res.best_margin << ")\n";
        return kExitError;
    }
    json doc = certificate_to_json(res.certificate->params());
    doc["margin"] = res.certificate->margin();
    const std::string text = doc.dump(2) + "\n";
    if (opt.out.empty() || opt.out == "-") {
        out << text;
    } else {
        std::ofstream f(opt.out, std::ios::binary);
        if (!(f << text))
            throw Error("cannot write '" + opt.out + "'");
    }
    if (!opt.quiet)
        log << to_string(variant) << ": certificate found after " << res.restarts_used << " restart(s), margin "
            << res.certificate->margin() << "\n";
    return kExitOk;
}

}  // namespace tdrg::cli
