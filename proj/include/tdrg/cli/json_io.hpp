#pragma once

/// Scenario files: a JSON document with system, constraints, controller,
/// certificate, erg, run and output blocks. Every semantic error is reported
/// as "<source>:<line>: <json pointer>: <message>".

#include "tdrg/erg.hpp"
#include "tdrg/errors.hpp"
#include "tdrg/scenario.hpp"
#include "tdrg/stability.hpp"
#include "tdrg/synthesis.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace tdrg::cli {

using json = nlohmann::json;

class ScenarioError : public Error {
public:
    using Error::Error;
};

/// Maps JSON pointers to the 1-based line where each value starts. Assumes
/// the text already parsed as valid JSON.
class JsonLineIndex {
public:
    JsonLineIndex() = default;
    explicit JsonLineIndex(std::string_view text) : text_(text) {
        skip_ws();
        if (pos_ < text_.size())
            value("");
    }

    /// Line of `pointer`, or of its nearest recorded ancestor.
    int line_of(std::string pointer) const {
        while (true) {
            if (auto it = lines_.find(pointer); it != lines_.end())
                return it->second;
            const auto slash = pointer.rfind('/');
            if (slash == std::string::npos)
                return 1;
            pointer.resize(slash);
        }
    }

    static std::string escape(std::string_view key) {
        std::string out;
        for (char c : key) {
            if (c == '~') out += "~0";
            else if (c == '/') out += "~1";
            else out += c;
        }
        return out;
    }

private:
    void advance() {
        if (text_[pos_] == '\n')
            ++line_;
        ++pos_;
    }
    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_])))
            advance();
    }
    std::string string() {
        std::string out;
        advance();  // opening quote
        while (pos_ < text_.size() && text_[pos_] != '"') {
            if (text_[pos_] == '\\') {
                advance();
                if (pos_ < text_.size())
                    out += text_[pos_];
                advance();
                continue;
            }
            out += text_[pos_];
            advance();
        }
        advance();  // closing quote
        return out;
    }
    void value(const std::string& ptr) {
        skip_ws();
        lines_[ptr] = line_;
        const char c = text_[pos_];
        if (c == '{') {
            advance();
            skip_ws();
            while (pos_ < text_.size() && text_[pos_] != '}') {
                const std::string key = string();
                skip_ws();
                advance();  // ':'
                value(ptr + "/" + escape(key));
                skip_ws();
                if (pos_ < text_.size() && text_[pos_] == ',') {
                    advance();
                    skip_ws();
                }
            }
            advance();
        } else if (c == '[') {
            advance();
            skip_ws();
            for (int i = 0; pos_ < text_.size() && text_[pos_] != ']'; ++i) {
                value(ptr + "/" + std::to_string(i));
                skip_ws();
                if (pos_ < text_.size() && text_[pos_] == ',') {
                    advance();
                    skip_ws();
                }
            }
            advance();
        } else if (c == '"') {
            string();
        } else {
            while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) &&
                   text_[pos_] != ',' && text_[pos_] != '}' && text_[pos_] != ']')
                advance();
        }
    }

    std::string_view text_;
    std::size_t pos_ = 0;
    int line_ = 1;
    std::map<std::string, int> lines_;
};

/// Command-line overrides applied on top of the file.
struct LoadOverrides {
    std::optional<double> dt;
    std::optional<double> duration;
    std::optional<std::uint64_t> seed;
};

struct LoadedScenario {
    Scenario scenario;
    json document;
    std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// Matrix/vector <-> JSON

inline json to_json(const Matrix& M) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < M.cols(); ++j)
            row.push_back(M(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline json to_json_vector(const Vector& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        out.push_back(v(i));
    return out;
}

inline json certificate_to_json(const CertificateParams& params) {
    json out;
    out["variant"] = std::string(to_string(variant_of(params)));
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            out["P"] = to_json(p.P);
            if constexpr (std::is_same_v<T, RazumikhinParams>) {
                out["q"] = p.q;
            } else if constexpr (std::is_same_v<T, KrasovskiiQParams>) {
                out["Q"] = to_json(p.Q);
            } else {
                out["R"] = to_json(p.R);
                out["Psi2"] = to_json(p.Psi2);
                out["Psi3"] = to_json(p.Psi3);
            }
        },
        params);
    return out;
}

namespace detail {

class Reader {
public:
    Reader(std::string source, const JsonLineIndex& index) : source_(std::move(source)), index_(index) {}

    [[noreturn]] void fail(const std::string& ptr, const std::string& msg) const {
        throw ScenarioError(source_ + ":" + std::to_string(index_.line_of(ptr)) + ": " + (ptr.empty() ? "/" : ptr) +
                            ": " + msg);
    }

    const json& field(const json& obj, const std::string& ptr, const char* key) const {
        if (!obj.is_object())
            fail(ptr, "expected an object");
        auto it = obj.find(key);
        if (it == obj.end())
            fail(ptr, std::string("missing field '") + key + "'");
        return *it;
    }

    const json* optional_field(const json& obj, const std::string& ptr, const char* key) const {
        if (!obj.is_object())
            fail(ptr, "expected an object");
        auto it = obj.find(key);
        return it == obj.end() ? nullptr : &*it;
    }

    double number(const json& j, const std::string& ptr) const {
        if (!j.is_number())
            fail(ptr, "expected a number");
        return j.get<double>();
    }

    double number_field(const json& obj, const std::string& ptr, const char* key) const {
        return number(field(obj, ptr, key), ptr + "/" + key);
    }

    Vector vector(const json& j, const std::string& ptr) const {
        if (j.is_number())
            return Vector::Constant(1, j.get<double>());
        if (!j.is_array() || j.empty())
            fail(ptr, "expected a non-empty array of numbers");
        Vector v(static_cast<Eigen::Index>(j.size()));
        for (std::size_t i = 0; i < j.size(); ++i)
            v(static_cast<Eigen::Index>(i)) = number(j[i], ptr + "/" + std::to_string(i));
        return v;
    }

    Matrix matrix(const json& j, const std::string& ptr) const {
        if (j.is_number())
            return Matrix::Constant(1, 1, j.get<double>());
        if (!j.is_array() || j.empty() || !j[0].is_array() || j[0].empty())
            fail(ptr, "expected a non-empty array of rows");
        const std::size_t cols = j[0].size();
        Matrix M(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
        for (std::size_t i = 0; i < j.size(); ++i) {
            const std::string rp = ptr + "/" + std::to_string(i);
            if (!j[i].is_array() || j[i].size() != cols)
                fail(rp, "rows must all have " + std::to_string(cols) + " entries");
            for (std::size_t c = 0; c < cols; ++c)
                M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
                    number(j[i][c], rp + "/" + std::to_string(c));
        }
        return M;
    }

    std::string string_field(const json& obj, const std::string& ptr, const char* key) const {
        const json& j = field(obj, ptr, key);
        if (!j.is_string())
            fail(ptr + "/" + key, "expected a string");
        return j.get<std::string>();
    }

private:
    std::string source_;
    const JsonLineIndex& index_;
};

inline DelaySystem read_system(const Reader& rd, const json& doc) {
    const json& s = rd.field(doc, "", "system");
    const std::string p = "/system";
    Matrix A = rd.matrix(rd.field(s, p, "A"), p + "/A");
    Matrix B = rd.matrix(rd.field(s, p, "B"), p + "/B");
    Matrix C = rd.matrix(rd.field(s, p, "C"), p + "/C");
    Matrix D = rd.optional_field(s, p, "D") ? rd.matrix(s["D"], p + "/D") : Matrix::Zero(C.rows(), B.cols());
    const double tau = rd.number_field(s, p, "tau");
    try {
        return DelaySystem(std::move(A), std::move(B), std::move(C), std::move(D), tau);
    } catch (const Error& e) {
        rd.fail(p, e.what());
    }
}

inline ConstraintSet read_constraints(const Reader& rd, const json& doc, const DelaySystem& sys) {
    const json& arr = rd.field(doc, "", "constraints");
    if (!arr.is_array() || arr.empty())
        rd.fail("/constraints", "expected a non-empty array of constraint rows");
    std::vector<ConstraintRow> rows;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string p = "/constraints/" + std::to_string(i);
        ConstraintRow row;
        row.h_x = rd.optional_field(arr[i], p, "h_x") ? rd.vector(arr[i]["h_x"], p + "/h_x") : Vector::Zero(sys.n());
        row.h_u = rd.optional_field(arr[i], p, "h_u") ? rd.vector(arr[i]["h_u"], p + "/h_u") : Vector::Zero(sys.m());
        row.g = rd.number_field(arr[i], p, "g");
        if (row.h_x.size() != sys.n())
            rd.fail(p + "/h_x", "expected " + std::to_string(sys.n()) + " entries");
        if (row.h_u.size() != sys.m())
            rd.fail(p + "/h_u", "expected " + std::to_string(sys.m()) + " entries");
        if (row.h_x.isZero(0.0) && row.h_u.isZero(0.0))
            rd.fail(p, "h_x and h_u are both zero");
        rows.push_back(std::move(row));
    }
    return ConstraintSet(std::move(rows));
}

inline Certificate read_certificate(const Reader& rd, const json& c, const DelaySystem& sys, const PrimaryGain& gain,
                                    const std::optional<ConstraintSet>& cs, const LoadOverrides& ov) {
    const std::string p = "/certificate";
    const std::string vname = rd.string_field(c, p, "variant");
    const auto variant = parse_variant(vname);
    if (!variant)
        rd.fail(p + "/variant", "unknown variant '" + vname + "' (razumikhin|krasovskii_q|krasovskii_r)");

    SynthesisOptions opts;
    if (const json* s = rd.optional_field(c, p, "seed"))
        opts.seed = static_cast<std::uint64_t>(rd.number(*s, p + "/seed"));
    if (ov.seed)
        opts.seed = *ov.seed;

    auto flag = [&](const char* key) {
        const json* f = rd.optional_field(c, p, key);
        return f && f->is_boolean() && f->get<bool>();
    };
    try {
        if (flag("optimize_volume")) {
            if (!cs)
                rd.fail(p, "optimize_volume needs constraints");
            return *optimize_p_volume(*cs, sys, gain, *variant, opts).certificate;
        }
        if (flag("synthesize")) {
            auto res = synthesize(*variant, sys, gain, opts);
            if (!res)
                rd.fail(p, "no certificate found within the search budget (best margin " +
                               std::to_string(res.best_margin) + ")");
            return *res.certificate;
        }
        const Matrix P = rd.matrix(rd.field(c, p, "P"), p + "/P");
        switch (*variant) {
        case Variant::Razumikhin:
            return Certificate::issue(RazumikhinParams{P, rd.number_field(c, p, "q")}, sys, gain);
        case Variant::KrasovskiiQ:
            return Certificate::issue(KrasovskiiQParams{P, rd.matrix(rd.field(c, p, "Q"), p + "/Q")}, sys, gain);
        case Variant::KrasovskiiR: {
            const Matrix R = rd.matrix(rd.field(c, p, "R"), p + "/R");
            if (rd.optional_field(c, p, "Psi2") || rd.optional_field(c, p, "Psi3")) {
                return Certificate::issue(KrasovskiiRParams{P, R, rd.matrix(rd.field(c, p, "Psi2"), p + "/Psi2"),
                                                            rd.matrix(rd.field(c, p, "Psi3"), p + "/Psi3")},
                                          sys, gain);
            }
            auto res = synthesize_slacks(sys, gain, P, R, opts);
            if (!res)
                rd.fail(p, "no slack matrices Psi2, Psi3 found for the given P, R (best margin " +
                               std::to_string(res.best_margin) + ")");
            return *res.certificate;
        }
        }
    } catch (const ScenarioError&) {
        throw;
    } catch (const Error& e) {
        rd.fail(p, e.what());
    }
    rd.fail(p, "unreachable");
}

inline std::optional<ErgConfig> read_erg(const Reader& rd, const json& doc, const DelaySystem& sys,
                                         const PrimaryGain& gain, const ConstraintSet& cs, const LoadOverrides& ov,
                                         double dt) {
    const json& e = rd.field(doc, "", "erg");
    const std::string p = "/erg";
    if (e.is_string() && e.get<std::string>() == "none")
        return std::nullopt;
    if (!e.is_object())
        rd.fail(p, "expected an object or \"none\"");
    ErgConfig cfg;
    cfg.T = rd.number_field(e, p, "T");
    cfg.kappa1 = rd.number_field(e, p, "kappa1");
    cfg.kappa2 = rd.optional_field(e, p, "kappa2") ? rd.number(e["kappa2"], p + "/kappa2") : 1.0;
    cfg.eta = rd.number_field(e, p, "eta");
    cfg.zeta = rd.number_field(e, p, "zeta");
    cfg.delta = rd.number_field(e, p, "delta");
    cfg.update_period = rd.optional_field(e, p, "update_period") ? rd.number(e["update_period"], p + "/update_period")
                                                                   : 10.0 * dt;
    const std::string variant = rd.string_field(e, p, "variant");
    if (variant == "terminal") {
        const json& c = rd.field(doc, "", "certificate");
        cfg.variant = Terminal{read_certificate(rd, c, sys, gain, cs, ov)};
    } else if (variant != "infinite_horizon") {
        rd.fail(p + "/variant", "expected \"terminal\" or \"infinite_horizon\"");
    }
    try {
        cfg.validate(sys.tau(), dt);
    } catch (const Error& err) {
        rd.fail(p, err.what());
    }
    return cfg;
}

inline RunSpec read_run(const Reader& rd, const json& doc, const DelaySystem& sys, const LoadOverrides& ov) {
    const json& r = rd.field(doc, "", "run");
    const std::string p = "/run";
    RunSpec run;
    run.dt = ov.dt ? *ov.dt : (rd.optional_field(r, p, "dt") ? rd.number(r["dt"], p + "/dt") : 1e-3);
    run.duration = ov.duration ? *ov.duration
                               : (rd.optional_field(r, p, "duration") ? rd.number(r["duration"], p + "/duration") : 60.0);
    if (!(run.dt > 0.0) || run.dt > sys.tau() / 100.0 * (1.0 + 1e-12))
        rd.fail(p + "/dt", "dt must be positive and at most tau/100");
    if (!(run.duration > 0.0))
        rd.fail(p + "/duration", "duration must be positive");
    run.x0 = rd.vector(rd.field(r, p, "x0"), p + "/x0");
    run.v0 = rd.vector(rd.field(r, p, "v0"), p + "/v0");
    if (run.x0.size() != sys.n())
        rd.fail(p + "/x0", "expected " + std::to_string(sys.n()) + " entries");
    if (run.v0.size() != sys.p())
        rd.fail(p + "/v0", "expected " + std::to_string(sys.p()) + " entries");

    const json& ref = rd.field(r, p, "reference");
    if (!ref.is_array() || ref.empty())
        rd.fail(p + "/reference", "expected a non-empty array of {t, value} steps");
    std::vector<ReferenceStep> steps;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const std::string sp = p + "/reference/" + std::to_string(i);
        ReferenceStep st{rd.number_field(ref[i], sp, "t"), rd.vector(rd.field(ref[i], sp, "value"), sp + "/value")};
        if (st.value.size() != sys.p())
            rd.fail(sp + "/value", "expected " + std::to_string(sys.p()) + " entries");
        if (!steps.empty() && st.t < steps.back().t)
            rd.fail(sp + "/t", "reference times must be non-decreasing");
        steps.push_back(std::move(st));
    }
    run.reference = ReferenceSchedule(std::move(steps));

    if (const json* h = rd.optional_field(r, p, "history")) {
        const std::string hp = p + "/history";
        if (!h->is_array() || h->size() < 2)
            rd.fail(hp, "expected at least two {t, x, v} samples");
        for (std::size_t i = 0; i < h->size(); ++i) {
            const std::string sp = hp + "/" + std::to_string(i);
            HistorySample s{rd.number_field((*h)[i], sp, "t"), rd.vector(rd.field((*h)[i], sp, "x"), sp + "/x"),
                            rd.vector(rd.field((*h)[i], sp, "v"), sp + "/v")};
            if (s.x.size() != sys.n() || s.v.size() != sys.p())
                rd.fail(sp, "sample dimensions do not match the system");
            if (!run.history.empty() && !(s.t > run.history.back().t))
                rd.fail(sp + "/t", "history times must be strictly increasing");
            run.history.push_back(std::move(s));
        }
        if (run.history.front().t > -2.0 * sys.tau() + 1e-9 || std::abs(run.history.back().t) > 1e-9)
            rd.fail(hp, "history must cover [-2 tau, 0]");
    }
    return run;
}

}  // namespace detail

inline LoadedScenario load_scenario_json(const json& doc, const std::string& source, const JsonLineIndex& index,
                                         const LoadOverrides& ov = {}) {
    const detail::Reader rd(source, index);
    if (!doc.is_object())
        rd.fail("", "scenario must be a JSON object");

    DelaySystem sys = detail::read_system(rd, doc);
    ConstraintSet cs = detail::read_constraints(rd, doc, sys);

    const json& ctl = rd.field(doc, "", "controller");
    PrimaryGain gain{rd.matrix(rd.field(ctl, "/controller", "K"), "/controller/K")};
    if (gain.K.rows() != sys.m() || gain.K.cols() != sys.n())
        rd.fail("/controller/K", "K must be " + std::to_string(sys.m()) + " x " + std::to_string(sys.n()));

    RunSpec run = detail::read_run(rd, doc, sys, ov);
    std::optional<ErgConfig> erg = detail::read_erg(rd, doc, sys, gain, cs, ov, run.dt);

    OutputSpec out;
    if (const json* o = rd.optional_field(doc, "", "output")) {
        if (const json* path = rd.optional_field(*o, "/output", "path")) {
            if (!path->is_string())
                rd.fail("/output/path", "expected a string");
            out.path = path->get<std::string>();
        }
        if (const json* d = rd.optional_field(*o, "/output", "decimation")) {
            const double dec = rd.number(*d, "/output/decimation");
            if (!(dec >= 1.0) || dec != std::floor(dec))
                rd.fail("/output/decimation", "decimation must be a positive integer");
            out.decimation = static_cast<int>(dec);
        }
    }

    LoadedScenario loaded{Scenario{sys, cs, gain, std::move(erg), std::move(run), std::move(out)}, doc, {}};

    // At least one probe reference (v0 or a scheduled value) must be strictly
    // steady-state admissible.
    const SteadyStateMap map(sys);
    bool any_admissible = false;
    auto probe = [&](const Vector& v) {
        try {
            const Equilibrium eq = map(v);
            if (residuals(cs, eq.x_bar, eq.u_bar).minCoeff() > 0.0)
                any_admissible = true;
        } catch (const NoEquilibrium&) {
        }
    };
    probe(loaded.scenario.run.v0);
    for (const auto& s : loaded.scenario.run.reference.steps())
        probe(s.value);
    if (!any_admissible)
        rd.fail("/run/reference", "no probe reference (v0 or scheduled value) is strictly admissible");

    for (int i = 0; i < cs.size(); ++i) {
        if (cs.closed_loop_normal(i, gain.K).norm() == 0.0)
            loaded.warnings.push_back("constraint " + std::to_string(i) +
                                      " has h_x + K'h_u = 0; it is excluded from Gamma(v)");
    }
    return loaded;
}

inline LoadedScenario load_scenario_text(const std::string& text, const std::string& source,
                                         const LoadOverrides& ov = {}) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        const std::size_t upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
        throw ScenarioError(source + ":" + std::to_string(line) + ": parse error: " + e.what());
    }
    return load_scenario_json(doc, source, JsonLineIndex(text), ov);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ScenarioError(path + ": cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline LoadedScenario load_scenario_file(const std::string& path, const LoadOverrides& ov = {}) {
    return load_scenario_text(read_file(path), path, ov);
}

}  // namespace tdrg::cli
