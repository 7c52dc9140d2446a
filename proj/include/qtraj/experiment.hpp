// experiment.hpp — configuration-file driven experiment runner: JSON spec
// parsing with a per-kind key schema, deterministic dispatch to the physics
// modules, and CSV/JSON artifact emission (atomic writes, reproducible
// byte-for-byte from (spec, seed) regardless of worker-thread count).
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qtraj/errors.hpp"
#include "qtraj/feedback.hpp"
#include "qtraj/measure.hpp"
#include "qtraj/parallel.hpp"
#include "qtraj/paramp.hpp"
#include "qtraj/qstate.hpp"
#include "qtraj/rng.hpp"
#include "qtraj/sme.hpp"
#include "qtraj/traj.hpp"
#include "qtraj/version.hpp"

namespace qtraj {

// --- key schema --------------------------------------------------------------

struct NumKey {
    std::string name;   // canonical key; frequency-like keys use the rad/s form
    std::string units;
    std::string doc;
    bool required = false;
    double def = 0.0;
    bool freq_alias = false;  // also accepts the freq_* spelling, in Hz
    bool integer = false;
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    bool lo_open = false;
    bool hi_open = false;
};

struct StrKey {
    std::string name;
    std::string doc;
    bool required = false;
    std::string def;
    std::vector<std::string> allowed;  // empty = free-form
};

struct KindSchema {
    std::string kind;
    std::string doc;
    std::vector<NumKey> nums;
    std::vector<StrKey> strs;
};

namespace detail {

inline std::string freq_name(const std::string& omega_key) {
    // omega_r -> freq_r, omega0 -> freq0, omega_d_min -> freq_d_min, ...
    return "freq" + omega_key.substr(5);
}

inline void add_sme_keys(KindSchema& s) {
    s.nums.push_back({.name = "k", .units = "1/s", .doc = "measurement rate",
                      .required = true, .lo = 0.0, .lo_open = true});
    s.nums.push_back({.name = "eta", .units = "-", .doc = "detector quantum efficiency",
                      .required = true, .lo = 0.0, .hi = 1.0, .lo_open = true});
    s.nums.push_back({.name = "dt", .units = "s", .doc = "record bin duration (<= tau_c/100)",
                      .required = true, .lo = 0.0, .lo_open = true});
    s.nums.push_back({.name = "duration", .units = "s", .doc = "total simulated time",
                      .required = true, .lo = 0.0, .lo_open = true});
    s.nums.push_back({.name = "gamma", .units = "1/s", .doc = "extra environmental dephasing rate",
                      .def = 0.0, .lo = 0.0});
    s.nums.push_back({.name = "omega_r", .units = "rad/s", .doc = "Rabi drive rate",
                      .def = 0.0, .freq_alias = true, .lo = 0.0});
    s.nums.push_back({.name = "init_x", .units = "-", .doc = "initial Bloch x",
                      .def = 1.0, .lo = -1.0, .hi = 1.0});
    s.nums.push_back({.name = "init_y", .units = "-", .doc = "initial Bloch y",
                      .def = 0.0, .lo = -1.0, .hi = 1.0});
    s.nums.push_back({.name = "init_z", .units = "-", .doc = "initial Bloch z",
                      .def = 0.0, .lo = -1.0, .hi = 1.0});
    s.strs.push_back({.name = "quadrature", .doc = "measured quadrature: Q (sigma_z) or I (photon-number phase)",
                      .def = "Q", .allowed = {"Q", "I"}});
    s.strs.push_back({.name = "scheme", .doc = "integration scheme",
                      .def = "exact-map", .allowed = {"exact-map", "euler-maruyama"}});
}

inline void add_feedback_keys(KindSchema& s) {
    add_sme_keys(s);
    // The Rabi reference must be a real drive for a PLL lock.
    for (NumKey& nk : s.nums)
        if (nk.name == "omega_r") {
            nk.required = true;
            nk.lo_open = true;
        }
    s.nums.push_back({.name = "omega_lp", .units = "rad/s", .doc = "low-pass cutoff of the error filter",
                      .required = true, .freq_alias = true, .lo = 0.0, .lo_open = true});
    s.nums.push_back({.name = "delay", .units = "s", .doc = "loop delay, integer multiple of dt",
                      .def = 0.0, .lo = 0.0});
    s.nums.push_back({.name = "phase", .units = "rad", .doc = "demodulation reference phase offset",
                      .def = 0.0});
    s.nums.push_back({.name = "t_on", .units = "s", .doc = "actuation enabled for t >= t_on",
                      .def = 0.0, .lo = 0.0});
    s.nums.push_back({.name = "n", .units = "-", .doc = "ensemble size",
                      .required = true, .integer = true, .lo = 8.0});
}

inline void add_duffing_keys(KindSchema& s) {
    s.nums.push_back({.name = "omega0", .units = "rad/s", .doc = "linear resonance frequency",
                      .required = true, .freq_alias = true, .lo = 0.0, .lo_open = true});
    s.nums.push_back({.name = "Gamma", .units = "1/s", .doc = "amplitude damping (<= omega0/10)",
                      .required = true, .lo = 0.0, .lo_open = true});
}

inline const std::vector<KindSchema>& kind_schemas() {
    static const std::vector<KindSchema> schemas = [] {
        std::vector<KindSchema> all;

        {
            KindSchema s;
            s.kind = "trajectory";
            s.doc = "one record-conditioned diffusive trajectory; CSV columns "
                    "(t, x, y, z, V), one row per record bin (state at bin end)";
            add_sme_keys(s);
            all.push_back(std::move(s));
        }
        {
            KindSchema s;
            s.kind = "ensemble";
            s.doc = "n independent trajectories; CSV columns (traj_id, t, x, y, z, V), "
                    "n*steps rows ordered by traj_id then time";
            add_sme_keys(s);
            s.nums.push_back({.name = "n", .units = "-", .doc = "ensemble size",
                              .required = true, .integer = true, .lo = 1.0});
            all.push_back(std::move(s));
        }
        {
            KindSchema s;
            s.kind = "backaction-tomography";
            s.doc = "single-shot weak measurements from Bloch +x at integrated "
                    "signal-to-noise S, binned by outcome; per bin the mean "
                    "post-measurement state and its closed-form prediction; CSV "
                    "(V_m, count, x, y, z, x_pred, y_pred, z_pred)";
            s.nums.push_back({.name = "S", .units = "-", .doc = "integrated record SNR of one shot",
                              .required = true, .lo = 0.0, .lo_open = true});
            s.nums.push_back({.name = "eta", .units = "-", .doc = "detector quantum efficiency",
                              .required = true, .lo = 0.0, .hi = 1.0, .lo_open = true});
            s.nums.push_back({.name = "n", .units = "-", .doc = "number of single shots",
                              .required = true, .integer = true, .lo = 1.0});
            s.nums.push_back({.name = "tau", .units = "s", .doc = "shot integration time (sets the time scale)",
                              .def = 1.0, .lo = 0.0, .lo_open = true});
            s.nums.push_back({.name = "gamma", .units = "1/s", .doc = "extra environmental dephasing rate",
                              .def = 0.0, .lo = 0.0});
            s.nums.push_back({.name = "n_bins", .units = "-", .doc = "outcome histogram bins",
                              .def = 40.0, .integer = true, .lo = 4.0});
            s.nums.push_back({.name = "v_max", .units = "-", .doc = "histogram covers |V_m| <= v_max",
                              .def = 2.0, .lo = 0.0, .lo_open = true});
            s.strs.push_back({.name = "quadrature", .doc = "Q (state readout) or I (phase backaction)",
                              .def = "Q", .allowed = {"Q", "I"}});
            all.push_back(std::move(s));
        }
        {
            KindSchema s;
            s.kind = "conditional-tomography";
            s.doc = "verify a target trajectory by rerunning fresh records, keeping "
                    "runs whose reconstruction lands near the target, and averaging "
                    "projective outcomes; CSV (t, x_target, z_target, x_tomo, z_tomo, "
                    "se_x, se_z, n_matched)";
            add_sme_keys(s);
            s.nums.push_back({.name = "n_runs", .units = "-", .doc = "fresh runs per grid time",
                              .required = true, .integer = true, .lo = 1.0});
            s.nums.push_back({.name = "epsilon", .units = "-", .doc = "match window half-width in (x, z)",
                              .def = 0.05, .lo = 0.0, .lo_open = true});
            s.nums.push_back({.name = "n_times", .units = "-", .doc = "number of verification grid times",
                              .def = 5.0, .integer = true, .lo = 1.0});
            all.push_back(std::move(s));
        }
        {
            KindSchema s;
            s.kind = "postselect-mlp";
            s.doc = "ensemble postselected on a final-state window; most likely "
                    "path through the (x, z) histogram; CSV (t, x, z)";
            add_sme_keys(s);
            s.nums.push_back({.name = "n", .units = "-", .doc = "ensemble size",
                              .required = true, .integer = true, .lo = 1.0});
            s.nums.push_back({.name = "target_x", .units = "-", .doc = "postselection window center, Bloch x",
                              .required = true, .lo = -1.0, .hi = 1.0});
            s.nums.push_back({.name = "target_z", .units = "-", .doc = "postselection window center, Bloch z",
                              .required = true, .lo = -1.0, .hi = 1.0});
            s.nums.push_back({.name = "epsilon", .units = "-", .doc = "window half-width in (x, z)",
                              .def = 0.05, .lo = 0.0, .lo_open = true});
            s.nums.push_back({.name = "bins", .units = "-", .doc = "histogram bins per Bloch axis",
                              .def = 24.0, .integer = true, .lo = 8.0});
            all.push_back(std::move(s));
        }
        {
            KindSchema s;
            s.kind = "past-state";
            s.doc = "one trajectory plus the backward effect matrix; forward state, "
                    "effect Bloch vector, and forward vs hindsight probability of "
                    "the sigma_z=+1 outcome; CSV (t, x, y, z, ex, ey, ez, "
                    "p0_forward, p0_hindsight)";
            add_sme_keys(s);
            all.push_back(std::move(s));
        }
        {
            KindSchema s;
            s.kind = "feedback";
            s.doc = "analog phase-locking feedback on the Rabi drive amplitude; "
                    "ensemble-averaged Bloch components; CSV (t, x, z)";
            add_feedback_keys(s);
            s.nums.push_back({.name = "F", .units = "-", .doc = "dimensionless loop gain",
                              .required = true, .lo = 0.0});
            all.push_back(std::move(s));
        }
        {
            KindSchema s;
            s.kind = "feedback-sweep";
            s.doc = "feedback efficiency D versus loop gain F; CSV (F, D, D_stderr)";
            add_feedback_keys(s);
            s.nums.push_back({.name = "F_min", .units = "-", .doc = "smallest loop gain",
                              .required = true, .lo = 0.0});
            s.nums.push_back({.name = "F_max", .units = "-", .doc = "largest loop gain",
                              .required = true, .lo = 0.0, .lo_open = true});
            s.nums.push_back({.name = "n_points", .units = "-", .doc = "sweep points (>= 5, spanning the optimum)",
                              .required = true, .integer = true, .lo = 5.0});
            s.nums.push_back({.name = "window_start", .units = "s",
                              .doc = "fit window start; negative = 5 unfedback decay times",
                              .def = -1.0});
            all.push_back(std::move(s));
        }
        {
            KindSchema s;
            s.kind = "paramp-transfer";
            s.doc = "Duffing steady-state phase versus drive amplitude, adiabatic "
                    "ascending sweep; CSV (F_d, phase_deg)";
            add_duffing_keys(s);
            s.nums.push_back({.name = "omega_d", .units = "rad/s", .doc = "drive frequency (below omega0)",
                              .required = true, .freq_alias = true, .lo = 0.0, .lo_open = true});
            s.nums.push_back({.name = "F_min", .units = "rad^2/s^2", .doc = "smallest drive amplitude",
                              .required = true, .lo = 0.0});
            s.nums.push_back({.name = "F_max", .units = "rad^2/s^2", .doc = "largest drive amplitude",
                              .required = true, .lo = 0.0, .lo_open = true});
            s.nums.push_back({.name = "n_points", .units = "-", .doc = "sweep points",
                              .required = true, .integer = true, .lo = 2.0});
            all.push_back(std::move(s));
        }
        {
            KindSchema s;
            s.kind = "paramp-phase-diagram";
            s.doc = "bistable drive window versus drive frequency from up/down "
                    "amplitude sweeps; CSV (omega_d, F_d_low, F_d_high), one row "
                    "per bistable frequency";
            add_duffing_keys(s);
            s.nums.push_back({.name = "omega_d_min", .units = "rad/s", .doc = "smallest drive frequency",
                              .required = true, .freq_alias = true, .lo = 0.0, .lo_open = true});
            s.nums.push_back({.name = "omega_d_max", .units = "rad/s", .doc = "largest drive frequency",
                              .required = true, .freq_alias = true, .lo = 0.0, .lo_open = true});
            s.nums.push_back({.name = "n_omega", .units = "-", .doc = "frequency grid points (>= 20)",
                              .required = true, .integer = true, .lo = 20.0});
            s.nums.push_back({.name = "F_min", .units = "rad^2/s^2", .doc = "smallest drive amplitude",
                              .required = true, .lo = 0.0});
            s.nums.push_back({.name = "F_max", .units = "rad^2/s^2", .doc = "largest drive amplitude",
                              .required = true, .lo = 0.0, .lo_open = true});
            s.nums.push_back({.name = "n_F", .units = "-", .doc = "amplitude grid points (>= 20)",
                              .required = true, .integer = true, .lo = 20.0});
            all.push_back(std::move(s));
        }
        {
            KindSchema s;
            s.kind = "paramp-gain";
            s.doc = "small-signal reflected-wave gain versus signal phase at a "
                    "fixed pump bias; CSV (signal_phase_deg, gain_dB)";
            add_duffing_keys(s);
            s.nums.push_back({.name = "omega_d", .units = "rad/s", .doc = "pump frequency",
                              .required = true, .freq_alias = true, .lo = 0.0, .lo_open = true});
            s.nums.push_back({.name = "F_d", .units = "rad^2/s^2", .doc = "pump amplitude (bias point)",
                              .required = true, .lo = 0.0, .lo_open = true});
            s.nums.push_back({.name = "signal_amp", .units = "rad^2/s^2",
                              .doc = "signal amplitude (<= 1% of F_d); negative = 0.5% of F_d",
                              .def = -1.0});
            s.nums.push_back({.name = "signal_phase", .units = "rad",
                              .doc = "signal phase relative to the pump; omit to sweep 0..345 deg",
                              .def = 0.0});
            all.push_back(std::move(s));
        }
        return all;
    }();
    return schemas;
}

inline std::string valid_kinds_text() {
    std::string out;
    for (const KindSchema& s : kind_schemas()) {
        if (!out.empty()) out += ", ";
        out += s.kind;
    }
    return out;
}

inline std::pair<int, int> line_col(const std::string& text, std::size_t byte) {
    int line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

inline std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (const std::string& p : parts) {
        if (!out.empty()) out += sep;
        out += p;
    }
    return out;
}

inline std::string number_text(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

inline std::string range_text(const NumKey& nk) {
    const double inf = std::numeric_limits<double>::infinity();
    std::string out = "must be ";
    if (nk.integer) out += "an integer ";
    if (nk.lo == -inf && nk.hi == inf) return out + "finite";
    out += "in ";
    out += (nk.lo_open || nk.lo == -inf) ? "(" : "[";
    out += (nk.lo == -inf) ? "-inf" : number_text(nk.lo);
    out += ", ";
    out += (nk.hi == inf) ? "inf" : number_text(nk.hi);
    out += (nk.hi_open || nk.hi == inf) ? ")" : "]";
    return out;
}

}  // namespace detail

inline const KindSchema& schema_for(const std::string& kind) {
    for (const KindSchema& s : detail::kind_schemas())
        if (s.kind == kind) return s;
    throw spec_error("unknown kind '" + kind + "'; valid kinds: " + detail::valid_kinds_text());
}

// --- spec parsing ------------------------------------------------------------

struct ExperimentSpec {
    std::string kind;
    std::uint64_t seed = 0;
    std::string out;
    std::map<std::string, double> numbers;       // canonical names, defaults applied
    std::map<std::string, std::string> strings;  // canonical names, defaults applied
    std::set<std::string> provided;              // keys the user actually supplied
    nlohmann::json echo = nlohmann::json::object();  // flattened raw document

    double num(const std::string& key) const {
        const auto it = numbers.find(key);
        if (it == numbers.end()) throw error("internal: numeric key '" + key + "' not in spec");
        return it->second;
    }
    std::string str(const std::string& key) const {
        const auto it = strings.find(key);
        if (it == strings.end()) throw error("internal: string key '" + key + "' not in spec");
        return it->second;
    }
    bool has(const std::string& key) const { return provided.count(key) > 0; }

    friend bool operator==(const ExperimentSpec& a, const ExperimentSpec& b) {
        return a.kind == b.kind && a.seed == b.seed && a.out == b.out &&
               a.numbers == b.numbers && a.strings == b.strings && a.provided == b.provided;
    }
};

inline ExperimentSpec parse_spec(const std::string& text) {
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        const std::size_t byte = e.byte > 0 ? static_cast<std::size_t>(e.byte) - 1 : 0;
        const auto [line, col] = detail::line_col(text, byte);
        throw spec_error("spec syntax error at line " + std::to_string(line) + ", column " +
                         std::to_string(col) + ": " + e.what());
    }
    if (!root.is_object()) throw spec_error("spec must be a JSON object");

    // Flatten a single optional level of grouping: {"sme": {"k": 1}} and
    // {"k": 1} address the same key space.
    nlohmann::json flat = nlohmann::json::object();
    for (const auto& [key, value] : root.items()) {
        if (value.is_object()) {
            for (const auto& [ik, iv] : value.items()) {
                if (iv.is_object() || iv.is_array())
                    throw spec_error("spec nesting deeper than one level at key '" + key + "." +
                                     ik + "'");
                if (flat.contains(ik))
                    throw spec_error("duplicate key '" + ik + "' introduced by group '" + key + "'");
                flat[ik] = iv;
            }
        } else if (value.is_array()) {
            throw spec_error("arrays are not allowed in a spec (key '" + key + "')");
        } else {
            if (flat.contains(key)) throw spec_error("duplicate key '" + key + "'");
            flat[key] = value;
        }
    }

    if (!flat.contains("kind")) throw spec_error("missing key 'kind'");
    if (!flat["kind"].is_string()) throw spec_error("'kind' must be a string");
    const std::string kind = flat["kind"].get<std::string>();
    const KindSchema& schema = schema_for(kind);

    bool any_omega = false, any_freq = false;
    for (const auto& [key, value] : flat.items()) {
        if (key.rfind("omega", 0) == 0) any_omega = true;
        if (key.rfind("freq", 0) == 0) any_freq = true;
    }
    if (any_omega && any_freq)
        throw spec_error("spec mixes omega_* (rad/s) and freq_* (Hz) keys; pick one convention");

    ExperimentSpec spec;
    spec.kind = kind;
    spec.echo = flat;

    std::set<std::string> consumed{"kind", "seed", "out"};
    std::vector<std::string> missing, problems;

    if (!flat.contains("seed")) {
        missing.push_back("'seed'");
    } else {
        const nlohmann::json& sj = flat["seed"];
        if (sj.is_number_unsigned()) {
            spec.seed = sj.get<std::uint64_t>();
        } else if (sj.is_number_integer() && sj.get<std::int64_t>() >= 0) {
            spec.seed = static_cast<std::uint64_t>(sj.get<std::int64_t>());
        } else {
            problems.push_back("'seed' must be a nonnegative integer");
        }
    }
    if (!flat.contains("out")) {
        missing.push_back("'out'");
    } else if (!flat["out"].is_string() || flat["out"].get<std::string>().empty()) {
        problems.push_back("'out' must be a non-empty path string");
    } else {
        spec.out = flat["out"].get<std::string>();
    }

    for (const NumKey& nk : schema.nums) {
        const std::string freq = nk.freq_alias ? detail::freq_name(nk.name) : std::string();
        const bool has_main = flat.contains(nk.name);
        const bool has_freq = !freq.empty() && flat.contains(freq);
        if (has_main) consumed.insert(nk.name);
        if (has_freq) consumed.insert(freq);
        if (has_main && has_freq) {
            problems.push_back("give either '" + nk.name + "' or '" + freq + "', not both");
            continue;
        }
        double value = nk.def;
        bool given = false;
        if (has_main || has_freq) {
            const std::string used = has_main ? nk.name : freq;
            const nlohmann::json& vj = flat[used];
            if (!vj.is_number()) {
                problems.push_back("'" + used + "' must be a number");
                continue;
            }
            value = vj.get<double>();
            if (!std::isfinite(value)) {
                problems.push_back("'" + used + "' must be finite");
                continue;
            }
            if (has_freq) value *= 2.0 * std::numbers::pi;
            given = true;
        }
        if (given || nk.required) {
            if (!given) {
                std::string what = "'" + nk.name + "'";
                if (!freq.empty()) what += " (or '" + freq + "' in Hz)";
                missing.push_back(what);
                continue;
            }
            if (nk.integer && std::floor(value) != value) {
                problems.push_back("'" + nk.name + "' must be an integer (got " +
                                   detail::number_text(value) + ")");
                continue;
            }
            const bool lo_bad = nk.lo_open ? !(value > nk.lo) : !(value >= nk.lo);
            const bool hi_bad = nk.hi_open ? !(value < nk.hi) : !(value <= nk.hi);
            if (lo_bad || hi_bad) {
                problems.push_back("'" + nk.name + "' out of range: " + detail::range_text(nk) +
                                   " (got " + detail::number_text(value) + ")");
                continue;
            }
        }
        spec.numbers[nk.name] = value;
        if (given) spec.provided.insert(nk.name);
    }

    for (const StrKey& sk : schema.strs) {
        consumed.insert(sk.name);
        std::string value = sk.def;
        if (flat.contains(sk.name)) {
            const nlohmann::json& vj = flat[sk.name];
            if (!vj.is_string()) {
                problems.push_back("'" + sk.name + "' must be a string");
                continue;
            }
            value = vj.get<std::string>();
            spec.provided.insert(sk.name);
        } else if (sk.required) {
            missing.push_back("'" + sk.name + "'");
            continue;
        }
        if (!sk.allowed.empty() &&
            std::find(sk.allowed.begin(), sk.allowed.end(), value) == sk.allowed.end()) {
            problems.push_back("'" + sk.name + "' must be one of {" +
                               detail::join(sk.allowed, ", ") + "} (got '" + value + "')");
            continue;
        }
        spec.strings[sk.name] = value;
    }

    std::vector<std::string> unknown;
    for (const auto& [key, value] : flat.items())
        if (!consumed.count(key)) unknown.push_back("'" + key + "'");
    if (!unknown.empty())
        throw spec_error("unknown key(s) for kind '" + kind + "': " + detail::join(unknown, ", "));
    if (!missing.empty())
        throw spec_error("missing required key(s) for kind '" + kind + "': " +
                         detail::join(missing, ", "));
    if (!problems.empty()) throw spec_error(detail::join(problems, "; "));

    // Cross-key checks that the generic schema cannot express.
    auto require = [&](bool ok, const std::string& msg) {
        if (!ok) throw spec_error(msg);
    };
    if (spec.numbers.count("F_min") && spec.numbers.count("F_max"))
        require(spec.num("F_min") < spec.num("F_max"), "'F_min' must be smaller than 'F_max'");
    if (spec.numbers.count("omega_d_min") && spec.numbers.count("omega_d_max"))
        require(spec.num("omega_d_min") < spec.num("omega_d_max"),
                "'omega_d_min' must be smaller than 'omega_d_max'");
    if (kind == "postselect-mlp") {
        const double tx = spec.num("target_x"), tz = spec.num("target_z");
        require(tx * tx + tz * tz <= 1.0 + 1e-12,
                "postselection target (target_x, target_z) must lie inside the Bloch disc");
    }
    if (spec.numbers.count("signal_amp") && spec.num("signal_amp") >= 0.0)
        require(spec.num("signal_amp") > 0.0 && spec.num("signal_amp") <= 0.01 * spec.num("F_d"),
                "'signal_amp' out of range: must be in (0, 0.01*F_d]");
    return spec;
}

inline std::string describe(const std::string& kind) {
    const KindSchema& s = schema_for(kind);
    std::ostringstream os;
    os << s.kind << "\n  " << s.doc << "\n\nkeys:\n";
    os << "  kind [string] (required) -- must be \"" << s.kind << "\"\n";
    os << "  seed [integer >= 0] (required) -- master seed; per-item streams are derived "
          "from it and the kind, so results are reproducible\n";
    os << "  out [string] (required) -- output CSV path; a manifest is written to "
          "<out>.manifest.json\n";
    for (const NumKey& nk : s.nums) {
        os << "  " << nk.name << " [" << nk.units << "]";
        if (nk.freq_alias) os << " (or " << detail::freq_name(nk.name) << " [Hz])";
        os << (nk.required ? " (required)"
                           : " (default=" + detail::number_text(nk.def) + ")");
        os << " -- " << nk.doc;
        const std::string range = detail::range_text(nk);
        if (range != "must be finite") os << "; " << range;
        os << "\n";
    }
    for (const StrKey& sk : s.strs) {
        os << "  " << sk.name << " [string]";
        os << (sk.required ? " (required)" : " (default=" + sk.def + ")");
        if (!sk.allowed.empty()) os << " one of {" << detail::join(sk.allowed, ", ") << "}";
        os << " -- " << sk.doc << "\n";
    }
    os << "\nnotes:\n"
          "  - frequencies: omega_* keys are rad/s, freq_* keys are Hz (times 2*pi on "
          "parse); a spec must not mix the two conventions\n"
          "  - numeric artifacts use scientific notation with 17 significant digits\n"
          "  - QTRAJ_THREADS overrides the worker-thread count (results are identical "
          "for any value)\n";
    return os.str();
}

// --- artifact emission --------------------------------------------------------

struct ArtifactInfo {
    std::string path;
    std::size_t rows = 0;
};

struct ResultManifest {
    nlohmann::json doc;
    std::string path;
    std::vector<ArtifactInfo> artifacts;
};

namespace detail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.16e", v);
    return buf;
}

inline void write_file_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (!target.parent_path().empty()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    fs::path tmp(target);
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw error("cannot open '" + tmp.string() + "' for writing");
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
        f.flush();
        if (!f) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw error("write failed for '" + tmp.string() + "'");
        }
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        std::error_code ec2;
        fs::remove(tmp, ec2);
        throw error("rename to '" + path + "' failed: " + ec.message());
    }
}

inline std::uint64_t kind_seed(const ExperimentSpec& s) {
    return s.seed ^ fnv1a64(s.kind);
}

inline std::size_t as_count(const ExperimentSpec& s, const std::string& key) {
    return static_cast<std::size_t>(s.num(key));
}

// Library-level invariant violations triggered by user parameters are spec
// problems, not runtime failures.
template <typename Fn>
auto as_spec_error(Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const spec_error&) {
        throw;
    } catch (const convergence_error&) {
        throw;
    } catch (const error& e) {
        throw spec_error(e.what());
    }
}

inline SmeConfig sme_config_of(const ExperimentSpec& s) {
    return as_spec_error([&] {
        MeasurementParams p;
        p.k = s.num("k");
        p.eta = s.num("eta");
        p.dt = s.num("dt");
        p.gamma = s.num("gamma");
        SmeConfig c;
        c.params = p;
        c.omega_r = s.num("omega_r");
        c.duration = s.num("duration");
        c.dt = p.dt;
        c.initial = state_of(BlochVector{s.num("init_x"), s.num("init_y"), s.num("init_z")});
        c.quadrature = (s.str("quadrature") == "I") ? Quadrature::I : Quadrature::Q;
        c.scheme =
            (s.str("scheme") == "euler-maruyama") ? Scheme::euler_maruyama : Scheme::exact_map;
        c.seed = stream_seed(kind_seed(s), 0);
        c.validate();
        return c;
    });
}

inline FeedbackConfig feedback_config_of(const ExperimentSpec& s) {
    return as_spec_error([&] {
        FeedbackConfig fc;
        fc.base = sme_config_of(s);
        fc.F = s.numbers.count("F") ? s.num("F") : 0.0;
        fc.f_lp = s.num("omega_lp");
        fc.delay = s.num("delay");
        fc.phase = s.num("phase");
        fc.t_on = s.num("t_on");
        fc.validate();
        return fc;
    });
}

inline DuffingParams duffing_params_of(const ExperimentSpec& s, double omega_d, double F_d) {
    return as_spec_error([&] {
        DuffingParams p;
        p.omega0 = s.num("omega0");
        p.Gamma = s.num("Gamma");
        p.omega_d = omega_d;
        p.F_d = F_d;
        p.validate();
        return p;
    });
}

inline std::vector<double> linear_grid(double lo, double hi, std::size_t n) {
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i)
        g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return g;
}

inline std::vector<ArtifactInfo> run_trajectory(const ExperimentSpec& s) {
    const SmeConfig cfg = sme_config_of(s);
    const Trajectory traj = simulate(cfg);
    std::string body = "t,x,y,z,V\n";
    const std::size_t n = traj.record.V.size();
    for (std::size_t i = 0; i < n; ++i) {
        body += fmt(traj.t[i + 1]);
        body += ',';
        body += fmt(traj.bloch[i + 1].x);
        body += ',';
        body += fmt(traj.bloch[i + 1].y);
        body += ',';
        body += fmt(traj.bloch[i + 1].z);
        body += ',';
        body += fmt(traj.record.V[i]);
        body += '\n';
    }
    write_file_atomic(s.out, body);
    return {{s.out, n}};
}

inline std::vector<ArtifactInfo> run_ensemble(const ExperimentSpec& s) {
    const SmeConfig base = sme_config_of(s);
    const std::size_t n = as_count(s, "n");
    const std::size_t steps = base.n_steps();
    const std::uint64_t seed0 = kind_seed(s);
    std::vector<std::string> chunks(n);
    parallel_for_blocks(n, [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            SmeConfig cfg = base;
            cfg.seed = stream_seed(seed0, i);
            const Trajectory traj = simulate(cfg);
            std::string& out = chunks[i];
            const std::string id = std::to_string(i);
            for (std::size_t j = 0; j < steps; ++j) {
                out += id;
                out += ',';
                out += fmt(traj.t[j + 1]);
                out += ',';
                out += fmt(traj.bloch[j + 1].x);
                out += ',';
                out += fmt(traj.bloch[j + 1].y);
                out += ',';
                out += fmt(traj.bloch[j + 1].z);
                out += ',';
                out += fmt(traj.record.V[j]);
                out += '\n';
            }
        }
    });
    std::string body = "traj_id,t,x,y,z,V\n";
    for (const std::string& c : chunks) body += c;
    write_file_atomic(s.out, body);
    return {{s.out, n * steps}};
}

inline std::vector<ArtifactInfo> run_backaction_tomography(const ExperimentSpec& s) {
    const double S = s.num("S");
    const double eta = s.num("eta");
    const double tau = s.num("tau");
    const MeasurementParams p = as_spec_error([&] {
        MeasurementParams q;
        q.k = S / (16.0 * eta * tau);
        q.eta = eta;
        q.dt = tau;
        q.gamma = s.num("gamma");
        q.validate();
        return q;
    });
    const Quadrature quad = (s.str("quadrature") == "I") ? Quadrature::I : Quadrature::Q;
    const std::size_t n = as_count(s, "n");
    const std::size_t n_bins = as_count(s, "n_bins");
    const double v_max = s.num("v_max");
    const double width = 2.0 * v_max / static_cast<double>(n_bins);
    const std::uint64_t seed0 = kind_seed(s);

    struct Partial {
        std::vector<double> sx, sy, sz;
        std::vector<std::size_t> cnt;
    };
    const std::size_t n_blocks = (n + kParallelBlock - 1) / kParallelBlock;
    std::vector<Partial> parts(n_blocks);
    parallel_for_blocks(n, [&](std::size_t blk, std::size_t b, std::size_t e) {
        Partial part;
        part.sx.assign(n_bins, 0.0);
        part.sy.assign(n_bins, 0.0);
        part.sz.assign(n_bins, 0.0);
        part.cnt.assign(n_bins, 0);
        for (std::size_t i = b; i < e; ++i) {
            Rng rng(stream_seed(seed0, i));
            const QubitState st = QubitState::plus_x();
            double V = 0.0;
            QubitState post;
            if (quad == Quadrature::Q) {
                V = sample_outcome(st, p, rng);
                post = apply_backaction_z(st, V, p);
            } else {
                V = sample_phi_outcome(p, rng);
                post = apply_backaction_phi(st, V, p);
            }
            const double pos = (V + v_max) / width;
            if (pos < 0.0 || pos >= static_cast<double>(n_bins)) continue;
            const std::size_t bin = static_cast<std::size_t>(pos);
            part.sx[bin] += post.expect_x();
            part.sy[bin] += post.expect_y();
            part.sz[bin] += post.expect_z();
            part.cnt[bin] += 1;
        }
        parts[blk] = std::move(part);
    });

    std::vector<double> sx(n_bins, 0.0), sy(n_bins, 0.0), sz(n_bins, 0.0);
    std::vector<std::size_t> cnt(n_bins, 0);
    for (const Partial& part : parts) {
        if (part.cnt.empty()) continue;
        for (std::size_t b = 0; b < n_bins; ++b) {
            sx[b] += part.sx[b];
            sy[b] += part.sy[b];
            sz[b] += part.sz[b];
            cnt[b] += part.cnt[b];
        }
    }

    const double damp = p.residual_damping();  // one bin of duration tau
    std::string body = "V_m,count,x,y,z,x_pred,y_pred,z_pred\n";
    for (std::size_t b = 0; b < n_bins; ++b) {
        const double vm = -v_max + (static_cast<double>(b) + 0.5) * width;
        const double inv = cnt[b] > 0 ? 1.0 / static_cast<double>(cnt[b]) : 0.0;
        double xp = 0.0, yp = 0.0, zp = 0.0;
        if (quad == Quadrature::Q) {
            zp = std::tanh(vm * S / 4.0);
            xp = std::sqrt(std::max(0.0, 1.0 - zp * zp)) * damp;
        } else {
            xp = std::cos(vm * S / 4.0) * damp;
            yp = -std::sin(vm * S / 4.0) * damp;
        }
        body += fmt(vm);
        body += ',';
        body += std::to_string(cnt[b]);
        body += ',';
        body += fmt(sx[b] * inv);
        body += ',';
        body += fmt(sy[b] * inv);
        body += ',';
        body += fmt(sz[b] * inv);
        body += ',';
        body += fmt(xp);
        body += ',';
        body += fmt(yp);
        body += ',';
        body += fmt(zp);
        body += '\n';
    }
    write_file_atomic(s.out, body);
    return {{s.out, n_bins}};
}

inline std::vector<ArtifactInfo> run_conditional_tomography(const ExperimentSpec& s) {
    const SmeConfig cfg = sme_config_of(s);
    const Trajectory target = simulate(cfg);
    const std::size_t steps = cfg.n_steps();
    const std::size_t n_times = as_count(s, "n_times");
    const std::size_t n_runs = as_count(s, "n_runs");
    const double epsilon = s.num("epsilon");
    if (n_times > steps)
        throw spec_error("'n_times' exceeds the number of record bins (duration/dt)");

    std::vector<std::size_t> indices;
    for (std::size_t j = 0; j < n_times; ++j) {
        const std::size_t idx = static_cast<std::size_t>(std::llround(
            static_cast<double>(j + 1) * static_cast<double>(steps) / static_cast<double>(n_times)));
        indices.push_back(std::clamp<std::size_t>(idx, 1, steps));
    }
    for (std::size_t j = 1; j < indices.size(); ++j)
        if (indices[j] <= indices[j - 1])
            throw spec_error("'n_times' too large for this grid: verification times collide");

    std::string body = "t,x_target,z_target,x_tomo,z_tomo,se_x,se_z,n_matched\n";
    const std::uint64_t seed0 = kind_seed(s);
    for (std::size_t j = 0; j < indices.size(); ++j) {
        const std::size_t idx = indices[j];
        const TomographyResult r = conditional_tomography(
            target, epsilon, idx, n_runs, seed0 + 1 + j * (n_runs + 1));
        body += fmt(target.t[idx]);
        body += ',';
        body += fmt(target.bloch[idx].x);
        body += ',';
        body += fmt(target.bloch[idx].z);
        body += ',';
        body += fmt(r.x_tomo);
        body += ',';
        body += fmt(r.z_tomo);
        body += ',';
        body += fmt(r.se_x);
        body += ',';
        body += fmt(r.se_z);
        body += ',';
        body += std::to_string(r.n_matched);
        body += '\n';
    }
    write_file_atomic(s.out, body);
    return {{s.out, indices.size()}};
}

inline std::vector<ArtifactInfo> run_postselect_mlp(const ExperimentSpec& s) {
    const SmeConfig cfg = sme_config_of(s);
    const std::size_t n = as_count(s, "n");
    const std::vector<Trajectory> ens = ensemble(cfg, n, kind_seed(s));
    TargetWindow window;
    window.center = BlochVector{s.num("target_x"), 0.0, s.num("target_z")};
    window.epsilon = s.num("epsilon");
    const std::vector<std::size_t> selected = postselect(ens, window, cfg.n_steps());
    if (selected.empty())
        throw statistics_error("postselect-mlp: no trajectory ended inside the target window");
    const std::vector<PathPoint> path =
        most_likely_path(ens, selected, static_cast<std::size_t>(s.num("bins")));
    std::string body = "t,x,z\n";
    for (const PathPoint& pt : path) {
        body += fmt(pt.t);
        body += ',';
        body += fmt(pt.x);
        body += ',';
        body += fmt(pt.z);
        body += '\n';
    }
    write_file_atomic(s.out, body);
    return {{s.out, path.size()}};
}

inline std::vector<ArtifactInfo> run_past_state(const ExperimentSpec& s) {
    const SmeConfig cfg = sme_config_of(s);
    const Trajectory traj = simulate(cfg);
    const std::vector<EffectMatrix> eff = backward_effect(traj.record, cfg);
    const std::vector<Mat2> povm{Mat2::diag(1.0, 0.0), Mat2::diag(0.0, 1.0)};
    std::string body = "t,x,y,z,ex,ey,ez,p0_forward,p0_hindsight\n";
    for (std::size_t i = 0; i < traj.t.size(); ++i) {
        const QubitState rho = traj.state(i);
        const BlochVector eb = eff[i].bloch();
        const double p0f = born_probability(rho, povm)[0];
        const double p0h = hindsight_probability(rho, eff[i], povm)[0];
        body += fmt(traj.t[i]);
        body += ',';
        body += fmt(traj.bloch[i].x);
        body += ',';
        body += fmt(traj.bloch[i].y);
        body += ',';
        body += fmt(traj.bloch[i].z);
        body += ',';
        body += fmt(eb.x);
        body += ',';
        body += fmt(eb.y);
        body += ',';
        body += fmt(eb.z);
        body += ',';
        body += fmt(p0f);
        body += ',';
        body += fmt(p0h);
        body += '\n';
    }
    write_file_atomic(s.out, body);
    return {{s.out, traj.t.size()}};
}

inline std::vector<ArtifactInfo> run_feedback(const ExperimentSpec& s) {
    const FeedbackConfig fc = feedback_config_of(s);
    const std::size_t n = as_count(s, "n");
    const FeedbackEnsemble ens = feedback_ensemble(fc, n, kind_seed(s));
    std::string body = "t,x,z\n";
    for (std::size_t i = 0; i < ens.t.size(); ++i) {
        body += fmt(ens.t[i]);
        body += ',';
        body += fmt(ens.mean_x[i]);
        body += ',';
        body += fmt(ens.mean_z[i]);
        body += '\n';
    }
    write_file_atomic(s.out, body);
    return {{s.out, ens.t.size()}};
}

inline std::vector<ArtifactInfo> run_feedback_sweep(const ExperimentSpec& s) {
    FeedbackConfig fc = feedback_config_of(s);
    const std::size_t n = as_count(s, "n");
    const std::vector<double> Fs =
        linear_grid(s.num("F_min"), s.num("F_max"), as_count(s, "n_points"));
    double window_start = s.num("window_start");
    if (window_start < 0.0) window_start = 5.0 * unfedback_decay_time(fc.base.params);
    if (window_start >= fc.base.duration)
        throw spec_error("'window_start' (or 5 unfedback decay times) exceeds 'duration'");
    const std::vector<SweepPoint> sweep =
        efficiency_sweep(fc, Fs, n, kind_seed(s), window_start);
    std::string body = "F,D,D_stderr\n";
    for (const SweepPoint& pt : sweep) {
        body += fmt(pt.F);
        body += ',';
        body += fmt(pt.D);
        body += ',';
        body += fmt(pt.D_stderr);
        body += '\n';
    }
    write_file_atomic(s.out, body);
    return {{s.out, sweep.size()}};
}

inline std::vector<ArtifactInfo> run_paramp_transfer(const ExperimentSpec& s) {
    const DuffingParams base = duffing_params_of(s, s.num("omega_d"), s.num("F_min"));
    if (!(base.omega_d < base.omega0))
        throw spec_error("'omega_d' must be below 'omega0' for an ascending transfer sweep");
    const std::vector<double> Fs =
        linear_grid(s.num("F_min"), s.num("F_max"), as_count(s, "n_points"));
    const std::vector<std::pair<double, SteadyState>> curve = transfer_function(base, Fs);
    std::string body = "F_d,phase_deg\n";
    for (const auto& [F, st] : curve) {
        body += fmt(F);
        body += ',';
        body += fmt(st.phase * 180.0 / std::numbers::pi);
        body += '\n';
    }
    write_file_atomic(s.out, body);
    return {{s.out, curve.size()}};
}

inline std::vector<ArtifactInfo> run_paramp_phase_diagram(const ExperimentSpec& s) {
    const DuffingParams base = duffing_params_of(s, s.num("omega_d_min"), s.num("F_min"));
    const std::vector<double> wgrid =
        linear_grid(s.num("omega_d_min"), s.num("omega_d_max"), as_count(s, "n_omega"));
    const std::vector<double> Fgrid =
        linear_grid(s.num("F_min"), s.num("F_max"), as_count(s, "n_F"));
    const std::vector<BistabilityRow> rows = bistability_region(base, wgrid, Fgrid);
    std::string body = "omega_d,F_d_low,F_d_high\n";
    std::size_t n_rows = 0;
    for (const BistabilityRow& r : rows) {
        if (!r.bistable) continue;
        body += fmt(r.omega_d);
        body += ',';
        body += fmt(r.F_low);
        body += ',';
        body += fmt(r.F_high);
        body += '\n';
        ++n_rows;
    }
    write_file_atomic(s.out, body);
    return {{s.out, n_rows}};
}

inline std::vector<ArtifactInfo> run_paramp_gain(const ExperimentSpec& s) {
    const DuffingParams bias = duffing_params_of(s, s.num("omega_d"), s.num("F_d"));
    double amp = s.num("signal_amp");
    if (amp < 0.0) amp = 0.005 * bias.F_d;
    std::vector<double> phases;
    if (s.has("signal_phase")) {
        phases.push_back(s.num("signal_phase"));
    } else {
        for (int j = 0; j < 24; ++j) phases.push_back(j * 15.0 * std::numbers::pi / 180.0);
    }
    std::string body = "signal_phase_deg,gain_dB\n";
    for (double phi : phases) {
        const double g = small_signal_gain(bias, amp, phi);
        body += fmt(phi * 180.0 / std::numbers::pi);
        body += ',';
        body += fmt(g);
        body += '\n';
    }
    write_file_atomic(s.out, body);
    return {{s.out, phases.size()}};
}

}  // namespace detail

inline ResultManifest run(const ExperimentSpec& spec) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<ArtifactInfo> artifacts;
    if (spec.kind == "trajectory") artifacts = detail::run_trajectory(spec);
    else if (spec.kind == "ensemble") artifacts = detail::run_ensemble(spec);
    else if (spec.kind == "backaction-tomography") artifacts = detail::run_backaction_tomography(spec);
    else if (spec.kind == "conditional-tomography") artifacts = detail::run_conditional_tomography(spec);
    else if (spec.kind == "postselect-mlp") artifacts = detail::run_postselect_mlp(spec);
    else if (spec.kind == "past-state") artifacts = detail::run_past_state(spec);
    else if (spec.kind == "feedback") artifacts = detail::run_feedback(spec);
    else if (spec.kind == "feedback-sweep") artifacts = detail::run_feedback_sweep(spec);
    else if (spec.kind == "paramp-transfer") artifacts = detail::run_paramp_transfer(spec);
    else if (spec.kind == "paramp-phase-diagram") artifacts = detail::run_paramp_phase_diagram(spec);
    else if (spec.kind == "paramp-gain") artifacts = detail::run_paramp_gain(spec);
    else throw spec_error("unknown kind '" + spec.kind + "'; valid kinds: " + detail::valid_kinds_text());

    for (const ArtifactInfo& a : artifacts) {
        std::error_code ec;
        const auto size = std::filesystem::file_size(a.path, ec);
        if (ec || size == 0) throw error("artifact missing or empty: '" + a.path + "'");
    }

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    nlohmann::json doc;
    doc["spec"] = spec.echo;
    doc["version"] = version_string();
    doc["duration_seconds"] = secs;
    doc["artifacts"] = nlohmann::json::array();
    for (const ArtifactInfo& a : artifacts)
        doc["artifacts"].push_back({{"path", a.path}, {"rows", a.rows}});

    ResultManifest m;
    m.doc = doc;
    m.artifacts = artifacts;
    m.path = spec.out + ".manifest.json";
    detail::write_file_atomic(m.path, doc.dump(2) + "\n");
    return m;
}

}  // namespace qtraj
