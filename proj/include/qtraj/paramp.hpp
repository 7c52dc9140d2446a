// paramp.hpp — classical driven-damped Duffing oscillator model of a
// phase-sensitive parametric amplifier:
//
//     d²u/dt² + 2Γ du/dt + ω0²(u - u³/6) = F cos(ω_d t + drive phase).
//
// Steady states are obtained by fixed-step RK4 integration with per-period
// Fourier demodulation at the drive frequency; sweeps warm-start each point
// from the previous one (adiabatic continuation), which is what selects the
// branch inside the bistable window. The rotating-wave amplitude cubic
//     u[(β - αu)² + g²] = F²,   u = A², β = ω0²-ω_d², α = ω0²/8, g = 2Γω_d
// is exposed as an independent algebraic cross-check, and small-signal gain
// is defined on the reflected wave r = F - 4iΓω_d·c, whose perturbation
// scattering matrix is unimodular (gain in one quadrature forces
// de-amplification of the orthogonal one).
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qtraj/errors.hpp"

namespace qtraj {

struct DuffingParams {
    double omega0 = 0.0;   // linear resonance [rad/s]
    double Gamma = 0.0;    // amplitude damping [1/s]
    double omega_d = 0.0;  // drive frequency [rad/s]
    double F_d = 0.0;      // drive amplitude [rad²/s²]

    void validate() const {
        if (!(omega0 > 0.0 && Gamma > 0.0)) throw error("DuffingParams: omega0, Gamma must be > 0");
        if (!(Gamma <= omega0 / 10.0))
            throw error("DuffingParams: weak damping required (Gamma <= omega0/10)");
        if (!(omega_d > 0.0)) throw error("DuffingParams: omega_d must be positive");
        if (!(F_d >= 0.0)) throw error("DuffingParams: F_d must be nonnegative");
    }

    double beta() const { return omega0 * omega0 - omega_d * omega_d; }
    double alpha() const { return omega0 * omega0 / 8.0; }
    double g() const { return 2.0 * Gamma * omega_d; }
};

enum class Branch { low, high, monostable };

inline std::string to_string(Branch b) {
    switch (b) {
        case Branch::low: return "low";
        case Branch::high: return "high";
        default: return "monostable";
    }
}

struct SteadyState {
    double amplitude = 0.0;  // |c| of u(t) ≈ Re[c e^{i ω_d t}]  [rad]
    double phase = 0.0;      // arg(c) relative to the drive, in (-π, π]
    Branch branch = Branch::monostable;
    double periods = 0.0;    // drive periods integrated until convergence

    std::complex<double> response() const {
        return std::polar(amplitude, phase);
    }
};

struct DuffingOptions {
    int steps_per_period = 64;   // RK4 resolution; >= 40·ω0/ω_d required
    double tol = 1e-6;           // relative per-period stationarity
    double horizon_gammas = 30;  // time budget in units of 1/Γ
    int stable_periods = 3;      // consecutive stationary periods required
};

// --- rotating-wave amplitude cubic (algebraic cross-check) ----------------

// Real roots of the cubic in u = A²:  α²u³ - 2αβu² + (β²+g²)u - F² = 0,
// returned ascending. One root = monostable response; three = bistable.
inline std::vector<double> duffing_response_u_roots(const DuffingParams& p) {
    const double a = p.alpha() * p.alpha();
    const double b = -2.0 * p.alpha() * p.beta();
    const double c = p.beta() * p.beta() + p.g() * p.g();
    const double d = -p.F_d * p.F_d;
    // Normalized: u³ + B u² + C u + D.
    const double B = b / a, C = c / a, D = d / a;
    // Depressed: t³ + P t + Q with u = t - B/3.
    const double P = C - B * B / 3.0;
    const double Q = 2.0 * B * B * B / 27.0 - B * C / 3.0 + D;
    const double disc = Q * Q / 4.0 + P * P * P / 27.0;
    std::vector<double> roots;
    if (disc > 0.0) {
        const double sq = std::sqrt(disc);
        const double w1 = std::cbrt(-Q / 2.0 + sq);
        const double w2 = std::cbrt(-Q / 2.0 - sq);
        roots.push_back(w1 + w2 - B / 3.0);
    } else {
        // Three real roots (trigonometric form).
        const double r = std::sqrt(-P * P * P / 27.0);
        const double phi = std::acos(std::clamp(-Q / (2.0 * r), -1.0, 1.0));
        const double m = 2.0 * std::sqrt(-P / 3.0);
        for (int k = 0; k < 3; ++k)
            roots.push_back(m * std::cos((phi + 2.0 * std::numbers::pi * k) / 3.0) - B / 3.0);
    }
    std::vector<double> out;
    for (double u : roots) {
        // One Newton polish on the original cubic.
        for (int it = 0; it < 2; ++it) {
            const double f = ((a * u + b) * u + c) * u + d;
            const double fp = (3.0 * a * u + 2.0 * b) * u + c;
            if (fp != 0.0) u -= f / fp;
        }
        if (u > 0.0) out.push_back(u);
    }
    std::sort(out.begin(), out.end());
    // Dedupe near-coincident roots.
    std::vector<double> uniq;
    for (double u : out)
        if (uniq.empty() || u - uniq.back() > 1e-9 * std::max(1.0, u)) uniq.push_back(u);
    return uniq;
}

inline std::vector<double> duffing_response_amplitudes(const DuffingParams& p) {
    std::vector<double> out;
    for (double u : duffing_response_u_roots(p)) out.push_back(std::sqrt(u));
    return out;
}

// Algebraic bistable drive window at fixed ω_d: fold drives [F_low, F_high]
// from the extrema of F²(u) = u[(β-αu)²+g²]. Empty when β ≤ √3·g, i.e.
// (in the narrow-resonance limit) detuning below √3·Γ.
inline std::optional<std::pair<double, double>> duffing_bistable_window(const DuffingParams& p) {
    const double beta = p.beta(), g = p.g(), alpha = p.alpha();
    const double disc = beta * beta - 3.0 * g * g;
    if (!(beta > 0.0) || disc <= 0.0) return std::nullopt;
    const double sq = std::sqrt(disc);
    const double u_max = (2.0 * beta - sq) / (3.0 * alpha);  // local max of F²(u)
    const double u_min = (2.0 * beta + sq) / (3.0 * alpha);  // local min of F²(u)
    auto F_at = [&](double u) {
        const double det = beta - alpha * u;
        return std::sqrt(u * (det * det + g * g));
    };
    return std::make_pair(F_at(u_min), F_at(u_max));
}

// --- time-domain steady state ---------------------------------------------

namespace detail {

struct DuffingSolve {
    SteadyState state;
    std::array<double, 2> end = {0.0, 0.0};  // (u, du/dt) at the final time
    bool converged = false;
};

// Integrate with complex drive amplitude Fc: F(t) = Re[Fc e^{i ω_d t}] =
// |Fc| cos(ω_d t + arg Fc); demodulate u(t) at ω_d per period until the
// Fourier coefficient is stationary.
inline DuffingSolve duffing_solve(const DuffingParams& p, std::complex<double> Fc,
                                  std::array<double, 2> init, const DuffingOptions& opt,
                                  bool throw_on_nonconvergence = true) {
    p.validate();
    const int N = opt.steps_per_period;
    if (N < static_cast<int>(std::ceil(40.0 * p.omega0 / p.omega_d)))
        throw error("duffing_solve: steps_per_period too coarse for the RK4 tolerance");
    const double T = 2.0 * std::numbers::pi / p.omega_d;
    const double h = T / static_cast<double>(N);
    const double Fa = std::abs(Fc);
    const double Fphi = (Fa > 0.0) ? std::arg(Fc) : 0.0;
    const double w02 = p.omega0 * p.omega0;

    auto accel = [&](double t, double u, double v) {
        return Fa * std::cos(p.omega_d * t + Fphi) - 2.0 * p.Gamma * v -
               w02 * (u - u * u * u / 6.0);
    };

    const long max_periods =
        std::max<long>(opt.stable_periods + 2,
                       static_cast<long>(std::ceil(opt.horizon_gammas / (p.Gamma * T))));
    double u = init[0], v = init[1];
    double t = 0.0;
    std::complex<double> c_prev{0.0, 0.0};
    int stable = 0;
    SteadyState ss;
    for (long period = 0; period < max_periods; ++period) {
        // Trapezoidal Fourier projection over one period on the RK4 grid
        // (spectrally accurate once the motion is periodic).
        std::complex<double> acc{0.0, 0.0};
        for (int j = 0; j < N; ++j) {
            const std::complex<double> w0 = u * std::exp(std::complex<double>(0.0, -p.omega_d * t));
            // RK4 step for (u, v).
            const double k1u = v, k1v = accel(t, u, v);
            const double k2u = v + 0.5 * h * k1v, k2v = accel(t + 0.5 * h, u + 0.5 * h * k1u, v + 0.5 * h * k1v);
            const double k3u = v + 0.5 * h * k2v, k3v = accel(t + 0.5 * h, u + 0.5 * h * k2u, v + 0.5 * h * k2v);
            const double k4u = v + h * k3v, k4v = accel(t + h, u + h * k3u, v + h * k3v);
            u += h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
            v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            t += h;
            const std::complex<double> w1 = u * std::exp(std::complex<double>(0.0, -p.omega_d * t));
            acc += 0.5 * (w0 + w1) * h;
        }
        const std::complex<double> c = acc * (2.0 / T);
        const double scale = std::max(std::abs(c), 1e-12);
        if (std::abs(c - c_prev) < opt.tol * scale) {
            if (++stable >= opt.stable_periods) {
                ss.amplitude = std::abs(c);
                ss.phase = std::arg(c);
                if (ss.phase <= -std::numbers::pi) ss.phase = std::numbers::pi;
                ss.periods = static_cast<double>(period + 1);
                return DuffingSolve{ss, {u, v}, true};
            }
        } else {
            stable = 0;
        }
        c_prev = c;
    }
    ss.amplitude = std::abs(c_prev);
    ss.phase = (std::abs(c_prev) > 0.0) ? std::arg(c_prev) : 0.0;
    ss.periods = static_cast<double>(max_periods);
    if (throw_on_nonconvergence)
        throw convergence_error("duffing_solve: envelope not stationary after " +
                                std::to_string(max_periods) + " periods (last amplitude " +
                                std::to_string(ss.amplitude) + ")");
    return DuffingSolve{ss, {u, v}, false};
}

inline Branch classify_branch(const DuffingParams& p, double amplitude) {
    const std::vector<double> amps = duffing_response_amplitudes(p);
    if (amps.size() < 3) return Branch::monostable;
    return (std::abs(amplitude - amps.front()) <= std::abs(amplitude - amps.back()))
               ? Branch::low
               : Branch::high;
}

}  // namespace detail

// Steady-state response from the given initial conditions.
inline SteadyState duffing_steady_state(const DuffingParams& p,
                                        std::array<double, 2> init = {0.0, 0.0},
                                        const DuffingOptions& opt = {}) {
    detail::DuffingSolve sol = detail::duffing_solve(p, std::complex<double>{p.F_d, 0.0}, init, opt);
    sol.state.branch = detail::classify_branch(p, sol.state.amplitude);
    return sol.state;
}

// Adiabatic drive-amplitude sweep at fixed ω_d: each point continues from
// the previous point's end state.
inline std::vector<std::pair<double, SteadyState>> transfer_function(
    const DuffingParams& base, const std::vector<double>& F_sweep,
    const DuffingOptions& opt = {}) {
    if (F_sweep.size() < 2) throw error("transfer_function: need at least 2 sweep points");
    for (std::size_t i = 1; i < F_sweep.size(); ++i)
        if (!(F_sweep[i] > F_sweep[i - 1]))
            throw error("transfer_function: sweep must be strictly ascending");
    if (!(base.omega_d < base.omega0))
        throw error("transfer_function: drive must be below resonance (softening side)");

    std::vector<std::pair<double, SteadyState>> out;
    out.reserve(F_sweep.size());
    std::array<double, 2> state = {0.0, 0.0};
    for (double F : F_sweep) {
        DuffingParams p = base;
        p.F_d = F;
        detail::DuffingSolve sol =
            detail::duffing_solve(p, std::complex<double>{F, 0.0}, state, opt);
        state = sol.end;
        sol.state.branch = detail::classify_branch(p, sol.state.amplitude);
        out.emplace_back(F, sol.state);
    }
    return out;
}

struct BistabilityRow {
    double omega_d = 0.0;
    bool bistable = false;
    double F_low = 0.0;   // smallest drive with branch disagreement
    double F_high = 0.0;  // largest drive with branch disagreement
};

// Hysteresis map: for each ω_d, sweep the drive up then down and mark where
// the two branches disagree by more than 5× the tolerance. The solver's
// stationarity test bounds the per-period change by tol, but a transient
// decaying at rate Γ per unit time changes by only a fraction 1−e^(−ΓT) of
// itself per period, so a per-period bound of tol only pins the limit to
// within ~tol/(1−e^(−ΓT)). The sweeps therefore run at an internal tolerance
// tightened by that settle factor (and a safety margin for critical slowing
// near the folds), making "5× tol" a genuine limit-accuracy comparison.
inline std::vector<BistabilityRow> bistability_region(const DuffingParams& base,
                                                      const std::vector<double>& omega_d_grid,
                                                      const std::vector<double>& F_grid,
                                                      const DuffingOptions& opt = {}) {
    if (omega_d_grid.empty() || F_grid.size() < 2)
        throw error("bistability_region: need a nonempty grid");
    std::vector<BistabilityRow> rows;
    rows.reserve(omega_d_grid.size());
    for (double wd : omega_d_grid) {
        DuffingParams p = base;
        p.omega_d = wd;
        const double period = 2.0 * std::numbers::pi / wd;
        const double settle = -std::expm1(-p.Gamma * period);
        DuffingOptions strict = opt;
        strict.tol = opt.tol * std::min(1.0, settle) * 0.2;
        std::vector<double> up(F_grid.size()), down(F_grid.size());
        std::array<double, 2> state = {0.0, 0.0};
        for (std::size_t j = 0; j < F_grid.size(); ++j) {
            p.F_d = F_grid[j];
            detail::DuffingSolve sol =
                detail::duffing_solve(p, std::complex<double>{p.F_d, 0.0}, state, strict);
            state = sol.end;
            up[j] = sol.state.amplitude;
        }
        for (std::size_t j = F_grid.size(); j-- > 0;) {
            p.F_d = F_grid[j];
            detail::DuffingSolve sol =
                detail::duffing_solve(p, std::complex<double>{p.F_d, 0.0}, state, strict);
            state = sol.end;
            down[j] = sol.state.amplitude;
        }
        BistabilityRow row;
        row.omega_d = wd;
        for (std::size_t j = 0; j < F_grid.size(); ++j) {
            const double scale = std::max({up[j], down[j], 1e-12});
            if (std::abs(up[j] - down[j]) > 5.0 * opt.tol * scale) {
                if (!row.bistable) row.F_low = F_grid[j];
                row.F_high = F_grid[j];
                row.bistable = true;
            }
        }
        rows.push_back(row);
    }
    return rows;
}

// --- small-signal gain ------------------------------------------------------

// Reflected wave associated with the one-port model: r = F - 4iΓω_d·c. In
// the linear regime |r| = |F| identically, so gains are referenced to 0 dB
// without an auxiliary calibration run.
inline std::complex<double> reflected_wave(const DuffingParams& p, std::complex<double> Fc,
                                           std::complex<double> c) {
    return Fc - std::complex<double>(0.0, 4.0 * p.Gamma * p.omega_d) * c;
}

// Small-signal gain at the given bias: add a signal of amplitude f and
// phase φ (relative to the pump) at the pump frequency, re-solve the steady
// state from a warm start, and compare the reflected-wave change to the
// injected signal:  gain = 20·log10( |Δr| / f ).
inline double small_signal_gain(const DuffingParams& bias, double signal_amp, double signal_phase,
                                const DuffingOptions& opt = {}) {
    bias.validate();
    if (!(bias.F_d > 0.0)) throw error("small_signal_gain: bias drive must be positive");
    if (!(signal_amp > 0.0 && signal_amp <= 0.01 * bias.F_d))
        throw error("small_signal_gain: signal must be positive and at most 1% of the pump");
    if (duffing_response_u_roots(bias).size() >= 3)
        throw error("small_signal_gain: bias point lies in the bistable region");

    const detail::DuffingSolve base =
        detail::duffing_solve(bias, std::complex<double>{bias.F_d, 0.0}, {0.0, 0.0}, opt);
    const std::complex<double> dF = std::polar(signal_amp, signal_phase);
    const detail::DuffingSolve plus =
        detail::duffing_solve(bias, std::complex<double>{bias.F_d, 0.0} + dF, base.end, opt);
    const detail::DuffingSolve minus =
        detail::duffing_solve(bias, std::complex<double>{bias.F_d, 0.0} - dF, base.end, opt);
    const std::complex<double> dc =
        0.5 * (plus.state.response() - minus.state.response());
    const std::complex<double> dr = dF - std::complex<double>(0.0, 4.0 * bias.Gamma * bias.omega_d) * dc;
    return 20.0 * std::log10(std::abs(dr) / signal_amp);
}

// Real 2x2 scattering matrix of reflected-wave perturbations, measured by
// finite differences along the two pump-anchored input quadratures. Its
// determinant is 1 up to numerical error, so amplification of one input
// quadrature implies de-amplification of the orthogonal one.
inline std::array<double, 4> scattering_matrix(const DuffingParams& bias, double signal_amp,
                                               const DuffingOptions& opt = {}) {
    bias.validate();
    if (!(signal_amp > 0.0 && signal_amp <= 0.01 * bias.F_d))
        throw error("scattering_matrix: signal must be positive and at most 1% of the pump");
    if (duffing_response_u_roots(bias).size() >= 3)
        throw error("scattering_matrix: bias point lies in the bistable region");
    const detail::DuffingSolve base =
        detail::duffing_solve(bias, std::complex<double>{bias.F_d, 0.0}, {0.0, 0.0}, opt);
    std::array<double, 4> S{};
    for (int col = 0; col < 2; ++col) {
        const std::complex<double> dF = (col == 0) ? std::complex<double>{signal_amp, 0.0}
                                                   : std::complex<double>{0.0, signal_amp};
        const detail::DuffingSolve plus = detail::duffing_solve(
            bias, std::complex<double>{bias.F_d, 0.0} + dF, base.end, opt);
        const detail::DuffingSolve minus = detail::duffing_solve(
            bias, std::complex<double>{bias.F_d, 0.0} - dF, base.end, opt);
        const std::complex<double> dc = 0.5 * (plus.state.response() - minus.state.response());
        const std::complex<double> dr =
            dF - std::complex<double>(0.0, 4.0 * bias.Gamma * bias.omega_d) * dc;
        S[0 * 2 + col] = dr.real() / signal_amp;
        S[1 * 2 + col] = dr.imag() / signal_amp;
    }
    return S;
}

inline double gain_from_scattering(const std::array<double, 4>& S, double signal_phase) {
    const double c = std::cos(signal_phase), s = std::sin(signal_phase);
    const double re = S[0] * c + S[1] * s;
    const double im = S[2] * c + S[3] * s;
    return 20.0 * std::log10(std::hypot(re, im));
}

}  // namespace qtraj
