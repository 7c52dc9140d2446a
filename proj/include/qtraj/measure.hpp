// measure.hpp — discrete weak measurements of a qubit: Gaussian POVM
// construction, outcome sampling, conditional backaction for the two
// homodyne quadratures, and a two-qubit indirect-measurement demo.
//
// Record convention: outcomes V are dimensionless with means ±1 for the two
// z eigenstates. A bin of duration dt at strength k and efficiency eta has
// outcome variance a² = 1/(4·k·eta·dt); the dimensionless signal-to-noise of
// an integration window tau is S = 16·k·eta·tau = 4/a²(tau).
#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "qtraj/errors.hpp"
#include "qtraj/qstate.hpp"
#include "qtraj/rng.hpp"

namespace qtraj {

// Outcome probabilities below this are treated as impossible rather than
// renormalized into garbage.
inline constexpr double kImpossibleOutcome = 1e-300;

struct MeasurementParams {
    double k = 0.0;      // measurement strength [1/s]
    double eta = 1.0;    // detector quantum efficiency, in (0, 1]
    double dt = 0.0;     // bin duration [s]
    double gamma = 0.0;  // environmental dephasing rate [1/s]

    void validate() const {
        if (!(k > 0.0)) throw error("MeasurementParams: k must be positive");
        if (!(eta > 0.0 && eta <= 1.0)) throw error("MeasurementParams: eta must be in (0, 1]");
        if (!(dt > 0.0)) throw error("MeasurementParams: dt must be positive");
        if (!(gamma >= 0.0)) throw error("MeasurementParams: gamma must be nonnegative");
    }

    double a2() const { return 1.0 / (4.0 * k * eta * dt); }      // outcome variance
    double tau_c() const { return 1.0 / (4.0 * k * eta); }        // char. measurement time
    double snr(double tau) const { return 16.0 * k * eta * tau; }  // S over a window tau
    double bin_snr() const { return snr(dt); }                     // S of one bin = 4/a²

    // Off-diagonal damping per bin from information NOT captured by the
    // POVM update: undetected measurement dephasing 2k(1-eta) plus
    // environmental dephasing gamma.
    double residual_damping() const { return std::exp(-(2.0 * k * (1.0 - eta) + gamma) * dt); }

    MeasurementParams with_eta(double new_eta) const {
        MeasurementParams q = *this;
        q.eta = new_eta;
        return q;
    }
};

// Derive bin-level measurement parameters from hardware-level numbers.
inline MeasurementParams measurement_params(const CqedParams& c, double dt) {
    c.validate();
    if (!(dt > 0.0)) throw error("measurement_params: dt must be positive");
    return MeasurementParams{c.measurement_strength(), c.eta, dt, c.gamma};
}

// Which homodyne quadrature the record refers to: Q carries sigma_z
// information, I carries only phase kicks.
enum class Quadrature { Q, I };

inline std::string to_string(Quadrature q) { return q == Quadrature::Q ? "Q" : "I"; }

// Gaussian measurement operator for outcome V: diagonal with entries
// (2πa²)^(-1/4)·exp(-(V∓1)²/4a²). The pair over all V resolves the identity.
struct PovmOperator {
    Mat2 matrix;
    double outcome = 0.0;

    double weight0() const { return matrix(0, 0).real(); }
    double weight1() const { return matrix(1, 1).real(); }
};

inline PovmOperator povm_operator(double V, const MeasurementParams& p) {
    const double a2 = p.a2();
    const double norm = std::pow(2.0 * std::numbers::pi * a2, -0.25);
    const double w0 = norm * std::exp(-(V - 1.0) * (V - 1.0) / (4.0 * a2));
    const double w1 = norm * std::exp(-(V + 1.0) * (V + 1.0) / (4.0 * a2));
    return PovmOperator{Mat2::diag(w0, w1), V};
}

inline double gaussian_pdf(double x, double mean, double variance) {
    const double d = x - mean;
    return std::exp(-d * d / (2.0 * variance)) / std::sqrt(2.0 * std::numbers::pi * variance);
}

// P(V) = Tr(Ω_V ρ Ω_V†): two Gaussians at ±1 weighted by the populations.
inline double outcome_pdf(const QubitState& s, const MeasurementParams& p, double V) {
    const double a2 = p.a2();
    return s.rho00() * gaussian_pdf(V, 1.0, a2) + s.rho11() * gaussian_pdf(V, -1.0, a2);
}

// Draw V from outcome_pdf: pick the ±1 branch by population, then add
// Gaussian noise of variance a².
inline double sample_outcome(const QubitState& s, const MeasurementParams& p, Rng& rng) {
    const double center = (rng.uniform() < s.rho00()) ? 1.0 : -1.0;
    return center + std::sqrt(p.a2()) * rng.normal();
}

namespace detail {

// Exact Bayesian update ρ → Ω_V ρ Ω_V†/P(V) for the z-quadrature POVM,
// written in a form with no overflowable exponentials:
//   ρ00' ∝ ρ00·e^{+t},  ρ11' ∝ ρ11·e^{-t},  ρ01' = ρ01/(ρ00 e^{t} + ρ11 e^{-t})
// with t = V/a². Keeps coherence angle arg(ρ01) exact; maps pure states to
// pure states for every V.
inline QubitState bayes_update_z(const QubitState& s, double t) {
    const double r00 = s.rho00();
    const double r11 = s.rho11();
    const cplx r01 = s.rho01();
    const double emt = std::exp(-std::abs(t));
    double p0 = 0.0, p1 = 0.0, scale01 = 0.0;
    if (t >= 0.0) {
        const double den = r00 + r11 * emt * emt;  // e^{-t}·(ρ00 e^{t} + ρ11 e^{-t})
        if (den < kImpossibleOutcome)
            throw outcome_error("measurement outcome has vanishing probability");
        p0 = r00 / den;
        p1 = 1.0 - p0;
        scale01 = emt / den;
    } else {
        const double den = r00 * emt * emt + r11;
        if (den < kImpossibleOutcome)
            throw outcome_error("measurement outcome has vanishing probability");
        p1 = r11 / den;
        p0 = 1.0 - p1;
        scale01 = emt / den;
    }
    QubitState out;
    out.rho = Mat2{{cplx{p0}, r01 * scale01, std::conj(r01 * scale01), cplx{p1}}};
    return out;
}

// Conditional phase kick of the I-quadrature measurement: rotation about z
// by theta mapping (x, y) = (1, 0) to (cos theta, -sin theta). `flip`
// reverses the rotation sense (the convention is not physically fixed).
inline QubitState rotate_about_z(const QubitState& s, double theta, bool flip = false) {
    if (flip) theta = -theta;
    // ρ01' = e^{+iθ}ρ01  ⇔  x' = x cosθ + y sinθ, y' = y cosθ - x sinθ.
    const cplx phase{std::cos(theta), std::sin(theta)};
    QubitState out = s;
    out.rho(0, 1) = s.rho(0, 1) * phase;
    out.rho(1, 0) = std::conj(out.rho(0, 1));
    return out;
}

// Multiply the off-diagonals by a real factor in [0, 1].
inline QubitState damp_coherence(const QubitState& s, double factor) {
    QubitState out = s;
    out.rho(0, 1) *= factor;
    out.rho(1, 0) *= factor;
    return out;
}

}  // namespace detail

// Conditional state update for a z-quadrature (informational) outcome V:
// exact POVM conditioning at efficiency eta, then one residual damping
// factor exp(-(2k(1-eta)+gamma)·dt) for the undetected information.
inline QubitState apply_backaction_z(const QubitState& s, double V, const MeasurementParams& p) {
    if (outcome_pdf(s, p, V) < kImpossibleOutcome)
        throw outcome_error("apply_backaction_z: outcome V = " + std::to_string(V) +
                            " has vanishing probability");
    QubitState out = detail::bayes_update_z(s, V / p.a2());
    out = detail::damp_coherence(out, p.residual_damping());
    return repair_positivity(out);
}

// Conditional state update for an I-quadrature (phase) outcome V: rotation
// about z by V·S_bin/4 = V/a², plus the same residual damping. z is exactly
// invariant. The record carries no sigma_z information.
inline QubitState apply_backaction_phi(const QubitState& s, double V, const MeasurementParams& p,
                                       bool flip_rotation = false) {
    QubitState out = detail::rotate_about_z(s, V / p.a2(), flip_rotation);
    out = detail::damp_coherence(out, p.residual_damping());
    return repair_positivity(out);
}

// Marginal distribution of the I-quadrature record: state-independent
// Gaussian centered at 0 with the same variance a².
inline double sample_phi_outcome(const MeasurementParams& p, Rng& rng) {
    return std::sqrt(p.a2()) * rng.normal();
}

// Phase-preserving (dual-quadrature) update: the information budget is
// split evenly, so each quadrature conditions at efficiency eta/2, and the
// residual damping for the TOTAL process is applied exactly once. (Applying
// the two single-quadrature ops verbatim would double-count the undetected
// dephasing and destroy purity even at eta = 1.)
inline QubitState apply_backaction_dual(const QubitState& s, double V_Q, double V_I,
                                        const MeasurementParams& p,
                                        bool flip_rotation = false) {
    const MeasurementParams half = p.with_eta(p.eta / 2.0);
    if (outcome_pdf(s, half, V_Q) < kImpossibleOutcome)
        throw outcome_error("apply_backaction_dual: outcome V_Q = " + std::to_string(V_Q) +
                            " has vanishing probability");
    QubitState out = detail::bayes_update_z(s, V_Q / half.a2());
    out = detail::rotate_about_z(out, V_I / half.a2(), flip_rotation);
    out = detail::damp_coherence(out, p.residual_damping());
    return repair_positivity(out);
}

// --- didactic two-qubit indirect measurement ------------------------------

enum class EnvBasis { z, y };
enum class EnvOutcome { plus, minus };

struct IndirectResult {
    TwoQubitState entangled;  // joint state before the environment readout
    QubitState system;        // conditional system state after readout
    double probability = 0.0; // probability of the chosen outcome
};

// System qubit starts in |+x>; a brief interaction of strength eps entangles
// it with an environment qubit; the environment is then read out
// projectively in the chosen basis. z readout shifts the populations;
// y readout imprints the exact phase ∓2·atan(eps) (the small-eps limit of
// which is the familiar ∓2·eps).
inline IndirectResult indirect_two_qubit(double eps, EnvBasis basis, EnvOutcome outcome) {
    if (std::abs(eps) > 0.3)
        throw error("indirect_two_qubit: |eps| must be <= 0.3 (weak-interaction regime)");

    // Basis order {|00>, |01>, |10>, |11>}, system qubit first:
    // |Psi> ∝ [(1+eps)|0> + (1-eps)|1>]⊗|0>_env + [(1-eps)|0> + (1+eps)|1>]⊗|1>_env.
    TwoQubitState joint;
    joint.psi = {cplx{1.0 + eps}, cplx{1.0 - eps}, cplx{1.0 - eps}, cplx{1.0 + eps}};
    joint.normalize();

    // Environment-outcome bra coefficients (e0, e1) such that the
    // unnormalized conditional system state is a_s = e0*·psi_{s0} + e1*·psi_{s1}.
    cplx e0{1.0}, e1{0.0};
    const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    switch (basis) {
        case EnvBasis::z:
            e0 = (outcome == EnvOutcome::plus) ? cplx{1.0} : cplx{0.0};
            e1 = (outcome == EnvOutcome::plus) ? cplx{0.0} : cplx{1.0};
            break;
        case EnvBasis::y:
            // |y±> = (|0> ± i|1>)/√2.
            e0 = cplx{inv_sqrt2};
            e1 = (outcome == EnvOutcome::plus) ? cplx{0.0, inv_sqrt2} : cplx{0.0, -inv_sqrt2};
            break;
    }

    const cplx a0 = std::conj(e0) * joint.psi[0] + std::conj(e1) * joint.psi[1];
    const cplx a1 = std::conj(e0) * joint.psi[2] + std::conj(e1) * joint.psi[3];
    const double prob = std::norm(a0) + std::norm(a1);
    if (prob < kImpossibleOutcome)
        throw outcome_error("indirect_two_qubit: outcome has vanishing probability");

    QubitState sys;
    sys.rho = Mat2{{a0 * std::conj(a0) / prob, a0 * std::conj(a1) / prob,
                    a1 * std::conj(a0) / prob, a1 * std::conj(a1) / prob}};
    return IndirectResult{joint, sys, prob};
}

}  // namespace qtraj
