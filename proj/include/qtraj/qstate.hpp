// qstate.hpp — qubit state algebra: density matrices, Bloch vectors, and the
// cQED parameter model.
//
// The density matrix is the canonical representation; Bloch vectors are a
// view of it. All types are immutable values and all operations are pure.
#pragma once

#include <cmath>
#include <string>

#include "qtraj/errors.hpp"
#include "qtraj/mat2.hpp"

namespace qtraj {

inline constexpr double kHermitianTol = 1e-12;
inline constexpr double kTraceTol = 1e-12;
inline constexpr double kBlochNormTol = 1e-10;
// Stochastic updates may push |r| above 1 by floating-point drift; up to this
// much is silently rescaled, anything larger is an integration failure.
inline constexpr double kPositivityRepairTol = 1e-8;

struct BlochVector {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

// Two-level state as a 2x2 density matrix. Hermitian, unit trace, positive.
struct QubitState {
    Mat2 rho = Mat2::diag(1.0, 0.0);

    double rho00() const { return rho(0, 0).real(); }
    double rho11() const { return rho(1, 1).real(); }
    cplx rho01() const { return rho(0, 1); }

    double expect_x() const { return 2.0 * rho(0, 1).real(); }
    double expect_y() const { return -2.0 * rho(0, 1).imag(); }
    double expect_z() const { return (rho(0, 0) - rho(1, 1)).real(); }

    static QubitState ground() { return {Mat2::diag(1.0, 0.0)}; }        // |0><0|, z = +1
    static QubitState excited() { return {Mat2::diag(0.0, 1.0)}; }       // |1><1|, z = -1
    static QubitState plus_x() {
        return {Mat2{{cplx{0.5}, cplx{0.5}, cplx{0.5}, cplx{0.5}}}};
    }
    static QubitState maximally_mixed() { return {Mat2::diag(0.5, 0.5)}; }

    bool is_valid(double pos_tol = kBlochNormTol) const {
        const bool hermitian = std::abs(rho(0, 0).imag()) <= kHermitianTol &&
                               std::abs(rho(1, 1).imag()) <= kHermitianTol &&
                               std::abs(rho(0, 1) - std::conj(rho(1, 0))) <= kHermitianTol;
        const bool unit_trace = std::abs(rho.trace() - cplx{1.0}) <= kTraceTol;
        const double r2 = expect_x() * expect_x() + expect_y() * expect_y() +
                          expect_z() * expect_z();
        return hermitian && unit_trace && r2 <= 1.0 + 2.0 * pos_tol;
    }

    void require_valid(const char* where) const {
        if (!is_valid()) throw error(std::string(where) + ": invalid qubit state");
    }
};

inline BlochVector bloch_of(const QubitState& s) {
    return {s.expect_x(), s.expect_y(), s.expect_z()};
}

inline QubitState state_of(const BlochVector& b) {
    const double n = b.norm();
    if (n > 1.0 + kBlochNormTol)
        throw error("state_of: Bloch vector outside the unit ball (|r| = " + std::to_string(n) +
                    ")");
    QubitState s;
    s.rho = Mat2{{cplx{0.5 * (1.0 + b.z)}, 0.5 * cplx{b.x, -b.y},
                  0.5 * cplx{b.x, b.y}, cplx{0.5 * (1.0 - b.z)}}};
    return s;
}

// Tr(rho^2) in [1/2, 1]; equals (1 + |r|^2)/2.
inline double purity(const QubitState& s) {
    return (s.rho * s.rho).trace().real();
}

// Enforce exact Hermiticity/unit trace and the Bloch-ball bound after a
// stochastic update. Overshoot beyond the repair tolerance is not physics
// and must surface as a step-size failure rather than be hidden.
inline QubitState repair_positivity(const QubitState& s) {
    BlochVector b = bloch_of(s);
    const double n = b.norm();
    if (n > 1.0) {
        if (n > 1.0 + kPositivityRepairTol)
            throw step_error("positivity violated beyond repair tolerance (|r| = " +
                             std::to_string(n) + "); reduce the time step");
        b.x /= n;
        b.y /= n;
        b.z /= n;
    }
    return state_of(b);
}

// Pure two-qubit state |system> (x) |environment>, basis order
// {|00>, |01>, |10>, |11>} with the system qubit first.
struct TwoQubitState {
    std::array<cplx, 4> psi{};

    double norm() const {
        return std::sqrt(std::norm(psi[0]) + std::norm(psi[1]) + std::norm(psi[2]) +
                         std::norm(psi[3]));
    }

    void normalize() {
        const double n = norm();
        if (n < 1e-300) throw outcome_error("two-qubit state has vanishing norm");
        for (auto& c : psi) c /= n;
    }
};

// Hardware-level cQED parameters. chi/nbar/kappa/eta/gamma drive the
// measurement model; the remaining frequencies are informational.
struct CqedParams {
    double chi = 0.0;      // dispersive shift [rad/s]
    double nbar = 0.0;     // mean intracavity photon number
    double kappa = 0.0;    // cavity linewidth [rad/s]
    double eta = 1.0;      // quantum efficiency, in (0, 1]
    double gamma = 0.0;    // environmental dephasing [1/s]
    double omega01 = 0.0;  // qubit transition frequency [rad/s]
    double omegac = 0.0;   // cavity frequency [rad/s]
    double g = 0.0;        // qubit-cavity coupling [rad/s]
    double Delta = 0.0;    // qubit-cavity detuning [rad/s]

    void validate() const {
        if (!(chi >= 0.0 && nbar >= 0.0 && kappa >= 0.0 && gamma >= 0.0))
            throw error("CqedParams: chi, nbar, kappa, gamma must be nonnegative");
        if (!(eta > 0.0 && eta <= 1.0)) throw error("CqedParams: eta must be in (0, 1]");
    }

    // Measurement strength k such that S = 16*k*eta*tau reproduces the
    // cQED expression S = 64*tau*chi^2*nbar*eta/kappa.
    double measurement_strength() const {
        if (kappa <= 0.0) throw error("CqedParams: kappa must be positive to derive k");
        return 4.0 * chi * chi * nbar / kappa;
    }
};

// Dispersive-limit estimate chi = g^2/Delta. Convenience only; callers who
// know chi directly should set it themselves.
inline double chi_from_coupling(double g, double Delta) {
    if (Delta == 0.0) throw error("chi_from_coupling: Delta must be nonzero");
    return g * g / Delta;
}

}  // namespace qtraj
