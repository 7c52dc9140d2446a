// sme.hpp — time-domain integration of the diffusive stochastic master
// equation for a continuously monitored, Rabi-driven qubit.
//
// Two integration schemes are provided:
//
//  * exact_map (default): per bin, a symmetric split of the exact one-bin
//    completely positive map — half Rabi rotation, exact Gaussian-POVM
//    Bayesian conditioning plus residual coherence damping, half rotation.
//    Unconditionally positive, purity-exact at eta = 1 / gamma = 0, and
//    weakly consistent with the Ito equation as dt -> 0.
//
//  * euler_maruyama: the textbook Ito step in Bloch coordinates. Kept as an
//    independent reference for convergence cross-checks; its per-step noise
//    can overshoot the Bloch sphere by O(dt), which is clipped by rescaling
//    (an inherent property of the scheme, not an integration failure).
//
// Record model (both schemes): V_i = <sigma_z> + xi/sqrt(4*k*eta*dt) for the
// informational quadrature, V_i = xi/sqrt(4*k*eta*dt) for the phase
// quadrature, one standard normal draw per bin.
#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "qtraj/errors.hpp"
#include "qtraj/measure.hpp"
#include "qtraj/parallel.hpp"
#include "qtraj/qstate.hpp"
#include "qtraj/rng.hpp"

namespace qtraj {

enum class Scheme { exact_map, euler_maruyama };

struct SmeConfig {
    MeasurementParams params;
    double omega_r = 0.0;  // Rabi rate [rad/s]; H = (omega_r/2)·sigma_y
    double duration = 0.0; // total simulated time [s]
    double dt = 0.0;       // bin duration [s]; must equal params.dt
    QubitState initial = QubitState::plus_x();
    std::uint64_t seed = 1;
    Quadrature quadrature = Quadrature::Q;
    Scheme scheme = Scheme::exact_map;
    bool flip_phi_rotation = false;

    void validate() const {
        params.validate();
        if (dt != params.dt) throw error("SmeConfig: dt must equal params.dt");
        if (!(duration >= dt)) throw error("SmeConfig: duration must be >= dt");
        if (dt > params.tau_c() / 100.0 * (1.0 + 1e-12))
            throw error("SmeConfig: dt must be <= tau_c/100 for a sane integration");
        initial.require_valid("SmeConfig.initial");
    }

    std::size_t n_steps() const { return static_cast<std::size_t>(duration / dt); }
};

struct MeasurementRecord {
    std::vector<double> t;  // bin start times, uniform spacing dt
    std::vector<double> V;  // one sample per bin
    double dt = 0.0;
    Quadrature quadrature = Quadrature::Q;
    std::uint64_t seed = 0;
};

struct Trajectory {
    std::vector<double> t;          // n_steps + 1 grid points, t[0] = 0
    std::vector<BlochVector> bloch; // conditioned state at each grid point
    MeasurementRecord record;
    SmeConfig config;

    QubitState state(std::size_t i) const { return state_of(bloch.at(i)); }
    const BlochVector& final_bloch() const { return bloch.back(); }
};

namespace detail {

// Per-config constants of the one-bin update, hoisted out of the hot loop.
struct StepKernel {
    double a = 0.0;        // record noise std dev, sqrt(a2)
    double inv_a2 = 0.0;   // 1/a2 = 4*k*eta*dt
    double damp = 1.0;     // residual off-diagonal factor per bin
    double gamma2 = 0.0;   // total dephasing rate 2k + gamma (Euler scheme)
    double diff = 0.0;     // sqrt(4*eta*k) (Euler scheme)
    double etak4 = 0.0;    // 4*eta*k (Euler scheme)
    double dt = 0.0;
    Quadrature quadrature = Quadrature::Q;
    Scheme scheme = Scheme::exact_map;
    bool flip_phi = false;

    explicit StepKernel(const SmeConfig& cfg) {
        const MeasurementParams& p = cfg.params;
        a = std::sqrt(p.a2());
        inv_a2 = 1.0 / p.a2();
        damp = p.residual_damping();
        gamma2 = 2.0 * p.k + p.gamma;
        etak4 = 4.0 * p.eta * p.k;
        diff = std::sqrt(etak4);
        dt = cfg.dt;
        quadrature = cfg.quadrature;
        scheme = cfg.scheme;
        flip_phi = cfg.flip_phi_rotation;
    }
};

inline void rotate_y_bloch(BlochVector& b, double cos_t, double sin_t) {
    const double x = b.x, z = b.z;
    b.x = x * cos_t + z * sin_t;
    b.z = z * cos_t - x * sin_t;
}

// Exact POVM conditioning in Bloch form, overflow-free for any t = V/a2.
inline void bayes_update_bloch(BlochVector& b, double t) {
    const double r00 = 0.5 * (1.0 + b.z);
    const double r11 = 0.5 * (1.0 - b.z);
    const double emt = std::exp(-std::abs(t));
    double den;
    if (t >= 0.0) {
        den = r00 + r11 * emt * emt;
        if (den < kImpossibleOutcome) throw outcome_error("record value has vanishing probability");
        b.z = (r00 - r11 * emt * emt) / den;
    } else {
        den = r00 * emt * emt + r11;
        if (den < kImpossibleOutcome) throw outcome_error("record value has vanishing probability");
        b.z = (r00 * emt * emt - r11) / den;
    }
    const double scale = emt / den;
    b.x *= scale;
    b.y *= scale;
}

inline void clamp_bloch(BlochVector& b, double tolerance) {
    const double r2 = b.x * b.x + b.y * b.y + b.z * b.z;
    if (r2 > 1.0) {
        const double r = std::sqrt(r2);
        if (r > 1.0 + tolerance)
            throw step_error("positivity violated beyond repair tolerance (|r| = " +
                             std::to_string(r) + "); reduce the time step");
        b.x /= r;
        b.y /= r;
        b.z /= r;
    }
}

// Advance one bin with a supplied record value V (reconstruction) or, when
// sample is non-null, generate V from the record model first. omega is the
// bin's (possibly feedback-modulated) Rabi rate. Returns V.
inline double step_bloch(BlochVector& b, double omega, const StepKernel& k, const double* given_V,
                         Rng* rng) {
    if (k.scheme == Scheme::exact_map) {
        const double half = 0.5 * omega * k.dt;
        const double c = std::cos(half), s = std::sin(half);
        rotate_y_bloch(b, c, s);
        double V;
        if (given_V) {
            V = *given_V;
        } else {
            const double xi = rng->normal();
            V = (k.quadrature == Quadrature::Q ? b.z : 0.0) + k.a * xi;
        }
        if (k.quadrature == Quadrature::Q) {
            bayes_update_bloch(b, V * k.inv_a2);
        } else {
            double theta = V * k.inv_a2;
            if (k.flip_phi) theta = -theta;
            const double ct = std::cos(theta), st = std::sin(theta);
            const double x = b.x, y = b.y;
            b.x = x * ct + y * st;
            b.y = y * ct - x * st;
        }
        b.x *= k.damp;
        b.y *= k.damp;
        rotate_y_bloch(b, c, s);
        clamp_bloch(b, kPositivityRepairTol);
        return V;
    }

    // Euler–Maruyama reference scheme.
    const double x = b.x, y = b.y, z = b.z;
    double V;
    if (given_V) {
        V = *given_V;
    } else {
        const double xi = rng->normal();
        V = (k.quadrature == Quadrature::Q ? z : 0.0) + k.a * xi;
    }
    if (k.quadrature == Quadrature::Q) {
        const double dW = (V - z) * k.diff * k.dt;  // = xi*sqrt(dt) when generated
        b.x = x + (omega * z - k.gamma2 * x - k.etak4 * z * z * x) * k.dt - k.diff * z * x * dW;
        b.y = y + (-k.gamma2 * y - k.etak4 * z * z * y) * k.dt - k.diff * z * y * dW;
        b.z = z + (-omega * x + k.etak4 * z * (1.0 - z * z)) * k.dt + k.diff * (1.0 - z * z) * dW;
    } else {
        double dW = V * k.diff * k.dt;
        if (k.flip_phi) dW = -dW;
        b.x = x + (omega * z - k.gamma2 * x) * k.dt + y * k.diff * dW;
        b.y = y + (-k.gamma2 * y) * k.dt - x * k.diff * dW;
        b.z = z + (-omega * x) * k.dt;
    }
    // Noise overshoot of the Bloch sphere is intrinsic to this scheme at
    // O(dt); always rescale rather than gating at the exact-map tolerance.
    clamp_bloch(b, std::numeric_limits<double>::infinity());
    return V;
}

}  // namespace detail

// Advance the conditioned state by one bin using the supplied standard
// normal draw; returns the post-bin state and the record value.
inline std::pair<QubitState, double> step(const QubitState& state, const SmeConfig& cfg,
                                          double noise) {
    cfg.validate();
    detail::StepKernel kernel(cfg);
    BlochVector b = bloch_of(state);
    // Record model with the supplied draw: V = mean + a*noise, where the
    // mean is the state the measurement actually sees (mid-bin for the
    // split-map scheme, pre-bin for Euler).
    double mean = 0.0;
    if (cfg.quadrature == Quadrature::Q) {
        if (cfg.scheme == Scheme::exact_map) {
            BlochVector half = b;
            const double h = 0.5 * cfg.omega_r * cfg.dt;
            detail::rotate_y_bloch(half, std::cos(h), std::sin(h));
            mean = half.z;
        } else {
            mean = b.z;
        }
    }
    const double V = mean + kernel.a * noise;
    detail::step_bloch(b, cfg.omega_r, kernel, &V, nullptr);
    return {state_of(b), V};
}

// Integrate a full record-conditioned trajectory, reproducible from seed.
inline Trajectory simulate(const SmeConfig& cfg) {
    cfg.validate();
    const std::size_t n = cfg.n_steps();
    detail::StepKernel kernel(cfg);
    Rng rng(cfg.seed);

    Trajectory traj;
    traj.config = cfg;
    traj.t.resize(n + 1);
    traj.bloch.resize(n + 1);
    traj.record.t.resize(n);
    traj.record.V.resize(n);
    traj.record.dt = cfg.dt;
    traj.record.quadrature = cfg.quadrature;
    traj.record.seed = cfg.seed;

    BlochVector b = bloch_of(cfg.initial);
    traj.t[0] = 0.0;
    traj.bloch[0] = b;
    for (std::size_t i = 0; i < n; ++i) {
        const double V = detail::step_bloch(b, cfg.omega_r, kernel, nullptr, &rng);
        traj.record.t[i] = static_cast<double>(i) * cfg.dt;
        traj.record.V[i] = V;
        traj.t[i + 1] = static_cast<double>(i + 1) * cfg.dt;
        traj.bloch[i + 1] = b;
    }
    return traj;
}

// Deterministic (unconditioned) master-equation solution on the same grid,
// evaluated in closed form: with Gamma2 = 2k + gamma,
//   d/dt (x, z) = [[-Gamma2, omega], [-omega, 0]] (x, z),  y' = -Gamma2·y.
inline std::vector<std::pair<double, QubitState>> lindblad_solution(const SmeConfig& cfg) {
    cfg.validate();
    const std::size_t n = cfg.n_steps();
    const double g2 = 2.0 * cfg.params.k + cfg.params.gamma;
    const double omega = cfg.omega_r;
    const BlochVector b0 = bloch_of(cfg.initial);

    // exp(A t) for A = [[-g2, omega], [-omega, 0]] via the 2x2 closed form
    // exp(At) = e^{mu t} [cosh(q t) I + sinh(q t)/q (A - mu I)],
    // mu = tr/2 = -g2/2, q = sqrt(mu^2 - det), det = omega^2.
    const std::complex<double> mu{-0.5 * g2, 0.0};
    const std::complex<double> q = std::sqrt(mu * mu - std::complex<double>{omega * omega, 0.0});

    std::vector<std::pair<double, QubitState>> out;
    out.reserve(n + 1);
    for (std::size_t i = 0; i <= n; ++i) {
        const double t = static_cast<double>(i) * cfg.dt;
        const std::complex<double> qt = q * t;
        std::complex<double> ch = std::cosh(qt);
        std::complex<double> shq;  // sinh(q t)/q, stable as q -> 0
        if (std::abs(qt) < 1e-8) {
            shq = t * (1.0 + qt * qt / 6.0);
        } else {
            shq = std::sinh(qt) / q;
        }
        const std::complex<double> e = std::exp(mu * t);
        // Matrix entries of exp(At): M = e [ch I + shq (A - mu I)].
        const std::complex<double> m00 = e * (ch + shq * (-g2 - mu));
        const std::complex<double> m01 = e * (shq * omega);
        const std::complex<double> m10 = e * (shq * (-omega));
        const std::complex<double> m11 = e * (ch + shq * (0.0 - mu));
        BlochVector b;
        b.x = (m00 * b0.x + m01 * b0.z).real();
        b.z = (m10 * b0.x + m11 * b0.z).real();
        b.y = b0.y * std::exp(-g2 * t);
        // Guard against last-ulp excursions so state_of never throws here.
        const double r = b.norm();
        if (r > 1.0) {
            b.x /= r;
            b.y /= r;
            b.z /= r;
        }
        out.emplace_back(t, state_of(b));
    }
    return out;
}

// n independent trajectories with per-trajectory seeds seed_base + index.
inline std::vector<Trajectory> ensemble(const SmeConfig& cfg, std::size_t n,
                                        std::uint64_t seed_base) {
    if (n < 1) throw error("ensemble: n must be >= 1");
    cfg.validate();
    std::vector<Trajectory> out(n);
    parallel_for_blocks(n, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            SmeConfig c = cfg;
            c.seed = stream_seed(seed_base, i);
            out[i] = simulate(c);
        }
    });
    return out;
}

struct EnsembleStats {
    std::vector<double> t;
    std::vector<BlochVector> mean;
    std::vector<BlochVector> stderr_;  // standard error of the mean, per component
    std::size_t n = 0;
};

// Streaming ensemble average of the Bloch vector on the time grid.
// Per-block partial sums are combined serially in block order, so results
// are independent of the worker-thread count.
inline EnsembleStats ensemble_mean(const SmeConfig& cfg, std::size_t n,
                                   std::uint64_t seed_base) {
    if (n < 1) throw error("ensemble_mean: n must be >= 1");
    cfg.validate();
    const std::size_t steps = cfg.n_steps() + 1;
    const std::size_t n_blocks = (n + kParallelBlock - 1) / kParallelBlock;

    struct Partial {
        std::vector<double> sx, sy, sz, sxx, syy, szz;
    };
    std::vector<Partial> parts(n_blocks);

    parallel_for_blocks(n, [&](std::size_t block, std::size_t begin, std::size_t end) {
        Partial& p = parts[block];
        p.sx.assign(steps, 0.0);
        p.sy.assign(steps, 0.0);
        p.sz.assign(steps, 0.0);
        p.sxx.assign(steps, 0.0);
        p.syy.assign(steps, 0.0);
        p.szz.assign(steps, 0.0);
        detail::StepKernel kernel(cfg);
        for (std::size_t i = begin; i < end; ++i) {
            Rng rng(stream_seed(seed_base, i));
            BlochVector b = bloch_of(cfg.initial);
            for (std::size_t s = 0; s < steps; ++s) {
                if (s > 0) detail::step_bloch(b, cfg.omega_r, kernel, nullptr, &rng);
                p.sx[s] += b.x;
                p.sy[s] += b.y;
                p.sz[s] += b.z;
                p.sxx[s] += b.x * b.x;
                p.syy[s] += b.y * b.y;
                p.szz[s] += b.z * b.z;
            }
        }
    });

    EnsembleStats st;
    st.n = n;
    st.t.resize(steps);
    st.mean.resize(steps);
    st.stderr_.resize(steps);
    std::vector<double> sx(steps, 0.0), sy(steps, 0.0), sz(steps, 0.0), sxx(steps, 0.0),
        syy(steps, 0.0), szz(steps, 0.0);
    for (std::size_t blockb = 0; blockb < n_blocks; ++blockb) {
        const Partial& p = parts[blockb];
        for (std::size_t s = 0; s < steps; ++s) {
            sx[s] += p.sx[s];
            sy[s] += p.sy[s];
            sz[s] += p.sz[s];
            sxx[s] += p.sxx[s];
            syy[s] += p.syy[s];
            szz[s] += p.szz[s];
        }
    }
    const double dn = static_cast<double>(n);
    for (std::size_t s = 0; s < steps; ++s) {
        st.t[s] = static_cast<double>(s) * cfg.dt;
        st.mean[s] = {sx[s] / dn, sy[s] / dn, sz[s] / dn};
        auto se = [&](double sum, double sumsq) {
            if (n < 2) return 0.0;
            const double var = std::max(0.0, (sumsq - sum * sum / dn) / (dn - 1.0));
            return std::sqrt(var / dn);
        };
        st.stderr_[s] = {se(sx[s], sxx[s]), se(sy[s], syy[s]), se(sz[s], szz[s])};
    }
    return st;
}

}  // namespace qtraj
