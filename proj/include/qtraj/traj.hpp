// traj.hpp — analytics over measurement records and trajectory ensembles:
// Bayesian re-propagation of a record, conditional tomography, pre/post
// selection, empirical most-likely path, and the forward/backward estimate
// that yields hindsight outcome probabilities.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qtraj/errors.hpp"
#include "qtraj/measure.hpp"
#include "qtraj/parallel.hpp"
#include "qtraj/qstate.hpp"
#include "qtraj/sme.hpp"

namespace qtraj {

// Acceptance window around a target state; matching is on the x and z
// components (the monitored dynamics lives in the x-z plane).
struct TargetWindow {
    BlochVector center;
    double epsilon = 0.05;

    bool contains(const BlochVector& b) const {
        return std::abs(b.x - center.x) <= epsilon && std::abs(b.z - center.z) <= epsilon;
    }
};

// Backward-propagated retrodiction matrix E(t); Hermitian, PSD, kept at
// unit trace (the final probability formula is scale-invariant).
struct EffectMatrix {
    Mat2 E = Mat2::diag(0.5, 0.5);

    BlochVector bloch() const {
        QubitState s{E};
        return bloch_of(s);
    }
};

// Re-run the conditioning with a given record instead of fresh noise. Uses
// the identical per-bin kernel as simulate, so a record produced by
// simulate with the same config reproduces its states bit-for-bit.
inline Trajectory reconstruct(const MeasurementRecord& record, const QubitState& initial,
                              const SmeConfig& cfg) {
    SmeConfig c = cfg;
    c.initial = initial;
    c.validate();
    if (record.dt != cfg.dt || record.quadrature != cfg.quadrature)
        throw error("reconstruct: record grid/quadrature does not match the config");
    const std::size_t n = record.V.size();
    if (n != c.n_steps())
        throw error("reconstruct: record length " + std::to_string(n) +
                    " does not match config steps " + std::to_string(c.n_steps()));

    detail::StepKernel kernel(c);
    Trajectory traj;
    traj.config = c;
    traj.record = record;
    traj.t.resize(n + 1);
    traj.bloch.resize(n + 1);
    BlochVector b = bloch_of(initial);
    traj.t[0] = 0.0;
    traj.bloch[0] = b;
    for (std::size_t i = 0; i < n; ++i) {
        detail::step_bloch(b, c.omega_r, kernel, &record.V[i], nullptr);
        traj.t[i + 1] = static_cast<double>(i + 1) * c.dt;
        traj.bloch[i + 1] = b;
    }
    return traj;
}

struct TomographyResult {
    double x_tomo = 0.0;
    double z_tomo = 0.0;
    std::size_t n_matched = 0;
    double se_x = 0.0;  // standard error of each projective average
    double se_z = 0.0;
};

// Validate a target trajectory at grid index t_index: run n_runs fresh
// experiments of that duration; for runs whose conditioned (x, z) lands in
// the epsilon-window around the target, draw projective sigma_x and sigma_z
// outcomes from the run's true state and average them.
inline TomographyResult conditional_tomography(const Trajectory& target, double epsilon,
                                               std::size_t t_index, std::size_t n_runs,
                                               std::uint64_t seed_base) {
    if (t_index == 0 || t_index >= target.t.size())
        throw error("conditional_tomography: t_index must be an interior grid index");
    if (n_runs < 1) throw error("conditional_tomography: n_runs must be >= 1");
    if (!(epsilon > 0.0)) throw error("conditional_tomography: epsilon must be positive");

    SmeConfig cfg = target.config;
    cfg.duration = target.t[t_index];
    TargetWindow window{target.bloch[t_index], epsilon};

    const std::size_t n_blocks = (n_runs + kParallelBlock - 1) / kParallelBlock;
    struct Partial {
        double sum_x = 0.0, sum_z = 0.0;
        std::size_t matched = 0;
    };
    std::vector<Partial> parts(n_blocks);

    parallel_for_blocks(n_runs, [&](std::size_t block, std::size_t begin, std::size_t end) {
        Partial& p = parts[block];
        detail::StepKernel kernel(cfg);
        const std::size_t steps = cfg.n_steps();
        for (std::size_t i = begin; i < end; ++i) {
            Rng rng(stream_seed(seed_base, i));
            BlochVector b = bloch_of(cfg.initial);
            for (std::size_t s = 0; s < steps; ++s)
                detail::step_bloch(b, cfg.omega_r, kernel, nullptr, &rng);
            if (!window.contains(b)) continue;
            // Projective tomography outcomes, Born probabilities from the
            // run's own conditioned state (identical to the reconstructed
            // state for simulated data).
            const double mx = (rng.uniform() < 0.5 * (1.0 + b.x)) ? 1.0 : -1.0;
            const double mz = (rng.uniform() < 0.5 * (1.0 + b.z)) ? 1.0 : -1.0;
            p.sum_x += mx;
            p.sum_z += mz;
            p.matched += 1;
        }
    });

    TomographyResult r;
    double sx = 0.0, sz = 0.0;
    for (const Partial& p : parts) {
        sx += p.sum_x;
        sz += p.sum_z;
        r.n_matched += p.matched;
    }
    if (r.n_matched == 0)
        throw statistics_error("conditional_tomography: no run matched the target window");
    const double dn = static_cast<double>(r.n_matched);
    r.x_tomo = sx / dn;
    r.z_tomo = sz / dn;
    // Outcomes are ±1 so Var = 1 - mean².
    r.se_x = std::sqrt(std::max(0.0, 1.0 - r.x_tomo * r.x_tomo) / dn);
    r.se_z = std::sqrt(std::max(0.0, 1.0 - r.z_tomo * r.z_tomo) / dn);
    return r;
}

// Indices of trajectories whose state at grid index t_index lies in the
// window; order-preserving, may be empty.
inline std::vector<std::size_t> postselect(const std::vector<Trajectory>& ens,
                                           const TargetWindow& window, std::size_t t_index) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ens.size(); ++i) {
        if (t_index >= ens[i].bloch.size()) throw error("postselect: t_index off the grid");
        if (window.contains(ens[i].bloch[t_index])) out.push_back(i);
    }
    return out;
}

struct PathHistogram {
    std::vector<double> t;
    std::size_t bins = 0;
    double bin_width = 0.0;                 // over [-1, 1] in both x and z
    std::vector<std::vector<std::uint32_t>> counts;  // per time, bins*bins row-major (z, x)

    std::uint32_t at(std::size_t time, std::size_t iz, std::size_t ix) const {
        return counts[time][iz * bins + ix];
    }
};

inline PathHistogram build_path_histogram(const std::vector<Trajectory>& ens,
                                          const std::vector<std::size_t>& selected,
                                          std::size_t bins) {
    if (bins < 8) throw error("build_path_histogram: bins must be >= 8");
    if (selected.empty()) throw error("build_path_histogram: empty sub-ensemble");
    const std::size_t steps = ens[selected[0]].bloch.size();
    PathHistogram h;
    h.bins = bins;
    h.bin_width = 2.0 / static_cast<double>(bins);
    h.t = ens[selected[0]].t;
    h.counts.assign(steps, std::vector<std::uint32_t>(bins * bins, 0));
    auto index_of = [&](double v) {
        const double u = (v + 1.0) / 2.0 * static_cast<double>(bins);
        return static_cast<std::size_t>(std::clamp<long>(static_cast<long>(u), 0,
                                                         static_cast<long>(bins) - 1));
    };
    for (std::size_t idx : selected) {
        const Trajectory& tr = ens[idx];
        if (tr.bloch.size() != steps) throw error("build_path_histogram: ragged ensemble");
        for (std::size_t s = 0; s < steps; ++s)
            h.counts[s][index_of(tr.bloch[s].z) * bins + index_of(tr.bloch[s].x)] += 1;
    }
    return h;
}

struct PathPoint {
    double t = 0.0;
    double x = 0.0;
    double z = 0.0;
};

// Per-slice mode of the 3x3-smoothed (x, z) histogram. Smoothing ties are
// broken first by the raw (unsmoothed) count — a lone spike smears over its
// whole 3x3 neighborhood, and without this the mode could land a full bin
// off the spike — then toward the bin nearest the previous slice's choice.
inline std::vector<PathPoint> most_likely_path(const PathHistogram& h) {
    const std::size_t bins = h.bins;
    std::vector<PathPoint> path;
    path.reserve(h.t.size());
    double prev_ix = 0.0, prev_iz = 0.0;
    for (std::size_t s = 0; s < h.t.size(); ++s) {
        double best = -1.0;
        double best_raw = -1.0;
        double best_dist = 0.0;
        std::size_t best_ix = 0, best_iz = 0;
        for (std::size_t iz = 0; iz < bins; ++iz) {
            for (std::size_t ix = 0; ix < bins; ++ix) {
                double smoothed = 0.0;
                for (int dz = -1; dz <= 1; ++dz) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const long jz = static_cast<long>(iz) + dz;
                        const long jx = static_cast<long>(ix) + dx;
                        if (jz < 0 || jx < 0 || jz >= static_cast<long>(bins) ||
                            jx >= static_cast<long>(bins))
                            continue;
                        smoothed += h.counts[s][static_cast<std::size_t>(jz) * bins +
                                                static_cast<std::size_t>(jx)];
                    }
                }
                const double raw = h.counts[s][iz * bins + ix];
                const double dix = static_cast<double>(ix) - prev_ix;
                const double diz = static_cast<double>(iz) - prev_iz;
                const double dist = (s == 0) ? 0.0 : dix * dix + diz * diz;
                if (smoothed > best || (smoothed == best && raw > best_raw) ||
                    (smoothed == best && raw == best_raw && dist < best_dist)) {
                    best = smoothed;
                    best_raw = raw;
                    best_dist = dist;
                    best_ix = ix;
                    best_iz = iz;
                }
            }
        }
        prev_ix = static_cast<double>(best_ix);
        prev_iz = static_cast<double>(best_iz);
        path.push_back(PathPoint{h.t[s], -1.0 + (static_cast<double>(best_ix) + 0.5) * h.bin_width,
                                 -1.0 + (static_cast<double>(best_iz) + 0.5) * h.bin_width});
    }
    return path;
}

inline std::vector<PathPoint> most_likely_path(const std::vector<Trajectory>& ens,
                                               const std::vector<std::size_t>& selected,
                                               std::size_t bins) {
    return most_likely_path(build_path_histogram(ens, selected, bins));
}

// Backward recursion for the retrodiction matrix on the record's grid:
// E(T) = I/2 and, per bin (adjoint of the forward map, in reverse order),
//   E_i = normalize( U_h† Ω_V† damp( U_h† E_{i+1} U_h ) Ω_V U_h ),
// where U_h is the half-bin Rabi rotation, Ω_V the bin POVM operator, and
// damp the (self-adjoint) residual coherence damping. Returns n+1 entries,
// index i being E at grid time t_i.
inline std::vector<EffectMatrix> backward_effect(const MeasurementRecord& record,
                                                 const SmeConfig& cfg) {
    SmeConfig c = cfg;
    c.validate();
    if (record.dt != c.dt || record.quadrature != c.quadrature)
        throw error("backward_effect: record grid/quadrature does not match the config");
    const std::size_t n = record.V.size();

    detail::StepKernel kernel(c);
    // E is Hermitian PSD with unit trace after normalization, so it admits
    // the same (x, y, z) parameterization as a state; the adjoint bin map
    // reuses the forward kernels with the rotation sense reversed.
    BlochVector e{0.0, 0.0, 0.0};  // E = I/2
    std::vector<EffectMatrix> out(n + 1);
    out[n] = EffectMatrix{Mat2::diag(0.5, 0.5)};
    const double half = 0.5 * c.omega_r * c.dt;
    const double ch = std::cos(half), sh = std::sin(half);
    for (std::size_t i = n; i-- > 0;) {
        // Adjoint of the trailing half rotation: rotate by -half.
        detail::rotate_y_bloch(e, ch, -sh);
        // damp is self-adjoint.
        e.x *= kernel.damp;
        e.y *= kernel.damp;
        if (c.quadrature == Quadrature::Q) {
            // Ω† E Ω has the identical component form as Ω ρ Ω† (Ω is
            // diagonal and real), including normalization.
            detail::bayes_update_bloch(e, record.V[i] * kernel.inv_a2);
        } else {
            // Adjoint of the phase kick: rotate the opposite way.
            double theta = record.V[i] * kernel.inv_a2;
            if (kernel.flip_phi) theta = -theta;
            const double ct = std::cos(theta), st = std::sin(theta);
            const double x = e.x, y = e.y;
            e.x = x * ct - y * st;
            e.y = y * ct + x * st;
        }
        detail::rotate_y_bloch(e, ch, -sh);
        detail::clamp_bloch(e, kPositivityRepairTol);
        out[i] = EffectMatrix{state_of(e).rho};
    }
    return out;
}

// Hindsight probabilities P(m) ∝ Tr(Ω_m ρ Ω_m† E): past-aware outcome
// statistics for a measurement described by the POVM {Ω_m}. With E ∝ I the
// Born rule is recovered; the result is invariant under scaling of E.
inline std::vector<double> hindsight_probability(const QubitState& rho, const EffectMatrix& eff,
                                                 const std::vector<Mat2>& povm) {
    if (povm.empty()) throw error("hindsight_probability: empty POVM");
    Mat2 total = Mat2::zero();
    for (const Mat2& om : povm) total = total + om.adjoint() * om;
    if (total.max_abs_diff(Mat2::identity()) > 1e-9)
        throw error("hindsight_probability: POVM does not resolve the identity");

    std::vector<double> p(povm.size());
    double norm = 0.0;
    for (std::size_t m = 0; m < povm.size(); ++m) {
        const Mat2 post = povm[m] * rho.rho * povm[m].adjoint();
        const double w = (post * eff.E).trace().real();
        p[m] = std::max(0.0, w);
        norm += p[m];
    }
    if (norm < kImpossibleOutcome)
        throw outcome_error("hindsight_probability: all outcomes have vanishing weight");
    for (double& v : p) v /= norm;
    return p;
}

// Convenience: forward Born probabilities for the same POVM.
inline std::vector<double> born_probability(const QubitState& rho, const std::vector<Mat2>& povm) {
    return hindsight_probability(rho, EffectMatrix{Mat2::diag(0.5, 0.5)}, povm);
}

}  // namespace qtraj
