// feedback.hpp — analog phase-locked-loop stabilization of weakly monitored
// Rabi oscillations: the record is demodulated against a reference at the
// Rabi frequency, low-pass filtered into an error signal, and fed back onto
// the drive amplitude after a configurable loop delay.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "qtraj/errors.hpp"
#include "qtraj/parallel.hpp"
#include "qtraj/sme.hpp"
#include "qtraj/stats.hpp"

namespace qtraj {

struct FeedbackConfig {
    SmeConfig base;      // base.omega_r is the Rabi reference Omega_R
    double F = 0.0;      // dimensionless loop gain
    double f_lp = 0.0;   // single-pole low-pass cutoff [rad/s]
    double delay = 0.0;  // loop delay [s], integer multiple of dt (in
                         // addition to the intrinsic one-bin causal lag)
    double phase = 0.0;  // demodulation reference phase offset [rad]
    double t_on = 0.0;   // feedback actuation enabled for t >= t_on

    // Environmental dephasing lives in base.params.gamma; exposed here under
    // the loop-analysis name.
    double gamma_env() const { return base.params.gamma; }

    void validate() const {
        base.validate();
        if (!(F >= 0.0)) throw error("FeedbackConfig: F must be nonnegative");
        if (!(f_lp > 0.0)) throw error("FeedbackConfig: f_lp must be positive");
        if (!(delay >= 0.0)) throw error("FeedbackConfig: delay must be nonnegative");
        const double steps = delay / base.dt;
        if (std::abs(steps - std::round(steps)) > 1e-6)
            throw error("FeedbackConfig: delay must be an integer multiple of dt");
        if (!(base.omega_r > 0.0)) throw error("FeedbackConfig: omega_r must be positive");
    }

    std::size_t delay_steps() const {
        return static_cast<std::size_t>(std::llround(delay / base.dt));
    }
};

// One-pole IIR low-pass: e += alpha (u - e), alpha = 1 - exp(-f_lp dt).
struct LowPassFilter {
    double alpha = 0.0;
    double state = 0.0;

    LowPassFilter(double f_lp, double dt) : alpha(1.0 - std::exp(-f_lp * dt)) {}

    double update(double u) {
        state += alpha * (u - state);
        return state;
    }
};

// Demodulate one record sample against sin(Omega_R t + phase) and low-pass
// the product. t should be the sample's bin midpoint.
inline double error_signal(double V, double t, const FeedbackConfig& cfg, LowPassFilter& filter) {
    return filter.update(V * std::sin(cfg.base.omega_r * t + cfg.phase));
}

struct FeedbackResult {
    Trajectory trajectory;
    std::vector<double> error;  // filtered error e at each bin
};

// Closed-loop run: per bin, the actuated Rabi rate is
// Omega_i = Omega_R (1 + F·e(t_i - delay)), where e lags by at least one
// bin (the record of bin i can only act from bin i+1 on).
inline FeedbackResult run_feedback(const FeedbackConfig& cfg) {
    cfg.validate();
    const SmeConfig& base = cfg.base;
    const std::size_t n = base.n_steps();
    const std::size_t lag = cfg.delay_steps() + 1;

    detail::StepKernel kernel(base);
    Rng rng(base.seed);
    LowPassFilter filter(cfg.f_lp, base.dt);

    FeedbackResult res;
    res.trajectory.config = base;
    res.trajectory.t.resize(n + 1);
    res.trajectory.bloch.resize(n + 1);
    res.trajectory.record.t.resize(n);
    res.trajectory.record.V.resize(n);
    res.trajectory.record.dt = base.dt;
    res.trajectory.record.quadrature = base.quadrature;
    res.trajectory.record.seed = base.seed;
    res.error.resize(n);

    std::vector<double> e_hist(lag, 0.0);  // circular buffer of past errors
    BlochVector b = bloch_of(base.initial);
    res.trajectory.t[0] = 0.0;
    res.trajectory.bloch[0] = b;
    for (std::size_t i = 0; i < n; ++i) {
        const double t_bin = static_cast<double>(i) * base.dt;
        const double e_used = (i >= lag) ? e_hist[i % lag] : 0.0;
        const bool on = cfg.F > 0.0 && t_bin >= cfg.t_on;
        const double omega = base.omega_r * (1.0 + (on ? cfg.F * e_used : 0.0));
        const double V = detail::step_bloch(b, omega, kernel, nullptr, &rng);
        const double e = error_signal(V, t_bin + 0.5 * base.dt, cfg, filter);
        e_hist[i % lag] = e;
        res.error[i] = e;
        res.trajectory.record.t[i] = t_bin;
        res.trajectory.record.V[i] = V;
        res.trajectory.t[i + 1] = t_bin + base.dt;
        res.trajectory.bloch[i + 1] = b;
    }
    return res;
}

struct FeedbackEnsemble {
    std::vector<double> t;
    std::vector<double> mean_z;
    std::vector<double> mean_x;
    // Per-group z means (8 deterministic interleaved subgroups) for
    // group-wise efficiency spread estimates.
    std::vector<std::vector<double>> group_z;
    std::size_t n = 0;
};

inline constexpr std::size_t kFeedbackGroups = 8;

// Ensemble-averaged closed-loop dynamics; per-trajectory seeds are
// seed_base + index, partial sums combined in fixed block order.
inline FeedbackEnsemble feedback_ensemble(const FeedbackConfig& cfg, std::size_t n,
                                          std::uint64_t seed_base) {
    if (n < kFeedbackGroups) throw error("feedback_ensemble: need at least 8 trajectories");
    cfg.validate();
    const std::size_t steps = cfg.base.n_steps() + 1;
    const std::size_t n_blocks = (n + kParallelBlock - 1) / kParallelBlock;

    struct Partial {
        std::vector<double> sz, sx;          // full sums
        std::vector<double> gz;              // kFeedbackGroups * steps
    };
    std::vector<Partial> parts(n_blocks);

    parallel_for_blocks(n, [&](std::size_t block, std::size_t begin, std::size_t end) {
        Partial& p = parts[block];
        p.sz.assign(steps, 0.0);
        p.sx.assign(steps, 0.0);
        p.gz.assign(kFeedbackGroups * steps, 0.0);
        for (std::size_t i = begin; i < end; ++i) {
            FeedbackConfig c = cfg;
            c.base.seed = stream_seed(seed_base, i);
            const FeedbackResult r = run_feedback(c);
            const std::size_t group = i % kFeedbackGroups;
            for (std::size_t s = 0; s < steps; ++s) {
                const double z = r.trajectory.bloch[s].z;
                p.sz[s] += z;
                p.sx[s] += r.trajectory.bloch[s].x;
                p.gz[group * steps + s] += z;
            }
        }
    });

    FeedbackEnsemble out;
    out.n = n;
    out.t.resize(steps);
    for (std::size_t s = 0; s < steps; ++s) out.t[s] = static_cast<double>(s) * cfg.base.dt;
    out.mean_z.assign(steps, 0.0);
    out.mean_x.assign(steps, 0.0);
    out.group_z.assign(kFeedbackGroups, std::vector<double>(steps, 0.0));
    for (std::size_t b = 0; b < n_blocks; ++b) {
        for (std::size_t s = 0; s < steps; ++s) {
            out.mean_z[s] += parts[b].sz[s];
            out.mean_x[s] += parts[b].sx[s];
        }
        for (std::size_t g = 0; g < kFeedbackGroups; ++g)
            for (std::size_t s = 0; s < steps; ++s)
                out.group_z[g][s] += parts[b].gz[g * steps + s];
    }
    const double dn = static_cast<double>(n);
    for (std::size_t s = 0; s < steps; ++s) {
        out.mean_z[s] /= dn;
        out.mean_x[s] /= dn;
    }
    // Group sizes: n/8 rounded per residue class of the index.
    for (std::size_t g = 0; g < kFeedbackGroups; ++g) {
        const double ng = static_cast<double>(n / kFeedbackGroups + (g < n % kFeedbackGroups));
        for (std::size_t s = 0; s < steps; ++s) out.group_z[g][s] /= ng;
    }
    return out;
}

// Feedback efficiency D: amplitude of the fixed-frequency sinusoid fitted
// to the ensemble-mean <sigma_z>(t) over the steady-state window. The fit is
// considered failed when the residual dominates both the fitted amplitude
// and the small-signal floor (i.e. there is large un-modeled structure).
inline double feedback_efficiency(const std::vector<double>& t, const std::vector<double>& mean_z,
                                  double omega_r, double window_start) {
    std::size_t begin = 0;
    while (begin < t.size() && t[begin] < window_start) ++begin;
    const SinusoidFit f = fit_sinusoid(t, mean_z, omega_r, begin, t.size());
    if (f.residual_rms > std::max(f.amplitude, 0.1))
        throw statistics_error("feedback_efficiency: fit residual " +
                               std::to_string(f.residual_rms) + " exceeds amplitude " +
                               std::to_string(f.amplitude));
    return f.amplitude;
}

struct SweepPoint {
    double F = 0.0;
    double D = 0.0;
    double D_stderr = 0.0;
};

// D(F) curve with a spread estimate from the 8 deterministic subgroups.
inline std::vector<SweepPoint> efficiency_sweep(const FeedbackConfig& base,
                                                const std::vector<double>& F_values,
                                                std::size_t n_traj, std::uint64_t seed_base,
                                                double window_start) {
    if (F_values.size() < 5) throw error("efficiency_sweep: need at least 5 F values");
    std::vector<SweepPoint> out;
    out.reserve(F_values.size());
    for (std::size_t j = 0; j < F_values.size(); ++j) {
        FeedbackConfig cfg = base;
        cfg.F = F_values[j];
        const FeedbackEnsemble ens =
            feedback_ensemble(cfg, n_traj, seed_base + j * (n_traj + 1));
        SweepPoint pt;
        pt.F = cfg.F;
        pt.D = feedback_efficiency(ens.t, ens.mean_z, cfg.base.omega_r, window_start);
        double sum = 0.0, sum2 = 0.0;
        for (std::size_t g = 0; g < kFeedbackGroups; ++g) {
            const double Dg =
                feedback_efficiency(ens.t, ens.group_z[g], cfg.base.omega_r, window_start);
            sum += Dg;
            sum2 += Dg * Dg;
        }
        const double m = sum / kFeedbackGroups;
        const double var = std::max(0.0, (sum2 - kFeedbackGroups * m * m) /
                                             (kFeedbackGroups - 1.0));
        pt.D_stderr = std::sqrt(var / kFeedbackGroups);
        out.push_back(pt);
    }
    return out;
}

// Total quantum efficiency eta_t = eta · (1 + Gamma_env/Gamma_m)^(-1); the
// measurement-induced dephasing rate of this codebase is Gamma_m = 2k.
inline double total_efficiency(double eta, double gamma_env, double gamma_m) {
    if (!(eta > 0.0 && eta <= 1.0)) throw error("total_efficiency: eta must be in (0, 1]");
    if (!(gamma_env >= 0.0)) throw error("total_efficiency: gamma_env must be nonnegative");
    if (!(gamma_m > 0.0)) throw error("total_efficiency: gamma_m must be positive");
    return eta / (1.0 + gamma_env / gamma_m);
}

inline double measurement_dephasing_rate(double k) { return 2.0 * k; }

// Envelope decay time of the unfedback ensemble oscillation: the mean
// transverse amplitude decays at (2k + gamma)/2.
inline double unfedback_decay_time(const MeasurementParams& p) {
    return 2.0 / (2.0 * p.k + p.gamma);
}

}  // namespace qtraj
