#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <cstdlib>
#include <vector>

#include "qtraj/sme.hpp"
#include "qtraj/stats.hpp"

using namespace qtraj;

namespace {

SmeConfig base_config(double k, double eta, double gamma, double omega, double dt,
                      double duration, std::uint64_t seed = 1) {
    SmeConfig cfg;
    cfg.params.k = k;
    cfg.params.eta = eta;
    cfg.params.gamma = gamma;
    cfg.params.dt = dt;
    cfg.dt = dt;
    cfg.omega_r = omega;
    cfg.duration = duration;
    cfg.seed = seed;
    return cfg;
}

// Independent fine-step RK4 integration of the deterministic limit
//   x' = -G2 x + W z,  z' = -W x,  y' = -G2 y,  G2 = 2k + gamma.
std::vector<BlochVector> rk4_lindblad(const SmeConfig& cfg, int substeps) {
    const double g2 = 2.0 * cfg.params.k + cfg.params.gamma;
    const double w = cfg.omega_r;
    auto deriv = [&](const BlochVector& b) {
        return BlochVector{-g2 * b.x + w * b.z, -g2 * b.y, -w * b.x};
    };
    auto axpy = [](const BlochVector& b, double s, const BlochVector& d) {
        return BlochVector{b.x + s * d.x, b.y + s * d.y, b.z + s * d.z};
    };
    std::vector<BlochVector> out;
    BlochVector b = bloch_of(cfg.initial);
    out.push_back(b);
    const double h = cfg.dt / substeps;
    const std::size_t n = cfg.n_steps();
    for (std::size_t i = 0; i < n; ++i) {
        for (int s = 0; s < substeps; ++s) {
            const BlochVector k1 = deriv(b);
            const BlochVector k2 = deriv(axpy(b, 0.5 * h, k1));
            const BlochVector k3 = deriv(axpy(b, 0.5 * h, k2));
            const BlochVector k4 = deriv(axpy(b, h, k3));
            b.x += h / 6.0 * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x);
            b.y += h / 6.0 * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y);
            b.z += h / 6.0 * (k1.z + 2.0 * k2.z + 2.0 * k3.z + k4.z);
        }
        out.push_back(b);
    }
    return out;
}

}  // namespace

TEST_CASE("deterministic limit matches an independent RK4 integration") {
    SmeConfig cfg = base_config(0.8, 0.6, 0.3, 5.0, 1.0 / (4.0 * 0.8 * 0.6) / 100.0, 2.0);
    cfg.initial = state_of({0.4, 0.5, -0.3});
    const auto closed = lindblad_solution(cfg);
    const auto rk4 = rk4_lindblad(cfg, 20);
    REQUIRE(closed.size() == rk4.size());
    for (std::size_t i = 0; i < closed.size(); ++i) {
        const BlochVector b = bloch_of(closed[i].second);
        REQUIRE(b.x == Catch::Approx(rk4[i].x).margin(1e-8));
        REQUIRE(b.y == Catch::Approx(rk4[i].y).margin(1e-8));
        REQUIRE(b.z == Catch::Approx(rk4[i].z).margin(1e-8));
    }
}

TEST_CASE("deterministic limit: pure dephasing and pure Rabi closed forms") {
    // Undriven: x(t) = e^{-(2k+gamma)t}, z stays 0.
    SmeConfig cfg = base_config(1.0, 0.5, 0.4, 0.0, 0.002, 1.0);
    for (const auto& [t, s] : lindblad_solution(cfg)) {
        REQUIRE(s.expect_x() == Catch::Approx(std::exp(-2.4 * t)).margin(1e-12));
        REQUIRE(std::abs(s.expect_z()) < 1e-12);
    }

    // Negligible measurement: z(t) = cos(Omega t) from |0>.
    SmeConfig rabi = base_config(1e-9, 1.0, 0.0, 1.0, 0.01, 6.0);
    rabi.initial = QubitState::ground();
    for (const auto& [t, s] : lindblad_solution(rabi)) {
        REQUIRE(s.expect_z() == Catch::Approx(std::cos(t)).margin(1e-6));
    }
}

TEST_CASE("nearly unmonitored trajectory tracks the deterministic solution") {
    // eta -> 0 removes the conditioning noise; a single trajectory must then
    // reproduce x(t) = e^{-2kt} to the scheme's accuracy.
    for (Scheme scheme : {Scheme::exact_map, Scheme::euler_maruyama}) {
        SmeConfig cfg = base_config(1.0, 1e-12, 0.0, 0.0, 1e-3, 1.0, 42);
        cfg.scheme = scheme;
        const Trajectory traj = simulate(cfg);
        const double tol = (scheme == Scheme::exact_map) ? 1e-6 : 5e-3;
        for (std::size_t i = 0; i < traj.t.size(); ++i) {
            REQUIRE(traj.bloch[i].x == Catch::Approx(std::exp(-2.0 * traj.t[i])).margin(tol));
            REQUIRE(std::abs(traj.bloch[i].z) < 1e-3);
        }
    }
}

TEST_CASE("Euler reference scheme error shrinks linearly in dt when noiseless") {
    auto final_x = [](double dt) {
        SmeConfig cfg = base_config(1.0, 1e-12, 0.0, 0.0, dt, 1.0, 7);
        cfg.scheme = Scheme::euler_maruyama;
        return simulate(cfg).final_bloch().x;
    };
    const double exact = std::exp(-2.0);
    const double e1 = std::abs(final_x(1e-3) - exact);
    const double e2 = std::abs(final_x(5e-4) - exact);
    REQUIRE(e1 / e2 == Catch::Approx(2.0).margin(0.5));
}

TEST_CASE("single step with a zero draw from the symmetric point") {
    const double k = 1.0;
    const double tau_c = 1.0 / (4.0 * k);
    SmeConfig cfg = base_config(k, 1.0, 0.0, 0.0, tau_c / 1000.0, 1.0);

    // Exact-map scheme: V = 0 and the state is untouched.
    auto [s1, v1] = step(QubitState::plus_x(), cfg, 0.0);
    REQUIRE(v1 == 0.0);
    REQUIRE(std::abs(s1.expect_z()) < 1e-15);
    REQUIRE(purity(s1) == Catch::Approx(1.0).margin(1e-14));

    // Euler reference scheme: z stays 0; the finite-step purity deficit is
    // exactly 1 - (1 + (1 - 2k dt)^2)/2, an O(dt) artifact of that scheme.
    cfg.scheme = Scheme::euler_maruyama;
    auto [s2, v2] = step(QubitState::plus_x(), cfg, 0.0);
    REQUIRE(v2 == 0.0);
    REQUIRE(std::abs(s2.expect_z()) < 1e-15);
    const double xe = 1.0 - 2.0 * k * cfg.dt;
    REQUIRE(purity(s2) == Catch::Approx(0.5 * (1.0 + xe * xe)).margin(1e-12));
}

TEST_CASE("trajectories are bit-for-bit reproducible from the seed") {
    SmeConfig cfg = base_config(1.0, 0.5, 0.1, 6.0, 0.5 / 200.0, 1.0, 2024);
    const Trajectory a = simulate(cfg);
    const Trajectory b = simulate(cfg);
    REQUIRE(a.record.V == b.record.V);
    for (std::size_t i = 0; i < a.bloch.size(); ++i) {
        REQUIRE(a.bloch[i].x == b.bloch[i].x);
        REQUIRE(a.bloch[i].y == b.bloch[i].y);
        REQUIRE(a.bloch[i].z == b.bloch[i].z);
    }

    // A one-trajectory ensemble equals simulate with the derived seed.
    const std::vector<Trajectory> ens = ensemble(cfg, 1, 555);
    SmeConfig cfg2 = cfg;
    cfg2.seed = stream_seed(555, 0);
    const Trajectory direct = simulate(cfg2);
    REQUIRE(ens.front().record.V == direct.record.V);
    REQUIRE(ens.front().final_bloch().x == direct.final_bloch().x);
    REQUIRE(ens.front().final_bloch().z == direct.final_bloch().z);
}

TEST_CASE("perfect detection keeps the conditioned state pure") {
    const double k = 1.0, eta = 1.0;
    const double tau_c = 1.0 / (4.0 * k * eta);
    const double omega = 3.0 / tau_c;

    auto min_purity = [&](double dt) {
        SmeConfig cfg = base_config(k, eta, 0.0, omega, dt, 5.0 * tau_c, 99);
        const Trajectory traj = simulate(cfg);
        double mp = 1.0;
        for (std::size_t i = 0; i < traj.bloch.size(); ++i) mp = std::min(mp, purity(traj.state(i)));
        return mp;
    };
    const double p1 = min_purity(tau_c / 1000.0);
    const double p2 = min_purity(tau_c / 2000.0);
    REQUIRE(p1 >= 0.999);
    REQUIRE(p2 >= 0.999);
    REQUIRE(p2 >= p1 - 1e-12);
}

TEST_CASE("ensemble mean follows the driven deterministic solution") {
    // Rabi drive at 0.5 MHz (Omega/2pi = 1/(2 us)) with Omega*tau_c = 3.
    const double omega = std::numbers::pi * 1e6;
    const double eta = 0.5;
    const double tau_c = 3.0 / omega;
    const double k = 1.0 / (4.0 * eta * tau_c);
    SmeConfig cfg = base_config(k, eta, 0.0, omega, tau_c / 150.0, 4.0 * tau_c);

    const EnsembleStats st = ensemble_mean(cfg, 10'000, 77);
    const auto lind = lindblad_solution(cfg);
    REQUIRE(st.t.size() == lind.size());
    for (std::size_t i = 0; i < st.t.size(); i += 25) {
        const BlochVector ref = bloch_of(lind[i].second);
        REQUIRE(std::abs(st.mean[i].x - ref.x) <= 3.0 * st.stderr_[i].x + 2e-3);
        REQUIRE(std::abs(st.mean[i].z - ref.z) <= 3.0 * st.stderr_[i].z + 2e-3);
    }
}

TEST_CASE("ensemble mean converges toward the deterministic solution like 1/sqrt(n)") {
    const double k = 1.0, eta = 0.5;
    const double tau_c = 1.0 / (4.0 * k * eta);
    SmeConfig cfg = base_config(k, eta, 0.0, 3.0 / tau_c, tau_c / 100.0, 3.0 * tau_c);
    const auto lind = lindblad_solution(cfg);

    auto max_err = [&](std::size_t n, std::uint64_t seed) {
        const EnsembleStats st = ensemble_mean(cfg, n, seed);
        double err = 0.0;
        for (std::size_t i = 0; i < st.t.size(); ++i) {
            const BlochVector ref = bloch_of(lind[i].second);
            err = std::max({err, std::abs(st.mean[i].x - ref.x), std::abs(st.mean[i].z - ref.z)});
        }
        return err;
    };
    const double e3 = max_err(1'000, 1001);
    const double e4 = max_err(10'000, 2002);
    REQUIRE(e4 < 0.75 * e3);
    REQUIRE(e4 < 0.02);
}

TEST_CASE("record noise has the stated per-bin variance") {
    // From a sigma_z eigenstate the record is exactly 1 + a*xi, so binning m
    // consecutive samples must give variance 1/(4 k eta m dt).
    const double k = 1.0, eta = 0.5, dt = 0.005;
    SmeConfig cfg = base_config(k, eta, 0.0, 0.0, dt, 0.005 * 500'000, 8);
    cfg.initial = QubitState::ground();
    const Trajectory traj = simulate(cfg);
    REQUIRE(traj.record.V.size() == 500'000);

    for (std::size_t m : {std::size_t{1}, std::size_t{5}}) {
        const std::size_t n_bins = traj.record.V.size() / m;
        double sum = 0.0, sum2 = 0.0;
        for (std::size_t j = 0; j < n_bins; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i) acc += traj.record.V[j * m + i];
            const double vbar = acc / static_cast<double>(m);
            sum += vbar;
            sum2 += vbar * vbar;
        }
        const double mean = sum / static_cast<double>(n_bins);
        const double var = sum2 / static_cast<double>(n_bins) - mean * mean;
        const double expected = 1.0 / (4.0 * k * eta * static_cast<double>(m) * dt);
        REQUIRE(var == Catch::Approx(expected).epsilon(0.02));
        REQUIRE(mean == Catch::Approx(1.0).margin(4.0 * std::sqrt(expected / n_bins)));
    }
}

TEST_CASE("stronger measurement pins the state near the poles") {
    const double omega = 1.0, eta = 0.8;
    auto pinned_fraction = [&](double k) {
        const double tau_c = 1.0 / (4.0 * k * eta);
        const double dt = std::min(tau_c / 100.0, 0.02);
        SmeConfig cfg = base_config(k, eta, 0.0, omega, dt, 40.0, 13);
        const std::vector<Trajectory> ens = ensemble(cfg, 12, 13);
        std::size_t hits = 0, total = 0;
        for (const Trajectory& tr : ens) {
            for (std::size_t i = 0; i < tr.t.size(); ++i) {
                if (tr.t[i] < 2.0) continue;  // skip the initial transient
                ++total;
                if (std::abs(tr.bloch[i].z) > 0.9) ++hits;
            }
        }
        return static_cast<double>(hits) / static_cast<double>(total);
    };
    const double f_weak = pinned_fraction(omega / 10.0);
    const double f_mid = pinned_fraction(omega);
    const double f_strong = pinned_fraction(10.0 * omega);
    INFO("fractions " << f_weak << " " << f_mid << " " << f_strong);
    REQUIRE(f_mid > f_weak + 0.03);
    REQUIRE(f_strong > f_mid + 0.03);
    REQUIRE(f_strong > 0.5);
}

TEST_CASE("undriven readout spreads z toward the poles over time") {
    const double k = 1.0;
    const double tau_c = 0.25;
    SmeConfig cfg = base_config(k, 1.0, 0.0, 0.0, tau_c / 200.0, tau_c, 31);
    const std::vector<Trajectory> ens = ensemble(cfg, 400, 31);

    auto z_variance = [&](double t_frac) {
        const std::size_t idx =
            static_cast<std::size_t>(t_frac * static_cast<double>(cfg.n_steps()));
        double s = 0.0, s2 = 0.0;
        for (const Trajectory& tr : ens) {
            const double z = tr.bloch[idx].z;
            s += z;
            s2 += z * z;
        }
        const double n = static_cast<double>(ens.size());
        return s2 / n - (s / n) * (s / n);
    };
    const double v1 = z_variance(0.1);
    const double v2 = z_variance(0.4);
    const double v3 = z_variance(1.0);
    REQUIRE(v2 > v1 + 0.02);
    REQUIRE(v3 > v2 + 0.02);
    REQUIRE(v3 > 0.3);
}

TEST_CASE("ensemble decay rate agrees with the deterministic decay rate") {
    const double k = 1.0, eta = 0.5;
    const double tau_c = 1.0 / (4.0 * k * eta);
    const double omega = 3.0 / tau_c;  // underdamped oscillation of (x, z)
    SmeConfig cfg = base_config(k, eta, 0.0, omega, tau_c / 100.0, 3.2, 17);
    cfg.initial = QubitState::ground();

    const double nu = std::sqrt(omega * omega - k * k);  // damped frequency
    const double period = 2.0 * std::numbers::pi / nu;
    const std::size_t per = static_cast<std::size_t>(period / cfg.dt);

    auto fitted_rate = [&](const std::vector<double>& t, const std::vector<double>& z) {
        const SinusoidFit early = fit_sinusoid(t, z, nu, 0, per);
        const SinusoidFit late = fit_sinusoid(t, z, nu, 2 * per, 3 * per);
        return std::log(early.amplitude / late.amplitude) / (2.0 * per * cfg.dt);
    };

    std::vector<double> z_lind, z_ens;
    const auto lind = lindblad_solution(cfg);
    for (const auto& [t, s] : lind) z_lind.push_back(s.expect_z());
    const EnsembleStats st = ensemble_mean(cfg, 10'000, 301);
    for (const BlochVector& b : st.mean) z_ens.push_back(b.z);

    const double r_lind = fitted_rate(st.t, z_lind);
    const double r_ens = fitted_rate(st.t, z_ens);
    REQUIRE(r_lind == Catch::Approx(k).epsilon(0.05));  // envelope decays at Gamma2/2
    REQUIRE(r_ens == Catch::Approx(r_lind).epsilon(0.10));
}

TEST_CASE("phase-quadrature records leave z untouched and shrink coherence geometrically") {
    SmeConfig cfg = base_config(1.0, 0.6, 0.2, 0.0, 0.002, 0.4, 23);
    cfg.quadrature = Quadrature::I;
    cfg.initial = state_of({0.5, 0.2, -0.6});
    const Trajectory traj = simulate(cfg);

    const double damp = cfg.params.residual_damping();
    const double r0 = std::hypot(traj.bloch[0].x, traj.bloch[0].y);
    for (std::size_t i = 0; i < traj.bloch.size(); ++i) {
        REQUIRE(traj.bloch[i].z == Catch::Approx(-0.6).margin(1e-12));
        const double r = std::hypot(traj.bloch[i].x, traj.bloch[i].y);
        REQUIRE(r == Catch::Approx(r0 * std::pow(damp, static_cast<double>(i))).margin(1e-12));
    }

    // Flipping the rotation sense mirrors the trajectory about the x axis.
    SmeConfig flipped = cfg;
    flipped.initial = QubitState::plus_x();
    flipped.flip_phi_rotation = true;
    SmeConfig straight = flipped;
    straight.flip_phi_rotation = false;
    const Trajectory a = simulate(straight);
    const Trajectory b = simulate(flipped);
    REQUIRE(a.record.V == b.record.V);
    for (std::size_t i = 0; i < a.bloch.size(); ++i) {
        REQUIRE(a.bloch[i].x == Catch::Approx(b.bloch[i].x).margin(1e-15));
        REQUIRE(a.bloch[i].y == Catch::Approx(-b.bloch[i].y).margin(1e-15));
    }
}

TEST_CASE("Euler reference scheme self-converges at weak order one") {
    // Common-random-number Richardson: the same Brownian increments drive the
    // scheme at dt, dt/2 and dt/4; the successive ensemble-mean differences
    // of the final Bloch vector must scale linearly with dt.
    const double k = 1.0, eta = 0.5, gamma = 0.1;
    const double tau_c = 1.0 / (4.0 * k * eta);
    const double omega = 3.0 / tau_c;
    const double duration = tau_c;

    const std::array<std::size_t, 3> substeps = {1, 2, 4};  // relative to dt1
    const double dt1 = tau_c / 100.0;
    const std::size_t n1 = static_cast<std::size_t>(duration / dt1);
    const std::size_t n_fine = n1 * 4;

    std::array<double, 3> sum_x{}, sum_z{};
    const std::size_t n_paths = 8000;
    Rng rng(4242);
    std::vector<double> xi(n_fine);
    for (std::size_t path = 0; path < n_paths; ++path) {
        for (double& x : xi) x = rng.normal();
        for (std::size_t lvl = 0; lvl < 3; ++lvl) {
            const std::size_t m = substeps[lvl];          // coarse steps per dt1
            const std::size_t agg = 4 / m;                // fine draws per coarse step
            SmeConfig cfg = base_config(k, eta, gamma, omega, dt1 / static_cast<double>(m),
                                        duration);
            cfg.scheme = Scheme::euler_maruyama;
            QubitState s = QubitState::plus_x();
            const double inv = 1.0 / std::sqrt(static_cast<double>(agg));
            for (std::size_t i = 0; i < n1 * m; ++i) {
                double draw = 0.0;
                for (std::size_t j = 0; j < agg; ++j) draw += xi[i * agg + j];
                s = step(s, cfg, draw * inv).first;
            }
            sum_x[lvl] += s.expect_x();
            sum_z[lvl] += s.expect_z();
        }
    }

    auto diff = [&](std::size_t a, std::size_t b) {
        const double dx = (sum_x[a] - sum_x[b]) / static_cast<double>(n_paths);
        const double dz = (sum_z[a] - sum_z[b]) / static_cast<double>(n_paths);
        return std::hypot(dx, dz);
    };
    const double d12 = diff(0, 1);
    const double d23 = diff(1, 2);
    INFO("mean-difference norms " << d12 << " " << d23);
    const double slope = std::log2(d12 / d23);
    REQUIRE(slope > 0.7);
    REQUIRE(slope < 1.3);
}

TEST_CASE("configuration validation rejects inconsistent inputs") {
    SmeConfig good = base_config(1.0, 0.5, 0.0, 0.0, 0.001, 1.0);
    REQUIRE_NOTHROW(good.validate());

    SmeConfig bad = good;
    bad.dt = 0.002;  // disagrees with params.dt
    REQUIRE_THROWS_AS(bad.validate(), error);

    bad = good;
    bad.duration = 0.0005;
    REQUIRE_THROWS_AS(bad.validate(), error);

    bad = base_config(1.0, 0.5, 0.0, 0.0, 0.02, 1.0);  // dt > tau_c/100 = 0.005
    REQUIRE_THROWS_AS(bad.validate(), error);

    REQUIRE_THROWS_AS(ensemble(good, 0, 1), error);
    REQUIRE_THROWS_AS(ensemble_mean(good, 0, 1), error);
}
