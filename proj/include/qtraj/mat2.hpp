// mat2.hpp — 2x2 complex matrix value type and Pauli algebra.
#pragma once

#include <array>
#include <cmath>
#include <complex>

namespace qtraj {

using cplx = std::complex<double>;

// Dense 2x2 complex matrix, row-major. Small enough to pass by value.
struct Mat2 {
    std::array<cplx, 4> a{};  // [row * 2 + col]

    constexpr cplx& operator()(int r, int c) { return a[r * 2 + c]; }
    constexpr const cplx& operator()(int r, int c) const { return a[r * 2 + c]; }

    static constexpr Mat2 zero() { return Mat2{}; }
    static constexpr Mat2 identity() { return Mat2{{cplx{1.0}, cplx{0.0}, cplx{0.0}, cplx{1.0}}}; }
    static constexpr Mat2 diag(cplx d0, cplx d1) { return Mat2{{d0, cplx{0.0}, cplx{0.0}, d1}}; }

    constexpr Mat2 operator+(const Mat2& o) const {
        return Mat2{{a[0] + o.a[0], a[1] + o.a[1], a[2] + o.a[2], a[3] + o.a[3]}};
    }
    constexpr Mat2 operator-(const Mat2& o) const {
        return Mat2{{a[0] - o.a[0], a[1] - o.a[1], a[2] - o.a[2], a[3] - o.a[3]}};
    }
    constexpr Mat2 operator*(const Mat2& o) const {
        return Mat2{{a[0] * o.a[0] + a[1] * o.a[2], a[0] * o.a[1] + a[1] * o.a[3],
                     a[2] * o.a[0] + a[3] * o.a[2], a[2] * o.a[1] + a[3] * o.a[3]}};
    }

    constexpr Mat2 adjoint() const {
        return Mat2{{std::conj(a[0]), std::conj(a[2]), std::conj(a[1]), std::conj(a[3])}};
    }
    constexpr cplx trace() const { return a[0] + a[3]; }

    double frobenius_norm() const {
        return std::sqrt(std::norm(a[0]) + std::norm(a[1]) + std::norm(a[2]) + std::norm(a[3]));
    }

    // Largest |entry| difference to another matrix.
    double max_abs_diff(const Mat2& o) const {
        double d = 0.0;
        for (int i = 0; i < 4; ++i) d = std::max(d, std::abs(a[i] - o.a[i]));
        return d;
    }
};

constexpr Mat2 operator*(cplx s, const Mat2& m) {
    return Mat2{{s * m.a[0], s * m.a[1], s * m.a[2], s * m.a[3]}};
}
constexpr Mat2 operator*(double s, const Mat2& m) { return cplx{s} * m; }

namespace pauli {
inline constexpr Mat2 x{{cplx{0.0}, cplx{1.0}, cplx{1.0}, cplx{0.0}}};
inline constexpr Mat2 y{{cplx{0.0}, cplx{0.0, -1.0}, cplx{0.0, 1.0}, cplx{0.0}}};
inline constexpr Mat2 z{{cplx{1.0}, cplx{0.0}, cplx{0.0}, cplx{-1.0}}};
}  // namespace pauli

// exp(-i * theta/2 * sigma_y): Bloch rotation about the y axis by theta.
inline Mat2 rotation_y(double theta) {
    const double c = std::cos(0.5 * theta);
    const double s = std::sin(0.5 * theta);
    return Mat2{{cplx{c}, cplx{-s}, cplx{s}, cplx{c}}};
}

// exp(-i * theta/2 * sigma_z): Bloch rotation about the z axis by theta.
inline Mat2 rotation_z(double theta) {
    return Mat2::diag(std::polar(1.0, -0.5 * theta), std::polar(1.0, 0.5 * theta));
}

}  // namespace qtraj
