#pragma once

// Independent reference computations. None of these call the code they check.

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "spinresolft/photophysics.hpp"
#include "spinresolft/sequences.hpp"

namespace oracle {

using namespace spinresolft;

// Rate equations written out level by level (not via rate_matrix).
inline std::array<double, 5> derivative(const std::array<double, 5>& n, double s, const RateConstants& r) {
    const double k31 = 1.0, k42 = 1.0;
    std::array<double, 5> d{};
    d[0] = -s * n[0] + k31 * n[2] + r.a51 * n[4];
    d[1] = -s * n[1] + k42 * n[3] + r.a52 * n[4];
    d[2] = s * n[0] - (k31 + r.a35) * n[2];
    d[3] = s * n[1] - (k42 + r.a45) * n[3];
    d[4] = r.a35 * n[2] + r.a45 * n[3] - (r.a51 + r.a52) * n[4];
    return d;
}

// Classic fixed-step RK4 in units of 1/gamma.
inline std::array<double, 5> rk4(std::array<double, 5> n, double s, double duration, const RateConstants& r,
                                 int steps) {
    const double h = duration * r.gamma_hz / steps;
    const auto axpy = [](const std::array<double, 5>& a, const std::array<double, 5>& b, double k) {
        std::array<double, 5> o{};
        for (int i = 0; i < 5; ++i) o[i] = a[i] + k * b[i];
        return o;
    };
    for (int k = 0; k < steps; ++k) {
        const auto k1 = derivative(n, s, r);
        const auto k2 = derivative(axpy(n, k1, h / 2), s, r);
        const auto k3 = derivative(axpy(n, k2, h / 2), s, r);
        const auto k4 = derivative(axpy(n, k3, h), s, r);
        for (int i = 0; i < 5; ++i) n[i] += h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
    }
    return n;
}

// Steady state from the kernel of the hand-written generator.
inline std::array<double, 5> null_space(double s, const RateConstants& r) {
    Eigen::Matrix<double, 5, 5> m;
    for (int j = 0; j < 5; ++j) {
        std::array<double, 5> e{};
        e[j] = 1.0;
        const auto col = derivative(e, s, r);
        for (int i = 0; i < 5; ++i) m(i, j) = col[i];
    }
    Eigen::FullPivLU<Eigen::Matrix<double, 5, 5>> lu(m);
    Eigen::VectorXd k = lu.kernel().col(0);
    k /= k.sum();
    return {k[0], k[1], k[2], k[3], k[4]};
}

// Sign of the toggling function at time t (0 outside the sensing window).
inline int toggling_sign(const std::vector<TogglingInterval>& iv, double t) {
    for (const auto& i : iv) {
        if (t >= i.start && t < i.end) return i.sign;
    }
    return 0;
}

// gamma * integral s(t) B(t) dt by the midpoint rule.
inline double midpoint_phase(const PulseSequence& seq, const ACField& f, double gamma, long steps) {
    const auto iv = seq.toggling();
    const double t0 = iv.front().start, t1 = iv.back().end;
    const double h = (t1 - t0) / static_cast<double>(steps);
    double acc = 0.0;
    for (long k = 0; k < steps; ++k) {
        const double t = t0 + (k + 0.5) * h;
        acc += toggling_sign(iv, t) * f.amplitude * std::sin(2.0 * kPi * f.frequency * t + f.phase);
    }
    return gamma * acc * h;
}

// Monte Carlo variance of the accumulated phase for a narrowband random field
// B(t) = sqrt(2) Re[Z(t) exp(i 2 pi nu t)], Z a unit complex Ornstein-Uhlenbeck process,
// so <B(t) B(t')> = cos(2 pi nu (t - t')) exp(-|t - t'| / t_c). Unit coupling (gamma = B_rms = 1).
inline double mc_phase_variance(const PulseSequence& seq, double nu, double t_c, int paths, int steps_per_unit,
                                double unit, std::uint64_t seed) {
    const auto iv = seq.toggling();
    const double t0 = iv.front().start, t1 = iv.back().end;
    const long steps = std::max<long>(16, static_cast<long>(std::ceil((t1 - t0) / unit * steps_per_unit)));
    const double h = (t1 - t0) / static_cast<double>(steps);
    const double decay = std::exp(-h / t_c);
    const double kick = std::sqrt((1.0 - decay * decay) / 2.0);
    std::vector<int> sign(static_cast<std::size_t>(steps));
    std::vector<std::complex<double>> carrier(static_cast<std::size_t>(steps));
    for (long k = 0; k < steps; ++k) {
        const double t = t0 + (k + 0.5) * h;
        sign[static_cast<std::size_t>(k)] = toggling_sign(iv, t);
        carrier[static_cast<std::size_t>(k)] = std::polar(1.0, 2.0 * kPi * nu * t);
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    double sum2 = 0.0;
    for (int p = 0; p < paths; ++p) {
        std::complex<double> z(g(rng) / std::sqrt(2.0), g(rng) / std::sqrt(2.0));
        double phi = 0.0;
        for (long k = 0; k < steps; ++k) {
            phi += sign[static_cast<std::size_t>(k)] * std::sqrt(2.0) * std::real(z * carrier[static_cast<std::size_t>(k)]);
            z = decay * z + kick * std::complex<double>(g(rng), g(rng));
        }
        phi *= h;
        sum2 += phi * phi;
    }
    return sum2 / paths;
}

}  // namespace oracle
