#include "spinresolft/fields.hpp"

#include <array>
#include <cmath>
#include <random>

#include "spinresolft/error.hpp"

namespace spinresolft {

using detail::require;

namespace {

// 8-point Gauss-Legendre on [-1, 1].
constexpr std::array<double, 4> kGlNodes = {0.1834346424956498, 0.5255324099163290,
                                            0.7966664774136267, 0.9602898564975363};
constexpr std::array<double, 4> kGlWeights = {0.3626837833783620, 0.3137066458778873,
                                              0.2223810344533745, 0.1012285362903763};

double mu0_over_2pi(const PhysicalConstants& c) { return c.mu0 / kTwoPi; }

void check_outside(const Vec3& pos, const WireGeometry& wire) {
    const double dx = pos.x - wire.center.x;
    const double dz = pos.z - wire.center.z;
    require(std::hypot(dx, dz) > wire.radius, "field evaluation point lies inside the conductor");
}

}  // namespace

double Vec3::norm() const { return std::sqrt(x * x + y * y + z * z); }

void WireGeometry::validate() const {
    require(radius > 0.0, "wire: radius must be > 0");
    require(std::isfinite(current), "wire: current must be finite");
    require(frequency >= 0.0, "wire: frequency must be >= 0");
}

Vec3 NVOrientation::axis() const {
    return {std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)};
}

void NVOrientation::validate() const {
    require(theta >= 0.0 && theta <= kPi, "nv orientation: theta must lie in [0, pi]");
    require(phi >= 0.0 && phi < kTwoPi, "nv orientation: phi must lie in [0, 2pi)");
}

Vec3 wire_field(const Vec3& pos, const WireGeometry& wire, const PhysicalConstants& c) {
    wire.validate();
    check_outside(pos, wire);
    const double x = pos.x - wire.center.x;
    const double z = pos.z - wire.center.z;
    const double k = mu0_over_2pi(c) * wire.current / (x * x + z * z);
    // y_hat x (x, 0, z) = (z, 0, -x)
    return {k * z, 0.0, -k * x};
}

Vec3 biot_savart_segment(const Vec3& pos, const WireGeometry& wire, double half_length, int panels,
                         const PhysicalConstants& c) {
    wire.validate();
    check_outside(pos, wire);
    require(half_length > 0.0 && panels > 0, "biot_savart_segment: bad discretization");
    const double x = pos.x - wire.center.x;
    const double y = pos.y - wire.center.y;
    const double z = pos.z - wire.center.z;
    const double rho = std::hypot(x, z);
    // y' = y + rho * tan(u) flattens the 1/r^3 peak.
    const double u_lo = std::atan((-half_length - y) / rho);
    const double u_hi = std::atan((half_length - y) / rho);
    const double du = (u_hi - u_lo) / panels;
    // dl x (r - r') with dl = y_hat dy': (z, 0, -x) dy' / |r - r'|^3
    // |r - r'| = rho / cos(u), dy' = rho / cos^2(u) du  =>  integrand = cos(u) / rho^2 du
    double integral = 0.0;
    for (int p = 0; p < panels; ++p) {
        const double mid = u_lo + (p + 0.5) * du;
        for (std::size_t i = 0; i < kGlNodes.size(); ++i) {
            for (double sgn : {-1.0, 1.0}) {
                const double u = mid + sgn * kGlNodes[i] * du / 2.0;
                integral += kGlWeights[i] * std::cos(u) * du / 2.0;
            }
        }
    }
    const double k = c.mu0 / (4.0 * kPi) * wire.current * integral / (rho * rho);
    return {k * z, 0.0, -k * x};
}

double b_parallel(const Vec3& pos, const WireGeometry& wire, const NVOrientation& nv,
                  ProjectionVariant variant, const PhysicalConstants& c) {
    nv.validate();
    if (variant == ProjectionVariant::Tangential) return wire_field(pos, wire, c).dot(nv.axis());
    wire.validate();
    check_outside(pos, wire);
    const double x = pos.x - wire.center.x;
    const double z = pos.z - wire.center.z;
    return mu0_over_2pi(c) * wire.current / (x * x + z * z) *
           (z * std::sin(nv.phi) * std::cos(nv.theta) + x * std::cos(nv.phi));
}

double gradient_parallel(const Vec3& pos, const WireGeometry& wire, const NVOrientation& nv,
                         double step, ProjectionVariant variant, const PhysicalConstants& c) {
    require(step > 0.0, "gradient_parallel: step must be > 0");
    const Vec3 dx{step, 0.0, 0.0};
    return (b_parallel(pos + dx, wire, nv, variant, c) - b_parallel(pos - dx, wire, nv, variant, c)) /
           (2.0 * step);
}

double gradient_parallel_richardson(const Vec3& pos, const WireGeometry& wire,
                                    const NVOrientation& nv, double step,
                                    ProjectionVariant variant, const PhysicalConstants& c) {
    const double coarse = gradient_parallel(pos, wire, nv, step, variant, c);
    const double fine = gradient_parallel(pos, wire, nv, step / 2.0, variant, c);
    return (4.0 * fine - coarse) / 3.0;
}

double b_perpendicular(const Vec3& pos, const WireGeometry& wire, const NVOrientation& nv,
                       const PhysicalConstants& c) {
    nv.validate();
    const Vec3 b = wire_field(pos, wire, c);
    const Vec3 n = nv.axis();
    return (b - b.dot(n) * n).norm();
}

double rabi_frequency(const Vec3& pos, const WireGeometry& wire, const NVOrientation& nv,
                      double current, double drive_factor, const PhysicalConstants& c) {
    require(drive_factor > 0.0, "rabi_frequency: drive factor must be > 0");
    WireGeometry driven = wire;
    driven.current = current;
    return c.gamma_e / kTwoPi * b_perpendicular(pos, driven, nv, c) * drive_factor;
}

void ProtonBath::validate() const {
    require(std::isfinite(rho) && rho >= 0.0, "proton bath: density must be >= 0");
    require(std::isfinite(d_nv) && d_nv > 0.0, "proton bath: depth must be > 0");
}

namespace {

double dipolar_prefactor(const PhysicalConstants& c) { return c.mu0 / (4.0 * kPi) * c.hbar * c.gamma_p; }

}  // namespace

double proton_brms(const ProtonBath& bath, double nv_theta, const PhysicalConstants& c) {
    bath.validate();
    const double s2 = std::sin(nv_theta) * std::sin(nv_theta);
    const double geometry = kPi * (8.0 - 3.0 * s2 * s2) / 128.0;
    const double k = dipolar_prefactor(c);
    return std::sqrt(bath.rho * k * k * geometry / (bath.d_nv * bath.d_nv * bath.d_nv));
}

double depth_for_brms(double b_rms, double rho, double nv_theta, const PhysicalConstants& c) {
    require(b_rms > 0.0 && rho > 0.0, "depth_for_brms: B_rms and rho must be > 0");
    const double unit = proton_brms({rho, 1.0}, nv_theta, c);  // value at d = 1 m
    return std::cbrt((unit / b_rms) * (unit / b_rms));
}

DipolarEstimate proton_brms_monte_carlo(const ProtonBath& bath, double nv_theta,
                                        std::uint64_t samples, std::uint64_t seed,
                                        const PhysicalConstants& c) {
    bath.validate();
    require(samples >= 2, "proton_brms_monte_carlo: need at least 2 samples");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double d = bath.d_nv;
    const Vec3 n{std::sin(nv_theta), 0.0, std::cos(nv_theta)};
    // Importance sampling over the half-space z >= d (NV at the origin):
    //   z ~ 3 d^3 / z^4, lateral radius rho ~ 2 rho z^2 / (rho^2 + z^2)^2, azimuth uniform.
    // Per-proton variance along n: (k^2 * 9/4) c^2 (1 - c^2) / r^6, c = n . r_hat.
    double sum = 0.0;
    double sum_sq = 0.0;
    for (std::uint64_t i = 0; i < samples; ++i) {
        const double z = d / std::cbrt(1.0 - uni(rng));
        const double u = uni(rng);
        const double lateral = z * std::sqrt(u / (1.0 - u));
        const double az = kTwoPi * uni(rng);
        const Vec3 r{lateral * std::cos(az), lateral * std::sin(az), z};
        const double r2 = r.dot(r);
        const double cosine = r.dot(n) / std::sqrt(r2);
        const double integrand = 2.25 * cosine * cosine * (1.0 - cosine * cosine) / (r2 * r2 * r2);
        const double density = (3.0 * d * d * d / (z * z * z * z)) *
                               (2.0 * z * z / ((lateral * lateral + z * z) * (lateral * lateral + z * z))) /
                               kTwoPi;
        const double w = integrand / density;
        sum += w;
        sum_sq += w * w;
    }
    const double mean = sum / static_cast<double>(samples);
    const double var = (sum_sq / static_cast<double>(samples) - mean * mean) / static_cast<double>(samples - 1);
    const double k = dipolar_prefactor(c);
    DipolarEstimate out;
    out.b_rms = std::sqrt(bath.rho * k * k * mean);
    out.relative_error = 0.5 * std::sqrt(std::max(var, 0.0)) / mean;
    return out;
}

}  // namespace spinresolft
