#pragma once

// Magnetostatics of the current-carrying wire and the proton-bath field at a
// shallow NV.
//
// Frame: the wire runs along y through `center`; z is the diamond surface
// normal and x completes the right-handed frame.

#include <cstdint>

#include "spinresolft/constants.hpp"

namespace spinresolft {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend Vec3 operator*(double k, Vec3 a) { return {k * a.x, k * a.y, k * a.z}; }
    friend bool operator==(const Vec3&, const Vec3&) = default;
    double dot(Vec3 o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const;
};

struct WireGeometry {
    Vec3 center{};
    double radius = 12.5e-6;
    double current = 7e-3;      // amplitude (A)
    double frequency = 8.3e3;   // Hz

    void validate() const;
};

struct NVOrientation {
    double theta = 0.9553166181245093;  // arccos(1/sqrt(3)), the 54.7 deg <111> tilt
    double phi = 0.0;

    Vec3 axis() const;
    void validate() const;
};

enum class ProjectionVariant {
    /// (mu0/2pi) I/(x^2+z^2) * (z sin(phi) cos(theta) + x cos(phi)), as printed in the source model.
    Printed,
    /// Biot-Savart loop field projected on the NV axis:
    /// (mu0/2pi) I/(x^2+z^2) * (z sin(theta) cos(phi) - x cos(theta)).
    Tangential,
};

/// Infinite straight filament field at `pos` (outside the conductor).
Vec3 wire_field(const Vec3& pos, const WireGeometry& wire, const PhysicalConstants& c = kCodata);

/// Numeric Biot-Savart integral over a straight segment of half-length `half_length`,
/// with `samples` Gauss-Legendre nodes per panel. Oracle for wire_field.
Vec3 biot_savart_segment(const Vec3& pos, const WireGeometry& wire, double half_length,
                         int panels = 400, const PhysicalConstants& c = kCodata);

double b_parallel(const Vec3& pos, const WireGeometry& wire, const NVOrientation& nv,
                  ProjectionVariant variant = ProjectionVariant::Tangential,
                  const PhysicalConstants& c = kCodata);

/// Central difference of b_parallel along x.
double gradient_parallel(const Vec3& pos, const WireGeometry& wire, const NVOrientation& nv,
                         double step, ProjectionVariant variant = ProjectionVariant::Tangential,
                         const PhysicalConstants& c = kCodata);

/// Richardson-extrapolated central difference (steps h and h/2).
double gradient_parallel_richardson(const Vec3& pos, const WireGeometry& wire,
                                    const NVOrientation& nv, double step,
                                    ProjectionVariant variant = ProjectionVariant::Tangential,
                                    const PhysicalConstants& c = kCodata);

/// Magnitude of the wire field perpendicular to the NV axis.
double b_perpendicular(const Vec3& pos, const WireGeometry& wire, const NVOrientation& nv,
                       const PhysicalConstants& c = kCodata);

/// (gamma_e / 2 pi) * |B_perp| * drive_factor at the given current.
double rabi_frequency(const Vec3& pos, const WireGeometry& wire, const NVOrientation& nv,
                      double current, double drive_factor = 0.5,
                      const PhysicalConstants& c = kCodata);

struct ProtonBath {
    double rho = 6e28;     // protons per m^3
    double d_nv = 3e-9;    // NV depth below the surface (m)

    void validate() const;
};

/// RMS field along the NV axis from statistically polarized protons precessing about a
/// bias field parallel to that axis, filling the half-space above the surface:
/// B_rms^2 = rho (mu0 hbar gamma_p / 4 pi)^2 * pi (8 - 3 sin^4 theta) / (128 d^3),
/// theta the NV tilt from the surface normal. B_rms^2 therefore scales as d^-3.
double proton_brms(const ProtonBath& bath, double nv_theta = NVOrientation{}.theta,
                   const PhysicalConstants& c = kCodata);

/// Monte Carlo estimate of the same quantity: importance-sampled sum of squared
/// transverse-dipole couplings over the half-space above the surface.
struct DipolarEstimate {
    double b_rms = 0.0;
    double relative_error = 0.0;
};
DipolarEstimate proton_brms_monte_carlo(const ProtonBath& bath, double nv_theta,
                                        std::uint64_t samples, std::uint64_t seed,
                                        const PhysicalConstants& c = kCodata);

/// Inverse of proton_brms for depth.
double depth_for_brms(double b_rms, double rho, double nv_theta = NVOrientation{}.theta,
                      const PhysicalConstants& c = kCodata);

}  // namespace spinresolft
