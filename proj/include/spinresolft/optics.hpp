#pragma once

// Scalar lateral beam models and the ideal spin-RESOLFT resolution law.

#include <cmath>

namespace spinresolft {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Vec2 operator*(double k, Vec2 a) { return {k * a.x, k * a.y}; }
    friend bool operator==(const Vec2&, const Vec2&) = default;
    double norm() const { return std::hypot(x, y); }
};

/// Near-center doughnut: s0 * ((r/r0)^2 + epsilon) * exp(-(r/r0)^2).
struct DoughnutProfile {
    double s0 = 1.0;
    double r0 = 300e-9;
    double epsilon = 0.001;
    Vec2 center{};

    void validate() const;
};

/// Gaussian beam with 1/e^2 intensity radius `waist`.
struct GaussianProfile {
    double s_peak = 1.0;
    double waist = 155.8e-9;
    Vec2 center{};

    void validate() const;
};

/// Beam displacements from the nominal scan position.
struct BeamAlignment {
    Vec2 gaussian_offset{};
    Vec2 doughnut_offset{};

    void validate() const;
};

double doughnut_intensity(const DoughnutProfile& profile, double r);
double gaussian_intensity(const GaussianProfile& profile, double r);

/// Full width at half maximum of the Gaussian intensity profile.
double gaussian_fwhm(double waist);
/// Waist giving the requested intensity FWHM.
double gaussian_waist_for_fwhm(double fwhm);

/// Radius and value of the doughnut maximum.
double doughnut_peak_radius(const DoughnutProfile& profile);
double doughnut_peak_intensity(const DoughnutProfile& profile);

/// lambda / (2 NA sqrt(1 + pump_rate * tau)).
double ideal_fwhm(double lambda, double na, double pump_rate, double tau);

/// Inverse of ideal_fwhm for the dimensionless product pump_rate * tau.
double saturation_product_for_fwhm(double target_fwhm, double lambda, double na);

}  // namespace spinresolft
