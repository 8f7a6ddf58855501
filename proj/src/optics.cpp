#include "spinresolft/optics.hpp"

#include <numbers>

#include "spinresolft/error.hpp"

namespace spinresolft {

using detail::require;

void DoughnutProfile::validate() const {
    require(std::isfinite(s0) && s0 > 0.0, "doughnut: s0 must be > 0");
    require(std::isfinite(r0) && r0 > 0.0, "doughnut: r0 must be > 0");
    require(std::isfinite(epsilon) && epsilon >= 0.0 && epsilon < 1.0,
            "doughnut: epsilon must lie in [0, 1)");
}

void GaussianProfile::validate() const {
    require(std::isfinite(s_peak) && s_peak > 0.0, "gaussian: s_peak must be > 0");
    require(std::isfinite(waist) && waist > 0.0, "gaussian: waist must be > 0");
}

void BeamAlignment::validate() const {
    require(std::isfinite(gaussian_offset.x) && std::isfinite(gaussian_offset.y) &&
                std::isfinite(doughnut_offset.x) && std::isfinite(doughnut_offset.y),
            "alignment: offsets must be finite");
}

double doughnut_intensity(const DoughnutProfile& p, double r) {
    require(r >= 0.0, "doughnut_intensity: r must be >= 0");
    const double u = (r / p.r0) * (r / p.r0);
    return p.s0 * (u + p.epsilon) * std::exp(-u);
}

double gaussian_intensity(const GaussianProfile& p, double r) {
    require(r >= 0.0, "gaussian_intensity: r must be >= 0");
    return p.s_peak * std::exp(-2.0 * r * r / (p.waist * p.waist));
}

double gaussian_fwhm(double waist) { return waist * std::sqrt(2.0 * std::numbers::ln2); }

double gaussian_waist_for_fwhm(double fwhm) { return fwhm / std::sqrt(2.0 * std::numbers::ln2); }

double doughnut_peak_radius(const DoughnutProfile& p) { return p.r0 * std::sqrt(1.0 - p.epsilon); }

double doughnut_peak_intensity(const DoughnutProfile& p) { return p.s0 * std::exp(p.epsilon - 1.0); }

double ideal_fwhm(double lambda, double na, double pump_rate, double tau) {
    require(lambda > 0.0 && na > 0.0, "ideal_fwhm: lambda and NA must be > 0");
    require(pump_rate >= 0.0 && tau >= 0.0, "ideal_fwhm: pump rate and tau must be >= 0");
    return lambda / (2.0 * na * std::sqrt(1.0 + pump_rate * tau));
}

double saturation_product_for_fwhm(double target_fwhm, double lambda, double na) {
    require(target_fwhm > 0.0, "saturation_product_for_fwhm: target must be > 0");
    const double ratio = lambda / (2.0 * na * target_fwhm);
    require(ratio >= 1.0, "saturation_product_for_fwhm: target exceeds the confocal limit");
    return ratio * ratio - 1.0;
}

}  // namespace spinresolft
