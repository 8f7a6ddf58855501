#include <doctest.h>

#include <cmath>

#include "spinresolft/error.hpp"
#include "spinresolft/optics.hpp"

using namespace spinresolft;

TEST_CASE("confocal limit at 532 nm and NA 1.45") {
    CHECK(std::abs(ideal_fwhm(532e-9, 1.45, 0.0, 1e-6) / 1e-9 - 183.4) < 0.05);
    CHECK(std::abs(ideal_fwhm(532e-9, 1.45, 0.0, 0.0) - 532e-9 / 2.9) < 1e-18);
}

TEST_CASE("resolution follows the inverse square-root law") {
    double prev = ideal_fwhm(532e-9, 1.45, 0.0, 0.0);
    for (int i = 1; i <= 50; ++i) {
        const double x = 0.5 * i;  // Gamma * tau
        const double w = ideal_fwhm(532e-9, 1.45, x, 1.0);
        CHECK(w < prev);
        CHECK(w * std::sqrt(1.0 + x) == doctest::Approx(532e-9 / 2.9).epsilon(1e-14));
        prev = w;
    }
}

TEST_CASE("back-solved saturation product reproduces the target width") {
    for (double target : {20e-9, 50e-9, 150e-9}) {
        const double gt = saturation_product_for_fwhm(target, 532e-9, 1.45);
        CHECK(ideal_fwhm(532e-9, 1.45, gt, 1.0) == doctest::Approx(target).epsilon(1e-12));
    }
    CHECK_THROWS_AS(saturation_product_for_fwhm(300e-9, 532e-9, 1.45), ValidationError);
}

TEST_CASE("doughnut maximum agrees with numeric maximization") {
    for (double eps : {0.0, 0.001, 0.02, 0.2}) {
        const DoughnutProfile d{3.0, 300e-9, eps, {}};
        double best_r = 0.0, best = -1.0;
        for (int i = 0; i <= 200000; ++i) {
            const double r = 600e-9 * i / 200000.0;
            const double v = doughnut_intensity(d, r);
            if (v > best) {
                best = v;
                best_r = r;
            }
        }
        CHECK(doughnut_peak_radius(d) == doctest::Approx(best_r).epsilon(1e-4));
        CHECK(doughnut_peak_intensity(d) == doctest::Approx(best).epsilon(1e-9));
    }
}

TEST_CASE("doughnut center intensity is epsilon times s0") {
    const DoughnutProfile d{5.0, 300e-9, 0.02, {}};
    CHECK(doughnut_intensity(d, 0.0) == doctest::Approx(0.1));
}

TEST_CASE("Gaussian width conversions invert each other") {
    CHECK(gaussian_fwhm(155.8e-9) == doctest::Approx(155.8e-9 * std::sqrt(2.0 * std::log(2.0))));
    CHECK(gaussian_waist_for_fwhm(gaussian_fwhm(155.8e-9)) == doctest::Approx(155.8e-9));
    const GaussianProfile g{2.0, 155.8e-9, {}};
    CHECK(gaussian_intensity(g, 0.5 * gaussian_fwhm(g.waist)) == doctest::Approx(1.0));
}

TEST_CASE("beam validation") {
    CHECK_THROWS_AS((DoughnutProfile{-1.0, 300e-9, 0.0, {}}.validate()), ValidationError);
    CHECK_THROWS_AS((DoughnutProfile{1.0, 0.0, 0.0, {}}.validate()), ValidationError);
    CHECK_THROWS_AS((GaussianProfile{1.0, -1.0, {}}.validate()), ValidationError);
}
