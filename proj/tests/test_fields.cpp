#include <doctest.h>

#include <cmath>

#include "spinresolft/error.hpp"
#include "spinresolft/fields.hpp"

using namespace spinresolft;

namespace {

// Biot-Savart along the y-directed filament, y = rho tan(u), midpoint in u.
Vec3 biot_savart_oracle(const Vec3& p, const WireGeometry& w, int steps) {
    const double x = p.x - w.center.x, z = p.z - w.center.z;
    const double rho = std::hypot(x, z);
    const double lim = kPi / 2.0 - 1e-9;
    const double h = 2.0 * lim / steps;
    Vec3 acc{};
    for (int k = 0; k < steps; ++k) {
        const double u = -lim + (k + 0.5) * h;
        const double y = rho * std::tan(u);
        const double dy = rho / (std::cos(u) * std::cos(u)) * h;
        const Vec3 r{x, -y, z};
        const double r3 = std::pow(r.norm(), 3);
        // dl = y_hat dy; y_hat x r = (r.z, 0, -r.x)
        acc = acc + (dy / r3) * Vec3{r.z, 0.0, -r.x};
    }
    return (kCodata.mu0 * w.current / (4.0 * kPi)) * acc;
}

const Vec3 kNv1{23.31e-6, 0.0, 26.18e-6};

}  // namespace

TEST_CASE("wire field magnitude is mu0 I / (2 pi r) and circulates") {
    const WireGeometry w;
    for (const Vec3 p : {Vec3{20e-6, 0, 5e-6}, Vec3{-40e-6, 3e-6, 30e-6}, kNv1}) {
        const Vec3 b = wire_field(p, w);
        const double r = std::hypot(p.x, p.z);
        CHECK(b.norm() == doctest::Approx(kCodata.mu0 * w.current / (2 * kPi * r)).epsilon(1e-10));
        CHECK(std::abs(b.dot(Vec3{p.x, 0, p.z})) < 1e-12 * b.norm() * r);
        CHECK(b.y == 0.0);
    }
    CHECK_THROWS_AS(wire_field(Vec3{5e-6, 0, 0}, w), ValidationError);
}

TEST_CASE("wire field matches an independent Biot-Savart integral") {
    const WireGeometry w;
    for (const Vec3 p : {kNv1, Vec3{-22.5e-6, 0, 20e-6}, Vec3{50e-6, 0, -15e-6}}) {
        const Vec3 ref = biot_savart_oracle(p, w, 200000);
        const Vec3 b = wire_field(p, w);
        CHECK((b - ref).norm() < 1e-8 * ref.norm());
        const Vec3 seg = biot_savart_segment(p, w, 1.0);
        CHECK((seg - ref).norm() < 1e-8 * ref.norm());
    }
}

TEST_CASE("projected field at the two NVs") {
    const WireGeometry w;
    const NVOrientation nv{54.7 * kPi / 180.0, 0.0};
    const Vec3 nv2 = kNv1 + Vec3{105e-9, 0, 0};
    const double b1 = b_parallel(kNv1, w, nv), b2 = b_parallel(nv2, w, nv);
    CHECK(b1 / 1e-6 == doctest::Approx(8.997178).epsilon(1e-6));
    CHECK(b2 / 1e-6 == doctest::Approx(8.892541).epsilon(1e-6));
    const double g = gradient_parallel_richardson(kNv1, w, nv, 10e-9);
    CHECK(g / (1e-9 / 1e-9) == doctest::Approx(-0.99976).epsilon(1e-4));
    // tangential closed form
    const double r2 = kNv1.x * kNv1.x + kNv1.z * kNv1.z;
    const double k = kCodata.mu0 / (2 * kPi) * w.current / r2;
    CHECK(b1 == doctest::Approx(k * (kNv1.z * std::sin(nv.theta) - kNv1.x * std::cos(nv.theta))).epsilon(1e-12));
}

TEST_CASE("gradient agrees with the analytic derivative") {
    const WireGeometry w;
    const NVOrientation nv{54.7 * kPi / 180.0, 0.0};
    const double st = std::sin(nv.theta), ct = std::cos(nv.theta);
    const double c = kCodata.mu0 / (2 * kPi) * w.current;
    for (const Vec3 p : {kNv1, Vec3{-30e-6, 0, 20e-6}, Vec3{10e-6, 0, 40e-6}}) {
        const double x = p.x, z = p.z, r2 = x * x + z * z;
        // d/dx [(z st - x ct) / r2]
        const double want = c * (-ct / r2 - 2 * x * (z * st - x * ct) / (r2 * r2));
        CHECK(gradient_parallel(p, w, nv, 1e-9) == doctest::Approx(want).epsilon(1e-6));
        CHECK(gradient_parallel_richardson(p, w, nv, 50e-9) == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("printed and tangential projections at the printed geometry") {
    const WireGeometry w;
    const NVOrientation nv{54.7 * kPi / 180.0, 0.0};
    const Vec3 p{-22.5e-6, 0, 20e-6};
    CHECK(b_parallel(p, w, nv, ProjectionVariant::Printed) / 1e-6 == doctest::Approx(-34.759).epsilon(1e-4));
    CHECK(b_parallel(p, w, nv, ProjectionVariant::Tangential) / 1e-6 == doctest::Approx(45.301).epsilon(1e-4));
}

TEST_CASE("Rabi frequency from the perpendicular field") {
    const WireGeometry w;
    const NVOrientation nv{54.7 * kPi / 180.0, 0.0};
    CHECK(rabi_frequency(kNv1, w, nv, 30e-3, 1.0) / 1e6 == doctest::Approx(4.6736).epsilon(1e-4));
    CHECK(rabi_frequency(kNv1, w, nv, 30e-3, 1.176813) / 1e6 == doctest::Approx(5.5).epsilon(1e-6));
    // perpendicular and parallel parts rebuild |B|
    const double bpar = b_parallel(kNv1, w, nv), bperp = b_perpendicular(kNv1, w, nv);
    CHECK(std::hypot(bpar, bperp) == doctest::Approx(wire_field(kNv1, w).norm()).epsilon(1e-12));
    // linear in current
    CHECK(rabi_frequency(kNv1, w, nv, 60e-3, 1.0) == doctest::Approx(2 * rabi_frequency(kNv1, w, nv, 30e-3, 1.0)));
}

TEST_CASE("proton bath RMS field") {
    const ProtonBath bath{6e28, 3e-9};
    const double b = proton_brms(bath);
    CHECK(b / 1e-6 == doctest::Approx(1.701).epsilon(1e-3));
    // B_rms^2 d^3 is depth independent
    for (double d : {1e-9, 5e-9, 20e-9}) {
        const double bd = proton_brms(ProtonBath{6e28, d});
        CHECK(bd * bd * d * d * d == doctest::Approx(b * b * 27e-27).epsilon(1e-12));
        CHECK(depth_for_brms(bd, 6e28) == doctest::Approx(d).epsilon(1e-10));
    }
    // and linear in density for B_rms^2
    CHECK(std::pow(proton_brms(ProtonBath{3e28, 3e-9}), 2) == doctest::Approx(b * b / 2));
    for (double theta : {0.0, 0.9553166181245093, kPi / 2}) {
        const auto mc = proton_brms_monte_carlo(bath, theta, 400000, 9);
        CHECK(std::abs(mc.b_rms / proton_brms(bath, theta) - 1.0) < std::max(0.01, 4 * mc.relative_error));
    }
    CHECK_THROWS_AS(proton_brms(ProtonBath{6e28, -1e-9}), ValidationError);
}
