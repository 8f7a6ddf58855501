#include <doctest.h>

#include <random>
#include <vector>

#include "oracles.hpp"
#include "spinresolft/error.hpp"
#include "spinresolft/photophysics.hpp"

using namespace spinresolft;

TEST_CASE("rate matrix columns sum to zero") {
    const RateConstants r;
    for (double s : {0.0, 0.01, 1.0, 30.0}) {
        const RateMatrix m = rate_matrix(s, r);
        for (int j = 0; j < 5; ++j) CHECK(std::abs(m.col(j).sum()) < 1e-15);
    }
}

TEST_CASE("evolution matches the RK4 oracle") {
    const RateConstants r;
    const PopulationState starts[] = {PopulationState::ground_ms0(), PopulationState::ground_ms1(),
                                      PopulationState::unpolarized(), PopulationState{{0.2, 0.1, 0.3, 0.25, 0.15}}};
    for (const auto& p0 : starts) {
        for (double s : {0.05, 1.0, 10.0}) {
            for (double t : {5e-9, 100e-9, 2e-6}) {
                const auto ref = oracle::rk4(p0.n, s, t, r, 20000);
                const auto got = evolve(p0, {s, t}, r);
                for (int i = 0; i < 5; ++i) CHECK(std::abs(got.n[i] - ref[i]) < 1e-6);
            }
        }
    }
}

TEST_CASE("population is conserved over a long random pulse train") {
    const RateConstants r;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> s(0.0, 20.0), t(1e-9, 1e-6);
    std::vector<IlluminationSegment> train;
    for (int i = 0; i < 10000; ++i) train.push_back({s(rng), t(rng)});
    const auto out = evolve(PopulationState::unpolarized(), train, r);
    CHECK(std::abs(out.total() - 1.0) < 1e-9);
    for (double n : out.n) CHECK(n >= 0.0);
}

TEST_CASE("steady state is the null vector of the generator") {
    const RateConstants r;
    for (double s : {0.01, 0.3, 1.0, 5.0, 50.0}) {
        const auto ref = oracle::null_space(s, r);
        const auto got = steady_state(s, r);
        for (int i = 0; i < 5; ++i) CHECK(std::abs(got.n[i] - ref[i]) < 1e-12);
        // long illumination converges to it
        const auto late = evolve(PopulationState::ground_ms1(), {s, 5e-3}, r);
        for (int i = 0; i < 5; ++i) CHECK(std::abs(late.n[i] - ref[i]) < 1e-8);
    }
    CHECK_THROWS_AS(steady_state(0.0, r), ValidationError);
}

TEST_CASE("dark relaxation empties the transient levels and keeps the total") {
    const RateConstants r;
    const PopulationState p{{0.2, 0.1, 0.3, 0.25, 0.15}};
    const auto relaxed = relax(p, r);
    CHECK(relaxed.transient() == doctest::Approx(0.0));
    CHECK(relaxed.total() == doctest::Approx(1.0));
    // matches long dark evolution
    const auto dark = evolve(p, {0.0, 20e-6}, r);
    CHECK(relaxed.n[0] == doctest::Approx(dark.n[0]).epsilon(1e-9));
    CHECK(polarization(p, r) == doctest::Approx(relaxed.n[0]).epsilon(1e-8));
}

TEST_CASE("weak-pump polarization bounds every steady state") {
    const RateConstants r;
    const double best = weak_pump_polarization(r);
    CHECK(best > 0.5);
    CHECK(best < 1.0);
    double prev = best;
    for (double s = 1e-4; s < 100.0; s *= 1.5) {
        const double p = steady_state_polarization(s, r);
        CHECK(p <= best + 1e-12);
        CHECK(p <= prev + 1e-12);  // falls monotonically with pump
        prev = p;
    }
    CHECK(steady_state_polarization(0.0, r) == doctest::Approx(best));
}

TEST_CASE("fluorescence is linear in the state and calibrates to the photon budget") {
    const RateConstants r;
    const ReadoutConfig cfg = ReadoutConfig{}.calibrated(r, 0.02);
    const double p = weak_pump_polarization(r);
    const PopulationState pol{{p, 1.0 - p, 0.0, 0.0, 0.0}};
    CHECK(fluorescence(pol, cfg.s, cfg.window, r, cfg.efficiency) == doctest::Approx(0.02).epsilon(1e-12));
    const ReadoutFunctional f(cfg, r);
    for (const auto& st : {PopulationState::ground_ms0(), PopulationState::ground_ms1(), PopulationState{{0.2, 0.1, 0.3, 0.25, 0.15}}}) {
        CHECK(f(st) == doctest::Approx(fluorescence(st, cfg.s, cfg.window, r, cfg.efficiency)).epsilon(1e-10));
    }
    // m_s=0 is the bright state
    CHECK(f(PopulationState::ground_ms0()) > 1.3 * f(PopulationState::ground_ms1()));
}

TEST_CASE("invalid inputs are rejected") {
    RateConstants bad;
    bad.a35 = -1.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    CHECK_THROWS_AS(evolve(PopulationState::ground_ms0(), {-1.0, 1e-6}, RateConstants{}), ValidationError);
    CHECK_THROWS_AS(evolve(PopulationState::ground_ms0(), {1.0, -1e-6}, RateConstants{}), ValidationError);
    CHECK_THROWS_AS(evolve(PopulationState{{0.5, 0.6, 0, 0, 0}}, {1.0, 1e-6}, RateConstants{}), ValidationError);
}
