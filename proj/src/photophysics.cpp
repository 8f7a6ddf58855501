#include "spinresolft/photophysics.hpp"

#include <cmath>
#include <iostream>

#include <unsupported/Eigen/MatrixFunctions>

#include "spinresolft/error.hpp"

namespace spinresolft {

using detail::require;

namespace {

constexpr double kNegativeTolerance = 1e-12;

PopulationState clamp_populations(const PopulationVector& v) {
    PopulationState out = PopulationState::from_vector(v);
    for (double& x : out.n) {
        if (x < 0.0) {
            if (x < -kNegativeTolerance) {
                std::cerr << "spinresolft: population " << x << " clamped to 0\n";
            }
            x = 0.0;
        }
    }
    return out;
}

}  // namespace

void RateConstants::validate() const {
    require(std::isfinite(gamma_hz) && gamma_hz > 0.0, "rates: gamma_hz must be positive");
    for (double a : {a35, a45, a51, a52, sigma_scale}) {
        require(std::isfinite(a) && a >= 0.0, "rates: branching ratios must be finite and >= 0");
    }
    require(a45 > a35, "rates: a45 must exceed a35 (m_s=-1 must be darker)");
    require(a51 + a52 > 0.0, "rates: singlet must decay (a51 + a52 > 0)");
}

PopulationVector PopulationState::vector() const {
    PopulationVector v;
    for (int i = 0; i < 5; ++i) v(i) = n[static_cast<std::size_t>(i)];
    return v;
}

PopulationState PopulationState::from_vector(const PopulationVector& v) {
    PopulationState s;
    for (int i = 0; i < 5; ++i) s.n[static_cast<std::size_t>(i)] = v(i);
    return s;
}

void PopulationState::validate() const {
    for (double x : n) {
        require(std::isfinite(x), "population: non-finite entry");
        require(x >= -kNegativeTolerance && x <= 1.0 + 1e-9, "population: entry outside [0,1]");
    }
    require(std::abs(total() - 1.0) < 1e-9, "population: entries must sum to 1");
}

void IlluminationSegment::validate() const {
    require(std::isfinite(s) && s >= 0.0, "segment: pump s must be finite and >= 0");
    require(std::isfinite(duration) && duration >= 0.0, "segment: duration must be finite and >= 0");
}

RateMatrix rate_matrix(double s, const RateConstants& r) {
    RateMatrix m = RateMatrix::Zero();
    // d n1 = -s n1 + n3 + a51 n5
    m(0, 0) = -s;
    m(0, 2) = 1.0;
    m(0, 4) = r.a51;
    // d n2 = -s n2 + n4 + a52 n5
    m(1, 1) = -s;
    m(1, 3) = 1.0;
    m(1, 4) = r.a52;
    // d n3 = s n1 - (1 + a35) n3
    m(2, 0) = s;
    m(2, 2) = -(1.0 + r.a35);
    // d n4 = s n2 - (1 + a45) n4
    m(3, 1) = s;
    m(3, 3) = -(1.0 + r.a45);
    // d n5 = a35 n3 + a45 n4 - (a51 + a52) n5
    m(4, 2) = r.a35;
    m(4, 3) = r.a45;
    m(4, 4) = -(r.a51 + r.a52);
    return m;
}

RateMatrix propagator(const IlluminationSegment& seg, const RateConstants& rates) {
    seg.validate();
    if (seg.duration == 0.0) return RateMatrix::Identity();
    const RateMatrix generator = rate_matrix(seg.s, rates) * (rates.gamma_hz * seg.duration);
    return generator.exp();
}

PopulationState evolve(const PopulationState& state, const IlluminationSegment& seg,
                       const RateConstants& rates) {
    state.validate();
    rates.validate();
    return clamp_populations(propagator(seg, rates) * state.vector());
}

PopulationState evolve(const PopulationState& state, std::span<const IlluminationSegment> train,
                       const RateConstants& rates) {
    state.validate();
    rates.validate();
    PopulationVector v = state.vector();
    const IlluminationSegment* cached_seg = nullptr;
    RateMatrix cached;
    for (const auto& seg : train) {
        if (cached_seg == nullptr || seg.s != cached_seg->s || seg.duration != cached_seg->duration) {
            cached = propagator(seg, rates);
            cached_seg = &seg;
        }
        v = cached * v;
    }
    return clamp_populations(v);
}

PopulationState steady_state(double s, const RateConstants& rates) {
    rates.validate();
    require(std::isfinite(s) && s > 0.0, "steady_state: pump s must be > 0");
    RateMatrix a = rate_matrix(s, rates);
    a.row(4).setOnes();
    PopulationVector b = PopulationVector::Zero();
    b(4) = 1.0;
    return clamp_populations(a.fullPivLu().solve(b));
}

PopulationState relax(const PopulationState& state, const RateConstants& r) {
    const auto& n = state.n;
    const double to_singlet3 = r.a35 / (1.0 + r.a35);
    const double to_singlet4 = r.a45 / (1.0 + r.a45);
    const double singlet = n[4] + n[2] * to_singlet3 + n[3] * to_singlet4;
    const double f51 = r.a51 / (r.a51 + r.a52);
    PopulationState out;
    out.n[0] = n[0] + n[2] * (1.0 - to_singlet3) + singlet * f51;
    out.n[1] = n[1] + n[3] * (1.0 - to_singlet4) + singlet * (1.0 - f51);
    return out;
}

double polarization(const PopulationState& state, const RateConstants& rates) {
    state.validate();
    rates.validate();
    // Slowest dark mode is the singlet decay; step a few of its lifetimes at a time.
    const double slowest = std::min({1.0, 1.0 + rates.a35, rates.a51 + rates.a52});
    const IlluminationSegment step{0.0, 5.0 / (slowest * rates.gamma_hz)};
    const RateMatrix p = propagator(step, rates);
    PopulationVector v = state.vector();
    for (int i = 0; i < 1000 && v(2) + v(3) + v(4) >= 1e-9; ++i) v = p * v;
    return clamp_populations(v).n[0];
}

double weak_pump_polarization(const RateConstants& r) {
    r.validate();
    // Steady-state balance for s -> 0: s n1 a35/(1+a35) = a51 n5, s n2 a45/(1+a45) = a52 n5.
    const double ratio = (r.a51 / r.a52) * (r.a45 / (1.0 + r.a45)) / (r.a35 / (1.0 + r.a35));
    if (!std::isfinite(ratio)) return 1.0;
    return ratio / (1.0 + ratio);
}

double steady_state_polarization(double s, const RateConstants& rates) {
    if (s <= 0.0) return weak_pump_polarization(rates);
    return relax(steady_state(s, rates), rates).n[0];
}

namespace {

Eigen::Matrix<double, 1, 5> readout_weights(double s, double window, const RateConstants& rates) {
    // Augmented system: the sixth component accumulates gamma * (n3 + n4).
    using Mat6 = Eigen::Matrix<double, 6, 6>;
    Mat6 a = Mat6::Zero();
    a.topLeftCorner<5, 5>() = rate_matrix(s, rates);
    a(5, 2) = 1.0;
    a(5, 3) = 1.0;
    const Mat6 e = (a * (rates.gamma_hz * window)).exp();
    return e.block<1, 5>(5, 0);
}

}  // namespace

double fluorescence(const PopulationState& state, double s, double window,
                    const RateConstants& rates, double efficiency) {
    state.validate();
    rates.validate();
    require(std::isfinite(s) && s >= 0.0, "fluorescence: pump s must be >= 0");
    require(std::isfinite(window) && window > 0.0, "fluorescence: window must be > 0");
    require(std::isfinite(efficiency) && efficiency >= 0.0, "fluorescence: efficiency must be >= 0");
    return efficiency * readout_weights(s, window, rates).dot(state.vector().transpose());
}

ReadoutConfig ReadoutConfig::calibrated(const RateConstants& rates, double photons_per_shot) const {
    const double p = weak_pump_polarization(rates);
    const PopulationState polarized{{p, 1.0 - p, 0.0, 0.0, 0.0}};
    const double raw = fluorescence(polarized, s, window, rates, 1.0);
    ReadoutConfig out = *this;
    out.efficiency = photons_per_shot / raw;
    return out;
}

ReadoutFunctional::ReadoutFunctional(const ReadoutConfig& config, const RateConstants& rates) {
    rates.validate();
    require(config.window > 0.0, "readout: window must be > 0");
    weights_ = config.efficiency * readout_weights(config.s, config.window, rates);
}

double ReadoutFunctional::operator()(const PopulationState& state) const {
    return weights_.dot(state.vector().transpose());
}

}  // namespace spinresolft
