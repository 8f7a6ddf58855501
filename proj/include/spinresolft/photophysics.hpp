#pragma once

// Five-level rate-equation model of NV optical pumping.
//
// Levels: 1 = ground m_s=0, 2 = ground m_s=-1, 3 = excited m_s=0,
// 4 = excited m_s=-1, 5 = metastable singlet. Time is measured in units of
// the radiative decay rate gamma; the pump enters as s = I*sigma/gamma.

#include <array>
#include <span>
#include <string>

#include <Eigen/Core>

namespace spinresolft {

using RateMatrix = Eigen::Matrix<double, 5, 5>;
using PopulationVector = Eigen::Matrix<double, 5, 1>;

struct RateConstants {
    double gamma_hz = 65.0e6;       // radiative decay rate (1/s)
    double a35 = 11.0 / 65.0;       // excited m_s=0 -> singlet, relative to gamma
    double a45 = 80.0 / 65.0;       // excited m_s=-1 -> singlet
    double a51 = 3.0 / 65.0;        // singlet -> ground m_s=0
    double a52 = 2.6 / 65.0;        // singlet -> ground m_s=-1
    double sigma_scale = 1.0;       // s per unit physical intensity (optional calibration)

    /// Room-temperature set shipped in data/rates_room_temperature.json.
    static RateConstants room_temperature() { return {}; }

    void validate() const;

    friend bool operator==(const RateConstants&, const RateConstants&) = default;
};

/// Occupation probabilities n1..n5.
struct PopulationState {
    std::array<double, 5> n{};

    static PopulationState ground_ms0() { return {{1.0, 0.0, 0.0, 0.0, 0.0}}; }
    static PopulationState ground_ms1() { return {{0.0, 1.0, 0.0, 0.0, 0.0}}; }
    static PopulationState unpolarized() { return {{0.5, 0.5, 0.0, 0.0, 0.0}}; }

    double total() const { return n[0] + n[1] + n[2] + n[3] + n[4]; }
    double transient() const { return n[2] + n[3] + n[4]; }
    double operator[](std::size_t i) const { return n[i]; }

    PopulationVector vector() const;
    static PopulationState from_vector(const PopulationVector& v);

    void validate() const;
};

/// Constant pump s applied for `duration` seconds.
struct IlluminationSegment {
    double s = 0.0;
    double duration = 0.0;

    void validate() const;
};

/// Generator of the populations in units of gamma, for pump s.
/// Columns sum to zero, so total population is conserved exactly.
RateMatrix rate_matrix(double s, const RateConstants& rates);

/// Exact propagator exp(M(s) * gamma * duration).
RateMatrix propagator(const IlluminationSegment& seg, const RateConstants& rates);

PopulationState evolve(const PopulationState& state, const IlluminationSegment& seg,
                       const RateConstants& rates);

PopulationState evolve(const PopulationState& state, std::span<const IlluminationSegment> train,
                       const RateConstants& rates);

/// Null vector of M(s), normalized. Rejects s <= 0, where both ground states are absorbing.
PopulationState steady_state(double s, const RateConstants& rates);

/// Dark relaxation to the ground manifold in closed form (branching ratios).
PopulationState relax(const PopulationState& state, const RateConstants& rates);

/// Ground m_s=0 occupancy after dark propagation until n3+n4+n5 < 1e-9.
double polarization(const PopulationState& state, const RateConstants& rates);

/// Relaxed m_s=0 polarization reached in the weak-pump limit s -> 0+.
/// This is the best polarization the model can produce.
double weak_pump_polarization(const RateConstants& rates);

/// Relaxed m_s=0 polarization of steady_state(s); continuous at s=0 via the weak-pump limit.
double steady_state_polarization(double s, const RateConstants& rates);

/// efficiency * gamma * integral_0^window (n3 + n4) dt under pump s.
double fluorescence(const PopulationState& state, double s, double window,
                    const RateConstants& rates, double efficiency);

/// Readout settings. `efficiency` is the collection efficiency, calibrated so a
/// fully repolarized NV yields `photons_per_shot` (see calibrated()).
struct ReadoutConfig {
    double s = 1.0;
    double window = 300e-9;
    double efficiency = 1.0;

    /// Copy with efficiency chosen so the weak-pump polarized state yields `photons_per_shot`.
    ReadoutConfig calibrated(const RateConstants& rates, double photons_per_shot = 0.02) const;
};

/// Linear readout functional: fluorescence(state) == functional.dot(state).
/// Precomputed once so scans need one matrix exponential per configuration.
class ReadoutFunctional {
public:
    ReadoutFunctional(const ReadoutConfig& config, const RateConstants& rates);

    double operator()(const PopulationState& state) const;
    const Eigen::Matrix<double, 1, 5>& weights() const { return weights_; }

private:
    Eigen::Matrix<double, 1, 5> weights_;
};

}  // namespace spinresolft
