#pragma once

// Spin-RESOLFT scan synthesis: the noiseless forward model, shot noise,
// drift and tracking, and the contrast experiments built on the same
// photon budget.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "spinresolft/fields.hpp"
#include "spinresolft/optics.hpp"
#include "spinresolft/photophysics.hpp"
#include "spinresolft/sequences.hpp"

namespace spinresolft {

struct NVEmitter {
    Vec2 position{};
    NVOrientation orientation{};
    double brightness = 1.0;
};

struct ScanConfig {
    std::vector<Vec2> pixels;
    int reps_per_pixel = 20000;
    double photons_per_shot = 0.02;
    PulseSequence sequence = build_imaging_shot(2.1e-6);
    double overhead_factor = 3.0;
    GaussianProfile gaussian{};
    DoughnutProfile doughnut{};
    BeamAlignment alignment{};
    std::vector<NVEmitter> nvs;
    RateConstants rates{};
    ReadoutConfig readout{};
    int lines = 1;
    bool running_average = false;
    std::uint64_t seed = 1;

    /// Total doughnut exposure per shot, read from the sequence.
    double doughnut_duration() const;
    void validate() const;
};

/// Evenly spaced 1-D grid along x, centered on `center`.
std::vector<Vec2> line_grid(int pixels, double span, Vec2 center = {});
/// Row-major 2-D grid.
std::vector<Vec2> square_grid(int pixels_per_side, double span, Vec2 center = {});

enum class DriftMode { Off, TemperatureCoupled, Stabilized };

struct DriftModel {
    DriftMode mode = DriftMode::Off;
    double coupling = 500e-9;            // m per degC
    double temperature_amplitude = 0.5;  // degC; 500 nm peak-to-peak at the default coupling
    double temperature_period = 3600.0;  // s
    double jitter_sigma = 11e-9;         // m, stabilized mode
    Vec2 direction{1.0, 0.0};

    void validate() const;
};

enum class TrackingReference { Self, ReferenceNV, GoldNanoparticle };

struct TrackingPolicy {
    bool enabled = false;
    int recenter_interval = 1;  // lines between relocalizations
    double precision = 5e-9;
    TrackingReference reference = TrackingReference::Self;
    Vec2 reference_offset{1e-6, 0.0};

    void validate() const;
};

struct LineRecord {
    double start_time = 0.0;
    double temperature = 0.0;
    Vec2 drift{};             // true displacement of the sample
    Vec2 tracked_estimate{};  // last relocalization result applied to the scan window
    Vec2 apparent_shift{};    // NV displacement seen in the scan frame
    std::vector<std::int64_t> sig;
    std::vector<std::int64_t> ref0;
};

struct ScanResult {
    std::vector<Vec2> pixels;
    std::vector<std::int64_t> sig;   // summed over lines
    std::vector<std::int64_t> ref0;
    std::vector<double> profile;     // ref0 - sig, optionally 2-pixel running average
    std::vector<LineRecord> lines;
    std::uint64_t seed = 0;
    double line_duration = 0.0;      // s, including overhead
};

/// Mean photon counts per pixel for one line scan with all NVs displaced by `shift`.
struct ExpectedCounts {
    std::vector<double> sig;
    std::vector<double> ref0;
    std::vector<double> profile() const;
};

/// Fraction of the local repolarization still missing after the doughnut:
///   1 - n1(r) / P_ss(s(r)),
/// where n1(r) is the relaxed m_s=0 population reached from m_s=-1 under pump
/// s(r) = doughnut_intensity(r) for tau_d, and P_ss the relaxed polarization the
/// same pump reaches at infinite duration. 1 at an ideal doughnut center, 0 where
/// repolarization is complete.
double resolft_psf(double r, const DoughnutProfile& doughnut, double tau_d, const RateConstants& rates);

/// Relaxed m_s=0 population after pumping an m_s=-1 NV at s for tau_d.
double repolarized_population(double s, double tau_d, const RateConstants& rates);

ExpectedCounts expected_counts(const ScanConfig& config, Vec2 shift = {});

ScanResult simulate_scan(const ScanConfig& config, const DriftModel& drift = {},
                         const TrackingPolicy& tracking = {});

/// 2-point running average of equally spaced samples (first sample kept as is).
std::vector<double> running_average2(std::span<const double> v);

struct AcquisitionBudget {
    double shot_duration = 0.0;
    double ideal_line_seconds = 0.0;
    double actual_line_seconds = 0.0;
    double total_actual_seconds = 0.0;
    double expected_reference_photons = 0.0;  // per pixel at the brightest point
    double relative_shot_noise = 0.0;         // 1/sqrt(photons)
};

AcquisitionBudget acquisition_budget(const ScanConfig& config);

/// One contributor to a two-projection contrast measurement.
struct ContrastChannel {
    std::function<double(double)> visibility;  // ideal contrast at the sweep value
    double weight = 1.0;                       // collected fluorescence weight
};

struct ContrastBudget {
    int reps = 20000;
    double photons_per_shot = 0.02;
    bool noiseless = false;
};

struct ContrastDataset {
    std::vector<double> x;
    std::vector<double> f0;
    std::vector<double> f1;
    std::vector<double> contrast;  // (F0 - F1) / (F0 + F1)
    std::vector<double> sigma;     // propagated Poisson uncertainty of the contrast
};

/// Simulates F0/F1 projections: F0 ~ Poisson(N sum w (1 + V)), F1 ~ Poisson(N sum w (1 - V)),
/// N = reps * photons_per_shot / sum w. Weighted channels give the fluorescence-weighted ensemble.
ContrastDataset simulate_contrast_experiment(std::span<const double> xs,
                                             std::span<const ContrastChannel> channels,
                                             const ContrastBudget& budget, std::uint64_t seed);

/// Hahn-echo style coherence decay for one NV or a weighted set.
ContrastDataset simulate_coherence_experiment(std::span<const double> times,
                                              std::span<const CoherenceModel> models,
                                              std::span<const double> weights,
                                              const ContrastBudget& budget, std::uint64_t seed);

/// Deterministic 64-bit substream seed derived from (seed, a, b, c).
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace spinresolft
