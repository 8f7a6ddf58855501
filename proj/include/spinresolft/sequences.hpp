#pragma once

// Pulse sequences and the analytic spin-signal models built on them.
//
// Microwave pulses are ideal and instantaneous. Time zero of the toggling
// function is the first pi/2 pulse.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "spinresolft/constants.hpp"
#include "spinresolft/optics.hpp"

namespace spinresolft {

enum class PhaseAxis { X, Y, MinusX, MinusY };

struct GreenPulse {
    std::string beam;  // "gaussian" or "doughnut"
    double duration = 0.0;
};

struct MicrowavePulse {
    double angle = kPi;  // rotation angle (rad)
    PhaseAxis axis = PhaseAxis::X;
};

struct FreeEvolution {
    double duration = 0.0;
};

struct Readout {
    double window = 300e-9;
};

using SequenceElement = std::variant<GreenPulse, MicrowavePulse, FreeEvolution, Readout>;

/// One free-evolution interval with the sign imposed by the preceding pi pulses.
struct TogglingInterval {
    double start = 0.0;
    double end = 0.0;
    int sign = 1;
};

class PulseSequence {
public:
    PulseSequence() = default;
    explicit PulseSequence(std::vector<SequenceElement> elements);

    const std::vector<SequenceElement>& elements() const { return elements_; }

    double total_duration() const;
    /// Sum of free evolution between the first and last pi/2 pulse.
    double free_evolution_time() const;
    int pi_pulse_count() const;
    int green_pulse_count() const;

    /// Sign history between the opening and closing pi/2 pulses.
    std::vector<TogglingInterval> toggling() const;

    /// Sets the axis of the closing pi/2 pulse: +X projects onto m_s=0, -X onto m_s=1.
    PulseSequence with_projection(bool onto_ms1) const;

    void validate() const;

private:
    std::vector<SequenceElement> elements_;
};

PulseSequence build_hahn_echo(double tau_half, double readout_window = 300e-9);
PulseSequence build_xy8(int k, double tau, double readout_window = 300e-9);
/// Inserts a doughnut GreenPulse immediately before the Readout.
PulseSequence wrap_spin_resolft(const PulseSequence& seq, double doughnut_duration);

/// Imaging shot: Gaussian init, pi pulse, doughnut, settle, readout.
PulseSequence build_imaging_shot(double doughnut_duration, double init_duration = 17.4e-6,
                                 double settle = 0.2e-6, double readout_window = 300e-9);

nlohmann::json sequence_to_json(const PulseSequence& seq);
PulseSequence sequence_from_json(const nlohmann::json& j);

struct CoherenceModel {
    double amplitude = 1.0;
    double t2 = 800e-6;
    double p = 3.0;

    void validate() const;
};

/// B(t) = amplitude * sin(2 pi frequency t + phase).
struct ACField {
    double amplitude = 0.0;  // T
    double frequency = 8.3e3;
    double phase = 0.0;

    void validate() const;
};

struct NuclearSignal {
    double b_rms = 0.0;      // T
    double nu_center = 0.0;  // Hz
    double t_c = 10e-6;      // s

    void validate() const;
};

double coherence_envelope(double t, const CoherenceModel& model);

/// gamma_e * integral s(t) B(t) dt, evaluated in closed form per interval.
double echo_phase(const PulseSequence& seq, const ACField& field,
                  double gamma_e = kCodata.gamma_e);

/// envelope(T) * cos(echo_phase), T the total free evolution.
double magnetometry_contrast(const ACField& field, const PulseSequence& seq,
                             const CoherenceModel& coherence, double gamma_e = kCodata.gamma_e);

/// Filter functional K(N tau) in s^2 for a pi-train of N pulses spaced tau, acting on a
/// narrowband signal with correlation time t_c, detuned by `detuning` (rad/s) from the
/// train's resonance pi/tau.
using FilterFunctional = std::function<double(int n_pulses, double tau, double t_c, double detuning)>;

/// Exponential-correlation form:
/// K = 2 Re[T/a - (1 - exp(-a T))/a^2], a = 1/t_c - i*detuning, T = N tau.
/// On resonance: K = 2 (t_c T - t_c^2 (1 - exp(-T/t_c))).
double filter_K(int n_pulses, double tau, double t_c, double detuning = 0.0);

struct NmrOptions {
    FilterFunctional filter = [](int n, double tau, double tc, double det) {
        return filter_K(n, tau, tc, det);
    };
    std::optional<CoherenceModel> background;  // multiplies the dip when set
    double gamma_e = kCodata.gamma_e;
};

/// exp(-(2/pi^2) gamma_e^2 B_rms^2 K(N tau)), detuning 2 pi nu_center - pi/tau.
double nmr_contrast(double tau, int n_pulses, const NuclearSignal& signal,
                    const NmrOptions& options = {});

/// (gamma_p / 2 pi) * B0.
double larmor_frequency(double b0, double gamma_p = kCodata.gamma_p);

/// Free-evolution spacing that puts the filter resonance at frequency nu: tau = 1/(2 nu).
double resonant_tau(double nu);

struct WeightedSignal {
    std::vector<double> signal;
    double weight = 0.0;
};

/// Weight-normalized combination of equally sampled signals.
std::vector<double> ensemble_signal(std::span<const WeightedSignal> parts);

/// Collected-fluorescence weights: beam intensity at each NV times its brightness.
std::vector<double> fluorescence_weights(const GaussianProfile& beam, std::span<const Vec2> positions,
                                         std::span<const double> brightness);

}  // namespace spinresolft
