#include "spinresolft/sequences.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

#include "spinresolft/error.hpp"

namespace spinresolft {

using detail::require;

namespace {

bool is_half_pi(const MicrowavePulse& p) { return std::abs(p.angle - kPi / 2.0) < 1e-9; }
bool is_pi(const MicrowavePulse& p) { return std::abs(p.angle - kPi) < 1e-9; }

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};

std::complex<double> expm1(std::complex<double> z) {
    if (std::abs(z) < 1e-3) return z * (1.0 + z * (0.5 + z * (1.0 / 6.0 + z / 24.0)));
    return std::exp(z) - 1.0;
}

std::string axis_name(PhaseAxis a) {
    switch (a) {
        case PhaseAxis::X: return "X";
        case PhaseAxis::Y: return "Y";
        case PhaseAxis::MinusX: return "-X";
        case PhaseAxis::MinusY: return "-Y";
    }
    return "X";
}

PhaseAxis axis_from_name(const std::string& s) {
    if (s == "X") return PhaseAxis::X;
    if (s == "Y") return PhaseAxis::Y;
    if (s == "-X") return PhaseAxis::MinusX;
    if (s == "-Y") return PhaseAxis::MinusY;
    throw ValidationError("sequence: unknown phase axis '" + s + "'");
}

}  // namespace

PulseSequence::PulseSequence(std::vector<SequenceElement> elements) : elements_(std::move(elements)) {
    validate();
}

void PulseSequence::validate() const {
    for (std::size_t i = 0; i < elements_.size(); ++i) {
        std::visit(overloaded{
                       [](const GreenPulse& g) {
                           require(g.duration >= 0.0, "sequence: green pulse duration must be >= 0");
                       },
                       [](const MicrowavePulse& m) {
                           require(std::isfinite(m.angle), "sequence: microwave angle must be finite");
                       },
                       [](const FreeEvolution& f) {
                           require(f.duration >= 0.0, "sequence: free evolution must be >= 0");
                       },
                       [&](const Readout& r) {
                           require(r.window > 0.0, "sequence: readout window must be > 0");
                           require(i + 1 == elements_.size(), "sequence: readout must terminate the sequence");
                       },
                   },
                   elements_[i]);
    }
}

double PulseSequence::total_duration() const {
    double t = 0.0;
    for (const auto& e : elements_) {
        std::visit(overloaded{
                       [&](const GreenPulse& g) { t += g.duration; },
                       [](const MicrowavePulse&) {},
                       [&](const FreeEvolution& f) { t += f.duration; },
                       [&](const Readout& r) { t += r.window; },
                   },
                   e);
    }
    return t;
}

std::vector<TogglingInterval> PulseSequence::toggling() const {
    std::vector<TogglingInterval> out;
    bool open = false;
    int sign = 1;
    double t = 0.0;
    for (const auto& e : elements_) {
        if (const auto* m = std::get_if<MicrowavePulse>(&e)) {
            if (is_half_pi(*m)) {
                if (open) break;
                open = true;
            } else if (is_pi(*m) && open) {
                sign = -sign;
            }
        } else if (const auto* f = std::get_if<FreeEvolution>(&e)) {
            if (open && f->duration > 0.0) {
                out.push_back({t, t + f->duration, sign});
                t += f->duration;
            }
        }
    }
    return out;
}

double PulseSequence::free_evolution_time() const {
    double t = 0.0;
    for (const auto& iv : toggling()) t += iv.end - iv.start;
    return t;
}

int PulseSequence::pi_pulse_count() const {
    int n = 0;
    for (const auto& e : elements_) {
        if (const auto* m = std::get_if<MicrowavePulse>(&e); m && is_pi(*m)) ++n;
    }
    return n;
}

int PulseSequence::green_pulse_count() const {
    return static_cast<int>(std::count_if(elements_.begin(), elements_.end(), [](const auto& e) {
        return std::holds_alternative<GreenPulse>(e);
    }));
}

PulseSequence PulseSequence::with_projection(bool onto_ms1) const {
    std::vector<SequenceElement> els = elements_;
    for (auto it = els.rbegin(); it != els.rend(); ++it) {
        if (auto* m = std::get_if<MicrowavePulse>(&*it); m && is_half_pi(*m)) {
            m->axis = onto_ms1 ? PhaseAxis::MinusX : PhaseAxis::X;
            break;
        }
    }
    return PulseSequence(std::move(els));
}

PulseSequence build_hahn_echo(double tau_half, double readout_window) {
    require(tau_half > 0.0, "build_hahn_echo: tau must be > 0");
    return PulseSequence({
        MicrowavePulse{kPi / 2.0, PhaseAxis::X},
        FreeEvolution{tau_half},
        MicrowavePulse{kPi, PhaseAxis::X},
        FreeEvolution{tau_half},
        MicrowavePulse{kPi / 2.0, PhaseAxis::X},
        Readout{readout_window},
    });
}

PulseSequence build_xy8(int k, double tau, double readout_window) {
    require(k >= 1, "build_xy8: k must be >= 1");
    require(tau > 0.0, "build_xy8: tau must be > 0");
    static constexpr PhaseAxis kPattern[8] = {PhaseAxis::X, PhaseAxis::Y, PhaseAxis::X, PhaseAxis::Y,
                                              PhaseAxis::Y, PhaseAxis::X, PhaseAxis::Y, PhaseAxis::X};
    std::vector<SequenceElement> els;
    els.push_back(MicrowavePulse{kPi / 2.0, PhaseAxis::X});
    els.push_back(FreeEvolution{tau / 2.0});
    const int n = 8 * k;
    for (int i = 0; i < n; ++i) {
        els.push_back(MicrowavePulse{kPi, kPattern[i % 8]});
        els.push_back(FreeEvolution{i + 1 < n ? tau : tau / 2.0});
    }
    els.push_back(MicrowavePulse{kPi / 2.0, PhaseAxis::X});
    els.push_back(Readout{readout_window});
    return PulseSequence(std::move(els));
}

PulseSequence wrap_spin_resolft(const PulseSequence& seq, double doughnut_duration) {
    require(doughnut_duration > 0.0, "wrap_spin_resolft: doughnut duration must be > 0");
    std::vector<SequenceElement> els = seq.elements();
    auto it = std::find_if(els.begin(), els.end(),
                           [](const auto& e) { return std::holds_alternative<Readout>(e); });
    els.insert(it, GreenPulse{"doughnut", doughnut_duration});
    return PulseSequence(std::move(els));
}

PulseSequence build_imaging_shot(double doughnut_duration, double init_duration, double settle,
                                 double readout_window) {
    require(doughnut_duration >= 0.0 && init_duration >= 0.0 && settle >= 0.0,
            "build_imaging_shot: durations must be >= 0");
    return PulseSequence({
        GreenPulse{"gaussian", init_duration},
        MicrowavePulse{kPi, PhaseAxis::X},
        GreenPulse{"doughnut", doughnut_duration},
        FreeEvolution{settle},
        Readout{readout_window},
    });
}

nlohmann::json sequence_to_json(const PulseSequence& seq) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : seq.elements()) {
        std::visit(overloaded{
                       [&](const GreenPulse& g) {
                           arr.push_back({{"type", "green"}, {"beam", g.beam}, {"duration_ns", g.duration / kNano}});
                       },
                       [&](const MicrowavePulse& m) {
                           arr.push_back({{"type", "mw"}, {"angle_deg", m.angle * 180.0 / kPi}, {"axis", axis_name(m.axis)}});
                       },
                       [&](const FreeEvolution& f) {
                           arr.push_back({{"type", "free"}, {"duration_ns", f.duration / kNano}});
                       },
                       [&](const Readout& r) {
                           arr.push_back({{"type", "readout"}, {"window_ns", r.window / kNano}});
                       },
                   },
                   e);
    }
    return {{"elements", arr}};
}

PulseSequence sequence_from_json(const nlohmann::json& j) {
    require(j.contains("elements") && j["elements"].is_array(), "sequence: missing 'elements' array");
    std::vector<SequenceElement> els;
    for (const auto& e : j["elements"]) {
        const std::string type = e.at("type").get<std::string>();
        if (type == "green") {
            els.push_back(GreenPulse{e.at("beam").get<std::string>(), e.at("duration_ns").get<double>() * kNano});
        } else if (type == "mw") {
            els.push_back(MicrowavePulse{e.at("angle_deg").get<double>() * kPi / 180.0,
                                         axis_from_name(e.value("axis", std::string("X")))});
        } else if (type == "free") {
            els.push_back(FreeEvolution{e.at("duration_ns").get<double>() * kNano});
        } else if (type == "readout") {
            els.push_back(Readout{e.at("window_ns").get<double>() * kNano});
        } else {
            throw ValidationError("sequence: unknown element type '" + type + "'");
        }
    }
    return PulseSequence(std::move(els));
}

void CoherenceModel::validate() const {
    require(t2 > 0.0, "coherence: T2 must be > 0");
    require(p > 0.0, "coherence: p must be > 0");
    require(amplitude > 0.0 && amplitude <= 1.0, "coherence: amplitude must lie in (0, 1]");
}

void ACField::validate() const {
    require(amplitude >= 0.0, "ac field: amplitude must be >= 0");
    require(frequency > 0.0, "ac field: frequency must be > 0");
}

void NuclearSignal::validate() const {
    require(b_rms >= 0.0, "nuclear signal: B_rms must be >= 0");
    require(nu_center > 0.0, "nuclear signal: center frequency must be > 0");
    require(t_c > 0.0, "nuclear signal: correlation time must be > 0");
}

double coherence_envelope(double t, const CoherenceModel& m) {
    require(t >= 0.0, "coherence_envelope: t must be >= 0");
    return m.amplitude * std::exp(-std::pow(t / m.t2, m.p));
}

double echo_phase(const PulseSequence& seq, const ACField& field, double gamma_e) {
    field.validate();
    const double w = kTwoPi * field.frequency;
    double acc = 0.0;
    for (const auto& iv : seq.toggling()) {
        // integral of sin(w t + phase) over [start, end]
        acc += iv.sign * (std::cos(w * iv.start + field.phase) - std::cos(w * iv.end + field.phase)) / w;
    }
    return gamma_e * field.amplitude * acc;
}

double magnetometry_contrast(const ACField& field, const PulseSequence& seq,
                             const CoherenceModel& coherence, double gamma_e) {
    return coherence_envelope(seq.free_evolution_time(), coherence) *
           std::cos(echo_phase(seq, field, gamma_e));
}

double filter_K(int n_pulses, double tau, double t_c, double detuning) {
    require(n_pulses >= 1, "filter_K: N must be >= 1");
    require(tau > 0.0 && t_c > 0.0, "filter_K: times must be > 0");
    const double T = n_pulses * tau;
    const double x = T / t_c;
    if (detuning == 0.0) {
        // -expm1 keeps the coherent limit T << t_c accurate.
        return 2.0 * t_c * t_c * (x + std::expm1(-x));
    }
    const std::complex<double> a(1.0 / t_c, -detuning);
    const std::complex<double> aT = a * T;
    const std::complex<double> k = T / a + expm1(-aT) / (a * a);
    return 2.0 * k.real();
}

double nmr_contrast(double tau, int n_pulses, const NuclearSignal& signal, const NmrOptions& options) {
    signal.validate();
    require(tau > 0.0 && n_pulses >= 1, "nmr_contrast: tau > 0 and N >= 1 required");
    const double detuning = kTwoPi * signal.nu_center - kPi / tau;
    const double k = options.filter(n_pulses, tau, signal.t_c, detuning);
    const double g = options.gamma_e * signal.b_rms;
    double c = std::exp(-(2.0 / (kPi * kPi)) * g * g * k);
    if (options.background) c *= coherence_envelope(n_pulses * tau, *options.background);
    return c;
}

double larmor_frequency(double b0, double gamma_p) {
    require(b0 >= 0.0, "larmor_frequency: B0 must be >= 0");
    return gamma_p / kTwoPi * b0;
}

double resonant_tau(double nu) {
    require(nu > 0.0, "resonant_tau: frequency must be > 0");
    return 1.0 / (2.0 * nu);
}

std::vector<double> ensemble_signal(std::span<const WeightedSignal> parts) {
    require(!parts.empty(), "ensemble_signal: no signals");
    double total = 0.0;
    for (const auto& p : parts) {
        require(p.weight >= 0.0, "ensemble_signal: weights must be >= 0");
        require(p.signal.size() == parts.front().signal.size(), "ensemble_signal: length mismatch");
        total += p.weight;
    }
    require(total > 0.0, "ensemble_signal: all weights are zero");
    std::vector<double> out(parts.front().signal.size(), 0.0);
    for (const auto& p : parts) {
        const double w = p.weight / total;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * p.signal[i];
    }
    return out;
}

std::vector<double> fluorescence_weights(const GaussianProfile& beam, std::span<const Vec2> positions,
                                         std::span<const double> brightness) {
    require(positions.size() == brightness.size(), "fluorescence_weights: length mismatch");
    std::vector<double> w;
    w.reserve(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        require(brightness[i] >= 0.0, "fluorescence_weights: brightness must be >= 0");
        w.push_back(gaussian_intensity(beam, (positions[i] - beam.center).norm()) * brightness[i]);
    }
    return w;
}

}  // namespace spinresolft
