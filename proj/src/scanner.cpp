#include "spinresolft/scanner.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <thread>

#include "spinresolft/error.hpp"

namespace spinresolft {

using detail::require;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Runs body(i) for i in [0, n) on all hardware threads. Each index writes only
// its own output slot, so the result does not depend on the thread count.
template <class F>
void parallel_for(std::size_t n, F&& body) {
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(n, std::thread::hardware_concurrency()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) body(i);
        });
    }
}

std::int64_t poisson_draw(double mean, std::uint64_t seed) {
    if (mean <= 0.0) return 0;
    std::mt19937_64 rng(seed);
    std::poisson_distribution<std::int64_t> dist(mean);
    return dist(rng);
}

// Per-NV readout scale: photons for a relaxed state (n1, 1 - n1) relative to the
// fully repolarized reference, so the reference at beam center yields photons_per_shot.
struct ReadoutScale {
    double bright = 0.0;  // weight of n1
    double dark = 0.0;    // weight of n2
    double reference_polarization = 0.0;

    ReadoutScale(const ScanConfig& c) {
        const ReadoutFunctional f(c.readout, c.rates);
        bright = f.weights()(0);
        dark = f.weights()(1);
        reference_polarization = weak_pump_polarization(c.rates);
    }

    double relative(double n1) const {
        const double ref = bright * reference_polarization + dark * (1.0 - reference_polarization);
        return (bright * n1 + dark * (1.0 - n1)) / ref;
    }
};

double readout_window(const PulseSequence& seq, double fallback) {
    for (const auto& e : seq.elements()) {
        if (const auto* r = std::get_if<Readout>(&e)) return r->window;
    }
    return fallback;
}

}  // namespace

std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ (b + 0x632be59bd9b4e019ULL));
    h = splitmix64(h ^ (c + 0x8cb92ba72f3d8dd7ULL));
    return h;
}

double ScanConfig::doughnut_duration() const {
    double t = 0.0;
    for (const auto& e : sequence.elements()) {
        if (const auto* g = std::get_if<GreenPulse>(&e); g && g->beam == "doughnut") t += g->duration;
    }
    return t;
}

void ScanConfig::validate() const {
    require(!pixels.empty(), "scan: pixel grid must be non-empty");
    require(reps_per_pixel >= 1, "scan: reps per pixel must be >= 1");
    require(photons_per_shot > 0.0, "scan: photons per shot must be > 0");
    require(overhead_factor >= 1.0, "scan: overhead factor must be >= 1");
    require(lines >= 1, "scan: need at least one line");
    for (const auto& nv : nvs) require(nv.brightness >= 0.0, "scan: NV brightness must be >= 0");
    gaussian.validate();
    doughnut.validate();
    alignment.validate();
    rates.validate();
    sequence.validate();
}

std::vector<Vec2> line_grid(int pixels, double span, Vec2 center) {
    require(pixels >= 1, "line_grid: need at least one pixel");
    std::vector<Vec2> out;
    out.reserve(static_cast<std::size_t>(pixels));
    const double step = pixels > 1 ? span / (pixels - 1) : 0.0;
    for (int i = 0; i < pixels; ++i) out.push_back({center.x - span / 2.0 + i * step, center.y});
    return out;
}

std::vector<Vec2> square_grid(int n, double span, Vec2 center) {
    require(n >= 1, "square_grid: need at least one pixel per side");
    std::vector<Vec2> out;
    out.reserve(static_cast<std::size_t>(n * n));
    const double step = n > 1 ? span / (n - 1) : 0.0;
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            out.push_back({center.x - span / 2.0 + i * step, center.y - span / 2.0 + j * step});
        }
    }
    return out;
}

void DriftModel::validate() const {
    require(jitter_sigma >= 0.0, "drift: jitter sigma must be >= 0");
    require(temperature_period > 0.0, "drift: temperature period must be > 0");
    require(direction.norm() > 0.0, "drift: direction must be non-zero");
}

void TrackingPolicy::validate() const {
    require(precision > 0.0, "tracking: precision must be > 0");
    require(recenter_interval >= 1, "tracking: recenter interval must be >= 1");
}

double repolarized_population(double s, double tau_d, const RateConstants& rates) {
    const PopulationState after = evolve(PopulationState::ground_ms1(), IlluminationSegment{s, tau_d}, rates);
    return relax(after, rates).n[0];
}

double resolft_psf(double r, const DoughnutProfile& doughnut, double tau_d, const RateConstants& rates) {
    doughnut.validate();
    const double s = doughnut_intensity(doughnut, r);
    const double reference = steady_state_polarization(s, rates);
    return 1.0 - repolarized_population(s, tau_d, rates) / reference;
}

std::vector<double> ExpectedCounts::profile() const {
    std::vector<double> out(sig.size());
    for (std::size_t i = 0; i < sig.size(); ++i) out[i] = ref0[i] - sig[i];
    return out;
}

ExpectedCounts expected_counts(const ScanConfig& config, Vec2 shift) {
    config.validate();
    ScanConfig c = config;
    c.readout.window = readout_window(c.sequence, c.readout.window);
    const ReadoutScale scale(c);
    const double tau_d = c.doughnut_duration();
    const double per_pixel = c.reps_per_pixel * c.photons_per_shot;

    ExpectedCounts out;
    out.sig.assign(c.pixels.size(), 0.0);
    out.ref0.assign(c.pixels.size(), 0.0);
    parallel_for(c.pixels.size(), [&](std::size_t i) {
        const Vec2 p = c.pixels[i];
        double sig = 0.0;
        double ref = 0.0;
        for (const auto& nv : c.nvs) {
            const Vec2 q = nv.position + shift;
            const double r_g = (p + c.alignment.gaussian_offset - q).norm();
            const double r_d = (p + c.alignment.doughnut_offset - q).norm();
            const double weight = nv.brightness * std::exp(-2.0 * r_g * r_g / (c.gaussian.waist * c.gaussian.waist));
            const double n1 = tau_d > 0.0
                                  ? repolarized_population(doughnut_intensity(c.doughnut, r_d), tau_d, c.rates)
                                  : 0.0;
            // Without a doughnut pulse the reference and signal shots are the same sequence.
            sig += weight * (tau_d > 0.0 ? scale.relative(n1) : 1.0);
            ref += weight;
        }
        out.sig[i] = per_pixel * sig;
        out.ref0[i] = per_pixel * ref;
    });
    return out;
}

std::vector<double> running_average2(std::span<const double> v) {
    std::vector<double> out(v.begin(), v.end());
    for (std::size_t i = 1; i < v.size(); ++i) out[i] = 0.5 * (v[i] + v[i - 1]);
    return out;
}

AcquisitionBudget acquisition_budget(const ScanConfig& config) {
    AcquisitionBudget b;
    b.shot_duration = config.sequence.total_duration();
    b.ideal_line_seconds = static_cast<double>(config.pixels.size()) * config.reps_per_pixel * b.shot_duration;
    b.actual_line_seconds = b.ideal_line_seconds * config.overhead_factor;
    b.total_actual_seconds = b.actual_line_seconds * config.lines;
    b.expected_reference_photons = config.reps_per_pixel * config.photons_per_shot;
    b.relative_shot_noise = b.expected_reference_photons > 0.0 ? 1.0 / std::sqrt(b.expected_reference_photons) : 0.0;
    return b;
}

ScanResult simulate_scan(const ScanConfig& config, const DriftModel& drift, const TrackingPolicy& tracking) {
    config.validate();
    drift.validate();
    tracking.validate();

    const AcquisitionBudget budget = acquisition_budget(config);
    const std::size_t n = config.pixels.size();
    const Vec2 dir = (1.0 / drift.direction.norm()) * drift.direction;

    ScanResult result;
    result.pixels = config.pixels;
    result.seed = config.seed;
    result.line_duration = budget.actual_line_seconds;
    result.sig.assign(n, 0);
    result.ref0.assign(n, 0);

    std::mt19937_64 motion(substream_seed(config.seed, 0xD81F7ULL));
    std::normal_distribution<double> unit_normal(0.0, 1.0);

    Vec2 estimate{};
    for (int line = 0; line < config.lines; ++line) {
        LineRecord rec;
        rec.start_time = line * budget.actual_line_seconds;

        double displacement = 0.0;
        switch (drift.mode) {
            case DriftMode::Off: break;
            case DriftMode::TemperatureCoupled:
                rec.temperature = drift.temperature_amplitude * std::sin(kTwoPi * rec.start_time / drift.temperature_period);
                displacement = drift.coupling * rec.temperature;
                break;
            case DriftMode::Stabilized: displacement = drift.jitter_sigma * unit_normal(motion); break;
        }
        rec.drift = displacement * dir;

        if (tracking.enabled && line % tracking.recenter_interval == 0) {
            // Relocalization by a Gaussian fit: unbiased, with the stated precision.
            estimate = rec.drift + Vec2{tracking.precision * unit_normal(motion), tracking.precision * unit_normal(motion)};
        }
        rec.tracked_estimate = tracking.enabled ? estimate : Vec2{};
        rec.apparent_shift = rec.drift - rec.tracked_estimate;

        const ExpectedCounts mean = expected_counts(config, rec.apparent_shift);
        rec.sig.assign(n, 0);
        rec.ref0.assign(n, 0);
        parallel_for(n, [&](std::size_t i) {
            rec.sig[i] = poisson_draw(mean.sig[i], substream_seed(config.seed, static_cast<std::uint64_t>(line), i, 1));
            rec.ref0[i] = poisson_draw(mean.ref0[i], substream_seed(config.seed, static_cast<std::uint64_t>(line), i, 2));
        });
        for (std::size_t i = 0; i < n; ++i) {
            result.sig[i] += rec.sig[i];
            result.ref0[i] += rec.ref0[i];
        }
        result.lines.push_back(std::move(rec));
    }

    result.profile.resize(n);
    for (std::size_t i = 0; i < n; ++i) result.profile[i] = static_cast<double>(result.ref0[i] - result.sig[i]);
    if (config.running_average) result.profile = running_average2(result.profile);
    return result;
}

ContrastDataset simulate_contrast_experiment(std::span<const double> xs,
                                             std::span<const ContrastChannel> channels,
                                             const ContrastBudget& budget, std::uint64_t seed) {
    require(!channels.empty(), "contrast experiment: no channels");
    double total_weight = 0.0;
    for (const auto& ch : channels) {
        require(ch.weight >= 0.0, "contrast experiment: weights must be >= 0");
        total_weight += ch.weight;
    }
    require(total_weight > 0.0, "contrast experiment: all weights are zero");
    require(budget.noiseless || (budget.reps >= 1 && budget.photons_per_shot > 0.0),
            "contrast experiment: photon budget must be positive");

    const double per_projection = budget.reps * budget.photons_per_shot;
    ContrastDataset out;
    out.x.assign(xs.begin(), xs.end());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double mix = 0.0;
        for (const auto& ch : channels) mix += ch.weight / total_weight * ch.visibility(xs[i]);
        const double m0 = per_projection * (1.0 + mix);
        const double m1 = per_projection * (1.0 - mix);
        double f0 = m0;
        double f1 = m1;
        if (!budget.noiseless) {
            f0 = static_cast<double>(poisson_draw(m0, substream_seed(seed, i, 0)));
            f1 = static_cast<double>(poisson_draw(m1, substream_seed(seed, i, 1)));
        }
        const double sum = f0 + f1;
        const double c = sum > 0.0 ? (f0 - f1) / sum : 0.0;
        out.f0.push_back(f0);
        out.f1.push_back(f1);
        out.contrast.push_back(c);
        // Var(C) = 4 F0 F1 / (F0 + F1)^3 for independent Poisson projections.
        const double var = sum > 0.0 ? 4.0 * std::max(f0, 1.0) * std::max(f1, 1.0) / (sum * sum * sum) : 1.0;
        out.sigma.push_back(budget.noiseless ? 4.0 * m0 * m1 / std::pow(m0 + m1, 3) > 0.0
                                                   ? std::sqrt(4.0 * m0 * m1 / std::pow(m0 + m1, 3))
                                                   : 1.0
                                             : std::sqrt(var));
    }
    return out;
}

ContrastDataset simulate_coherence_experiment(std::span<const double> times,
                                              std::span<const CoherenceModel> models,
                                              std::span<const double> weights,
                                              const ContrastBudget& budget, std::uint64_t seed) {
    require(models.size() == weights.size(), "coherence experiment: one weight per model");
    std::vector<ContrastChannel> channels;
    for (std::size_t i = 0; i < models.size(); ++i) {
        models[i].validate();
        const CoherenceModel m = models[i];
        channels.push_back({[m](double t) { return coherence_envelope(t, m); }, weights[i]});
    }
    return simulate_contrast_experiment(times, channels, budget, seed);
}

}  // namespace spinresolft
