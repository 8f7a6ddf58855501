// Acceptance suite: one line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <cstdarg>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "spinresolft/cli.hpp"
#include "spinresolft/error.hpp"
#include "spinresolft/fitting.hpp"
#include "spinresolft/io.hpp"

using namespace spinresolft;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const char* fmt, ...) __attribute__((format(printf, 3, 4)));
};

void Outcome::require(bool ok, const char* fmt, ...) {
    char buf[256];
    va_list ap;
    va_start(ap, fmt);
    std::vsnprintf(buf, sizeof buf, fmt, ap);
    va_end(ap);
    if (!detail.empty()) detail += "; ";
    detail += buf;
    if (!ok) {
        detail += " [x]";
        pass = false;
    }
}

const fs::path kSource = SPINRESOLFT_TEST_SOURCE_DIR;

Scenario scenario() { return load_scenario(kSource / "scenarios/default.json"); }

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double stdev(const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / (v.size() - 1));
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

Dataset profile_of(const ScanResult& r) { return profile_dataset(r, false); }

// ---- 1 ---------------------------------------------------------------------

Outcome conservation() {
    Outcome o;
    const RateConstants r = scenario().rates;
    double worst = 0;
    const PopulationState starts[] = {PopulationState::ground_ms0(), PopulationState::ground_ms1(),
                                      PopulationState::unpolarized(), PopulationState{{0.2, 0.1, 0.3, 0.25, 0.15}}};
    int cases = 0;
    for (const auto& p0 : starts) {
        for (double s : {0.0, 0.05, 0.3, 1.0, 3.0, 10.0}) {
            for (double t : {2e-9, 20e-9, 200e-9, 2e-6}) {
                const auto ref = oracle::rk4(p0.n, s, t, r, 4000);
                const auto got = evolve(p0, {s, t}, r);
                for (int i = 0; i < 5; ++i) worst = std::max(worst, std::abs(got.n[i] - ref[i]));
                ++cases;
            }
        }
    }
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> us(0.0, 20.0), ut(1e-9, 1e-6);
    double drift = 0;
    for (int train = 0; train < 3; ++train) {
        std::vector<IlluminationSegment> segs;
        for (int i = 0; i < 10000; ++i) segs.push_back({us(rng), ut(rng)});
        drift = std::max(drift, std::abs(evolve(PopulationState::unpolarized(), segs, r).total() - 1.0));
    }
    o.require(drift < 1e-9, "|sum n - 1| = %.1e over 3 x 1e4 segments (< 1e-9)", drift);
    o.require(worst < 1e-6, "max |n - n_rk4| = %.1e over %d cases (< 1e-6)", worst, cases);
    return o;
}

// ---- 2 ---------------------------------------------------------------------

Outcome resolution_formula() {
    Outcome o;
    const Scenario sc = scenario();
    const double lam = sc.optics.wavelength, na = sc.optics.na;
    const double w0 = ideal_fwhm(lam, na, 0.0, 1.0);
    o.require(std::abs(w0 / 1e-9 - 183.4) < 0.05, "confocal FWHM %.3f nm (183.4 at 0.1 nm)", w0 / 1e-9);
    bool mono = true, law = true;
    double prev = w0;
    for (int i = 1; i <= 50; ++i) {
        const double gt = 0.02 * i * i;
        const double w = ideal_fwhm(lam, na, gt, 1.0);
        mono &= w < prev;
        law &= std::abs(w * std::sqrt(1 + gt) / w0 - 1.0) < 1e-12;
        prev = w;
    }
    o.require(mono && law, "50-point sqrt law %s", mono && law ? "holds" : "broken");
    const double gt = saturation_product_for_fwhm(20e-9, lam, na);
    const double back = ideal_fwhm(lam, na, gt, 1.0);
    o.require(std::abs(back - 20e-9) <= 2e-9, "Gamma*tau %.2f -> %.4f nm (20 +- 2)", gt, back / 1e-9);
    return o;
}

// ---- 3 ---------------------------------------------------------------------

Outcome psf_pipeline() {
    Outcome o;
    const Scenario sc = scenario();
    const auto& pc = sc.psf_compare;
    std::vector<std::vector<double>> shapes;
    std::vector<double> peaks;
    for (double eps : pc.epsilons) {
        DoughnutProfile d = sc.optics.doughnut;
        d.s0 = pc.s0;
        d.epsilon = eps;
        std::vector<double> v;
        for (int i = 0; i < pc.points; ++i) {
            const double x = -pc.half_span + 2 * pc.half_span * i / (pc.points - 1);
            v.push_back(resolft_psf(std::abs(x), d, pc.doughnut_duration, sc.rates));
        }
        peaks.push_back(*std::max_element(v.begin(), v.end()));
        shapes.push_back(v);
    }
    double worst = 0;
    for (std::size_t i = 0; i < shapes[0].size(); ++i)
        worst = std::max(worst, std::abs(shapes[0][i] / peaks[0] - shapes[1][i] / peaks[1]));
    o.require(worst < 0.02, "normalized shapes differ by %.2f%% (< 2%%)", 100 * worst);
    o.require(std::abs(peaks[0] - peaks[1]) > 0.1 * peaks[0], "peak contrast %.3f vs %.3f", peaks[0], peaks[1]);

    // long doughnut: Gaussian against five-level model on a seeded scan
    ScanConfig c = sc.scan_config(substream_seed(*sc.seed, 0x31));
    const ScanResult r = simulate_scan(c);
    const Dataset d = profile_of(r);
    const FitResult g = fit_gaussian_center(d);
    PsfFitSetup setup;
    setup.scan = c;
    const PsfFit p = fit_resolft_psf(d, setup);
    o.require(g.chi2 > p.result.chi2, "tau_d %.1f us chi2 Gaussian %.1f vs five-level %.1f",
              c.doughnut_duration() / 1e-6, g.chi2, p.result.chi2);
    return o;
}

// ---- 4 ---------------------------------------------------------------------

Outcome imaging_round_trip() {
    Outcome o;
    const Scenario sc = scenario();
    ScanConfig one = sc.scan_config(0);
    const auto budget = acquisition_budget(one);
    o.require(one.pixels.size() == 100 && one.reps_per_pixel == 20000 && std::abs(one.photons_per_shot - 0.02) < 1e-12,
              "%zu px, %d reps, %.2f photons/shot", one.pixels.size(), one.reps_per_pixel, one.photons_per_shot);

    // empirical per-pixel relative noise of the reference counts at the beam center
    const ExpectedCounts e = expected_counts(one);
    std::vector<double> z;
    for (int rep = 0; rep < 40; ++rep) {
        one.seed = substream_seed(*sc.seed, 0x41, rep);
        const ScanResult r = simulate_scan(one);
        for (std::size_t i = 40; i < 60; ++i) z.push_back((r.ref0[i] - e.ref0[i]) / e.ref0[i]);
    }
    const double noise = std::sqrt(std::inner_product(z.begin(), z.end(), z.begin(), 0.0) / z.size());
    o.require(std::abs(noise - 0.05) <= 0.005, "shot noise %.2f%% measured, %.2f%% budget (5 +- 0.5)", 100 * noise,
              100 * budget.relative_shot_noise);

    // two NVs at the configured separation
    std::vector<double> sep, sep_sigma;
    int covered = 0, failures = 0;
    const double truth = sc.two_nv.separation;
    for (int rep = 0; rep < 50; ++rep) {
        const ScanConfig c = sc.two_nv_config(substream_seed(*sc.seed, 0x42, rep));
        const ScanResult r = simulate_scan(c);
        PsfFitSetup setup;
        setup.scan = c;
        setup.emitters = 2;
        try {
            const PsfFit f = fit_resolft_psf(profile_of(r), setup);
            const auto& fr = f.result;
            const std::size_t i1 = fr.index("center_1"), i2 = fr.index("center_2");
            const double s = std::abs(fr.values[i2] - fr.values[i1]);
            const double v = fr.covariance(i1, i1) + fr.covariance(i2, i2) - 2 * fr.covariance(i1, i2);
            const double ss = std::sqrt(std::max(0.0, v));
            sep.push_back(s);
            sep_sigma.push_back(ss);
            if (std::abs(s - truth) <= ss) ++covered;
        } catch (const FitError&) {
            ++failures;
        }
    }
    const ScanConfig c = sc.two_nv_config(0);
    const auto model = expected_counts(c).profile();
    const double mid = model[model.size() / 2];
    const double top = *std::max_element(model.begin(), model.end());
    o.require(mid < 0.9 * top, "noiseless dip %.2f of peak", mid / top);
    o.require(failures == 0, "%d/50 fits failed", failures);
    if (!sep.empty()) {
        const double ms = median(sep_sigma);
        o.require(std::abs(mean(sep) - truth) < 16e-9, "separation %.1f +- %.1f nm (scatter), median 1-sigma %.1f nm",
                  mean(sep) / 1e-9, stdev(sep) / 1e-9, ms / 1e-9);
        int inside = 0;
        for (std::size_t i = 0; i < sep.size(); ++i)
            if (std::abs(sep[i] - truth) + sep_sigma[i] <= 16e-9) ++inside;
        o.require(inside == static_cast<int>(sep.size()), "1-sigma interval inside 105 +- 16 nm in %d/%zu", inside, sep.size());
        const double calib = stdev(sep) / ms;
        o.require(calib > 0.7 && calib < 1.5, "scatter / fitted sigma %.2f", calib);
        o.require(covered >= 25, "truth inside 1-sigma in %d/50", covered);
    }
    return o;
}

// ---- 5 ---------------------------------------------------------------------

Outcome coherence_fits() {
    Outcome o;
    const Scenario sc = scenario();
    const auto& cs = sc.coherence;
    std::vector<double> t;
    for (int i = 0; i < cs.points; ++i) t.push_back(cs.t_max * (i + 0.5) / cs.points);
    const ContrastBudget budget{cs.reps, sc.readout.photons_per_shot, false};
    const double p1 = cs.nvs[0].p, pmin = std::min(cs.nvs[0].p, cs.nvs[1].p);
    int within = 0, lower = 0, fails = 0;
    std::vector<double> pmix;
    for (int rep = 0; rep < 200; ++rep) {
        const CoherenceModel single[] = {cs.nvs[0]};
        const double w1[] = {1.0};
        const auto d = simulate_coherence_experiment(t, single, w1, budget, substream_seed(*sc.seed, 0x51, rep));
        const auto m = simulate_coherence_experiment(t, cs.nvs, cs.weights, budget, substream_seed(*sc.seed, 0x52, rep));
        try {
            if (std::abs(fit_stretched_exponential({d.x, d.contrast, d.sigma}).value("p") - p1) <= 0.3) ++within;
            const double pm = fit_stretched_exponential({m.x, m.contrast, m.sigma}).value("p");
            pmix.push_back(pm);
            if (pm < pmin) ++lower;
        } catch (const FitError&) {
            ++fails;
        }
    }
    o.require(within >= 120, "p within 0.3 of %.1f in %d/200 (>= 120)", p1, within);
    o.require(lower >= 190, "ensemble p < %.1f in %d/200 (>= 190), median %.2f", pmin, lower, median(pmix));
    o.require(fails == 0, "%d fit failures", fails);
    return o;
}

// ---- 6 ---------------------------------------------------------------------

Outcome magnetometry() {
    Outcome o;
    const Scenario sc = scenario();
    const auto& w = sc.wire;
    const auto& m = sc.magnetometry;
    const double grad = gradient_parallel_richardson(w.nv1, w.wire, w.nv, 10e-9, w.variant);
    const double sep = w.separation;
    const double truth = b_parallel(w.nv1, w.wire, w.nv, w.variant) - b_parallel(w.nv2(), w.wire, w.nv, w.variant);
    o.require(std::abs(std::abs(grad) - 1.0) < 0.05, "gradient %.4f nT/nm over %.0f nm", grad, sep / 1e-9);

    std::vector<double> I;
    for (int i = 0; i < m.points; ++i) I.push_back(m.current_max * i / (m.points - 1));
    const PulseSequence seq = build_hahn_echo(0.5 / w.wire.frequency, sc.readout.window);
    const double ppt = echo_phase(seq, ACField{1.0, w.wire.frequency, 0.0});
    const double per_amp[] = {b_parallel(w.nv1, w.wire, w.nv, w.variant) / w.wire.current,
                              b_parallel(w.nv2(), w.wire, w.nv, w.variant) / w.wire.current};
    const ContrastBudget budget{m.reps, sc.readout.photons_per_shot, false};
    std::vector<double> diffs;
    int in_band = 0, ordered = 0;
    for (int rep = 0; rep < 50; ++rep) {
        double field[2], peak[2];
        for (int k = 0; k < 2; ++k) {
            const CoherenceModel coh = sc.coherence.nvs[k];
            const double bpa = per_amp[k], f = w.wire.frequency;
            const ContrastChannel ch[] = {
                {[&, coh, bpa, f](double i) { return magnetometry_contrast(ACField{bpa * i, f, 0.0}, seq, coh); }, 1.0}};
            const auto d = simulate_contrast_experiment(I, ch, budget, substream_seed(*sc.seed, 0x61, rep, k));
            field[k] = field_from_sinusoid(fit_sinusoid_fixed_phase({d.x, d.contrast, d.sigma}), m.reference_current, ppt).field;
            peak[k] = spectral_response(d.x, d.contrast, 0.0, 512).peak_frequency;
        }
        const double diff = field[0] - field[1];
        diffs.push_back(diff);
        if (std::abs(diff - 105e-9) <= 30e-9) ++in_band;
        if ((peak[0] > peak[1]) == (per_amp[0] > per_amp[1])) ++ordered;
    }
    o.require(std::abs(mean(diffs) - 105e-9) <= 30e-9 && in_band >= 45,
              "field difference %.1f +- %.1f nT (model %.1f), in 105 +- 30 for %d/50", mean(diffs) / 1e-9,
              stdev(diffs) / 1e-9, truth / 1e-9, in_band);
    o.require(ordered >= 45, "spectral peaks ordered correctly in %d/50", ordered);
    return o;
}

// ---- 7 ---------------------------------------------------------------------

Outcome wire_model() {
    Outcome o;
    const Scenario sc = scenario();
    const auto& w = sc.wire;
    double worst = 0;
    for (int i = 0; i < w.points; ++i) {
        const double x = w.x_min + (w.x_max - w.x_min) * i / (w.points - 1);
        for (double z : {w.nv1.z, 20e-6, 60e-6}) {
            const Vec3 p{x, 0, z};
            const double want = kCodata.mu0 * w.wire.current / (2 * kPi * std::hypot(x, z));
            worst = std::max(worst, std::abs(wire_field(p, w.wire).norm() / want - 1.0));
        }
    }
    o.require(worst < 1e-10, "|B| vs mu0 I/2 pi r: %.1e", worst);
    const double rabi = rabi_frequency(w.nv1, w.wire, w.nv, w.rabi_current, w.drive_factor);
    o.require(std::abs(rabi / 5.5e6 - 1.0) < 0.05, "Rabi %.3f MHz at %.0f mA (5.5 +- 5%%)", rabi / 1e6, w.rabi_current / 1e-3);
    const double b1 = b_parallel(w.nv1, w.wire, w.nv, w.variant);
    const double g = gradient_parallel_richardson(w.nv1, w.wire, w.nv, 10e-9, w.variant);
    o.require(std::abs(b1 / 1e-6 - 9.0) < 0.1 && std::abs(std::abs(g) - 1.0) < 0.05,
              "%s variant: %.3f uT, %.3f nT/nm", w.variant == ProjectionVariant::Tangential ? "tangential" : "printed",
              b1 / 1e-6, g);
    const fs::path out = fs::temp_directory_path() / "spinresolft_acceptance" / "c7";
    fs::remove_all(out);
    RunOptions opt;
    opt.out_dir = out;
    cmd_reproduce("figS7", sc, opt);
    const auto report = read_json_file(out / "figS7_report.json");
    const double bs = report["biot_savart_max_relative_difference"].get<double>();
    const double printed = report["stated_geometry"]["b_printed_variant_uT"].get<double>();
    o.require(bs < 1e-6, "report: Biot-Savart %.1e, printed form at stated geometry %.2f uT", bs, printed);
    return o;
}

// ---- 8 ---------------------------------------------------------------------

Outcome nmr() {
    Outcome o;
    const Scenario sc = scenario();
    const auto& n = sc.nmr;
    const double nu = larmor_frequency(n.b0);
    const double tau0 = resonant_tau(nu);
    o.require(std::abs(nu - 1.20e6) < 1e3 && std::abs(1.0 / (2 * tau0) - 1.20e6) < 1e3,
              "Larmor %.4f MHz, tau0 %.2f ns", nu / 1e6, tau0 / 1e-9);

    const PulseSequence seq = build_xy8(n.n_pulses / 8, tau0);
    const double T = n.n_pulses * tau0;
    double lo = 1e9, hi = 0;
    std::uint64_t k = 0;
    for (double r : {0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0}) {
        const double tc = T / r;
        const double mc = oracle::mc_phase_variance(seq, nu, tc, 20000, 32, tau0, substream_seed(*sc.seed, 0x81, k++));
        const double ratio = mc / (4.0 / (kPi * kPi) * filter_K(n.n_pulses, tau0, tc));
        lo = std::min(lo, ratio);
        hi = std::max(hi, ratio);
    }
    o.require(lo > 0.95 && hi < 1.05, "Monte Carlo / K ratio in [%.3f, %.3f] over T/t_c 0.01..10", lo, hi);

    const NuclearSignal sig{proton_brms({n.rho, n.depth}, sc.wire.nv.theta), nu, n.t_c};
    NmrOptions opts;
    opts.background = n.background;
    std::vector<double> taus;
    for (int i = 0; i < n.points; ++i) taus.push_back(tau0 - n.half_span + 2 * n.half_span * i / (n.points - 1));
    const ContrastChannel ch[] = {{[&](double t) { return nmr_contrast(t, n.n_pulses, sig, opts); }, 1.0}};
    NmrFitSetup setup;
    setup.n_pulses = n.n_pulses;
    setup.rho = n.rho;
    setup.nv_theta = sc.wire.nv.theta;
    setup.background = n.background;
    int within = 0, fails = 0;
    std::vector<double> depth, centers;
    for (int rep = 0; rep < 200; ++rep) {
        const auto d = simulate_contrast_experiment(taus, ch, ContrastBudget{n.reps, sc.readout.photons_per_shot, false},
                                                    substream_seed(*sc.seed, 0x82, rep));
        try {
            const FitResult f = fit_nmr_dip({d.x, d.contrast, d.sigma}, setup);
            depth.push_back(f.value("d_nv"));
            centers.push_back(f.value("nu_center"));
            if (std::abs(f.value("d_nv") - n.depth) <= 0.3e-9) ++within;
        } catch (const FitError&) {
            ++fails;
        }
    }
    o.require(within >= 120, "d = %.2f nm recovered within 0.3 nm in %d/200 (>= 120), median %.3f nm", n.depth / 1e-9,
              within, median(depth) / 1e-9);
    o.require(std::abs(median(centers) - nu) < 1e3, "median fitted center %.4f MHz", median(centers) / 1e6);
    o.require(fails == 0, "%d fit failures", fails);
    return o;
}

// ---- 9 ---------------------------------------------------------------------

double meta(const CsvTable& t, const std::string& key) {
    for (const auto& [k, v] : t.metadata)
        if (k == key) return std::stod(v);
    throw SchemaError("missing metadata " + key);
}

Outcome drift() {
    Outcome o;
    const Scenario sc = scenario();
    const fs::path out = fs::temp_directory_path() / "spinresolft_acceptance" / "c9";
    fs::remove_all(out);
    RunOptions opt;
    opt.out_dir = out;
    cmd_reproduce("figS6", sc, opt);
    const CsvTable a = read_csv(out / "figS6a_temperature.csv");
    const CsvTable b = read_csv(out / "figS6b_stabilized.csv");
    const double sd = meta(b, "center_std_nm");
    o.require(std::abs(sd / (sc.drift.jitter / 1e-9) - 1.0) <= 0.2, "stabilized scatter %.2f nm over %.1f h (11 +- 20%%)", sd,
              sc.drift.stabilized_hours);
    const double corr = meta(a, "correlation");
    const double exc = meta(a, "excursion_nm");
    const double want = 2 * sc.drift.coupling * sc.drift.temperature_amplitude / 1e-9;
    o.require(corr > 0.9, "temperature correlation %.4f (> 0.9)", corr);
    o.require(std::abs(exc / want - 1.0) < 0.1, "excursion %.0f nm (configured %.0f)", exc, want);
    return o;
}

// ---- 10 --------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream s;
    s << f.rdbuf();
    return s.str();
}

Outcome determinism() {
    Outcome o;
    const Scenario sc = scenario();
    const fs::path root = fs::temp_directory_path() / "spinresolft_acceptance" / "c10";
    fs::remove_all(root);
    int files = 0, differ = 0;
    for (const auto& fig : figure_ids()) {
        RunOptions a, b;
        a.out_dir = root / "a" / fig;
        b.out_dir = root / "b" / fig;
        a.format = b.format = OutputFormat::CsvSvg;
        const auto fa = cmd_reproduce(fig, sc, a);
        cmd_reproduce(fig, sc, b);
        for (const auto& p : fa) {
            ++files;
            if (slurp(p) != slurp(b.out_dir / p.filename())) ++differ;
        }
    }
    o.require(differ == 0 && files > 0, "%d of %d files identical across %zu figures", files - differ, files,
              figure_ids().size());
    return o;
}

struct Criterion {
    int id;
    const char* name;
    double limit_s;  // 0 = untimed
    std::function<Outcome()> run;
};

}  // namespace

int main() {
    const std::vector<Criterion> all{
        {1, "conservation and oracle equivalence", 1.0, conservation},
        {2, "resolution formula", 1e-3, resolution_formula},
        {3, "PSF pipeline", 10.0, psf_pipeline},
        {4, "imaging round-trip", 120.0, imaging_round_trip},
        {5, "coherence fits", 60.0, coherence_fits},
        {6, "magnetometry", 60.0, magnetometry},
        {7, "wire model", 1.0, wire_model},
        {8, "NMR", 300.0, nmr},
        {9, "drift", 30.0, drift},
        {10, "determinism", 0.0, determinism},
    };
    int failed = 0;
    for (const auto& c : all) {
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("threw: ") + e.what();
        }
        const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.limit_s > 0 && dt >= c.limit_s) o.require(false, "runtime over %.3g s", c.limit_s);
        if (!o.pass) ++failed;
        std::printf("%s  %2d %-36s %8.3f s  %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, dt, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(all.size()) - failed, all.size());
    return failed == 0 ? 0 : 1;
}
