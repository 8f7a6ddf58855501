#include "spinresolft/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "spinresolft/error.hpp"
#include "spinresolft/fitting.hpp"

#ifndef SPINRESOLFT_SOURCE_DIR
#define SPINRESOLFT_SOURCE_DIR "."
#endif

namespace spinresolft {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// ---- scenario parsing ------------------------------------------------------

class Section {
public:
    Section(const nlohmann::json* j, std::string path) : j_(j), path_(std::move(path)) {
        if (j_ && !j_->is_object()) throw SchemaError(path_ + ": expected an object");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_ && j_->contains(key) && !j_->at(key).is_null();
    }

    double number(const std::string& key, double def, double scale = 1.0) {
        if (!has(key)) return def;
        const auto& v = j_->at(key);
        if (!v.is_number()) throw SchemaError(where(key) + " must be a number");
        return v.get<double>() * scale;
    }

    int integer(const std::string& key, int def) {
        if (!has(key)) return def;
        const auto& v = j_->at(key);
        if (!v.is_number_integer()) throw SchemaError(where(key) + " must be an integer");
        return v.get<int>();
    }

    bool flag(const std::string& key, bool def) {
        if (!has(key)) return def;
        const auto& v = j_->at(key);
        if (!v.is_boolean()) throw SchemaError(where(key) + " must be true or false");
        return v.get<bool>();
    }

    std::string text(const std::string& key, const std::string& def) {
        if (!has(key)) return def;
        const auto& v = j_->at(key);
        if (!v.is_string()) throw SchemaError(where(key) + " must be a string");
        return v.get<std::string>();
    }

    std::vector<double> numbers(const std::string& key, const std::vector<double>& def, double scale = 1.0) {
        if (!has(key)) return def;
        const auto& v = j_->at(key);
        if (!v.is_array()) throw SchemaError(where(key) + " must be an array of numbers");
        std::vector<double> out;
        for (const auto& e : v) {
            if (!e.is_number()) throw SchemaError(where(key) + " must be an array of numbers");
            out.push_back(e.get<double>() * scale);
        }
        return out;
    }

    Vec2 vec2(const std::string& key, Vec2 def, double scale) {
        if (!has(key)) return def;
        const auto v = numbers(key, {});
        if (v.size() != 2) throw SchemaError(where(key) + " must have 2 entries");
        return {v[0] * scale, v[1] * scale};
    }

    Vec3 vec3(const std::string& key, Vec3 def, double scale) {
        if (!has(key)) return def;
        const auto v = numbers(key, {});
        if (v.size() != 3) throw SchemaError(where(key) + " must have 3 entries");
        return {v[0] * scale, v[1] * scale, v[2] * scale};
    }

    Section child(const std::string& key) {
        return Section(has(key) ? &j_->at(key) : nullptr, path_.empty() ? key : path_ + "." + key);
    }

    std::vector<Section> children(const std::string& key) {
        std::vector<Section> out;
        if (!has(key)) return out;
        const auto& v = j_->at(key);
        if (!v.is_array()) throw SchemaError(where(key) + " must be an array of objects");
        for (std::size_t i = 0; i < v.size(); ++i) out.emplace_back(&v[i], where(key) + "[" + std::to_string(i) + "]");
        return out;
    }

    bool present() const { return j_ != nullptr; }

    void finish() const {
        if (!j_) return;
        for (const auto& [k, v] : j_->items()) {
            if (!seen_.count(k)) throw SchemaError(where(k) + ": unknown key");
        }
    }

private:
    std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const nlohmann::json* j_;
    std::string path_;
    std::set<std::string> seen_;
};

CoherenceModel parse_coherence(Section s, const CoherenceModel& def) {
    CoherenceModel m;
    m.amplitude = s.number("amplitude", def.amplitude);
    m.t2 = s.number("t2_us", def.t2, kMicro);
    m.p = s.number("p", def.p);
    s.finish();
    return m;
}

ProjectionVariant parse_variant(const std::string& v) {
    if (v == "tangential") return ProjectionVariant::Tangential;
    if (v == "printed") return ProjectionVariant::Printed;
    throw SchemaError("wire.variant must be \"tangential\" or \"printed\"");
}

Scenario parse_scenario(const nlohmann::json& j, const fs::path& base_dir, std::string& rates_bytes) {
    Section root(&j, "");
    Scenario sc;
    sc.name = root.text("name", sc.name);
    if (root.has("seed")) {
        const auto& v = j.at("seed");
        if (!v.is_number_unsigned()) throw SchemaError("seed must be a non-negative integer");
        sc.seed = v.get<std::uint64_t>();
    }
    if (root.has("rates_file")) {
        fs::path p = root.text("rates_file", "");
        if (p.is_relative()) p = base_dir / p;
        std::ifstream in(p, std::ios::binary);
        if (!in) throw SchemaError("rates_file: cannot open " + p.string());
        rates_bytes.assign(std::istreambuf_iterator<char>(in), {});
        sc.rates = rates_from_json(nlohmann::json::parse(rates_bytes, nullptr, false, true));
    }
    if (root.has("rates")) sc.rates = rates_from_json(j.at("rates"));

    {
        Section s = root.child("optics");
        auto& o = sc.optics;
        o.wavelength = s.number("wavelength_nm", o.wavelength, kNano);
        o.na = s.number("na", o.na);
        o.gaussian.waist = s.number("gaussian_waist_nm", o.gaussian.waist, kNano);
        o.doughnut.r0 = s.number("doughnut_r0_nm", o.doughnut.r0, kNano);
        o.doughnut.s0 = s.number("doughnut_s0", o.doughnut.s0);
        o.doughnut.epsilon = s.number("doughnut_epsilon", o.doughnut.epsilon);
        o.alignment.gaussian_offset = s.vec2("gaussian_offset_nm", o.alignment.gaussian_offset, kNano);
        o.alignment.doughnut_offset = s.vec2("doughnut_offset_nm", o.alignment.doughnut_offset, kNano);
        s.finish();
    }
    {
        Section s = root.child("readout");
        auto& r = sc.readout;
        r.s = s.number("s", r.s);
        r.window = s.number("window_ns", r.window, kNano);
        r.photons_per_shot = s.number("photons_per_shot", r.photons_per_shot);
        s.finish();
    }
    {
        Section s = root.child("imaging");
        auto& im = sc.imaging;
        im.doughnut_duration = s.number("doughnut_us", im.doughnut_duration, kMicro);
        im.init_duration = s.number("init_us", im.init_duration, kMicro);
        im.settle = s.number("settle_us", im.settle, kMicro);
        im.pixels = s.integer("pixels", im.pixels);
        im.span = s.number("span_nm", im.span, kNano);
        im.reps_per_pixel = s.integer("reps_per_pixel", im.reps_per_pixel);
        im.lines = s.integer("lines", im.lines);
        im.running_average = s.flag("running_average", im.running_average);
        im.overhead_factor = s.number("overhead_factor", im.overhead_factor);
        im.fit_emitters = s.integer("fit_emitters", im.fit_emitters);
        im.fit_epsilon = s.flag("fit_epsilon", im.fit_epsilon);
        if (s.has("nvs")) {
            im.nvs.clear();
            for (Section e : s.children("nvs")) {
                NVEmitter nv;
                nv.position = {e.number("x_nm", 0.0, kNano), e.number("y_nm", 0.0, kNano)};
                nv.brightness = e.number("brightness", 1.0);
                e.finish();
                im.nvs.push_back(nv);
            }
        }
        s.finish();
    }
    {
        Section s = root.child("resolution_series");
        sc.resolution.durations = s.numbers("durations_us", sc.resolution.durations, kMicro);
        s.finish();
    }
    {
        Section s = root.child("two_nv");
        auto& t = sc.two_nv;
        t.s0 = s.number("doughnut_s0", t.s0);
        t.doughnut_duration = s.number("doughnut_us", t.doughnut_duration, kMicro);
        t.separation = s.number("separation_nm", t.separation, kNano);
        t.brightness = s.numbers("brightness", t.brightness);
        t.pixels_per_side = s.integer("pixels_per_side", t.pixels_per_side);
        t.span = s.number("span_nm", t.span, kNano);
        s.finish();
    }
    {
        Section s = root.child("psf_compare");
        auto& p = sc.psf_compare;
        p.s0 = s.number("doughnut_s0", p.s0);
        p.doughnut_duration = s.number("doughnut_us", p.doughnut_duration, kMicro);
        p.epsilons = s.numbers("epsilons", p.epsilons);
        p.half_span = s.number("half_span_nm", p.half_span, kNano);
        p.points = s.integer("points", p.points);
        s.finish();
    }
    {
        Section s = root.child("repolarization");
        auto& r = sc.repolarization;
        r.durations = s.numbers("durations_us", r.durations, kMicro);
        r.s_min = s.number("s_min", r.s_min);
        r.s_max = s.number("s_max", r.s_max);
        r.s_points = s.integer("s_points", r.s_points);
        s.finish();
    }
    {
        Section s = root.child("coherence");
        auto& c = sc.coherence;
        c.points = s.integer("points", c.points);
        c.t_max = s.number("t_max_us", c.t_max, kMicro);
        c.reps = s.integer("reps", c.reps);
        if (s.has("nvs")) {
            c.nvs.clear();
            c.weights.clear();
            for (Section e : s.children("nvs")) {
                c.weights.push_back(e.number("weight", 1.0));
                CoherenceModel m;
                m.amplitude = e.number("amplitude", m.amplitude);
                m.t2 = e.number("t2_us", m.t2, kMicro);
                m.p = e.number("p", m.p);
                e.finish();
                c.nvs.push_back(m);
            }
        }
        s.finish();
    }
    {
        Section s = root.child("wire");
        auto& w = sc.wire;
        w.wire.center = s.vec3("center_um", w.wire.center, kMicro);
        w.wire.radius = s.number("radius_um", w.wire.radius, kMicro);
        w.wire.current = s.number("current_mA", w.wire.current, kMilli);
        w.wire.frequency = s.number("frequency_kHz", w.wire.frequency, 1e3);
        w.nv.theta = s.number("nv_theta_deg", w.nv.theta, kPi / 180.0);
        w.nv.phi = s.number("nv_phi_deg", w.nv.phi, kPi / 180.0);
        w.nv1 = s.vec3("nv1_um", w.nv1, kMicro);
        w.separation = s.number("separation_nm", w.separation, kNano);
        w.variant = parse_variant(s.text("variant", w.variant == ProjectionVariant::Printed ? "printed" : "tangential"));
        w.drive_factor = s.number("drive_factor", w.drive_factor);
        w.rabi_current = s.number("rabi_current_mA", w.rabi_current, kMilli);
        w.printed_geometry = s.vec3("printed_geometry_um", w.printed_geometry, kMicro);
        if (s.has("x_range_um")) {
            const auto r = s.numbers("x_range_um", {}, kMicro);
            if (r.size() != 2) throw SchemaError("wire.x_range_um must have 2 entries");
            w.x_min = r[0];
            w.x_max = r[1];
        }
        w.points = s.integer("points", w.points);
        s.finish();
    }
    {
        Section s = root.child("magnetometry");
        auto& m = sc.magnetometry;
        m.current_max = s.number("current_max_mA", m.current_max, kMilli);
        m.points = s.integer("points", m.points);
        m.reference_current = s.number("reference_current_mA", m.reference_current, kMilli);
        m.reps = s.integer("reps", m.reps);
        s.finish();
    }
    {
        Section s = root.child("nmr");
        auto& n = sc.nmr;
        n.b0 = s.number("b0_gauss", n.b0, kGauss);
        n.rho = s.number("rho_per_m3", n.rho);
        n.depth = s.number("depth_nm", n.depth, kNano);
        n.n_pulses = s.integer("n_pulses", n.n_pulses);
        n.t_c = s.number("t_c_us", n.t_c, kMicro);
        n.points = s.integer("points", n.points);
        n.half_span = s.number("half_span_ns", n.half_span, kNano);
        n.reps = s.integer("reps", n.reps);
        if (s.has("background")) {
            if (j.at("nmr").at("background").is_boolean() && !j.at("nmr").at("background").get<bool>()) {
                n.background.reset();
            } else {
                n.background = parse_coherence(s.child("background"), n.background.value_or(CoherenceModel{}));
            }
        }
        s.finish();
    }
    {
        Section s = root.child("drift");
        auto& d = sc.drift;
        d.coupling = s.number("coupling_nm_per_K", d.coupling, kNano);
        d.temperature_amplitude = s.number("temperature_amplitude_K", d.temperature_amplitude);
        d.temperature_period = s.number("temperature_period_s", d.temperature_period);
        d.jitter = s.number("jitter_nm", d.jitter, kNano);
        d.temperature_hours = s.number("temperature_hours", d.temperature_hours);
        d.stabilized_hours = s.number("stabilized_hours", d.stabilized_hours);
        d.pixels = s.integer("pixels", d.pixels);
        d.span = s.number("span_nm", d.span, kNano);
        d.reps_per_pixel = s.integer("reps_per_pixel", d.reps_per_pixel);
        s.finish();
    }
    root.finish();
    sc.validate();
    return sc;
}

}  // namespace

void Scenario::validate() const {
    rates.validate();
    optics.gaussian.validate();
    optics.doughnut.validate();
    optics.alignment.validate();
    detail::require(optics.wavelength > 0.0 && optics.na > 0.0, "optics: wavelength and na must be > 0");
    detail::require(readout.s > 0.0 && readout.window > 0.0 && readout.photons_per_shot > 0.0,
                    "readout: s, window and photons_per_shot must be > 0");
    detail::require(imaging.pixels >= 2 && imaging.span > 0.0, "imaging: need >= 2 pixels and a positive span");
    detail::require(imaging.reps_per_pixel >= 1 && imaging.lines >= 1, "imaging: reps and lines must be >= 1");
    detail::require(!imaging.nvs.empty(), "imaging: at least one NV");
    detail::require(imaging.fit_emitters >= 1, "imaging: fit_emitters must be >= 1");
    detail::require(!resolution.durations.empty(), "resolution_series: durations are empty");
    for (double d : resolution.durations) detail::require(d > 0.0, "resolution_series: durations must be > 0");
    detail::require(two_nv.brightness.size() == 2, "two_nv: brightness needs 2 entries");
    detail::require(two_nv.s0 > 0.0 && two_nv.doughnut_duration > 0.0, "two_nv: s0 and duration must be > 0");
    detail::require(two_nv.pixels_per_side >= 2 && two_nv.span > 0.0, "two_nv: bad image grid");
    detail::require(!psf_compare.epsilons.empty() && psf_compare.points >= 3 && psf_compare.half_span > 0.0,
                    "psf_compare: need epsilons, >= 3 points and a positive span");
    detail::require(!repolarization.durations.empty() && repolarization.s_points >= 2 &&
                        repolarization.s_min > 0.0 && repolarization.s_max > repolarization.s_min,
                    "repolarization: bad grid");
    detail::require(coherence.nvs.size() == coherence.weights.size() && !coherence.nvs.empty(),
                    "coherence: one weight per NV");
    for (const auto& m : coherence.nvs) m.validate();
    detail::require(coherence.points >= 4 && coherence.t_max > 0.0 && coherence.reps >= 1, "coherence: bad sampling");
    wire.wire.validate();
    wire.nv.validate();
    detail::require(wire.points >= 2 && wire.x_max > wire.x_min, "wire: bad x range");
    detail::require(wire.drive_factor > 0.0, "wire: drive_factor must be > 0");
    detail::require(magnetometry.points >= 4 && magnetometry.current_max > 0.0 && magnetometry.reps >= 1,
                    "magnetometry: bad sampling");
    detail::require(coherence.nvs.size() >= 2, "magnetometry uses the first two coherence NVs");
    detail::require(nmr.b0 > 0.0 && nmr.rho > 0.0 && nmr.depth > 0.0 && nmr.n_pulses >= 1 && nmr.t_c > 0.0,
                    "nmr: parameters must be > 0");
    detail::require(nmr.points >= 4 && nmr.half_span > 0.0 && nmr.reps >= 1, "nmr: bad sampling");
    detail::require(drift.pixels >= 5 && drift.span > 0.0 && drift.reps_per_pixel >= 1, "drift: bad scan");
    detail::require(drift.temperature_hours > 0.0 && drift.stabilized_hours > 0.0, "drift: durations must be > 0");
}

ScanConfig Scenario::scan_config(std::uint64_t seed) const {
    ScanConfig c;
    c.pixels = line_grid(imaging.pixels, imaging.span);
    c.reps_per_pixel = imaging.reps_per_pixel;
    c.photons_per_shot = readout.photons_per_shot;
    c.sequence = build_imaging_shot(imaging.doughnut_duration, imaging.init_duration, imaging.settle, readout.window);
    c.overhead_factor = imaging.overhead_factor;
    c.gaussian = optics.gaussian;
    c.doughnut = optics.doughnut;
    c.alignment = optics.alignment;
    c.nvs = imaging.nvs;
    c.rates = rates;
    c.readout = ReadoutConfig{readout.s, readout.window, 1.0};
    c.lines = imaging.lines;
    c.running_average = imaging.running_average;
    c.seed = seed;
    return c;
}

ScanConfig Scenario::two_nv_config(std::uint64_t seed) const {
    ScanConfig c = scan_config(seed);
    c.sequence = build_imaging_shot(two_nv.doughnut_duration, imaging.init_duration, imaging.settle, readout.window);
    c.doughnut.s0 = two_nv.s0;
    NVEmitter a, b;
    a.position = {-0.5 * two_nv.separation, 0.0};
    b.position = {0.5 * two_nv.separation, 0.0};
    a.brightness = two_nv.brightness[0];
    b.brightness = two_nv.brightness[1];
    c.nvs = {a, b};
    return c;
}

Scenario scenario_from_json(const nlohmann::json& j, const fs::path& base_dir) {
    std::string rates_bytes;
    Scenario sc = parse_scenario(j, base_dir, rates_bytes);
    sc.hash = hex64(fnv1a64(j.dump() + rates_bytes));
    return sc;
}

Scenario load_scenario(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SchemaError("cannot open scenario " + path.string());
    const std::string bytes(std::istreambuf_iterator<char>(in), {});
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
    std::string rates_bytes;
    Scenario sc = parse_scenario(j, path.parent_path(), rates_bytes);
    sc.source = path;
    sc.hash = hex64(fnv1a64(bytes + rates_bytes));
    return sc;
}

fs::path resolve_scenario_path(const std::optional<std::string>& flag) {
    if (flag) return *flag;
    if (const char* dir = std::getenv(kScenarioDirEnv); dir && *dir) return fs::path(dir) / "default.json";
    return fs::path(SPINRESOLFT_SOURCE_DIR) / "scenarios" / "default.json";
}

const std::vector<std::string>& simulate_kinds() {
    static const std::vector<std::string> k{"psf", "scan2d", "coherence", "magnetometry", "nmr", "repolarization", "wirefield"};
    return k;
}

const std::vector<std::string>& fit_models() {
    static const std::vector<std::string> m{"gaussian", "resolft_psf", "stretched_exponential", "sinusoid", "nmr_dip"};
    return m;
}

const std::vector<std::string>& figure_ids() {
    static const std::vector<std::string> f{"fig1d", "fig2c", "fig3b", "fig3c", "fig4c",
                                            "figS3", "figS4", "figS6", "figS7", "figS8"};
    return f;
}

namespace {

std::string joined(const std::vector<std::string>& v) {
    std::string out;
    for (const auto& s : v) out += (out.empty() ? "" : ", ") + s;
    return out;
}

// ---- artifact writing ------------------------------------------------------

class Artifacts {
public:
    Artifacts(const Scenario& sc, const RunOptions& opt, std::string command)
        : sc_(sc), opt_(opt), command_(std::move(command)) {
        seed_ = opt.seed ? opt.seed : sc.seed;
        fs::create_directories(opt.out_dir);
    }

    std::uint64_t seed(const std::string& what) const {
        if (!seed_) throw UsageError(what + " is stochastic: pass --seed or set \"seed\" in the scenario");
        return *seed_;
    }

    std::vector<std::pair<std::string, std::string>> metadata(const std::string& artifact) const {
        return {
            {"tool", std::string("spinresolft ") + kToolVersion},
            {"command", command_},
            {"artifact", artifact},
            {"scenario", sc_.name},
            {"scenario_hash", sc_.hash},
            {"seed", seed_ ? std::to_string(*seed_) : "none"},
        };
    }

    ojson metadata_json(const std::string& artifact) const {
        ojson m;
        for (const auto& [k, v] : metadata(artifact)) m[k] = v;
        return m;
    }

    void csv(const std::string& name, CsvTable t, const Plot* plot = nullptr,
             std::vector<std::pair<std::string, std::string>> extra = {}) {
        auto meta = metadata(name);
        meta.insert(meta.end(), extra.begin(), extra.end());
        t.metadata = std::move(meta);
        const fs::path p = opt_.out_dir / (name + ".csv");
        write_csv(p, t);
        written_.push_back(p);
        if (plot && opt_.format == OutputFormat::CsvSvg) {
            const fs::path s = opt_.out_dir / (name + ".svg");
            write_svg(s, *plot);
            written_.push_back(s);
        }
    }

    void json(const std::string& name, ojson body) {
        ojson doc;
        doc["metadata"] = metadata_json(name);
        for (auto& [k, v] : body.items()) doc[k] = v;
        const fs::path p = opt_.out_dir / (name + ".json");
        std::ofstream out(p, std::ios::binary);
        if (!out) throw SchemaError("cannot write " + p.string());
        out << doc.dump(2) << '\n';
        written_.push_back(p);
    }

    std::vector<fs::path> written() const { return written_; }

private:
    const Scenario& sc_;
    const RunOptions& opt_;
    std::string command_;
    std::optional<std::uint64_t> seed_;
    std::vector<fs::path> written_;
};

std::vector<double> scaled(std::span<const double> v, double k) {
    std::vector<double> out(v.begin(), v.end());
    for (double& x : out) x *= k;
    return out;
}

CsvTable columns_table(std::vector<std::string> names, const std::vector<std::vector<double>>& cols) {
    CsvTable t;
    t.columns = std::move(names);
    const std::size_t n = cols.empty() ? 0 : cols.front().size();
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> row;
        for (const auto& c : cols) row.push_back(c[i]);
        t.rows.push_back(std::move(row));
    }
    return t;
}

std::string duration_tag(double seconds) {
    return format_double(static_cast<double>(std::llround(seconds / kNano)) / 1000.0) + "us";
}

// Stable substream tags per artifact.
enum : std::uint64_t {
    kTagLineScan = 0x11,
    kTagScan2d = 0x12,
    kTagResolution = 0x1d,
    kTagCoherence = 0x2c,
    kTagMagnetometry = 0x3b,
    kTagNmr = 0x4c,
    kTagDriftTemperature = 0x61,
    kTagDriftStabilized = 0x62,
};

// ---- forward simulations ---------------------------------------------------

struct PsfComparison {
    std::vector<double> x;
    std::vector<std::vector<double>> profile;
    std::vector<std::vector<double>> normalized;
    std::vector<double> peak_contrast;
    double max_shape_difference = 0.0;
};

// Doughnut-only PSF: the readout Gaussian is left out, as in the rate-equation picture.
PsfComparison compare_psf(const Scenario& sc) {
    const auto& p = sc.psf_compare;
    PsfComparison out;
    for (int i = 0; i < p.points; ++i) out.x.push_back(-p.half_span + 2.0 * p.half_span * i / (p.points - 1));
    for (double eps : p.epsilons) {
        DoughnutProfile d = sc.optics.doughnut;
        d.s0 = p.s0;
        d.epsilon = eps;
        std::vector<double> prof;
        for (double x : out.x) prof.push_back(resolft_psf(std::abs(x), d, p.doughnut_duration, sc.rates));
        const double peak = *std::max_element(prof.begin(), prof.end());
        out.profile.push_back(prof);
        out.normalized.push_back(scaled(prof, peak > 0.0 ? 1.0 / peak : 0.0));
        out.peak_contrast.push_back(peak);
    }
    for (std::size_t k = 1; k < out.normalized.size(); ++k) {
        for (std::size_t i = 0; i < out.x.size(); ++i) {
            out.max_shape_difference = std::max(out.max_shape_difference, std::abs(out.normalized[k][i] - out.normalized[0][i]));
        }
    }
    return out;
}

void write_psf_comparison(Artifacts& a, const Scenario& sc, const std::string& name) {
    const PsfComparison cmp = compare_psf(sc);
    std::vector<std::string> names{"x_nm"};
    std::vector<std::vector<double>> cols{scaled(cmp.x, 1.0 / kNano)};
    Plot plot{"Spin-RESOLFT PSF, doughnut " + duration_tag(sc.psf_compare.doughnut_duration), "x (nm)", "normalized profile", {}};
    std::vector<std::pair<std::string, std::string>> extra;
    for (std::size_t k = 0; k < cmp.profile.size(); ++k) {
        const std::string tag = std::to_string(k + 1);
        names.push_back("psf_" + tag);
        names.push_back("normalized_" + tag);
        cols.push_back(cmp.profile[k]);
        cols.push_back(cmp.normalized[k]);
        extra.emplace_back("epsilon_" + tag, format_double(sc.psf_compare.epsilons[k]));
        plot.series.push_back({"epsilon " + format_double(sc.psf_compare.epsilons[k]), scaled(cmp.x, 1.0 / kNano), cmp.normalized[k], false});
    }
    a.csv(name, columns_table(names, cols), &plot, extra);
}

CsvTable repolarization_table(const Scenario& sc, std::vector<std::string>& labels) {
    const auto& r = sc.repolarization;
    std::vector<double> s_grid;
    for (int i = 0; i < r.s_points; ++i) {
        s_grid.push_back(r.s_min * std::pow(r.s_max / r.s_min, static_cast<double>(i) / (r.s_points - 1)));
    }
    std::vector<std::string> names{"s"};
    std::vector<std::vector<double>> cols{s_grid};
    for (double t : r.durations) {
        labels.push_back(duration_tag(t));
        names.push_back("polarization_" + duration_tag(t));
        std::vector<double> col;
        for (double s : s_grid) col.push_back(relax(evolve(PopulationState::unpolarized(), {s, t}, sc.rates), sc.rates).n[0]);
        cols.push_back(col);
    }
    return columns_table(names, cols);
}

void write_repolarization(Artifacts& a, const Scenario& sc, const std::string& name) {
    std::vector<std::string> labels;
    CsvTable t = repolarization_table(sc, labels);
    Plot plot{"m_s=0 population after a square pulse", "s (fraction of saturation, log10)", "population", {}};
    const auto s = t.column("s");
    std::vector<double> logs;
    for (double v : s) logs.push_back(std::log10(v));
    for (std::size_t k = 0; k < labels.size(); ++k) plot.series.push_back({labels[k], logs, t.column(t.columns[k + 1]), false});
    a.csv(name, std::move(t), &plot, {{"initial_state", "unpolarized"}});
}

ScanResult line_scan(const Scenario& sc, std::uint64_t seed) {
    return simulate_scan(sc.scan_config(substream_seed(seed, kTagLineScan)));
}

void write_line_scan(Artifacts& a, const Scenario& sc, std::uint64_t seed, const std::string& name) {
    const ScanResult r = line_scan(sc, seed);
    CsvTable t = scan_table(r);
    Plot plot{"Line scan", "x (nm)", "counts", {}};
    const auto x = t.column("x_nm");
    plot.series.push_back({"ref0", x, t.column("ref0_counts"), true});
    plot.series.push_back({"signal", x, t.column("sig_counts"), true});
    plot.series.push_back({"profile", x, t.column("profile"), false});
    a.csv(name, std::move(t), &plot,
          {{"doughnut_us", format_double(sc.imaging.doughnut_duration / kMicro)},
           {"running_average", sc.imaging.running_average ? "true" : "false"}});
}

void write_scan2d(Artifacts& a, const Scenario& sc, std::uint64_t seed, const std::string& name) {
    ScanConfig c = sc.two_nv_config(substream_seed(seed, kTagScan2d));
    c.pixels = square_grid(sc.two_nv.pixels_per_side, sc.two_nv.span);
    c.running_average = false;
    const ScanResult r = simulate_scan(c);
    CsvTable t = scan_table(r);
    a.csv(name, std::move(t), nullptr,
          {{"pixels_per_side", std::to_string(sc.two_nv.pixels_per_side)},
           {"separation_nm", format_double(sc.two_nv.separation / kNano)}});
}

std::vector<double> coherence_times(const CoherenceSettings& c) {
    std::vector<double> t;
    for (int i = 0; i < c.points; ++i) t.push_back(c.t_max * (i + 0.5) / c.points);
    return t;
}

struct CoherenceRun {
    std::vector<double> t;
    std::vector<ContrastDataset> channels;  // NV1..NVn, then the weighted ensemble
};

CoherenceRun run_coherence(const Scenario& sc, std::uint64_t seed) {
    const auto& c = sc.coherence;
    CoherenceRun run;
    run.t = coherence_times(c);
    ContrastBudget budget{c.reps, sc.readout.photons_per_shot, false};
    const std::uint64_t base = substream_seed(seed, kTagCoherence);
    for (std::size_t k = 0; k < c.nvs.size(); ++k) {
        const CoherenceModel one[] = {c.nvs[k]};
        const double w[] = {1.0};
        run.channels.push_back(simulate_coherence_experiment(run.t, one, w, budget, substream_seed(base, k + 1)));
    }
    run.channels.push_back(simulate_coherence_experiment(run.t, c.nvs, c.weights, budget, substream_seed(base, 0)));
    return run;
}

std::string channel_label(std::size_t k, std::size_t n) { return k + 1 == n ? "ensemble" : "nv" + std::to_string(k + 1); }

void write_contrast_channels(Artifacts& a, const std::string& name, const std::string& x_name, double x_scale,
                             const std::vector<double>& x, const std::vector<ContrastDataset>& channels,
                             const std::vector<std::vector<double>>& fits, const Plot* plot,
                             std::vector<std::pair<std::string, std::string>> extra = {}) {
    std::vector<std::string> names{x_name};
    std::vector<std::vector<double>> cols{scaled(x, x_scale)};
    for (std::size_t k = 0; k < channels.size(); ++k) {
        const std::string lab = channels.size() == 1 ? "" : "_" + channel_label(k, channels.size());
        names.push_back("contrast" + lab);
        names.push_back("sigma" + lab);
        cols.push_back(channels[k].contrast);
        cols.push_back(channels[k].sigma);
        if (k < fits.size()) {
            names.push_back("fit" + lab);
            cols.push_back(fits[k]);
        }
    }
    a.csv(name, columns_table(names, cols), plot, std::move(extra));
}

// AC magnetometry across wire currents for NV1, NV2 and the confocal ensemble.
struct MagnetometryRun {
    std::vector<double> currents;
    std::vector<ContrastDataset> channels;
    double phase_per_tesla = 0.0;
    double b1_per_amp = 0.0;
    double b2_per_amp = 0.0;
};

MagnetometryRun run_magnetometry(const Scenario& sc, std::uint64_t seed) {
    const auto& m = sc.magnetometry;
    const auto& w = sc.wire;
    MagnetometryRun run;
    for (int i = 0; i < m.points; ++i) run.currents.push_back(m.current_max * i / (m.points - 1));
    const PulseSequence seq = build_hahn_echo(0.5 / w.wire.frequency, sc.readout.window);
    run.phase_per_tesla = echo_phase(seq, ACField{1.0, w.wire.frequency, 0.0});
    run.b1_per_amp = b_parallel(w.nv1, w.wire, w.nv, w.variant) / w.wire.current;
    run.b2_per_amp = b_parallel(w.nv2(), w.wire, w.nv, w.variant) / w.wire.current;
    const double per_amp[] = {run.b1_per_amp, run.b2_per_amp};

    std::vector<ContrastChannel> chans;
    for (std::size_t k = 0; k < 2; ++k) {
        const CoherenceModel coh = sc.coherence.nvs[k];
        const double bpa = per_amp[k];
        const double f = w.wire.frequency;
        chans.push_back({[seq, coh, bpa, f](double i) { return magnetometry_contrast(ACField{bpa * i, f, 0.0}, seq, coh); },
                         sc.coherence.weights[k]});
    }
    ContrastBudget budget{m.reps, sc.readout.photons_per_shot, false};
    const std::uint64_t base = substream_seed(seed, kTagMagnetometry);
    for (std::size_t k = 0; k < 2; ++k) {
        ContrastChannel one[] = {chans[k]};
        one[0].weight = 1.0;
        run.channels.push_back(simulate_contrast_experiment(run.currents, one, budget, substream_seed(base, k + 1)));
    }
    run.channels.push_back(simulate_contrast_experiment(run.currents, chans, budget, substream_seed(base, 0)));
    return run;
}

std::vector<double> nmr_taus(const Scenario& sc) {
    const double tau0 = resonant_tau(larmor_frequency(sc.nmr.b0));
    std::vector<double> t;
    for (int i = 0; i < sc.nmr.points; ++i) t.push_back(tau0 - sc.nmr.half_span + 2.0 * sc.nmr.half_span * i / (sc.nmr.points - 1));
    return t;
}

NuclearSignal nmr_signal(const Scenario& sc) {
    return {proton_brms({sc.nmr.rho, sc.nmr.depth}, sc.wire.nv.theta), larmor_frequency(sc.nmr.b0), sc.nmr.t_c};
}

NmrFitSetup nmr_setup(const Scenario& sc) {
    NmrFitSetup s;
    s.n_pulses = sc.nmr.n_pulses;
    s.rho = sc.nmr.rho;
    s.nv_theta = sc.wire.nv.theta;
    s.background = sc.nmr.background;
    return s;
}

ContrastDataset run_nmr(const Scenario& sc, std::uint64_t seed) {
    const NuclearSignal sig = nmr_signal(sc);
    NmrOptions opts;
    opts.background = sc.nmr.background;
    const int n = sc.nmr.n_pulses;
    const ContrastChannel ch[] = {{[sig, opts, n](double tau) { return nmr_contrast(tau, n, sig, opts); }, 1.0}};
    const auto taus = nmr_taus(sc);
    return simulate_contrast_experiment(taus, ch, ContrastBudget{sc.nmr.reps, sc.readout.photons_per_shot, false},
                                        substream_seed(seed, kTagNmr));
}

std::vector<double> wire_x(const WireSettings& w) {
    std::vector<double> x;
    for (int i = 0; i < w.points; ++i) x.push_back(w.x_min + (w.x_max - w.x_min) * i / (w.points - 1));
    return x;
}

void write_wire_field(Artifacts& a, const Scenario& sc, const std::string& name) {
    const auto& w = sc.wire;
    std::vector<double> x = wire_x(w), b_t, b_p, g, b_abs, b_abs_bs;
    for (double xi : x) {
        const Vec3 pos{xi, w.nv1.y, w.nv1.z};
        b_t.push_back(b_parallel(pos, w.wire, w.nv, ProjectionVariant::Tangential) / kMicro);
        b_p.push_back(b_parallel(pos, w.wire, w.nv, ProjectionVariant::Printed) / kMicro);
        g.push_back(gradient_parallel_richardson(pos, w.wire, w.nv, 10e-9, w.variant));
        b_abs.push_back(wire_field(pos, w.wire).norm() / kMicro);
        b_abs_bs.push_back(biot_savart_segment(pos, w.wire, 1.0).norm() / kMicro);
    }
    Plot plot{"Wire field along the NV axis, z = " + format_double(w.nv1.z / kMicro) + " um", "x (um)", "B (uT)", {}};
    const auto xu = scaled(x, 1.0 / kMicro);
    plot.series.push_back({"tangential", xu, b_t, false});
    plot.series.push_back({"printed", xu, b_p, false});
    a.csv(name, columns_table({"x_um", "b_tangential_uT", "b_printed_uT", "gradient_nT_per_nm", "b_abs_uT", "b_abs_biot_savart_uT"},
                              {xu, b_t, b_p, g, b_abs, b_abs_bs}),
          &plot, {{"z_um", format_double(w.nv1.z / kMicro)}, {"current_mA", format_double(w.wire.current / kMilli)}});
}

ojson wire_report(const Scenario& sc) {
    const auto& w = sc.wire;
    const Vec3 pg = w.printed_geometry;
    ojson r;
    r["current_mA"] = w.wire.current / kMilli;
    r["nv_theta_deg"] = w.nv.theta * 180.0 / kPi;
    ojson printed;
    printed["position_um"] = {pg.x / kMicro, pg.y / kMicro, pg.z / kMicro};
    printed["b_printed_variant_uT"] = b_parallel(pg, w.wire, w.nv, ProjectionVariant::Printed) / kMicro;
    printed["b_tangential_variant_uT"] = b_parallel(pg, w.wire, w.nv, ProjectionVariant::Tangential) / kMicro;
    printed["gradient_printed_nT_per_nm"] = gradient_parallel_richardson(pg, w.wire, w.nv, 10e-9, ProjectionVariant::Printed);
    printed["gradient_tangential_nT_per_nm"] = gradient_parallel_richardson(pg, w.wire, w.nv, 10e-9, ProjectionVariant::Tangential);
    r["stated_geometry"] = printed;

    ojson doc;
    doc["variant"] = w.variant == ProjectionVariant::Tangential ? "tangential" : "printed";
    doc["nv1_um"] = {w.nv1.x / kMicro, w.nv1.y / kMicro, w.nv1.z / kMicro};
    doc["b_nv1_uT"] = b_parallel(w.nv1, w.wire, w.nv, w.variant) / kMicro;
    doc["b_nv2_uT"] = b_parallel(w.nv2(), w.wire, w.nv, w.variant) / kMicro;
    doc["difference_nT"] = (b_parallel(w.nv1, w.wire, w.nv, w.variant) - b_parallel(w.nv2(), w.wire, w.nv, w.variant)) / kNano;
    doc["gradient_nT_per_nm"] = gradient_parallel_richardson(w.nv1, w.wire, w.nv, 10e-9, w.variant);
    r["documented_geometry"] = doc;

    // Numeric Biot-Savart oracle against the closed form at both positions.
    double worst = 0.0;
    for (const Vec3& p : {w.nv1, pg}) {
        const Vec3 a = wire_field(p, w.wire);
        const Vec3 b = biot_savart_segment(p, w.wire, 1.0);
        worst = std::max(worst, (a - b).norm() / a.norm());
    }
    r["biot_savart_max_relative_difference"] = worst;
    return r;
}

void write_rabi(Artifacts& a, const Scenario& sc, const std::string& name) {
    const auto& w = sc.wire;
    std::vector<double> x = wire_x(w), f;
    for (double xi : x) f.push_back(rabi_frequency({xi, w.nv1.y, w.nv1.z}, w.wire, w.nv, w.rabi_current, w.drive_factor) / 1e6);
    Plot plot{"Rabi frequency at " + format_double(w.rabi_current / kMilli) + " mA", "x (um)", "Rabi frequency (MHz)",
              {{"model", scaled(x, 1.0 / kMicro), f, false}}};
    a.csv(name, columns_table({"x_um", "rabi_MHz"}, {scaled(x, 1.0 / kMicro), f}), &plot,
          {{"current_mA", format_double(w.rabi_current / kMilli)}, {"drive_factor", format_double(w.drive_factor)},
           {"rabi_at_nv1_MHz", format_double(rabi_frequency(w.nv1, w.wire, w.nv, w.rabi_current, w.drive_factor) / 1e6)}});
}

// ---- fit helpers ------------------------------------------------------------

ojson fit_json(const FitResult& r) {
    ojson params = ojson::array();
    for (std::size_t i = 0; i < r.values.size(); ++i) {
        double k = 1.0;
        std::string unit = r.units[i];
        if (unit == "m") { k = 1.0 / kNano; unit = "nm"; }
        else if (unit == "s") { k = 1.0 / kMicro; unit = "us"; }
        else if (unit == "Hz") { k = 1e-6; unit = "MHz"; }
        ojson p;
        p["name"] = r.names[i];
        p["value"] = r.values[i] * k;
        p["sigma"] = r.sigma[i] * k;
        p["unit"] = unit;
        params.push_back(p);
    }
    ojson j;
    j["parameters"] = params;
    j["chi2"] = r.chi2;
    j["reduced_chi2"] = r.reduced_chi2;
    j["dof"] = r.dof;
    j["iterations"] = r.iterations;
    return j;
}

double sinusoid_model(const FitResult& f, double x) { return f.value("amplitude") * std::cos(f.value("k") * x); }

double stretched_model(const FitResult& f, double t) {
    return coherence_envelope(t, CoherenceModel{f.value("A"), f.value("T2"), f.value("p")});
}

double nmr_model(const FitResult& f, const NmrFitSetup& s, double tau) {
    NuclearSignal sig{proton_brms({s.rho, f.value("d_nv")}, s.nv_theta), f.value("nu_center"), f.value("t_c")};
    NmrOptions opts;
    opts.background = s.background;
    opts.gamma_e = s.gamma_e;
    return nmr_contrast(tau, s.n_pulses, sig, opts);
}

Dataset contrast_dataset(const ContrastDataset& d) { return {d.x, d.contrast, d.sigma}; }

// ---- figure chains ---------------------------------------------------------

void reproduce_fig1d(Artifacts& a, const Scenario& sc) {
    const std::uint64_t seed = a.seed("fig1d");
    std::vector<double> dur, fwhm, fwhm_sigma, model_fwhm, s0, s0_sigma;
    std::vector<std::string> names{"x_nm"};
    std::vector<std::vector<double>> cols;
    Plot plot{"Spin-RESOLFT line profiles", "x (nm)", "profile (counts)", {}};
    for (std::size_t k = 0; k < sc.resolution.durations.size(); ++k) {
        const double tau = sc.resolution.durations[k];
        ScanConfig c = sc.scan_config(substream_seed(seed, kTagResolution, k));
        c.sequence = build_imaging_shot(tau, sc.imaging.init_duration, sc.imaging.settle, sc.readout.window);
        const ScanResult r = simulate_scan(c);
        const Dataset d = profile_dataset(r, c.running_average);
        PsfFitSetup setup;
        setup.scan = c;
        setup.emitters = 1;
        setup.fit_epsilon = sc.imaging.fit_epsilon;
        const PsfFit f = fit_resolft_psf(d, setup);
        dur.push_back(tau / kMicro);
        fwhm.push_back(f.fwhm[0] / kNano);
        fwhm_sigma.push_back(f.fwhm_sigma[0] / kNano);
        model_fwhm.push_back(profile_fwhm(c, c.nvs.front()) / kNano);
        s0.push_back(f.result.value("s0"));
        s0_sigma.push_back(f.result.error("s0"));
        if (cols.empty()) cols.push_back(scaled(d.x, 1.0 / kNano));
        names.push_back("profile_" + duration_tag(tau));
        cols.push_back(d.y);
        plot.series.push_back({duration_tag(tau), cols.front(), d.y, false});
    }
    a.csv("fig1d_profiles", columns_table(names, cols), &plot);
    Plot fplot{"FWHM against doughnut duration", "doughnut duration (us)", "FWHM (nm)",
               {{"fit", dur, fwhm, true}, {"model", dur, model_fwhm, false}}};
    a.csv("fig1d_fwhm", columns_table({"doughnut_us", "fwhm_nm", "fwhm_sigma_nm", "model_fwhm_nm", "s0", "s0_sigma"},
                                      {dur, fwhm, fwhm_sigma, model_fwhm, s0, s0_sigma}),
          &fplot, {{"doughnut_s0", format_double(sc.optics.doughnut.s0)}});
}

void reproduce_fig2c(Artifacts& a, const Scenario& sc) {
    const CoherenceRun run = run_coherence(sc, a.seed("fig2c"));
    std::vector<std::vector<double>> fits;
    std::vector<double> chan, amp, amp_s, t2, t2_s, p, p_s;
    Plot plot{"Hahn-echo coherence", "t (us)", "contrast", {}};
    const auto tu = scaled(run.t, 1.0 / kMicro);
    for (std::size_t k = 0; k < run.channels.size(); ++k) {
        const FitResult f = fit_stretched_exponential(contrast_dataset(run.channels[k]));
        std::vector<double> curve;
        for (double t : run.t) curve.push_back(stretched_model(f, t));
        fits.push_back(curve);
        chan.push_back(k + 1 == run.channels.size() ? 0.0 : static_cast<double>(k + 1));
        amp.push_back(f.value("A"));
        amp_s.push_back(f.error("A"));
        t2.push_back(f.value("T2") / kMicro);
        t2_s.push_back(f.error("T2") / kMicro);
        p.push_back(f.value("p"));
        p_s.push_back(f.error("p"));
        const std::string lab = channel_label(k, run.channels.size());
        plot.series.push_back({lab, tu, run.channels[k].contrast, true});
        plot.series.push_back({lab + " fit", tu, curve, false});
    }
    write_contrast_channels(a, "fig2c_coherence", "t_us", 1.0 / kMicro, run.t, run.channels, fits, &plot);
    a.csv("fig2c_fits", columns_table({"channel", "A", "A_sigma", "T2_us", "T2_sigma_us", "p", "p_sigma"},
                                      {chan, amp, amp_s, t2, t2_s, p, p_s}),
          nullptr, {{"channel_0", "ensemble"}});
}

void reproduce_fig3b(Artifacts& a, const Scenario& sc) {
    const MagnetometryRun run = run_magnetometry(sc, a.seed("fig3b"));
    const double iref = sc.magnetometry.reference_current;
    std::vector<std::vector<double>> fits;
    std::vector<double> chan, field, field_s, truth, k_col;
    Plot plot{"AC magnetometry response", "current (mA)", "contrast", {}};
    const auto im = scaled(run.currents, 1.0 / kMilli);
    const double per_amp[] = {run.b1_per_amp, run.b2_per_amp};
    const double w0 = sc.coherence.weights[0], w1 = sc.coherence.weights[1];
    for (std::size_t k = 0; k < run.channels.size(); ++k) {
        const FitResult f = fit_sinusoid_fixed_phase(contrast_dataset(run.channels[k]));
        const FieldEstimate fe = field_from_sinusoid(f, iref, run.phase_per_tesla);
        std::vector<double> curve;
        for (double i : run.currents) curve.push_back(sinusoid_model(f, i));
        fits.push_back(curve);
        const bool ens = k + 1 == run.channels.size();
        chan.push_back(ens ? 0.0 : static_cast<double>(k + 1));
        field.push_back(fe.field / kMicro);
        field_s.push_back(fe.sigma / kMicro);
        truth.push_back((ens ? (w0 * per_amp[0] + w1 * per_amp[1]) / (w0 + w1) : per_amp[k]) * iref / kMicro);
        k_col.push_back(f.value("k") * kMilli);
        const std::string lab = channel_label(k, run.channels.size());
        plot.series.push_back({lab, im, run.channels[k].contrast, true});
        plot.series.push_back({lab + " fit", im, curve, false});
    }
    write_contrast_channels(a, "fig3b_response", "current_mA", 1.0 / kMilli, run.currents, run.channels, fits, &plot,
                            {{"phase_per_tesla", format_double(run.phase_per_tesla)}});
    a.csv("fig3b_fields", columns_table({"channel", "field_uT", "field_sigma_uT", "model_field_uT", "k_rad_per_mA"},
                                        {chan, field, field_s, truth, k_col}),
          nullptr,
          {{"channel_0", "ensemble"}, {"reference_current_mA", format_double(iref / kMilli)},
           {"field_difference_nT", format_double((field[0] - field[1]) * kMicro / kNano)}});
}

void reproduce_fig3c(Artifacts& a, const Scenario& sc) {
    const MagnetometryRun run = run_magnetometry(sc, a.seed("fig3c"));
    const auto im = scaled(run.currents, 1.0 / kMilli);
    std::vector<std::string> names{"frequency_per_mA"};
    std::vector<std::vector<double>> cols;
    std::vector<double> chan, peak;
    Plot plot{"Fourier transform of the response", "frequency (1/mA)", "magnitude", {}};
    for (std::size_t k = 0; k < run.channels.size(); ++k) {
        const Spectrum s = spectral_response(im, run.channels[k].contrast, 0.0, 512);
        if (cols.empty()) cols.push_back(s.frequency);
        const std::string lab = channel_label(k, run.channels.size());
        names.push_back("magnitude_" + lab);
        cols.push_back(s.magnitude);
        chan.push_back(k + 1 == run.channels.size() ? 0.0 : static_cast<double>(k + 1));
        peak.push_back(s.peak_frequency);
        plot.series.push_back({lab, s.frequency, s.magnitude, false});
    }
    a.csv("fig3c_spectrum", columns_table(names, cols), &plot);
    a.csv("fig3c_peaks", columns_table({"channel", "peak_frequency_per_mA"}, {chan, peak}), nullptr, {{"channel_0", "ensemble"}});
}

void reproduce_fig4c(Artifacts& a, const Scenario& sc) {
    const ContrastDataset d = run_nmr(sc, a.seed("fig4c"));
    const NmrFitSetup setup = nmr_setup(sc);
    const FitResult f = fit_nmr_dip(contrast_dataset(d), setup);
    std::vector<double> curve;
    for (double tau : d.x) curve.push_back(nmr_model(f, setup, tau));
    const auto tn = scaled(d.x, 1.0 / kNano);
    Plot plot{"Proton NMR dip", "tau (ns)", "contrast", {{"data", tn, d.contrast, true}, {"fit", tn, curve, false}}};
    write_contrast_channels(a, "fig4c_nmr", "tau_ns", 1.0 / kNano, d.x, {d}, {curve}, &plot,
                            {{"n_pulses", std::to_string(sc.nmr.n_pulses)}});
    ojson body = fit_json(f);
    const FieldEstimate b = nmr_brms(f, setup);
    body["b_rms_uT"] = b.field / kMicro;
    body["b_rms_sigma_uT"] = b.sigma / kMicro;
    body["larmor_MHz"] = larmor_frequency(sc.nmr.b0) / 1e6;
    body["resonant_tau_ns"] = resonant_tau(larmor_frequency(sc.nmr.b0)) / kNano;
    a.json("fig4c_fit", body);
}

struct DriftRun {
    std::vector<double> time_min, temperature, drift_nm, center_nm, center_sigma_nm;
};

DriftRun run_drift(const Scenario& sc, DriftMode mode, double hours, std::uint64_t seed) {
    const auto& ds = sc.drift;
    ScanConfig c = sc.scan_config(seed);
    c.pixels = line_grid(ds.pixels, ds.span);
    c.reps_per_pixel = ds.reps_per_pixel;
    c.sequence = build_imaging_shot(0.0, sc.imaging.init_duration, sc.imaging.settle, sc.readout.window);
    c.nvs = {NVEmitter{}};
    c.running_average = false;
    c.lines = 1;
    const double line_s = acquisition_budget(c).actual_line_seconds;
    c.lines = std::max(2, static_cast<int>(std::floor(hours * 3600.0 / line_s)));
    DriftModel dm;
    dm.mode = mode;
    dm.coupling = ds.coupling;
    dm.temperature_amplitude = ds.temperature_amplitude;
    dm.temperature_period = ds.temperature_period;
    dm.jitter_sigma = ds.jitter;
    const ScanResult r = simulate_scan(c, dm);

    DriftRun out;
    std::vector<double> x;
    for (const auto& p : r.pixels) x.push_back(p.x);
    for (const auto& line : r.lines) {
        Dataset d;
        d.x = x;
        for (auto v : line.ref0) {
            d.y.push_back(static_cast<double>(v));
            d.sigma.push_back(std::sqrt(std::max<double>(1.0, static_cast<double>(v))));
        }
        const FitResult f = fit_gaussian_center(d);
        out.time_min.push_back(line.start_time / 60.0);
        out.temperature.push_back(line.temperature);
        out.drift_nm.push_back(line.apparent_shift.x / kNano);
        out.center_nm.push_back(f.value("center") / kNano);
        out.center_sigma_nm.push_back(f.error("center") / kNano);
    }
    return out;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

double sample_std(const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / (n - 1));
}

void reproduce_figS6(Artifacts& a, const Scenario& sc) {
    const std::uint64_t seed = a.seed("figS6");
    const DriftRun t = run_drift(sc, DriftMode::TemperatureCoupled, sc.drift.temperature_hours,
                                 substream_seed(seed, kTagDriftTemperature));
    const DriftRun s = run_drift(sc, DriftMode::Stabilized, sc.drift.stabilized_hours,
                                 substream_seed(seed, kTagDriftStabilized));
    const auto [tmin, tmax] = std::minmax_element(t.center_nm.begin(), t.center_nm.end());
    Plot pt{"Temperature-coupled drift", "time (min)", "fitted center (nm)", {{"center", t.time_min, t.center_nm, true}}};
    a.csv("figS6a_temperature",
          columns_table({"time_min", "temperature_K", "drift_nm", "center_nm", "center_sigma_nm"},
                        {t.time_min, t.temperature, t.drift_nm, t.center_nm, t.center_sigma_nm}),
          &pt,
          {{"correlation", format_double(pearson(t.center_nm, t.temperature))},
           {"excursion_nm", format_double(*tmax - *tmin)}});
    Plot ps{"Stabilized drift", "time (min)", "fitted center (nm)", {{"center", s.time_min, s.center_nm, true}}};
    a.csv("figS6b_stabilized",
          columns_table({"time_min", "drift_nm", "center_nm", "center_sigma_nm"},
                        {s.time_min, s.drift_nm, s.center_nm, s.center_sigma_nm}),
          &ps, {{"center_std_nm", format_double(sample_std(s.center_nm))}});
}

// ---- fit command inputs ----------------------------------------------------

// y and sigma columns carry a "_<channel>" suffix in multi-channel files.
Dataset named_dataset(const CsvTable& t, const std::string& x_col, double x_scale, const std::string& y_col,
                      const std::string& channel) {
    const std::string suffix = channel.empty() ? "" : "_" + channel;
    if (channel.empty() && !t.has_column(y_col) && t.has_column(y_col + "_nv1")) {
        throw SchemaError("missing column '" + y_col + "'; multi-channel file, pick one with --channel");
    }
    Dataset d;
    d.x = scaled(t.column(x_col), x_scale);
    d.y = t.column(y_col + suffix);
    if (t.has_column("sigma" + suffix)) d.sigma = t.column("sigma" + suffix);
    return d;
}

}  // namespace

std::vector<fs::path> cmd_simulate(const std::string& kind, const Scenario& sc, const RunOptions& opt) {
    const auto& kinds = simulate_kinds();
    if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) {
        throw UsageError("unknown simulate kind '" + kind + "'; valid kinds: " + joined(kinds));
    }
    Artifacts a(sc, opt, "simulate " + kind);
    if (kind == "psf") {
        const std::uint64_t seed = a.seed("simulate psf");
        write_psf_comparison(a, sc, "psf_curves");
        write_line_scan(a, sc, seed, "line_scan");
    } else if (kind == "scan2d") {
        write_scan2d(a, sc, a.seed("simulate scan2d"), "scan2d");
    } else if (kind == "coherence") {
        const CoherenceRun run = run_coherence(sc, a.seed("simulate coherence"));
        write_contrast_channels(a, "coherence", "t_us", 1.0 / kMicro, run.t, run.channels, {}, nullptr);
    } else if (kind == "magnetometry") {
        const MagnetometryRun run = run_magnetometry(sc, a.seed("simulate magnetometry"));
        write_contrast_channels(a, "magnetometry", "current_mA", 1.0 / kMilli, run.currents, run.channels, {}, nullptr,
                                {{"phase_per_tesla", format_double(run.phase_per_tesla)}});
    } else if (kind == "nmr") {
        const ContrastDataset d = run_nmr(sc, a.seed("simulate nmr"));
        write_contrast_channels(a, "nmr", "tau_ns", 1.0 / kNano, d.x, {d}, {}, nullptr,
                                {{"n_pulses", std::to_string(sc.nmr.n_pulses)}});
    } else if (kind == "repolarization") {
        write_repolarization(a, sc, "repolarization");
    } else if (kind == "wirefield") {
        write_wire_field(a, sc, "wire_field");
        write_rabi(a, sc, "rabi");
        a.json("wire_report", wire_report(sc));
    }
    return a.written();
}

std::vector<fs::path> cmd_fit(const std::string& model, const fs::path& input, const Scenario& sc, const RunOptions& opt,
                              const std::string& channel) {
    const auto& models = fit_models();
    if (std::find(models.begin(), models.end(), model) == models.end()) {
        throw UsageError("unknown fit model '" + model + "'; valid models: " + joined(models));
    }
    const CsvTable t = read_csv(input);
    Artifacts a(sc, opt, "fit " + model);
    ojson body;
    body["model"] = model;
    body["input"] = input.filename().string();
    if (!channel.empty()) body["channel"] = channel;
    Dataset d;
    std::vector<double> curve;
    std::string x_name;
    double x_scale = 1.0;

    if (model == "gaussian" || model == "resolft_psf") {
        x_name = "x_nm";
        x_scale = kNano;
        const bool scanner = t.has_column("sig_counts") && t.has_column("ref0_counts");
        d = scanner ? profile_dataset(t, sc.imaging.running_average) : named_dataset(t, "x_nm", kNano, "profile", channel);
        if (model == "gaussian") {
            const FitResult f = fit_gaussian_center(d);
            body.update(fit_json(f));
            for (double x : d.x) {
                const double u = (x - f.value("center")) / f.value("waist");
                curve.push_back(f.value("amplitude") * std::exp(-2.0 * u * u) + f.value("offset"));
            }
            body["fwhm_nm"] = gaussian_fwhm(f.value("waist")) / kNano;
        } else {
            PsfFitSetup setup;
            setup.scan = sc.scan_config(0);
            if (t.has_column("y_nm") && !t.rows.empty()) setup.scan.pixels = {{0.0, t.column("y_nm").front() * kNano}};
            setup.emitters = sc.imaging.fit_emitters;
            setup.fit_epsilon = sc.imaging.fit_epsilon;
            const PsfFit f = fit_resolft_psf(d, setup);
            body.update(fit_json(f.result));
            body["fwhm_nm"] = scaled(f.fwhm, 1.0 / kNano);
            body["fwhm_sigma_nm"] = scaled(f.fwhm_sigma, 1.0 / kNano);
            std::vector<NVEmitter> nvs;
            ScanConfig c = setup.scan;
            c.doughnut.s0 = f.result.value("s0");
            c.doughnut.epsilon = f.result.value("epsilon");
            for (int k = 0; k < setup.emitters; ++k) {
                const std::string tag = setup.emitters == 1 ? "" : "_" + std::to_string(k + 1);
                NVEmitter e;
                e.position = {f.result.value("center" + tag), c.pixels.front().y};
                e.brightness = f.result.value("brightness" + tag);
                nvs.push_back(e);
            }
            curve = psf_line_model(d.x, c, nvs);
        }
    } else if (model == "stretched_exponential") {
        x_name = "t_us";
        x_scale = kMicro;
        d = named_dataset(t, x_name, x_scale, "contrast", channel);
        const FitResult f = fit_stretched_exponential(d);
        body.update(fit_json(f));
        for (double x : d.x) curve.push_back(stretched_model(f, x));
    } else if (model == "sinusoid") {
        x_name = "current_mA";
        x_scale = kMilli;
        d = named_dataset(t, x_name, x_scale, "contrast", channel);
        const FitResult f = fit_sinusoid_fixed_phase(d);
        body.update(fit_json(f));
        for (auto& p : body["parameters"]) {
            if (p["name"] == "k") {
                p["value"] = f.value("k") * kMilli;
                p["sigma"] = f.error("k") * kMilli;
                p["unit"] = "rad/mA";
            }
        }
        const double ppt = echo_phase(build_hahn_echo(0.5 / sc.wire.wire.frequency, sc.readout.window),
                                      ACField{1.0, sc.wire.wire.frequency, 0.0});
        const FieldEstimate fe = field_from_sinusoid(f, sc.magnetometry.reference_current, ppt);
        body["reference_current_mA"] = sc.magnetometry.reference_current / kMilli;
        body["field_uT"] = fe.field / kMicro;
        body["field_sigma_uT"] = fe.sigma / kMicro;
        for (double x : d.x) curve.push_back(sinusoid_model(f, x));
    } else {
        x_name = "tau_ns";
        x_scale = kNano;
        d = named_dataset(t, x_name, x_scale, "contrast", channel);
        const NmrFitSetup setup = nmr_setup(sc);
        const FitResult f = fit_nmr_dip(d, setup);
        body.update(fit_json(f));
        const FieldEstimate b = nmr_brms(f, setup);
        body["b_rms_uT"] = b.field / kMicro;
        body["b_rms_sigma_uT"] = b.sigma / kMicro;
        for (double x : d.x) curve.push_back(nmr_model(f, setup, x));
    }

    const std::string stem = "fit_" + model + (channel.empty() ? "" : "_" + channel);
    a.json(stem, body);
    std::vector<double> sigma = d.sigma.empty() ? std::vector<double>(d.size(), 1.0) : d.sigma;
    const auto xs = scaled(d.x, 1.0 / x_scale);
    Plot plot{"Fit: " + model, x_name, "y", {{"data", xs, d.y, true}, {"model", xs, curve, false}}};
    a.csv(stem, columns_table({x_name, "y", "sigma", "model"}, {xs, d.y, sigma, curve}), &plot,
          {{"input", input.filename().string()}});
    return a.written();
}

std::vector<fs::path> cmd_reproduce(const std::string& figure, const Scenario& sc, const RunOptions& opt) {
    const auto& ids = figure_ids();
    if (std::find(ids.begin(), ids.end(), figure) == ids.end()) {
        throw UsageError("unknown figure id '" + figure + "'; valid ids: " + joined(ids));
    }
    Artifacts a(sc, opt, "reproduce " + figure);
    if (figure == "fig1d") reproduce_fig1d(a, sc);
    else if (figure == "fig2c") reproduce_fig2c(a, sc);
    else if (figure == "fig3b") reproduce_fig3b(a, sc);
    else if (figure == "fig3c") reproduce_fig3c(a, sc);
    else if (figure == "fig4c") reproduce_fig4c(a, sc);
    else if (figure == "figS3") write_repolarization(a, sc, "figS3_repolarization");
    else if (figure == "figS4") {
        write_psf_comparison(a, sc, "figS4_psf");
        const PsfComparison cmp = compare_psf(sc);
        ojson body;
        body["epsilons"] = sc.psf_compare.epsilons;
        body["peak_contrast"] = cmp.peak_contrast;
        body["max_shape_difference"] = cmp.max_shape_difference;
        a.json("figS4_summary", body);
    } else if (figure == "figS6") reproduce_figS6(a, sc);
    else if (figure == "figS7") {
        write_wire_field(a, sc, "figS7_field");
        a.json("figS7_report", wire_report(sc));
    } else if (figure == "figS8") write_rabi(a, sc, "figS8_rabi");
    return a.written();
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Spin-RESOLFT NV simulator and fitting toolkit", "spinresolft"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    std::optional<std::string> scenario;
    std::optional<std::uint64_t> seed;
    std::string out_dir = ".";
    std::string format = "csv";
    const auto common = [&](CLI::App* sub) {
        sub->add_option("--scenario", scenario, "Scenario file (JSON)");
        sub->add_option("--seed", seed, "Seed for stochastic commands");
        sub->add_option("--out", out_dir, "Output directory")->capture_default_str();
        sub->add_option("--format", format, "csv or csv+svg")->check(CLI::IsMember({"csv", "csv+svg"}))->capture_default_str();
    };

    std::string kind, model, input, figure, channel;
    auto* sim = app.add_subcommand("simulate", "Run a forward simulation");
    sim->add_option("kind", kind, joined(simulate_kinds()))->required();
    common(sim);
    auto* fit_cmd = app.add_subcommand("fit", "Fit a model to a CSV dataset");
    fit_cmd->add_option("model", model, joined(fit_models()))->required();
    fit_cmd->add_option("input", input, "Input CSV")->required();
    fit_cmd->add_option("--channel", channel, "Channel suffix in multi-channel files (nv1, nv2, ensemble)");
    common(fit_cmd);
    auto* rep = app.add_subcommand("reproduce", "Run a pinned figure chain");
    rep->add_option("figure", figure, joined(figure_ids()))->required();
    common(rep);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        const fs::path path = resolve_scenario_path(scenario);
        const Scenario sc = load_scenario(path);
        RunOptions opt;
        opt.out_dir = out_dir;
        opt.seed = seed;
        opt.format = format == "csv+svg" ? OutputFormat::CsvSvg : OutputFormat::Csv;
        std::vector<fs::path> files;
        if (sim->parsed()) files = cmd_simulate(kind, sc, opt);
        else if (fit_cmd->parsed()) files = cmd_fit(model, input, sc, opt, channel);
        else files = cmd_reproduce(figure, sc, opt);
        for (const auto& f : files) out << f.string() << '\n';
        return 0;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const SchemaError& e) {
        err << "schema error: " << e.what() << '\n';
        return 3;
    } catch (const ValidationError& e) {
        err << "invalid input: " << e.what() << '\n';
        return 3;
    } catch (const FitError& e) {
        err << "fit failed after " << e.iterations << " iterations: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace spinresolft
