#pragma once

// Command-line surface: scenario files, the simulate / fit / reproduce
// commands and their CSV, JSON and SVG artifacts.
//
// Scenario files use display units (nm, us, ns, uT, mA, kHz, G); the structs
// below hold SI values.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spinresolft/fields.hpp"
#include "spinresolft/io.hpp"
#include "spinresolft/scanner.hpp"
#include "spinresolft/sequences.hpp"

namespace spinresolft {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kScenarioDirEnv = "SPINRESOLFT_SCENARIO_DIR";

/// Bad command line: unknown kind, model or figure id, missing seed.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct OpticsSettings {
    double wavelength = 532e-9;
    double na = 1.45;
    GaussianProfile gaussian{};
    DoughnutProfile doughnut{14.540843, 300e-9, 0.001, {}};
    BeamAlignment alignment{};
};

struct ReadoutSettings {
    double s = 1.0;
    double window = 300e-9;
    double photons_per_shot = 0.02;
};

struct ImagingSettings {
    double doughnut_duration = 2.1e-6;
    double init_duration = 17.4e-6;
    double settle = 0.2e-6;
    int pixels = 100;
    double span = 400e-9;
    int reps_per_pixel = 20000;
    int lines = 1;
    bool running_average = false;
    double overhead_factor = 3.0;
    std::vector<NVEmitter> nvs{NVEmitter{}};
    int fit_emitters = 1;
    bool fit_epsilon = false;
};

/// FWHM against doughnut duration at the optics s0.
struct ResolutionSeries {
    std::vector<double> durations{0.3e-6, 0.6e-6, 1.1e-6, 2.1e-6};
};

struct TwoNvSettings {
    double s0 = 1.970709;
    double doughnut_duration = 2.1e-6;
    double separation = 105e-9;
    std::vector<double> brightness{1.0, 1.0};
    int pixels_per_side = 41;  // 2-D image
    double span = 400e-9;
};

struct PsfCompareSettings {
    double s0 = 0.3;
    double doughnut_duration = 5e-6;
    std::vector<double> epsilons{0.001, 0.02};
    double half_span = 400e-9;
    int points = 401;
};

struct RepolarizationSettings {
    std::vector<double> durations{1e-6, 10e-6, 100e-6, 1e-3, 5e-3};
    double s_min = 1e-3;
    double s_max = 10.0;
    int s_points = 61;
};

struct CoherenceSettings {
    std::vector<CoherenceModel> nvs{{0.3, 800e-6, 3.2}, {0.3, 300e-6, 3.5}};
    std::vector<double> weights{0.4, 0.6};  // collected fluorescence in confocal mode
    int points = 40;
    double t_max = 1.6e-3;
    int reps = 100000;
};

struct WireSettings {
    WireGeometry wire{};
    NVOrientation nv{54.7 * kPi / 180.0, 0.0};
    Vec3 nv1{23.31e-6, 0.0, 26.18e-6};  // from the wire center
    double separation = 105e-9;         // NV2 = NV1 + separation along x
    ProjectionVariant variant = ProjectionVariant::Tangential;
    double drive_factor = 1.176813;
    double rabi_current = 30e-3;
    Vec3 printed_geometry{-22.5e-6, 0.0, 20e-6};
    double x_min = -60e-6;
    double x_max = 60e-6;
    int points = 241;

    Vec3 nv2() const { return nv1 + Vec3{separation, 0.0, 0.0}; }
};

struct MagnetometrySettings {
    double current_max = 7e-3;
    int points = 141;
    double reference_current = 7e-3;
    int reps = 20000;
};

struct NmrSettings {
    double b0 = 282 * kGauss;
    double rho = 6e28;
    double depth = 3e-9;
    int n_pulses = 16;
    double t_c = 10e-6;
    int points = 41;
    double half_span = 40e-9;
    int reps = 20000;
    std::optional<CoherenceModel> background = CoherenceModel{1.0, 100e-6, 1.0};
};

struct DriftSettings {
    double coupling = 500e-9;             // m per K
    double temperature_amplitude = 0.5;   // K
    double temperature_period = 3600.0;   // s
    double jitter = 11e-9;
    double temperature_hours = 5.0;
    double stabilized_hours = 2.0;
    int pixels = 100;
    double span = 1600e-9;
    int reps_per_pixel = 10000;
};

struct Scenario {
    std::string name = "default";
    std::filesystem::path source;     // empty for in-memory scenarios
    std::string hash;                 // FNV-1a of the scenario (and rate file) bytes
    std::optional<std::uint64_t> seed;

    RateConstants rates{};
    OpticsSettings optics;
    ReadoutSettings readout;
    ImagingSettings imaging;
    ResolutionSeries resolution;
    TwoNvSettings two_nv;
    PsfCompareSettings psf_compare;
    RepolarizationSettings repolarization;
    CoherenceSettings coherence;
    WireSettings wire;
    MagnetometrySettings magnetometry;
    NmrSettings nmr;
    DriftSettings drift;

    void validate() const;

    /// Single-line scan template from the imaging section.
    ScanConfig scan_config(std::uint64_t seed) const;
    /// Two NVs at +-separation/2 with the two_nv beam settings; pixels along x.
    ScanConfig two_nv_config(std::uint64_t seed) const;
};

/// Parses a scenario; relative `rates_file` paths resolve against `base_dir`.
Scenario scenario_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
Scenario load_scenario(const std::filesystem::path& path);

/// --scenario value, else $SPINRESOLFT_SCENARIO_DIR/default.json, else the bundled default.
std::filesystem::path resolve_scenario_path(const std::optional<std::string>& flag);

enum class OutputFormat { Csv, CsvSvg };

struct RunOptions {
    std::filesystem::path out_dir = ".";
    std::optional<std::uint64_t> seed;  // overrides the scenario seed
    OutputFormat format = OutputFormat::Csv;
};

const std::vector<std::string>& simulate_kinds();
const std::vector<std::string>& fit_models();
const std::vector<std::string>& figure_ids();

/// Each returns the files written, in order.
std::vector<std::filesystem::path> cmd_simulate(const std::string& kind, const Scenario& scenario,
                                                const RunOptions& options);
/// `channel` selects contrast_<channel> / sigma_<channel> in multi-channel files.
std::vector<std::filesystem::path> cmd_fit(const std::string& model, const std::filesystem::path& input,
                                           const Scenario& scenario, const RunOptions& options,
                                           const std::string& channel = "");
std::vector<std::filesystem::path> cmd_reproduce(const std::string& figure, const Scenario& scenario,
                                                 const RunOptions& options);

/// Full command-line entry point. Exit codes: 0 ok, 1 runtime failure, 2 usage,
/// 3 schema or validation error, 4 fit failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace spinresolft
