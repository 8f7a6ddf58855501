#pragma once

// Damped Gauss-Newton (Levenberg-Marquardt) fitting and the model-specific
// wrappers built on it. All inputs and outputs are SI.

#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "spinresolft/fields.hpp"
#include "spinresolft/scanner.hpp"
#include "spinresolft/sequences.hpp"

namespace spinresolft {

struct ParameterSpec {
    std::string name;
    double initial = 0.0;
    double lower = -std::numeric_limits<double>::infinity();
    double upper = std::numeric_limits<double>::infinity();
    std::string unit;
    bool fixed = false;
    double scale = 0.0;  // typical magnitude for finite differences; 0 = derive from initial
};

/// (x, y, sigma_y) samples. An empty sigma means unit weights.
struct Dataset {
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> sigma;

    std::size_t size() const { return x.size(); }
    void validate() const;
};

/// Model values at all x for one parameter vector (fixed parameters included).
using VectorModel = std::function<std::vector<double>(std::span<const double> x, std::span<const double> params)>;

struct FitOptions {
    int max_iterations = 200;
    double ftol = 1e-10;     // relative chi^2 decrease that counts as converged
    double xtol = 1e-9;      // relative step size that counts as converged
    double gtol = 1e-10;     // max cosine between residual and Jacobian columns
    double chi2_atol = 1e-6; // absolute chi^2 decrease that counts as converged (weighted data only)
    double lambda0 = 1e-3;
    double fd_step = 1e-6;   // relative finite-difference step
};

struct FitResult {
    std::vector<std::string> names;
    std::vector<std::string> units;
    std::vector<double> values;
    std::vector<double> sigma;       // 1 sigma; 0 for fixed parameters
    Eigen::MatrixXd covariance;      // full parameter space, zero rows for fixed parameters
    double chi2 = 0.0;
    double reduced_chi2 = 0.0;
    double residual_norm = 0.0;      // sqrt(chi2)
    int dof = 0;
    int iterations = 0;
    double final_lambda = 0.0;
    std::vector<double> residuals;   // weighted, y - model

    std::size_t index(const std::string& name) const;
    double value(const std::string& name) const { return values[index(name)]; }
    double error(const std::string& name) const { return sigma[index(name)]; }
};

/// Non-convergence or a degenerate normal matrix.
class FitError : public std::runtime_error {
public:
    FitError(const std::string& what, int iterations, double chi2)
        : std::runtime_error(what), iterations(iterations), chi2(chi2) {}
    int iterations;
    double chi2;
};

/// Minimizes sum(((y - f(x; p)) / sigma)^2) within the parameter box.
/// Uncertainties: diag((J^T W J)^-1 * chi2 / dof).
FitResult fit(const VectorModel& model, std::span<const ParameterSpec> params, const Dataset& data,
              const FitOptions& options = {});

/// y = amplitude * exp(-2 (x - center)^2 / waist^2) + offset.
/// Initializer: maximum sample, half-maximum width, minimum as offset.
FitResult fit_gaussian_center(const Dataset& profile, const FitOptions& options = {});

/// Scanner forward model fitted to a background-subtracted line profile (ref0 - sig).
/// The scan template supplies beams, rates, readout, sequence, photon budget and the
/// line's y coordinate; pixels come from the data.
struct PsfFitSetup {
    ScanConfig scan;
    int emitters = 1;
    bool fit_s0 = true;
    bool fit_epsilon = false;  // epsilon mostly trades off against amplitude
};

struct PsfFit {
    FitResult result;
    std::vector<double> fwhm;        // per emitter, from the fitted curve
    std::vector<double> fwhm_sigma;
};

/// Parameters: center_k, brightness_k (k = 1..emitters), s0, epsilon.
/// Initializer: highest smoothed local maxima for centers, scenario s0/epsilon,
/// brightness from the peak height.
PsfFit fit_resolft_psf(const Dataset& profile, const PsfFitSetup& setup, const FitOptions& options = {});

/// Noiseless model profile along the data's x coordinates for the given emitters.
std::vector<double> psf_line_model(std::span<const double> x, const ScanConfig& scan,
                                   std::span<const NVEmitter> emitters);

/// FWHM of one emitter's noiseless profile, by half-maximum bisection on the continuous curve.
double profile_fwhm(const ScanConfig& scan, const NVEmitter& emitter, double search_radius = 300e-9);

/// A * exp(-(t / T2)^p). Bounds: 0 < A <= 1.5, T2 > 0, p in (0.5, 6].
/// Initializer: log-log linear regression of -ln(y/A) against t.
FitResult fit_stretched_exponential(const Dataset& coherence, const FitOptions& options = {});

/// y = amplitude * cos(k x), phase fixed to zero at x = 0; k >= 0 by evenness.
/// Initializer: refined peak of spectral_response.
FitResult fit_sinusoid_fixed_phase(const Dataset& response, const FitOptions& options = {});

/// Field at `current` implied by a fixed-phase fit, given the sequence's phase per tesla.
struct FieldEstimate {
    double field = 0.0;
    double sigma = 0.0;
};
FieldEstimate field_from_sinusoid(const FitResult& sinusoid, double current, double phase_per_tesla);

struct NmrFitSetup {
    int n_pulses = 16;
    double rho = 6e28;
    double nv_theta = NVOrientation{}.theta;
    double nu_guess = 0.0;          // 0 = locate the dip
    double t_c_guess = 10e-6;
    bool fit_nu = true;
    bool fit_t_c = true;
    std::optional<CoherenceModel> background;
    double gamma_e = kCodata.gamma_e;
};

/// Parameters: d_nv, t_c, nu_center. B_rms follows from proton_brms(rho, d_nv).
/// Bound d_nv > 0.5 nm. Initializer: dip location and depth.
FitResult fit_nmr_dip(const Dataset& contrast_vs_tau, const NmrFitSetup& setup, const FitOptions& options = {});

/// B_rms implied by a fitted depth, with propagated uncertainty.
FieldEstimate nmr_brms(const FitResult& nmr_fit, const NmrFitSetup& setup);

struct Spectrum {
    std::vector<double> frequency;  // cycles per unit x
    std::vector<double> magnitude;
    double peak_frequency = 0.0;
    double peak_magnitude = 0.0;
};

/// |sum (y_i - mean) exp(-2 pi i f x_i)| on [0, f_max] with `points` samples, peak refined
/// by golden-section search. f_max = 0 picks the Nyquist frequency of the mean spacing.
Spectrum spectral_response(std::span<const double> x, std::span<const double> y, double f_max = 0.0,
                           int points = 2048);

/// Full width at half maximum of samples f(x) around their maximum, by bisection on `f`.
double half_max_width(const std::function<double(double)>& f, double x_peak, double search_radius);

}  // namespace spinresolft
