#include "spinresolft/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <optional>

#include <Eigen/Dense>

#include "spinresolft/error.hpp"

namespace spinresolft {

using detail::require;

void Dataset::validate() const {
    require(!x.empty(), "dataset: no samples");
    require(y.size() == x.size(), "dataset: x and y lengths differ");
    require(sigma.empty() || sigma.size() == x.size(), "dataset: sigma length differs from x");
    for (std::size_t i = 0; i < x.size(); ++i) {
        require(std::isfinite(x[i]) && std::isfinite(y[i]), "dataset: non-finite sample");
        if (!sigma.empty()) require(std::isfinite(sigma[i]) && sigma[i] > 0.0, "dataset: sigma must be > 0");
    }
}

std::size_t FitResult::index(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    require(it != names.end(), "fit result has no parameter '" + name + "'");
    return static_cast<std::size_t>(it - names.begin());
}

namespace {

struct Problem {
    const VectorModel& model;
    std::span<const ParameterSpec> specs;
    const Dataset& data;
    std::vector<std::size_t> free;
    std::vector<double> step_scale;

    std::vector<double> weighted_residuals(std::span<const double> p) const {
        const std::vector<double> f = model(data.x, p);
        require(f.size() == data.size(), "fit: model returned the wrong number of values");
        std::vector<double> r(f.size());
        for (std::size_t i = 0; i < f.size(); ++i) {
            const double s = data.sigma.empty() ? 1.0 : data.sigma[i];
            r[i] = (data.y[i] - f[i]) / s;
        }
        return r;
    }

    static double sum_sq(const std::vector<double>& r) {
        double s = 0.0;
        for (double v : r) s += v * v;
        return s;
    }

    double clamp(std::size_t k, double v) const { return std::clamp(v, specs[k].lower, specs[k].upper); }

    // Jacobian of the model (not the residual), weighted by 1/sigma.
    Eigen::MatrixXd jacobian(const std::vector<double>& p, double rel_step) const {
        Eigen::MatrixXd J(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(free.size()));
        for (std::size_t c = 0; c < free.size(); ++c) {
            const std::size_t k = free[c];
            const double h = rel_step * std::max(std::abs(p[k]), step_scale[k]);
            std::vector<double> hi = p;
            std::vector<double> lo = p;
            hi[k] = clamp(k, p[k] + h);
            lo[k] = clamp(k, p[k] - h);
            const double span = hi[k] - lo[k];
            if (span <= 0.0) throw FitError("fit: parameter '" + specs[k].name + "' is pinned by its bounds", 0, 0.0);
            const std::vector<double> fh = model(data.x, hi);
            const std::vector<double> fl = model(data.x, lo);
            for (std::size_t i = 0; i < data.size(); ++i) {
                const double s = data.sigma.empty() ? 1.0 : data.sigma[i];
                J(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = (fh[i] - fl[i]) / span / s;
            }
        }
        return J;
    }
};

// Inverse of the normal matrix, rejecting numerically singular systems.
Eigen::MatrixXd inverse_normal(const Eigen::MatrixXd& A, int iterations, double chi2) {
    const Eigen::VectorXd d = A.diagonal();
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        if (!(d(i) > 0.0)) throw FitError("fit: degenerate normal matrix (parameter has no effect)", iterations, chi2);
    }
    const Eigen::VectorXd inv_sqrt = d.cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd scaled = inv_sqrt.asDiagonal() * A * inv_sqrt.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scaled);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 1e-13 * hi)) throw FitError("fit: degenerate normal matrix (parameters are not identifiable)", iterations, chi2);
    const Eigen::MatrixXd inv_scaled =
        eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
    return inv_sqrt.asDiagonal() * inv_scaled * inv_sqrt.asDiagonal();
}

}  // namespace

FitResult fit(const VectorModel& model, std::span<const ParameterSpec> specs, const Dataset& data,
              const FitOptions& options) {
    data.validate();
    require(!specs.empty(), "fit: no parameters");
    require(options.max_iterations >= 1, "fit: max_iterations must be >= 1");

    Problem prob{model, specs, data, {}, {}};
    std::vector<double> p(specs.size());
    prob.step_scale.resize(specs.size());
    for (std::size_t k = 0; k < specs.size(); ++k) {
        const ParameterSpec& s = specs[k];
        require(std::isfinite(s.initial), "fit: initial value of '" + s.name + "' is not finite");
        require(s.lower <= s.upper, "fit: bounds of '" + s.name + "' are inverted");
        p[k] = std::clamp(s.initial, s.lower, s.upper);
        prob.step_scale[k] = s.scale > 0.0 ? s.scale : (s.initial != 0.0 ? std::abs(s.initial) : 1.0);
        if (!s.fixed) prob.free.push_back(k);
    }
    const std::size_t m = prob.free.size();
    require(m >= 1, "fit: every parameter is fixed");
    require(data.size() >= m, "fit: fewer samples than free parameters");

    std::vector<double> r = prob.weighted_residuals(p);
    double chi2 = Problem::sum_sq(r);
    require(std::isfinite(chi2), "fit: model is not finite at the initial guess");
    const double chi2_initial = chi2;
    const bool weighted = !data.sigma.empty();

    double lambda = options.lambda0;
    double growth = 2.0;
    int iterations = 0;
    bool converged = chi2 == 0.0;
    Eigen::MatrixXd J;

    while (!converged) {
        if (iterations >= options.max_iterations) {
            throw FitError("fit: no convergence after " + std::to_string(iterations) + " iterations (chi2 " +
                               std::to_string(chi2) + ", lambda " + std::to_string(lambda) + ")",
                           iterations, chi2);
        }
        ++iterations;
        J = prob.jacobian(p, options.fd_step);
        const Eigen::MatrixXd A = J.transpose() * J;
        const Eigen::VectorXd rv = Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
        const Eigen::VectorXd g = J.transpose() * rv;

        // Parameters sitting on a bound with the descent direction pointing outward
        // stay put this iteration.
        std::vector<Eigen::Index> active;
        for (std::size_t c = 0; c < m; ++c) {
            const std::size_t k = prob.free[c];
            const double gc = g(static_cast<Eigen::Index>(c));
            const bool pinned = (p[k] <= specs[k].lower && gc <= 0.0) || (p[k] >= specs[k].upper && gc >= 0.0);
            if (!pinned) active.push_back(static_cast<Eigen::Index>(c));
        }
        if (active.empty()) break;
        const auto na = static_cast<Eigen::Index>(active.size());
        Eigen::MatrixXd Aa(na, na);
        Eigen::VectorXd ga(na);
        for (Eigen::Index i = 0; i < na; ++i) {
            ga(i) = g(active[static_cast<std::size_t>(i)]);
            for (Eigen::Index j = 0; j < na; ++j) Aa(i, j) = A(active[static_cast<std::size_t>(i)], active[static_cast<std::size_t>(j)]);
        }

        // Residual already orthogonal to every Jacobian column (MINPACK gtol test).
        double cosine = 0.0;
        for (Eigen::Index i = 0; i < na; ++i) {
            if (Aa(i, i) > 0.0) cosine = std::max(cosine, std::abs(ga(i)) / std::sqrt(Aa(i, i) * chi2));
        }
        if (cosine <= options.gtol) break;

        bool accepted = false;
        while (!accepted) {
            Eigen::MatrixXd damped = Aa;
            for (Eigen::Index i = 0; i < na; ++i) {
                damped(i, i) += lambda * std::max(Aa(i, i), 1e-300);
            }
            const Eigen::VectorXd delta_a = damped.ldlt().solve(ga);
            Eigen::VectorXd delta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
            for (Eigen::Index i = 0; i < na; ++i) delta(active[static_cast<std::size_t>(i)]) = delta_a(i);
            std::vector<double> trial = p;
            Eigen::VectorXd taken(static_cast<Eigen::Index>(m));
            double step_rel = 0.0;
            for (std::size_t c = 0; c < m; ++c) {
                const std::size_t k = prob.free[c];
                trial[k] = prob.clamp(k, p[k] + delta(static_cast<Eigen::Index>(c)));
                taken(static_cast<Eigen::Index>(c)) = trial[k] - p[k];
                step_rel = std::max(step_rel, std::abs(trial[k] - p[k]) / (std::abs(p[k]) + prob.step_scale[k]));
            }
            std::vector<double> r_trial = prob.weighted_residuals(trial);
            const double chi2_trial = Problem::sum_sq(r_trial);
            const double predicted = 2.0 * taken.dot(g) - taken.dot(A * taken);
            if (std::isfinite(chi2_trial) && chi2_trial < chi2) {
                const double gain = chi2 - chi2_trial;
                const double rho = predicted > 0.0 ? gain / predicted : 0.0;
                p = std::move(trial);
                r = std::move(r_trial);
                chi2 = chi2_trial;
                // Nielsen's damping update.
                lambda = std::max(lambda * std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3)), 1e-15);
                growth = 2.0;
                accepted = true;
                const bool negligible = weighted && gain <= options.chi2_atol && predicted <= 2.0 * options.chi2_atol;
                if (gain <= options.ftol * std::max(chi2, 1e-300) || step_rel <= options.xtol ||
                    chi2 <= 1e-30 * chi2_initial || negligible) {
                    converged = true;
                }
            } else {
                lambda *= growth;
                growth *= 2.0;
                if (lambda > 1e16 || step_rel <= options.xtol) {
                    // No descent direction left within numerical resolution: at a minimum.
                    converged = true;
                    break;
                }
            }
        }
    }

    J = prob.jacobian(p, options.fd_step);
    const Eigen::MatrixXd cov_free = inverse_normal(J.transpose() * J, iterations, chi2);
    const int dof = static_cast<int>(data.size()) - static_cast<int>(m);
    const double scale = dof > 0 ? chi2 / dof : 0.0;

    FitResult out;
    out.values = p;
    out.sigma.assign(specs.size(), 0.0);
    out.covariance = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(specs.size()), static_cast<Eigen::Index>(specs.size()));
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = 0; b < m; ++b) {
            out.covariance(static_cast<Eigen::Index>(prob.free[a]), static_cast<Eigen::Index>(prob.free[b])) =
                cov_free(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) * scale;
        }
        out.sigma[prob.free[a]] = std::sqrt(std::max(0.0, cov_free(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a)) * scale));
    }
    for (const auto& s : specs) {
        out.names.push_back(s.name);
        out.units.push_back(s.unit);
    }
    out.chi2 = chi2;
    out.dof = dof;
    out.reduced_chi2 = scale;
    out.residual_norm = std::sqrt(chi2);
    out.iterations = iterations;
    out.final_lambda = lambda;
    out.residuals = std::move(r);
    return out;
}

double half_max_width(const std::function<double(double)>& f, double x_peak, double search_radius) {
    require(search_radius > 0.0, "half_max_width: search radius must be > 0");
    // Golden-section refinement of the maximum near x_peak.
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = x_peak - 0.05 * search_radius;
    double b = x_peak + 0.05 * search_radius;
    double c = b - phi * (b - a);
    double d = a + phi * (b - a);
    double fc = f(c);
    double fd = f(d);
    for (int i = 0; i < 80 && b - a > 1e-6 * search_radius; ++i) {
        if (fc > fd) {
            b = d; d = c; fd = fc;
            c = b - phi * (b - a); fc = f(c);
        } else {
            a = c; c = d; fc = fd;
            d = a + phi * (b - a); fd = f(d);
        }
    }
    const double xm = 0.5 * (a + b);
    const double half = 0.5 * f(xm);
    require(half > 0.0, "half_max_width: profile maximum is not positive");

    auto crossing = [&](double direction) {
        const double step = search_radius / 400.0;
        double inside = xm;
        double outside = xm;
        for (int i = 1; i <= 400; ++i) {
            outside = xm + direction * step * i;
            if (f(outside) < half) break;
            inside = outside;
            if (i == 400) throw ValidationError("half_max_width: no half-maximum crossing within the search radius");
        }
        for (int i = 0; i < 60; ++i) {
            const double mid = 0.5 * (inside + outside);
            (f(mid) >= half ? inside : outside) = mid;
        }
        return 0.5 * (inside + outside);
    };
    return crossing(1.0) - crossing(-1.0);
}

FitResult fit_gaussian_center(const Dataset& profile, const FitOptions& options) {
    profile.validate();
    require(profile.size() >= 4, "fit_gaussian_center: need at least 4 samples");
    const auto [lo_it, hi_it] = std::minmax_element(profile.y.begin(), profile.y.end());
    const std::size_t imax = static_cast<std::size_t>(hi_it - profile.y.begin());
    const double offset = *lo_it;
    const double amp = *hi_it - offset;
    // Half-maximum width from the samples, waist = FWHM / sqrt(2 ln 2).
    double left = profile.x.front();
    double right = profile.x.back();
    std::vector<std::size_t> order(profile.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return profile.x[a] < profile.x[b]; });
    const auto pos = std::find(order.begin(), order.end(), imax) - order.begin();
    for (auto i = pos; i >= 0; --i) {
        if (profile.y[order[static_cast<std::size_t>(i)]] - offset < amp / 2.0) { left = profile.x[order[static_cast<std::size_t>(i)]]; break; }
    }
    for (auto i = static_cast<std::size_t>(pos); i < order.size(); ++i) {
        if (profile.y[order[i]] - offset < amp / 2.0) { right = profile.x[order[i]]; break; }
    }
    const double span = profile.x[order.back()] - profile.x[order.front()];
    const double waist = std::max((right - left) / std::sqrt(2.0 * std::log(2.0)), span / (4.0 * profile.size()));

    const ParameterSpec specs[] = {
        {"amplitude", amp, 0.0, std::numeric_limits<double>::infinity(), "", false, 0.0},
        {"center", profile.x[imax], -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(), "m", false, waist},
        {"waist", waist, 1e-3 * waist, std::numeric_limits<double>::infinity(), "m", false, 0.0},
        {"offset", offset, -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(), "", false, std::max(amp, 1e-300)},
    };
    const VectorModel model = [](std::span<const double> x, std::span<const double> p) {
        std::vector<double> out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double u = (x[i] - p[1]) / p[2];
            out[i] = p[0] * std::exp(-2.0 * u * u) + p[3];
        }
        return out;
    };
    return fit(model, specs, profile, options);
}

std::vector<double> psf_line_model(std::span<const double> x, const ScanConfig& scan,
                                   std::span<const NVEmitter> emitters) {
    ScanConfig c = scan;
    c.pixels.clear();
    const double y0 = scan.pixels.empty() ? 0.0 : scan.pixels.front().y;
    for (double xi : x) c.pixels.push_back({xi, y0});
    c.nvs.assign(emitters.begin(), emitters.end());
    std::vector<double> profile = expected_counts(c).profile();
    if (c.running_average) profile = running_average2(profile);
    return profile;
}

double profile_fwhm(const ScanConfig& scan, const NVEmitter& emitter, double search_radius) {
    ScanConfig c = scan;
    c.running_average = false;
    c.pixels = {{0.0, emitter.position.y}};
    const NVEmitter nv[] = {emitter};
    const auto f = [&](double x) {
        const double xs[] = {x};
        return psf_line_model(xs, c, nv)[0];
    };
    return half_max_width(f, emitter.position.x, search_radius);
}

namespace {

// Local maxima of a 5-sample moving average, strongest first.
std::vector<std::size_t> smoothed_peaks(const std::vector<double>& y) {
    const std::size_t n = y.size();
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        int cnt = 0;
        for (std::size_t j = (i >= 2 ? i - 2 : 0); j <= std::min(n - 1, i + 2); ++j) {
            acc += y[j];
            ++cnt;
        }
        s[i] = acc / cnt;
    }
    std::vector<std::size_t> peaks;
    for (std::size_t i = 0; i < n; ++i) {
        const bool left = i == 0 || s[i] >= s[i - 1];
        const bool right = i + 1 == n || s[i] > s[i + 1];
        if (left && right) peaks.push_back(i);
    }
    std::sort(peaks.begin(), peaks.end(), [&](auto a, auto b) { return s[a] > s[b]; });
    return peaks;
}

}  // namespace

PsfFit fit_resolft_psf(const Dataset& profile, const PsfFitSetup& setup, const FitOptions& options) {
    profile.validate();
    require(setup.emitters >= 1, "fit_resolft_psf: need at least one emitter");
    setup.scan.gaussian.validate();
    setup.scan.doughnut.validate();
    require(setup.scan.doughnut_duration() > 0.0, "fit_resolft_psf: sequence has no doughnut pulse");

    std::vector<std::size_t> order(profile.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return profile.x[a] < profile.x[b]; });
    std::vector<double> ys(profile.size());
    for (std::size_t i = 0; i < order.size(); ++i) ys[i] = profile.y[order[i]];
    const double dx = profile.size() > 1 ? (profile.x[order.back()] - profile.x[order.front()]) / (profile.size() - 1) : 1e-9;

    // Centers: strongest smoothed maxima at least 3 pixels apart.
    std::vector<double> centers;
    for (std::size_t idx : smoothed_peaks(ys)) {
        const double xc = profile.x[order[idx]];
        bool far = std::all_of(centers.begin(), centers.end(), [&](double c) { return std::abs(c - xc) >= 3.0 * dx; });
        if (far) centers.push_back(xc);
        if (static_cast<int>(centers.size()) == setup.emitters) break;
    }
    while (static_cast<int>(centers.size()) < setup.emitters) {
        centers.push_back(centers.empty() ? profile.x[order[profile.size() / 2]] : centers.front() + 5.0 * dx * static_cast<double>(centers.size()));
    }
    std::sort(centers.begin(), centers.end());

    const int n = setup.emitters;
    const double y0 = setup.scan.pixels.empty() ? 0.0 : setup.scan.pixels.front().y;
    const auto unpack = [n, y0](std::span<const double> p, const ScanConfig& base) {
        ScanConfig c = base;
        c.doughnut.s0 = p[2 * static_cast<std::size_t>(n)];
        c.doughnut.epsilon = p[2 * static_cast<std::size_t>(n) + 1];
        std::vector<NVEmitter> nvs;
        for (int k = 0; k < n; ++k) {
            NVEmitter e;
            e.position = {p[static_cast<std::size_t>(2 * k)], y0};
            e.brightness = p[static_cast<std::size_t>(2 * k + 1)];
            nvs.push_back(e);
        }
        return std::pair{c, nvs};
    };

    // One LM run from a set of starting centers.
    std::vector<ParameterSpec> specs;
    const auto attempt = [&](const std::vector<double>& centers) {
        // Brightness initializer: data peak over the unit-brightness model peak.
        std::vector<double> brightness(static_cast<std::size_t>(n), 1.0);
        {
            NVEmitter unit;
            for (int k = 0; k < n; ++k) {
                unit.position = {centers[static_cast<std::size_t>(k)], y0};
                const double xs[] = {unit.position.x};
                const NVEmitter one[] = {unit};
                const double model_peak = psf_line_model(xs, setup.scan, one)[0];
                double data_peak = 0.0;
                for (std::size_t i = 0; i < profile.size(); ++i) {
                    if (std::abs(profile.x[i] - unit.position.x) <= 1.5 * dx) data_peak = std::max(data_peak, profile.y[i]);
                }
                brightness[static_cast<std::size_t>(k)] = model_peak > 0.0 && data_peak > 0.0 ? data_peak / model_peak : 1.0;
            }
        }

        specs.clear();
        const double inf = std::numeric_limits<double>::infinity();
        for (int k = 0; k < n; ++k) {
            const std::string tag = n == 1 ? "" : "_" + std::to_string(k + 1);
            specs.push_back({"center" + tag, centers[static_cast<std::size_t>(k)], -inf, inf, "m", false, 1e-9});
            specs.push_back({"brightness" + tag, brightness[static_cast<std::size_t>(k)], 0.0, inf, "", false, 0.0});
        }
        specs.push_back({"s0", setup.scan.doughnut.s0, 1e-6, inf, "", !setup.fit_s0, 0.0});
        specs.push_back({"epsilon", setup.scan.doughnut.epsilon, 0.0, 0.1, "", !setup.fit_epsilon, 1e-3});

        const VectorModel model = [&](std::span<const double> x, std::span<const double> p) {
            const auto [c, nvs] = unpack(p, setup.scan);
            return psf_line_model(x, c, nvs);
        };

        return fit(model, specs, profile, options);
    };

    PsfFit out;
    if (n == 1) {
        out.result = attempt(centers);
    } else {
        // Noise can put two smoothed maxima on one peak; also start from centers
        // spread across the half-maximum extent and keep the better fit.
        std::vector<std::vector<double>> starts{centers};
        const double top = *std::max_element(ys.begin(), ys.end());
        std::size_t lo = 0, hi = ys.size() - 1;
        while (lo < hi && ys[lo] < 0.5 * top) ++lo;
        while (hi > lo && ys[hi] < 0.5 * top) --hi;
        const double a = profile.x[order[lo]], b = profile.x[order[hi]];
        if (b > a) {
            std::vector<double> spread;
            for (int k = 0; k < n; ++k) spread.push_back(a + (b - a) * (k + 0.5) / n);
            starts.push_back(spread);
        }
        std::optional<FitResult> best;
        std::optional<FitError> last_error;
        for (const auto& st : starts) {
            try {
                FitResult r = attempt(st);
                if (!best || r.chi2 < best->chi2) best = std::move(r);
            } catch (const FitError& e) {
                last_error = e;
            }
        }
        if (!best) throw *last_error;
        out.result = std::move(*best);
    }

    // FWHM of each emitter's curve, uncertainty propagated through the covariance.
    const auto fwhm_of = [&](std::span<const double> p, int k) {
        const auto [c, nvs] = unpack(p, setup.scan);
        return profile_fwhm(c, nvs[static_cast<std::size_t>(k)]);
    };
    const std::vector<double>& pv = out.result.values;
    for (int k = 0; k < n; ++k) {
        const double w = fwhm_of(pv, k);
        // Only s0 and epsilon change the shape; brightness and center do not.
        Eigen::Vector2d grad = Eigen::Vector2d::Zero();
        for (int j = 0; j < 2; ++j) {
            const std::size_t idx = 2 * static_cast<std::size_t>(n) + static_cast<std::size_t>(j);
            if (specs[idx].fixed) continue;
            const double h = 1e-4 * std::max(std::abs(pv[idx]), j == 0 ? 1e-3 : 1e-4);
            std::vector<double> hi = pv;
            std::vector<double> lo = pv;
            hi[idx] = std::clamp(pv[idx] + h, specs[idx].lower, specs[idx].upper);
            lo[idx] = std::clamp(pv[idx] - h, specs[idx].lower, specs[idx].upper);
            grad(j) = (fwhm_of(hi, k) - fwhm_of(lo, k)) / (hi[idx] - lo[idx]);
        }
        const Eigen::Index b = 2 * n;
        const Eigen::Matrix2d cov = out.result.covariance.block(b, b, 2, 2);
        out.fwhm.push_back(w);
        out.fwhm_sigma.push_back(std::sqrt(std::max(0.0, grad.dot(cov * grad))));
    }
    return out;
}

FitResult fit_stretched_exponential(const Dataset& coherence, const FitOptions& options) {
    coherence.validate();
    require(coherence.size() >= 3, "fit_stretched_exponential: need at least 3 samples");
    for (double t : coherence.x) require(t >= 0.0, "fit_stretched_exponential: times must be >= 0");

    // Amplitude guess: mean of the earliest samples.
    std::vector<std::size_t> order(coherence.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return coherence.x[a] < coherence.x[b]; });
    const std::size_t head = std::max<std::size_t>(1, coherence.size() / 10);
    double amp = 0.0;
    for (std::size_t i = 0; i < head; ++i) amp += coherence.y[order[i]];
    amp = std::clamp(amp / static_cast<double>(head), 0.05, 1.5);

    // ln(-ln(y/A)) = p ln t - p ln T2 on the informative part of the decay.
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    int cnt = 0;
    for (std::size_t i = 0; i < coherence.size(); ++i) {
        const double ratio = coherence.y[i] / amp;
        if (coherence.x[i] <= 0.0 || ratio <= 0.1 || ratio >= 0.9) continue;
        const double u = std::log(coherence.x[i]);
        const double v = std::log(-std::log(ratio));
        sx += u; sy += v; sxx += u * u; sxy += u * v;
        ++cnt;
    }
    double p_guess = 2.0;
    if (cnt >= 2 && cnt * sxx - sx * sx > 0.0) {
        p_guess = std::clamp((cnt * sxy - sx * sy) / (cnt * sxx - sx * sx), 1.0, 4.0);
    }
    // T2: first A/e crossing of a 3-sample moving average, linearly interpolated.
    const double t_first = coherence.x[order.front()];
    const double t_last = coherence.x[order.back()];
    double t2_guess = t_last;
    {
        const double level = amp / std::exp(1.0);
        std::vector<double> sm(order.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
            const std::size_t a = i > 0 ? i - 1 : i;
            const std::size_t b = std::min(order.size() - 1, i + 1);
            sm[i] = (coherence.y[order[a]] + coherence.y[order[i]] + coherence.y[order[b]]) / 3.0;
        }
        for (std::size_t i = 1; i < sm.size(); ++i) {
            if (sm[i] < level && sm[i - 1] >= level) {
                const double f = (sm[i - 1] - level) / (sm[i - 1] - sm[i]);
                t2_guess = coherence.x[order[i - 1]] + f * (coherence.x[order[i]] - coherence.x[order[i - 1]]);
                break;
            }
        }
    }
    const double t_scale = std::max(t_last, 1e-300);
    t2_guess = std::clamp(t2_guess, std::max(t_first, 1e-3 * t_scale), t_scale);

    const ParameterSpec specs[] = {
        {"A", amp, 1e-6, 1.5, "", false, 0.0},
        {"T2", t2_guess, 1e-3 * t_scale, 100.0 * t_scale, "s", false, 0.0},
        {"p", p_guess, 0.5 + 1e-9, 6.0, "", false, 0.0},
    };
    const VectorModel model = [](std::span<const double> x, std::span<const double> p) {
        std::vector<double> out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = p[0] * std::exp(-std::pow(x[i] / p[1], p[2]));
        return out;
    };
    return fit(model, specs, coherence, options);
}

namespace {

double spectrum_at(std::span<const double> x, std::span<const double> y, double mean, double f) {
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t i = 0; i < x.size(); ++i) acc += (y[i] - mean) * std::polar(1.0, -kTwoPi * f * x[i]);
    return std::abs(acc);
}

}  // namespace

Spectrum spectral_response(std::span<const double> x, std::span<const double> y, double f_max, int points) {
    require(x.size() == y.size() && x.size() >= 2, "spectral_response: need matching x/y with >= 2 samples");
    require(points >= 2, "spectral_response: need at least 2 frequency points");
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    const double span = *hi - *lo;
    require(span > 0.0, "spectral_response: x has zero span");
    if (f_max <= 0.0) f_max = 0.5 * static_cast<double>(x.size() - 1) / span;
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());

    Spectrum s;
    s.frequency.resize(static_cast<std::size_t>(points));
    s.magnitude.resize(static_cast<std::size_t>(points));
    std::size_t best = 0;
    for (int i = 0; i < points; ++i) {
        const double f = f_max * i / (points - 1);
        s.frequency[static_cast<std::size_t>(i)] = f;
        s.magnitude[static_cast<std::size_t>(i)] = spectrum_at(x, y, mean, f);
        if (s.magnitude[static_cast<std::size_t>(i)] > s.magnitude[best]) best = static_cast<std::size_t>(i);
    }
    // Golden-section refinement within one grid step of the best sample.
    const double df = f_max / (points - 1);
    double a = std::max(0.0, s.frequency[best] - df);
    double b = std::min(f_max, s.frequency[best] + df);
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - phi * (b - a);
    double d = a + phi * (b - a);
    double fc = spectrum_at(x, y, mean, c);
    double fd = spectrum_at(x, y, mean, d);
    for (int i = 0; i < 100 && b - a > 1e-12 * std::max(f_max, 1.0); ++i) {
        if (fc > fd) {
            b = d; d = c; fd = fc;
            c = b - phi * (b - a); fc = spectrum_at(x, y, mean, c);
        } else {
            a = c; c = d; fc = fd;
            d = a + phi * (b - a); fd = spectrum_at(x, y, mean, d);
        }
    }
    s.peak_frequency = 0.5 * (a + b);
    s.peak_magnitude = spectrum_at(x, y, mean, s.peak_frequency);
    if (s.magnitude[best] > s.peak_magnitude) {
        s.peak_frequency = s.frequency[best];
        s.peak_magnitude = s.magnitude[best];
    }
    return s;
}

FitResult fit_sinusoid_fixed_phase(const Dataset& response, const FitOptions& options) {
    response.validate();
    require(response.size() >= 3, "fit_sinusoid_fixed_phase: need at least 3 samples");
    // Evenness: fold negative x onto positive before locating the frequency.
    std::vector<double> ax(response.size());
    for (std::size_t i = 0; i < ax.size(); ++i) ax[i] = std::abs(response.x[i]);
    const Spectrum spec = spectral_response(ax, response.y, 0.0, 4096);
    const double k0 = kTwoPi * spec.peak_frequency;

    // Amplitude from the projection onto cos(k0 x).
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ax.size(); ++i) {
        const double c = std::cos(k0 * ax[i]);
        num += response.y[i] * c;
        den += c * c;
    }
    const double amp = den > 0.0 ? num / den : 1.0;
    const double kscale = k0 > 0.0 ? k0 : 1.0 / (*std::max_element(ax.begin(), ax.end()));

    const double inf = std::numeric_limits<double>::infinity();
    const ParameterSpec specs[] = {
        {"amplitude", amp, -inf, inf, "", false, std::max(std::abs(amp), 1e-3)},
        {"k", k0, 0.0, inf, "rad/unit", false, kscale},
    };
    const VectorModel model = [](std::span<const double> x, std::span<const double> p) {
        std::vector<double> out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = p[0] * std::cos(p[1] * x[i]);
        return out;
    };
    return fit(model, specs, response, options);
}

FieldEstimate field_from_sinusoid(const FitResult& sinusoid, double current, double phase_per_tesla) {
    require(phase_per_tesla != 0.0, "field_from_sinusoid: phase per tesla must be non-zero");
    const double per_unit = 1.0 / std::abs(phase_per_tesla);
    return {sinusoid.value("k") * std::abs(current) * per_unit, sinusoid.error("k") * std::abs(current) * per_unit};
}

FitResult fit_nmr_dip(const Dataset& data, const NmrFitSetup& setup, const FitOptions& options) {
    data.validate();
    require(data.size() >= 4, "fit_nmr_dip: need at least 4 samples");
    require(setup.n_pulses >= 1 && setup.rho > 0.0, "fit_nmr_dip: invalid setup");
    for (double t : data.x) require(t > 0.0, "fit_nmr_dip: tau values must be > 0");

    NmrOptions nmr;
    nmr.background = setup.background;
    nmr.gamma_e = setup.gamma_e;

    // Dip location and depth.
    const std::size_t imin = static_cast<std::size_t>(std::min_element(data.y.begin(), data.y.end()) - data.y.begin());
    const double nu0 = setup.nu_guess > 0.0 ? setup.nu_guess : 1.0 / (2.0 * data.x[imin]);
    double depth_c = data.y[imin];
    if (setup.background) depth_c /= coherence_envelope(setup.n_pulses * data.x[imin], *setup.background);
    depth_c = std::clamp(depth_c, 0.02, 0.98);
    const double k = filter_K(setup.n_pulses, resonant_tau(nu0), setup.t_c_guess);
    const double b_guess = std::sqrt(-std::log(depth_c) / (2.0 / (kPi * kPi) * setup.gamma_e * setup.gamma_e * k));
    const double d_guess = std::max(depth_for_brms(b_guess, setup.rho, setup.nv_theta), 0.6e-9);

    const double inf = std::numeric_limits<double>::infinity();
    const ParameterSpec specs[] = {
        {"d_nv", d_guess, 0.5e-9, inf, "m", false, 1e-9},
        {"t_c", setup.t_c_guess, 1e-9, inf, "s", !setup.fit_t_c, 0.0},
        {"nu_center", nu0, 0.0, inf, "Hz", !setup.fit_nu, 0.0},
    };
    const VectorModel model = [&](std::span<const double> x, std::span<const double> p) {
        NuclearSignal sig;
        sig.b_rms = proton_brms({setup.rho, p[0]}, setup.nv_theta);
        sig.t_c = p[1];
        sig.nu_center = p[2];
        std::vector<double> out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = nmr_contrast(x[i], setup.n_pulses, sig, nmr);
        return out;
    };
    return fit(model, specs, data, options);
}

FieldEstimate nmr_brms(const FitResult& nmr_fit, const NmrFitSetup& setup) {
    const double d = nmr_fit.value("d_nv");
    const double b = proton_brms({setup.rho, d}, setup.nv_theta);
    // B_rms ~ d^(-3/2)
    return {b, 1.5 * b * nmr_fit.error("d_nv") / d};
}

}  // namespace spinresolft
