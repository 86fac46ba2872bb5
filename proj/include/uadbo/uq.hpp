#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "uadbo/surrogate.hpp"
#include "uadbo/util.hpp"

namespace uadbo::uq {

struct PredictiveDistribution {
    std::vector<double> samples;
    double mean = 0.0;
    double stdev = 0.0; // (N_s - 1) denominator

    static PredictiveDistribution from_samples(std::vector<double> samples);
    int n_s() const { return static_cast<int>(samples.size()); }
};

struct CalibrationFactors {
    double kappa_l = 1.0;
    double kappa_u = 1.0;
    double alpha = 0.9;
    int n_calib = 0;
};

struct ConfidenceInterval {
    double alpha = 0.9;
    double lb = 0.0;
    double ub = 0.0;
    double kappa_l = 1.0;
    double kappa_u = 1.0;
};

// --- Student-t machinery ----------------------------------------------------

/// Regularized incomplete beta function I_x(a, b) (continued fraction).
double incomplete_beta(double a, double b, double x);

/// CDF of Student's t with `dof` degrees of freedom.
double t_cdf(double x, int dof);

/// One-sided quantile: inverse CDF at probability p, |CDF(result)-p| <= 1e-10.
double t_quantile(double p, int dof);

/// Base interval half-width before calibration:
/// t((1+alpha)/2, N_s-1) / sqrt(N_s) * stdev.
double half_width(double alpha, int n_s, double stdev);

ConfidenceInterval interval(const PredictiveDistribution& dist, double alpha,
                            const CalibrationFactors& factors);

// --- Monte Carlo prediction and propagation ----------------------------------

/// Predictive distribution of the drag coefficient at one condition.
PredictiveDistribution mc_predict(model::ModelHandle& model, const geom::AirfoilShape& shape,
                                  const data::ConditionSample& cruise, double mach,
                                  int n_s, std::uint64_t seed);

/// Sample-coupled propagation: row s of `sample_matrix` holds the outputs of
/// one latent draw across all conditions; B maps a row to the metric. Errors
/// raised by B carry the draw index.
PredictiveDistribution propagate_matrix(const std::vector<std::vector<double>>& sample_matrix,
                                        const std::function<double(const std::vector<double>&)>& postprocess);

/// Metric distribution over a Mach sweep with shared-z coupling.
PredictiveDistribution propagate(model::ModelHandle& model, const geom::AirfoilShape& shape,
                                 const data::ConditionSample& cruise,
                                 const std::vector<double>& machs,
                                 const std::function<double(const std::vector<double>&)>& postprocess,
                                 int n_s, std::uint64_t seed);

// --- calibration and calibration metrics -------------------------------------

/// Linear-interpolation empirical quantile of (not necessarily sorted) data.
double empirical_quantile(std::vector<double> values, double level);

/// One calibration target: oracle truth plus the predictive summary.
struct CalibrationSample {
    double truth = 0.0;
    double mean = 0.0;
    double stdev = 0.0;
    int n_s = 16;
};

/// Fits kappa_L/kappa_U so the tail frequencies of the normalized residuals
/// match (1-alpha)/2 each. Requires >= 50 samples and positive half-widths.
CalibrationFactors calibrate(const std::vector<CalibrationSample>& samples, double alpha);

/// Fraction triple (below LB, inside, above UB) at level alpha.
struct Coverage {
    double below = 0.0;
    double inside = 0.0;
    double above = 0.0;
};
Coverage coverage_report(const std::vector<CalibrationSample>& samples, double alpha,
                         const CalibrationFactors& factors);

/// ECE over the nine levels 0.1..0.9 with calibrated intervals.
double ece(const std::vector<CalibrationSample>& samples, const CalibrationFactors& factors);

/// The weighted-average definition on already-measured coverages c_hat at
/// levels 0.1..0.9 (w = 1/9 each).
double ece_from_coverages(const std::vector<double>& c_hat);

} // namespace uadbo::uq
