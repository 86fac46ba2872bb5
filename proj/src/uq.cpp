#include "uadbo/uq.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace uadbo::uq {

PredictiveDistribution PredictiveDistribution::from_samples(std::vector<double> s) {
    if (s.size() < 2) throw Error("predictive distribution: need at least 2 samples");
    PredictiveDistribution d;
    d.samples = std::move(s);
    for (double v : d.samples) d.mean += v;
    d.mean /= static_cast<double>(d.samples.size());
    double acc = 0.0;
    for (double v : d.samples) acc += (v - d.mean) * (v - d.mean);
    d.stdev = std::sqrt(acc / (static_cast<double>(d.samples.size()) - 1.0));
    return d;
}

// ---------------------------------------------------------------------------
// Student-t
// ---------------------------------------------------------------------------

namespace {

double betacf(double a, double b, double x) {
    // Continued fraction for the incomplete beta (modified Lentz).
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kFpMin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) return h;
    }
    throw Error("incomplete_beta: continued fraction did not converge");
}

} // namespace

double incomplete_beta(double a, double b, double x) {
    if (a <= 0.0 || b <= 0.0) throw Error("incomplete_beta: a and b must be positive");
    if (x < 0.0 || x > 1.0) throw Error("incomplete_beta: x must lie in [0,1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double t_cdf(double x, int dof) {
    if (dof < 1) throw Error("t_cdf: dof must be >= 1");
    if (x == 0.0) return 0.5;
    const double v = static_cast<double>(dof);
    const double p = 0.5 * incomplete_beta(0.5 * v, 0.5, v / (v + x * x));
    return x > 0.0 ? 1.0 - p : p;
}

double t_quantile(double p, int dof) {
    if (!(p > 0.0 && p < 1.0)) throw Error(msg("t_quantile: p must lie in (0,1), got ", p));
    if (dof < 1) throw Error("t_quantile: dof must be >= 1");
    if (p == 0.5) return 0.0;

    // Bracket, then bisect to the CDF tolerance.
    double lo = -1.0, hi = 1.0;
    while (t_cdf(lo, dof) > p) lo *= 2.0;
    while (t_cdf(hi, dof) < p) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double c = t_cdf(mid, dof);
        if (std::fabs(c - p) <= 1e-12 && (hi - lo) < 1e-12 * std::max(1.0, std::fabs(mid))) return mid;
        if (c < p)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

double half_width(double alpha, int n_s, double stdev) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error("half_width: alpha must lie in (0,1)");
    if (n_s < 2) throw Error("half_width: need at least 2 samples");
    return t_quantile(0.5 * (1.0 + alpha), n_s - 1) / std::sqrt(static_cast<double>(n_s)) * stdev;
}

ConfidenceInterval interval(const PredictiveDistribution& dist, double alpha,
                            const CalibrationFactors& factors) {
    const double h = half_width(alpha, dist.n_s(), dist.stdev);
    ConfidenceInterval ci;
    ci.alpha = alpha;
    ci.kappa_l = factors.kappa_l;
    ci.kappa_u = factors.kappa_u;
    ci.lb = dist.mean - factors.kappa_l * h;
    ci.ub = dist.mean + factors.kappa_u * h;
    return ci;
}

// ---------------------------------------------------------------------------
// Monte Carlo prediction / propagation
// ---------------------------------------------------------------------------

PredictiveDistribution mc_predict(model::ModelHandle& model, const geom::AirfoilShape& shape,
                                  const data::ConditionSample& cruise, double mach,
                                  int n_s, std::uint64_t seed) {
    model::Predictor pred(model, shape, cruise);
    const auto matrix = pred.sample_cd({mach}, n_s, seed);
    std::vector<double> samples(matrix.size());
    for (std::size_t s = 0; s < matrix.size(); ++s) samples[s] = matrix[s][0];
    return PredictiveDistribution::from_samples(std::move(samples));
}

PredictiveDistribution propagate_matrix(const std::vector<std::vector<double>>& sample_matrix,
                                        const std::function<double(const std::vector<double>&)>& postprocess) {
    if (sample_matrix.size() < 2) throw Error("propagate: need at least 2 draws");
    std::vector<double> metric(sample_matrix.size());
    for (std::size_t s = 0; s < sample_matrix.size(); ++s) {
        try {
            metric[s] = postprocess(sample_matrix[s]);
        } catch (const std::exception& e) {
            throw Error(msg("propagate: postprocess failed at draw ", s, ": ", e.what()));
        }
        if (!std::isfinite(metric[s]))
            throw Error(msg("propagate: postprocess returned a non-finite value at draw ", s));
    }
    return PredictiveDistribution::from_samples(std::move(metric));
}

PredictiveDistribution propagate(model::ModelHandle& model, const geom::AirfoilShape& shape,
                                 const data::ConditionSample& cruise,
                                 const std::vector<double>& machs,
                                 const std::function<double(const std::vector<double>&)>& postprocess,
                                 int n_s, std::uint64_t seed) {
    model::Predictor pred(model, shape, cruise);
    return propagate_matrix(pred.sample_cd(machs, n_s, seed), postprocess);
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

double empirical_quantile(std::vector<double> values, double level) {
    if (values.empty()) throw Error("empirical_quantile: empty data");
    if (!(level >= 0.0 && level <= 1.0)) throw Error("empirical_quantile: level must lie in [0,1]");
    std::sort(values.begin(), values.end());
    const double h = level * (static_cast<double>(values.size()) - 1.0);
    const std::size_t i = static_cast<std::size_t>(std::floor(h));
    if (i + 1 >= values.size()) return values.back();
    const double w = h - static_cast<double>(i);
    return values[i] * (1.0 - w) + values[i + 1] * w;
}

CalibrationFactors calibrate(const std::vector<CalibrationSample>& samples, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error("calibrate: alpha must lie in (0,1)");
    if (samples.size() < 50)
        throw Error(msg("calibrate: need at least 50 samples, got ", samples.size()));

    std::vector<double> residuals(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!(samples[i].stdev > 0.0))
            throw Error(msg("calibrate: sample ", i, " has zero predictive spread"));
        const double h = half_width(alpha, samples[i].n_s, samples[i].stdev);
        residuals[i] = (samples[i].truth - samples[i].mean) / h;
    }

    const double tail = 0.5 * (1.0 - alpha);
    CalibrationFactors f;
    f.alpha = alpha;
    f.n_calib = static_cast<int>(samples.size());
    f.kappa_u = empirical_quantile(residuals, 1.0 - tail);
    f.kappa_l = -empirical_quantile(residuals, tail);
    if (f.kappa_u <= 0.0 || f.kappa_l <= 0.0)
        throw Error(msg("calibrate: negative calibration factor (kappa_l=", f.kappa_l,
                        ", kappa_u=", f.kappa_u,
                        "); the model is biased beyond its own interval sign"));
    return f;
}

Coverage coverage_report(const std::vector<CalibrationSample>& samples, double alpha,
                         const CalibrationFactors& factors) {
    if (samples.empty()) throw Error("coverage_report: empty sample set");
    Coverage c;
    for (const auto& s : samples) {
        const double h = half_width(alpha, s.n_s, s.stdev);
        const double lb = s.mean - factors.kappa_l * h;
        const double ub = s.mean + factors.kappa_u * h;
        if (s.truth < lb)
            c.below += 1.0;
        else if (s.truth > ub)
            c.above += 1.0;
        else
            c.inside += 1.0;
    }
    const double n = static_cast<double>(samples.size());
    c.below /= n;
    c.inside /= n;
    c.above /= n;
    return c;
}

double ece_from_coverages(const std::vector<double>& c_hat) {
    if (c_hat.size() != 9) throw Error("ece: expected nine coverage levels");
    double acc = 0.0;
    for (int k = 0; k < 9; ++k) acc += std::fabs(c_hat[k] - 0.1 * (k + 1)) / 9.0;
    return acc;
}

double ece(const std::vector<CalibrationSample>& samples, const CalibrationFactors& factors) {
    if (samples.empty()) throw Error("ece: empty sample set");
    std::vector<double> c_hat(9, 0.0);
    for (int k = 0; k < 9; ++k) {
        const double a = 0.1 * (k + 1);
        const Coverage c = coverage_report(samples, a, factors);
        c_hat[k] = c.inside;
    }
    return ece_from_coverages(c_hat);
}

} // namespace uadbo::uq
