#include "uadbo/objective.hpp"

#include <algorithm>
#include <cmath>

namespace uadbo::obj {

const std::vector<double>& mach_sweep() {
    static const std::vector<double> sweep = {0.71, 0.72, 0.73, 0.74, 0.75, 0.76};
    return sweep;
}

double mean_drag(const std::vector<double>& cd_per_mach) {
    if (cd_per_mach.size() != 6)
        throw Error(msg("mean_drag: expected 6 per-Mach values, got ", cd_per_mach.size()));
    double acc = 0.0;
    for (double v : cd_per_mach) acc += v;
    return acc / 6.0;
}

double ConstraintSet::total_violation() const {
    double acc = 0.0;
    for (const auto& c : items) acc += c.violation;
    return acc;
}

// ---------------------------------------------------------------------------
// Buffet onset
// ---------------------------------------------------------------------------

BuffetOnset buffet_onset(const std::vector<double>& aoa_deg, const std::vector<double>& cl) {
    if (aoa_deg.size() != cl.size()) throw Error("buffet_onset: size mismatch");
    const int n = static_cast<int>(aoa_deg.size());
    if (n < 8) throw Error("buffet_onset: need at least 8 lift-curve points");
    for (int i = 1; i < n; ++i)
        if (!(aoa_deg[i] > aoa_deg[i - 1])) throw Error("buffet_onset: aoa must be increasing");

    // Maximal prefix with a linear least-squares fit within 1e-3 RMS.
    auto fit_prefix = [&](int k, double* slope, double* icept) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (int i = 0; i < k; ++i) {
            sx += aoa_deg[i];
            sy += cl[i];
            sxx += aoa_deg[i] * aoa_deg[i];
            sxy += aoa_deg[i] * cl[i];
        }
        const double det = k * sxx - sx * sx;
        if (std::fabs(det) < 1e-14) throw Error("buffet_onset: degenerate aoa spacing");
        *slope = (k * sxy - sx * sy) / det;
        *icept = (sy - *slope * sx) / k;
        double sse = 0.0;
        for (int i = 0; i < k; ++i) {
            const double r = cl[i] - (*slope * aoa_deg[i] + *icept);
            sse += r * r;
        }
        return std::sqrt(sse / k);
    };

    int best_k = 0;
    for (int k = 3; k <= n; ++k) {
        double a = 0.0, b = 0.0;
        if (fit_prefix(k, &a, &b) <= 1e-3) {
            best_k = k;
        } else {
            break;
        }
    }
    if (best_k < 3) throw Error("buffet_onset: linear prefix shorter than 3 points");

    // The detected prefix can creep slightly past the break before the RMS
    // threshold trips; refit on its interior so the tail cannot tilt the line.
    const int fit_k = std::max(3, best_k - std::max(2, best_k / 6));
    double slope = 0.0, icept = 0.0;
    (void)fit_prefix(fit_k, &slope, &icept);
    if (slope <= 0.0) throw Error("buffet_onset: non-positive lift-curve slope");

    // Shifted line: cl_s(aoa) = slope*(aoa - 0.1) + icept. In the linear
    // regime the curve sits above it by slope*0.1; buffet onset is the first
    // downward crossing of the sampled piecewise-linear curve.
    auto gap = [&](int i) { return cl[i] - (slope * (aoa_deg[i] - 0.1) + icept); };
    for (int i = 1; i < n; ++i) {
        const double g0 = gap(i - 1);
        const double g1 = gap(i);
        if (g0 > 0.0 && g1 <= 0.0) {
            const double w = g0 / (g0 - g1);
            double star = aoa_deg[i - 1] + w * (aoa_deg[i] - aoa_deg[i - 1]);

            // Local quadratic refinement through three neighbouring samples;
            // the linear chord alone can miss by ~1.5e-4 deg at 0.05 deg
            // sampling when the crossing hugs a sample point.
            const int j = std::clamp(i, 1, n - 2);
            const double x0 = aoa_deg[j - 1], x1 = aoa_deg[j], x2 = aoa_deg[j + 1];
            const double y0 = gap(j - 1), y1 = gap(j), y2 = gap(j + 1);
            const double d01 = (y1 - y0) / (x1 - x0);
            const double d12 = (y2 - y1) / (x2 - x1);
            const double c2 = (d12 - d01) / (x2 - x0);
            // Newton polish on q(x) = y1 + d01*(x-x1)... expressed about x1
            for (int it = 0; it < 3; ++it) {
                const double q = y0 + d01 * (star - x0) + c2 * (star - x0) * (star - x1);
                const double dq = d01 + c2 * (2.0 * star - x0 - x1);
                if (std::fabs(dq) < 1e-14) break;
                const double next = star - q / dq;
                if (next < aoa_deg[i - 1] - 0.5 * (x1 - x0) || next > aoa_deg[i] + 0.5 * (x1 - x0)) break;
                star = next;
            }
            BuffetOnset out;
            out.aoa_star = star;
            out.cl_buffet = slope * (star - 0.1) + icept;
            return out;
        }
    }
    throw NoBuffetDetected("buffet_onset: shifted line never intersects the sampled curve");
}

// ---------------------------------------------------------------------------
// Problem assembly
// ---------------------------------------------------------------------------

geom::AirfoilShape default_baseline() {
    geom::AirfoilShape s;
    s.upper = {0.170, 0.222, 0.178, 0.215, 0.177, 0.223, 0.153, 0.223, 0.168, 0.199};
    s.lower = {-0.121, -0.160, -0.095, -0.167, -0.090, -0.120, -0.048, -0.078, 0.000, 0.031};
    return s;
}

const char* eval_mode_name(EvalMode m) {
    switch (m) {
        case EvalMode::OracleTruth: return "cfd-oracle";
        case EvalMode::Dbo: return "dbo";
        case EvalMode::UaDbo: return "ua-dbo";
    }
    return "?";
}

EvalMode eval_mode_from_name(const std::string& name) {
    if (name == "cfd-oracle") return EvalMode::OracleTruth;
    if (name == "dbo") return EvalMode::Dbo;
    if (name == "ua-dbo") return EvalMode::UaDbo;
    throw Error(msg("unknown optimization mode '", name, "'"));
}

namespace {

std::vector<double> buffet_grid(const ProblemConfig& p, double cruise_aoa) {
    std::vector<double> grid;
    for (double off = p.buffet_aoa_lo; off <= p.buffet_aoa_hi + 1e-9; off += p.buffet_aoa_step)
        grid.push_back(cruise_aoa + off);
    return grid;
}

double oracle_cd_bar_counts(const geom::AirfoilShape& shape, const ProblemConfig& p,
                            std::atomic<long>* calls) {
    std::vector<double> cds;
    for (double mach : mach_sweep()) {
        const auto r = oracle::evaluate(shape, oracle::OperatingCondition::at_cl(mach, p.cruise_cl),
                                        p.oracle_config);
        calls->fetch_add(1);
        cds.push_back(r.cd);
    }
    return mean_drag(cds) * 1e4;
}

BuffetOnset oracle_buffet(const geom::AirfoilShape& shape, const ProblemConfig& p,
                          double cruise_aoa) {
    const auto grid = buffet_grid(p, cruise_aoa);
    const auto cls = oracle::lift_curve(shape, p.cruise_mach, grid);
    return buffet_onset(grid, cls);
}

} // namespace

ProblemConfig make_problem(data::ProblemKind kind, const geom::AirfoilShape& baseline,
                           double cruise_mach, double cruise_cl,
                           const oracle::OracleConfig& ocfg) {
    ProblemConfig p;
    p.kind = kind;
    p.baseline = baseline;
    p.cruise_mach = cruise_mach;
    p.cruise_cl = cruise_cl;
    p.oracle_config = ocfg;

    p.base_area = geom::section_area(baseline);
    p.base_t015 = geom::thickness_at(baseline, 0.15);
    p.base_tmax = geom::max_thickness(baseline);

    const auto cruise = oracle::evaluate(baseline,
                                         oracle::OperatingCondition::at_cl(cruise_mach, cruise_cl), ocfg);
    p.base_cm = cruise.cm;
    p.base_aoa = cruise.aoa_deg;
    p.base_ld = cruise.cl / cruise.cd;

    std::atomic<long> scratch{0};
    if (kind == data::ProblemKind::DragDivergence) {
        p.base_cd_bar_counts = oracle_cd_bar_counts(baseline, p, &scratch);
    } else {
        p.base_cl_buffet = oracle_buffet(baseline, p, cruise.aoa_deg).cl_buffet;
    }
    return p;
}

std::vector<double> dbo_objective(const PerformanceMetrics& metrics, data::ProblemKind kind) {
    if (kind == data::ProblemKind::DragDivergence) return {metrics.cd_bar_counts};
    return {-metrics.ld_cruise, -metrics.cl_buffet};
}

// ---------------------------------------------------------------------------
// Evaluator
// ---------------------------------------------------------------------------

Evaluator::Evaluator(const ProblemConfig& problem, EvalMode mode, model::ModelHandle* model,
                     double alpha, int n_s)
    : problem_(problem), mode_(mode), model_(model), alpha_(alpha), n_s_(n_s) {
    if (mode_ != EvalMode::OracleTruth) {
        if (!model_) throw Error("evaluator: model required for dbo/ua-dbo modes");
        if (mode_ == EvalMode::UaDbo) {
            if (!model_->probabilistic())
                throw Error("evaluator: ua-dbo requires a probabilistic model");
            if (!model_->calibration.calibrated)
                log_warn("ua-dbo: model is uncalibrated; using kappa = 1");
        }
    }
}

CandidateEval Evaluator::evaluate(const geom::AirfoilShape& shape, std::uint64_t seed) const {
    CandidateEval out;

    oracle::OracleResult cruise;
    try {
        cruise = oracle::evaluate(shape,
                                  oracle::OperatingCondition::at_cl(problem_.cruise_mach, problem_.cruise_cl),
                                  problem_.oracle_config);
        oracle_calls_.fetch_add(1);
    } catch (const TrimFailure&) {
        out.trim_ok = false;
        Constraint c;
        c.name = "cruise-trim";
        c.violation = 1.0;
        out.constraints.items.push_back(c);
        out.objectives.assign(objective_count(), 1e9);
        return out;
    }

    PerformanceMetrics& m = out.metrics;
    m.aoa_cruise = cruise.aoa_deg;
    m.cm_cruise = cruise.cm;
    m.ld_cruise = cruise.cl / cruise.cd;
    m.area = geom::section_area(shape);
    m.t_015c = geom::thickness_at(shape, 0.15);

    data::ConditionSample cruise_sample;
    cruise_sample.mach = problem_.cruise_mach;
    cruise_sample.cl = problem_.cruise_cl;
    cruise_sample.aoa_deg = cruise.aoa_deg;
    cruise_sample.cd = cruise.cd;
    cruise_sample.cp = cruise.cp;
    cruise_sample.cf = cruise.cf;

    const uq::CalibrationFactors factors = [&] {
        uq::CalibrationFactors f;
        if (model_ && model_->calibration.calibrated) {
            f.kappa_l = model_->calibration.kappa_l;
            f.kappa_u = model_->calibration.kappa_u;
            f.alpha = model_->calibration.alpha;
        }
        return f;
    }();

    try {
        if (problem_.kind == data::ProblemKind::DragDivergence) {
            if (mode_ == EvalMode::OracleTruth) {
                m.cd_bar_counts = oracle_cd_bar_counts(shape, problem_, &oracle_calls_);
                out.pred_mean = m.cd_bar_counts;
                out.pred_lb = out.pred_ub = m.cd_bar_counts;
            } else {
                model::Predictor pred(*model_, shape, cruise_sample);
                if (mode_ == EvalMode::Dbo) {
                    const auto cds = pred.mean_cd(mach_sweep());
                    m.cd_bar_counts = mean_drag(cds) * 1e4;
                    out.pred_mean = m.cd_bar_counts;
                    out.pred_lb = out.pred_ub = m.cd_bar_counts;
                } else {
                    const auto dist = uq::propagate_matrix(
                        pred.sample_cd(mach_sweep(), n_s_, seed),
                        [](const std::vector<double>& row) { return mean_drag(row) * 1e4; });
                    const auto ci = uq::interval(dist, alpha_, factors);
                    m.cd_bar_counts = dist.mean;
                    out.pred_mean = dist.mean;
                    out.pred_sigma = dist.stdev;
                    out.pred_lb = ci.lb;
                    out.pred_ub = ci.ub;
                }
            }
        } else {
            const auto grid = buffet_grid(problem_, cruise.aoa_deg);
            if (mode_ == EvalMode::OracleTruth) {
                const auto onset = oracle_buffet(shape, problem_, cruise.aoa_deg);
                m.cl_buffet = onset.cl_buffet;
                out.pred_mean = onset.cl_buffet;
                out.pred_lb = out.pred_ub = onset.cl_buffet;
            } else {
                model::Predictor pred(*model_, shape, cruise_sample);
                auto curve_cl = [&](const std::vector<model::FieldPrediction>& fields) {
                    std::vector<double> cls(grid.size());
                    for (std::size_t j = 0; j < grid.size(); ++j)
                        cls[j] = oracle::integrate_coefficients(fields[j].cp, fields[j].cf, grid[j]).cl;
                    return cls;
                };
                if (mode_ == EvalMode::Dbo) {
                    const auto onset = buffet_onset(grid, curve_cl(pred.mean_fields(grid)));
                    m.cl_buffet = onset.cl_buffet;
                    out.pred_mean = onset.cl_buffet;
                    out.pred_lb = out.pred_ub = onset.cl_buffet;
                } else {
                    const auto draws = pred.sample_fields(grid, n_s_, seed);
                    std::vector<double> cl_samples;
                    cl_samples.reserve(draws.size());
                    for (std::size_t s = 0; s < draws.size(); ++s) {
                        try {
                            cl_samples.push_back(buffet_onset(grid, curve_cl(draws[s])).cl_buffet);
                        } catch (const Error& e) {
                            throw Error(msg("buffet postprocess failed at draw ", s, ": ", e.what()));
                        }
                    }
                    const auto dist = uq::PredictiveDistribution::from_samples(std::move(cl_samples));
                    const auto ci = uq::interval(dist, alpha_, factors);
                    // maximized metric uses the confidence-pessimal lower bound
                    m.cl_buffet = dist.mean;
                    out.pred_mean = dist.mean;
                    out.pred_sigma = dist.stdev;
                    out.pred_lb = ci.lb;
                    out.pred_ub = ci.ub;
                }
            }
        }
    } catch (const Error& e) {
        // Off-design evaluation failed (trim at a sweep point, buffet not
        // detected, ...): quarantine as infeasible.
        log_debug("candidate quarantined: ", e.what());
        out.trim_ok = false;
        Constraint c;
        c.name = "off-design-eval";
        c.violation = 1.0;
        out.constraints.items.push_back(c);
        out.objectives.assign(objective_count(), 1e9);
        return out;
    }

    // Constraints
    auto add_lower = [&](const char* name, double value, double bound) {
        Constraint c;
        c.name = name;
        c.lo = bound;
        c.value = value;
        c.violation = std::max(0.0, bound - value);
        out.constraints.items.push_back(c);
    };
    auto add_band = [&](const char* name, double value, double lo, double hi) {
        Constraint c;
        c.name = name;
        c.lo = lo;
        c.hi = hi;
        c.value = value;
        c.violation = std::max({0.0, lo - value, value - hi});
        out.constraints.items.push_back(c);
    };

    if (problem_.kind == data::ProblemKind::DragDivergence) {
        add_lower("area", m.area, problem_.base_area);
        add_lower("cm_cruise", m.cm_cruise, problem_.base_cm);
        add_band("aoa_cruise", m.aoa_cruise, 1.0, 5.0);
        add_lower("t_015c", m.t_015c, 0.9 * problem_.base_t015);
    } else {
        add_band("t_max", geom::max_thickness(shape), 0.98 * problem_.base_tmax,
                 1.02 * problem_.base_tmax);
        add_lower("t_015c", m.t_015c, 0.95 * problem_.base_t015);
        add_band("aoa_cruise", m.aoa_cruise, problem_.base_aoa - 0.5, problem_.base_aoa + 0.5);
        const double cm_a = 0.9 * problem_.base_cm, cm_b = 1.1 * problem_.base_cm;
        add_band("cm_cruise", m.cm_cruise, std::min(cm_a, cm_b), std::max(cm_a, cm_b));
    }

    // Objectives (minimization convention). UA-DBO substitutes the
    // confidence-pessimal bound for every model-driven metric.
    if (problem_.kind == data::ProblemKind::DragDivergence) {
        out.objectives = {mode_ == EvalMode::UaDbo ? out.pred_ub : m.cd_bar_counts};
    } else {
        const double buffet_term = mode_ == EvalMode::UaDbo ? out.pred_lb : m.cl_buffet;
        out.objectives = {-m.ld_cruise, -buffet_term};
    }
    return out;
}

} // namespace uadbo::obj
