#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "uadbo/dataset.hpp"
#include "uadbo/geometry.hpp"
#include "uadbo/oracle.hpp"
#include "uadbo/surrogate.hpp"
#include "uadbo/uq.hpp"

namespace uadbo::obj {

/// The six-point drag-divergence Mach sweep.
const std::vector<double>& mach_sweep();

/// Arithmetic mean of exactly six per-Mach drag values (unit preserving).
double mean_drag(const std::vector<double>& cd_per_mach);

struct PerformanceMetrics {
    double cd_bar_counts = 0.0; // mean drag over the sweep, in counts
    double cl_buffet = 0.0;
    double ld_cruise = 0.0;
    double cm_cruise = 0.0;
    double aoa_cruise = 0.0;
    double area = 0.0;
    double t_015c = 0.0;
};

struct Constraint {
    std::string name;
    double lo = -1e300;
    double hi = 1e300;
    double value = 0.0;
    double violation = 0.0; // 0 iff satisfied
};

struct ConstraintSet {
    std::vector<Constraint> items;
    double total_violation() const;
    bool feasible() const { return total_violation() == 0.0; }
};

struct BuffetOnset {
    double aoa_star = 0.0;
    double cl_buffet = 0.0;
};

/// Lift-curve-break criterion: least-squares line over the maximal low-aoa
/// prefix (residual RMS <= 1e-3), shifted right by 0.1 degrees, intersected
/// with the piecewise-linear curve. Throws NoBuffetDetected when the shifted
/// line never crosses within the sampled range.
BuffetOnset buffet_onset(const std::vector<double>& aoa_deg, const std::vector<double>& cl);

// ---------------------------------------------------------------------------
// Problem assembly
// ---------------------------------------------------------------------------

/// Built-in supercritical-like baseline (t/c about 0.124, mildly wavy
/// coefficients so smoothing has headroom).
geom::AirfoilShape default_baseline();

struct ProblemConfig {
    data::ProblemKind kind = data::ProblemKind::DragDivergence;
    geom::AirfoilShape baseline;
    double cruise_mach = 0.73;
    double cruise_cl = 0.824;
    double buffet_aoa_lo = -1.0; // offsets around cruise aoa
    double buffet_aoa_hi = 4.0;
    double buffet_aoa_step = 0.25;
    oracle::OracleConfig oracle_config;

    // baseline references (filled by make_problem)
    double base_area = 0.0;
    double base_t015 = 0.0;
    double base_tmax = 0.0;
    double base_cm = 0.0;
    double base_aoa = 0.0;
    double base_cd_bar_counts = 0.0;
    double base_ld = 0.0;
    double base_cl_buffet = 0.0;
};

/// Evaluates the baseline once and freezes the constraint references.
ProblemConfig make_problem(data::ProblemKind kind, const geom::AirfoilShape& baseline,
                           double cruise_mach, double cruise_cl,
                           const oracle::OracleConfig& ocfg = {});

enum class EvalMode { OracleTruth, Dbo, UaDbo };

const char* eval_mode_name(EvalMode m);
EvalMode eval_mode_from_name(const std::string& name);

struct CandidateEval {
    bool trim_ok = true;
    PerformanceMetrics metrics;
    ConstraintSet constraints;
    std::vector<double> objectives; // minimization convention

    // UA-DBO bookkeeping for the model-driven metric (counts for drag,
    // lift-coefficient units for buffet).
    double pred_mean = 0.0;
    double pred_sigma = 0.0;
    double pred_lb = 0.0;
    double pred_ub = 0.0;
};

/// Objective vector under the deterministic rule: minimized drag stays as
/// predicted; maximized buffet metrics are negated.
std::vector<double> dbo_objective(const PerformanceMetrics& metrics, data::ProblemKind kind);

class Evaluator {
public:
    /// model may be null for OracleTruth mode; UA-DBO requires a calibrated
    /// probabilistic model (uncalibrated models warn and use kappa = 1).
    Evaluator(const ProblemConfig& problem, EvalMode mode, model::ModelHandle* model,
              double alpha = 0.9, int n_s = 16);

    /// Cruise quantities always come from the oracle; off-design quantities
    /// from the oracle (truth mode) or the surrogate. Trim failure marks the
    /// candidate infeasible instead of throwing.
    CandidateEval evaluate(const geom::AirfoilShape& shape, std::uint64_t seed) const;

    const ProblemConfig& problem() const { return problem_; }
    EvalMode mode() const { return mode_; }
    long oracle_calls() const { return oracle_calls_.load(); }
    int objective_count() const { return problem_.kind == data::ProblemKind::DragDivergence ? 1 : 2; }

private:
    ProblemConfig problem_;
    EvalMode mode_;
    model::ModelHandle* model_;
    double alpha_;
    int n_s_;
    mutable std::atomic<long> oracle_calls_{0};
};

} // namespace uadbo::obj
