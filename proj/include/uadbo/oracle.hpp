#pragma once

#include <optional>
#include <vector>

#include "uadbo/geometry.hpp"
#include "uadbo/util.hpp"

namespace uadbo::oracle {

/// Sampled coefficient distribution over the canonical station grid,
/// one vector per surface.
struct SurfaceField {
    std::vector<double> upper;
    std::vector<double> lower;
};

/// Free-stream state: either a trim target (lift coefficient) or a direct
/// angle of attack, never both.
struct OperatingCondition {
    double mach = 0.73;
    std::optional<double> target_cl;
    std::optional<double> aoa_deg;

    static OperatingCondition at_cl(double mach, double cl);
    static OperatingCondition at_aoa(double mach, double aoa_deg);
    void validate() const;
};

struct OracleResult {
    double cd = 0.0;
    double cl = 0.0;
    double cm = 0.0;
    double aoa_deg = 0.0;
    SurfaceField cp;
    SurfaceField cf;
};

/// Smooth lift-law parameters implied by a shape at a given Mach number:
/// cl(aoa) = slope*(aoa - alpha0) - softening*max(0, aoa - aoa_break)^2.
struct LiftLaw {
    double slope = 0.0;      // per degree
    double alpha0 = 0.0;     // zero-lift angle, degrees
    double aoa_break = 0.0;  // degrees
    double softening = 0.0;  // per degree^2
};

struct OracleConfig {
    /// Heteroscedastic observation noise on the drag coefficient (counts of
    /// standard deviation at the divergence boundary); 0 disables it.
    double noise_scale = 0.0;
};

LiftLaw lift_law(const geom::AirfoilShape& shape, double mach);

/// Korn-form drag-divergence Mach number.
double korn_ma_dd(double tc_max, double cl);

/// Lock-form fourth-power wave drag, exactly zero at or below ma_dd.
double wave_term(double mach, double ma_dd);

/// Friction/pressure base drag mapped from the coefficient smoothness.
double base_drag(const geom::AirfoilShape& shape);

/// Sum of squared second differences of the CST weights over both surfaces.
double coefficient_roughness(const geom::AirfoilShape& shape);

double lift_at(const geom::AirfoilShape& shape, double mach, double aoa_deg);
std::vector<double> lift_curve(const geom::AirfoilShape& shape, double mach,
                               const std::vector<double>& aoa_deg);

/// Root of cl(aoa) = target within aoa in [-4, 12] degrees, |dcl| <= 1e-6.
/// Throws TrimFailure when the target is outside the lift-curve range.
double trim(const geom::AirfoilShape& shape, double mach, double target_cl);

OracleResult evaluate(const geom::AirfoilShape& shape, const OperatingCondition& condition,
                      const OracleConfig& config = {});

/// Flat-projection panel integration on the canonical grid: the normal force
/// comes from the pressure difference, the axial force from the cf channels
/// (which carry the axial pressure component in oracle-built fields), and the
/// pitching moment is taken about quarter chord.
struct Coefficients {
    double cl, cd, cm;
};
Coefficients integrate_coefficients(const SurfaceField& cp, const SurfaceField& cf, double aoa_deg);

} // namespace uadbo::oracle
