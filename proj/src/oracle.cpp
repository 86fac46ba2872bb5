#include "uadbo/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace uadbo::oracle {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDeg = kPi / 180.0;

// Drag model constants. Base drag spans 40..120 counts with coefficient
// roughness; the Korn factor and induced-like term put trimmed drag in the
// 100..200 count regime for supercritical-like baselines.
constexpr double kKornFactor = 0.95;
constexpr double kInduced = 0.02;
constexpr double kWaveGain = 20.0;
constexpr double kBaseDragMin = 0.004;
constexpr double kBaseDragSpan = 0.008;
constexpr double kRoughGain = 1.0;

// Lift-law constants.
constexpr double kSlope0 = 0.10;            // per degree, incompressible
constexpr double kSlopeThickness = 0.8;
constexpr double kZeroLiftPerCamber = 200.0; // degrees per unit camber integral
constexpr double kBreakBase = 2.6;
constexpr double kBreakCamber = 120.0;
constexpr double kBreakMachAnchor = 0.80;
constexpr double kBreakMachSlope = 50.0;
constexpr double kBreakThickness = 20.0;
constexpr double kSoftBase = 0.05;
constexpr double kSoftThickness = 0.25;
constexpr double kSoftRough = 0.03;

constexpr double kAoaLo = -4.0;
constexpr double kAoaHi = 12.0;

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

double camber_integral(const geom::AirfoilShape& shape) {
    return 0.5 * (geom::surface_area(shape, true) + geom::surface_area(shape, false));
}

double prandtl_glauert(double mach) { return 1.0 / std::sqrt(std::max(1.0 - mach * mach, 0.05)); }

/// Trapezoid over the canonical grid.
double integrate_grid(const std::vector<double>& f) {
    const auto& x = geom::station_grid().x;
    double acc = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) acc += 0.5 * (f[i] + f[i - 1]) * (x[i] - x[i - 1]);
    return acc;
}

std::uint64_t shape_condition_hash(const geom::AirfoilShape& shape, double mach, double aoa) {
    auto mix = [](std::uint64_t h, double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        h ^= bits + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        return h;
    };
    std::uint64_t h = 0x243f6a8885a308d3ULL;
    for (double w : shape.upper) h = mix(h, w);
    for (double w : shape.lower) h = mix(h, w);
    h = mix(h, shape.tc_max.value_or(-1.0));
    h = mix(h, mach);
    h = mix(h, aoa);
    return h;
}

} // namespace

OperatingCondition OperatingCondition::at_cl(double mach, double cl) {
    OperatingCondition c;
    c.mach = mach;
    c.target_cl = cl;
    c.validate();
    return c;
}

OperatingCondition OperatingCondition::at_aoa(double mach, double aoa_deg) {
    OperatingCondition c;
    c.mach = mach;
    c.aoa_deg = aoa_deg;
    c.validate();
    return c;
}

void OperatingCondition::validate() const {
    if (!(mach >= 0.3 && mach <= 0.95))
        throw Error(msg("operating condition: mach must lie in [0.3, 0.95], got ", mach));
    if (target_cl.has_value() == aoa_deg.has_value())
        throw Error("operating condition: exactly one of target-cl / aoa must be set");
}

double coefficient_roughness(const geom::AirfoilShape& shape) {
    double acc = 0.0;
    for (const auto* surf : {&shape.upper, &shape.lower}) {
        for (int i = 1; i + 1 < geom::kCstCount; ++i) {
            const double d2 = (*surf)[i + 1] - 2.0 * (*surf)[i] + (*surf)[i - 1];
            acc += d2 * d2;
        }
    }
    return acc;
}

double base_drag(const geom::AirfoilShape& shape) {
    return kBaseDragMin + kBaseDragSpan * (1.0 - std::exp(-kRoughGain * coefficient_roughness(shape)));
}

double korn_ma_dd(double tc_max, double cl) { return kKornFactor - tc_max - cl / 10.0; }

double wave_term(double mach, double ma_dd) {
    const double excess = std::max(0.0, mach - ma_dd);
    return kWaveGain * excess * excess * excess * excess;
}

LiftLaw lift_law(const geom::AirfoilShape& shape, double mach) {
    const double tc = geom::max_thickness(shape);
    const double camber = camber_integral(shape);
    LiftLaw law;
    law.slope = kSlope0 * (1.0 + kSlopeThickness * tc) * prandtl_glauert(mach);
    law.alpha0 = -kZeroLiftPerCamber * camber;
    law.aoa_break = kBreakBase + kBreakMachSlope * (kBreakMachAnchor - mach)
                    - kBreakThickness * (tc - 0.12) - kBreakCamber * camber;
    law.softening = std::clamp(kSoftBase + kSoftThickness * (tc - 0.12)
                                   + kSoftRough * coefficient_roughness(shape),
                               0.01, 0.25);
    return law;
}

double lift_at(const geom::AirfoilShape& shape, double mach, double aoa_deg) {
    const LiftLaw law = lift_law(shape, mach);
    const double post = std::max(0.0, aoa_deg - law.aoa_break);
    return law.slope * (aoa_deg - law.alpha0) - law.softening * post * post;
}

std::vector<double> lift_curve(const geom::AirfoilShape& shape, double mach,
                               const std::vector<double>& aoa_deg) {
    if (aoa_deg.empty()) throw Error("lift_curve: empty aoa list");
    for (std::size_t i = 1; i < aoa_deg.size(); ++i)
        if (!(aoa_deg[i] > aoa_deg[i - 1])) throw Error("lift_curve: aoa list must be increasing");
    std::vector<double> out(aoa_deg.size());
    for (std::size_t i = 0; i < aoa_deg.size(); ++i) out[i] = lift_at(shape, mach, aoa_deg[i]);
    return out;
}

double trim(const geom::AirfoilShape& shape, double mach, double target_cl) {
    const LiftLaw law = lift_law(shape, mach);
    // The curve increases up to aoa_break + slope/(2*softening); restrict the
    // search to the monotone branch.
    const double aoa_peak = law.aoa_break + law.slope / (2.0 * law.softening);
    const double hi = std::min(kAoaHi, aoa_peak);
    double lo = kAoaLo;
    double f_lo = lift_at(shape, mach, lo) - target_cl;
    double f_hi = lift_at(shape, mach, hi) - target_cl;
    if (f_lo > 0.0 || f_hi < 0.0)
        throw TrimFailure(msg("trim: target cl ", target_cl, " unreachable at mach ", mach,
                              " (cl range [", f_lo + target_cl, ", ", f_hi + target_cl, "])"));
    double a = lo, b = hi;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (a + b);
        const double f = lift_at(shape, mach, mid) - target_cl;
        if (std::fabs(f) <= 1e-6 && (b - a) < 1e-8) return mid;
        if (f < 0.0)
            a = mid;
        else
            b = mid;
    }
    return 0.5 * (a + b);
}

Coefficients integrate_coefficients(const SurfaceField& cp, const SurfaceField& cf, double aoa_deg) {
    const auto& x = geom::station_grid().x;
    const std::size_t n = x.size();
    if (cp.upper.size() != n || cp.lower.size() != n || cf.upper.size() != n || cf.lower.size() != n)
        throw Error(msg("integrate_coefficients: fields must have ", n, " stations per surface"));

    std::vector<double> dcp(n), axial(n), moment(n);
    for (std::size_t i = 0; i < n; ++i) {
        dcp[i] = cp.lower[i] - cp.upper[i];
        axial[i] = cf.upper[i] + cf.lower[i];
        moment[i] = (cp.upper[i] - cp.lower[i]) * (x[i] - 0.25);
    }
    const double cn = integrate_grid(dcp);
    const double ca = integrate_grid(axial);
    const double cm = integrate_grid(moment);
    const double c = std::cos(aoa_deg * kDeg), s = std::sin(aoa_deg * kDeg);
    return {cn * c - ca * s, cn * s + ca * c, cm};
}

OracleResult evaluate(const geom::AirfoilShape& shape, const OperatingCondition& condition,
                      const OracleConfig& config) {
    condition.validate();
    shape.validate();
    const double mach = condition.mach;
    const double aoa = condition.target_cl ? trim(shape, mach, *condition.target_cl)
                                           : *condition.aoa_deg;
    const double cl = lift_at(shape, mach, aoa);

    const double tc = geom::max_thickness(shape);
    const double ma_dd = korn_ma_dd(tc, cl);
    double cd = base_drag(shape) + kInduced * cl * cl + wave_term(mach, ma_dd);

    if (config.noise_scale > 0.0) {
        Rng noise_rng(shape_condition_hash(shape, mach, aoa));
        const double sd = config.noise_scale * 1e-4 * (1.0 + 20.0 * std::max(0.0, mach - ma_dd) / 0.05);
        cd += sd * noise_rng.normal();
    }

    // Build surface fields that integrate back to (cl, cd) exactly. The cp
    // base profile carries a movable sigmoid shock on the upper surface; the
    // axial channel carries viscous drag plus a leading-edge suction mode
    // whose magnitude closes the axial force balance.
    const auto& x = geom::station_grid().x;
    const std::size_t n = x.size();
    const double camber = camber_integral(shape);
    const double shock_x = std::clamp(0.35 + 2.0 * (mach - ma_dd), 0.2, 0.8);
    const double shock_s = (0.5 + 10.0 * camber) * sigmoid(2.0 + 25.0 * (mach - ma_dd));

    SurfaceField cp, cf;
    cp.upper.resize(n);
    cp.lower.resize(n);
    cf.upper.resize(n);
    cf.lower.resize(n);

    std::vector<double> suction(n);
    const double cf_base = 0.0018 + 0.0012 * sigmoid(5.0 * (mach - ma_dd));
    for (std::size_t i = 0; i < n; ++i) {
        const double g = 2.2 * std::pow(x[i], 0.25) * (1.0 - x[i]);
        cp.upper[i] = 0.3 - 0.8 * g - shock_s * sigmoid(40.0 * (shock_x - x[i]));
        cp.lower[i] = 0.25 - (0.1 + 4.8 * camber) * g;
        cf.upper[i] = cf_base * (1.3 - 0.4 * std::sqrt(x[i]));
        cf.lower[i] = cf.upper[i];
        suction[i] = -std::exp(-x[i] / 0.06);
    }

    const double c = std::cos(aoa * kDeg), s = std::sin(aoa * kDeg);
    const double cn_target = cl * c + cd * s;
    const double ca_target = -cl * s + cd * c;

    std::vector<double> dcp0(n), axial0(n);
    for (std::size_t i = 0; i < n; ++i) {
        dcp0[i] = cp.lower[i] - cp.upper[i];
        axial0[i] = cf.upper[i] + cf.lower[i];
    }
    const double cn0 = integrate_grid(dcp0);
    const double ca0 = integrate_grid(axial0);
    const double i_s = integrate_grid(suction);
    if (std::fabs(cn0) < 1e-9) throw Error("oracle: degenerate base pressure profile");
    const double lambda = cn_target / cn0;
    const double eta = (ca_target - ca0) / i_s;
    for (std::size_t i = 0; i < n; ++i) {
        cp.upper[i] *= lambda;
        cp.lower[i] *= lambda;
        cf.upper[i] += eta * suction[i];
    }

    std::vector<double> moment(n);
    for (std::size_t i = 0; i < n; ++i) moment[i] = (cp.upper[i] - cp.lower[i]) * (x[i] - 0.25);

    OracleResult out;
    out.cd = cd;
    out.cl = cl;
    out.cm = integrate_grid(moment);
    out.aoa_deg = aoa;
    out.cp = std::move(cp);
    out.cf = std::move(cf);
    return out;
}

} // namespace uadbo::oracle
