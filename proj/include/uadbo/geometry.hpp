#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "uadbo/util.hpp"

namespace uadbo::geom {

inline constexpr int kCstOrder = 9;    // ninth-order Bernstein basis, 10 weights
inline constexpr int kCstCount = 10;
inline constexpr int kStationCount = 101;

/// CST airfoil: 10 weights per surface, optional maximum-thickness rescale.
struct AirfoilShape {
    std::array<double, kCstCount> upper{};
    std::array<double, kCstCount> lower{};
    std::optional<double> tc_max;

    void validate() const;
};

/// Fixed chordwise sampling, cosine-clustered toward both edges.
struct StationGrid {
    std::vector<double> x;
};

/// The canonical 101-station grid shared by fields, datasets and models.
const StationGrid& station_grid();

struct SurfaceCoords {
    std::vector<double> upper_y;
    std::vector<double> lower_y;
};

/// y(x) = sqrt(x)(1-x) * sum_i w_i C(9,i) x^i (1-x)^(9-i) per surface; when
/// tc_max is set both surfaces are rescaled so the maximum thickness over the
/// canonical grid equals it.
SurfaceCoords cst_evaluate(const AirfoilShape& shape, const StationGrid& stations);

double thickness_at(const AirfoilShape& shape, double x);
double max_thickness(const AirfoilShape& shape);
double section_area(const AirfoilShape& shape);

/// Signed area under one surface curve (trapezoid over the canonical grid);
/// camber diagnostics for the oracle.
double surface_area(const AirfoilShape& shape, bool upper);

/// Hicks-Henne bump perturbation of the baseline surfaces, least-squares
/// refit onto the 10-term CST basis per surface. Resamples when the refit
/// residual RMS exceeds 5e-3 chord. Operates on the unscaled coefficient
/// surface; tc_max is carried over unchanged.
AirfoilShape perturb_and_refit(const AirfoilShape& baseline, int bump_count,
                               double amplitude, Rng& rng);

/// Least-squares projection of y samples (on the canonical grid) onto the
/// CST basis. Returns the 10 weights; rms_out receives the residual RMS.
std::array<double, kCstCount> refit_cst(const std::vector<double>& y, double* rms_out = nullptr);

/// Two-column CSV export, upper surface then lower, `# ua-dbo airfoil v1`.
void write_airfoil_csv(const std::string& path, const AirfoilShape& shape);

} // namespace uadbo::geom
