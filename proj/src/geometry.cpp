#include "uadbo/geometry.hpp"

#include <cmath>
#include <fstream>

namespace uadbo::geom {

namespace {

constexpr double kPi = 3.14159265358979323846;

// C(9,i)
constexpr std::array<double, kCstCount> kBinom = {1, 9, 36, 84, 126, 126, 84, 36, 9, 1};

double class_fn(double x) { return std::sqrt(x) * (1.0 - x); }

double shape_fn(const std::array<double, kCstCount>& w, double x) {
    // Bernstein polynomial via the power recurrence.
    double acc = 0.0;
    double xi = 1.0;
    for (int i = 0; i < kCstCount; ++i) {
        acc += w[i] * kBinom[i] * xi * std::pow(1.0 - x, kCstOrder - i);
        xi *= x;
    }
    return acc;
}

double surface_y_raw(const std::array<double, kCstCount>& w, double x) {
    return class_fn(x) * shape_fn(w, x);
}

/// Thickness rescale factor implied by tc_max (1.0 when absent).
double thickness_scale(const AirfoilShape& shape) {
    if (!shape.tc_max) return 1.0;
    const StationGrid& grid = station_grid();
    double maxt = 0.0;
    for (double x : grid.x) {
        const double t = surface_y_raw(shape.upper, x) - surface_y_raw(shape.lower, x);
        if (t > maxt) maxt = t;
    }
    if (maxt <= 0.0) throw Error("thickness rescale requires a positive-thickness shape");
    return *shape.tc_max / maxt;
}

} // namespace

void AirfoilShape::validate() const {
    if (tc_max && !(*tc_max > 0.0 && *tc_max < 0.25))
        throw Error(msg("thickness-scale must lie in (0, 0.25), got ", *tc_max));
}

const StationGrid& station_grid() {
    static const StationGrid grid = [] {
        StationGrid g;
        g.x.resize(kStationCount);
        for (int i = 0; i < kStationCount; ++i)
            g.x[i] = 0.5 * (1.0 - std::cos(kPi * i / (kStationCount - 1)));
        g.x.front() = 0.0;
        g.x.back() = 1.0;
        return g;
    }();
    return grid;
}

SurfaceCoords cst_evaluate(const AirfoilShape& shape, const StationGrid& stations) {
    shape.validate();
    const double scale = thickness_scale(shape);
    SurfaceCoords out;
    out.upper_y.resize(stations.x.size());
    out.lower_y.resize(stations.x.size());
    for (std::size_t i = 0; i < stations.x.size(); ++i) {
        out.upper_y[i] = scale * surface_y_raw(shape.upper, stations.x[i]);
        out.lower_y[i] = scale * surface_y_raw(shape.lower, stations.x[i]);
    }
    return out;
}

double thickness_at(const AirfoilShape& shape, double x) {
    if (x < 0.0 || x > 1.0) throw Error(msg("thickness_at: x must lie in [0,1], got ", x));
    const double scale = thickness_scale(shape);
    return scale * (surface_y_raw(shape.upper, x) - surface_y_raw(shape.lower, x));
}

double max_thickness(const AirfoilShape& shape) {
    if (shape.tc_max) return *shape.tc_max;
    const StationGrid& grid = station_grid();
    double maxt = 0.0;
    for (double x : grid.x) maxt = std::max(maxt, surface_y_raw(shape.upper, x) - surface_y_raw(shape.lower, x));
    return maxt;
}

double section_area(const AirfoilShape& shape) {
    const StationGrid& grid = station_grid();
    const double scale = thickness_scale(shape);
    double area = 0.0;
    double prev = 0.0;
    for (std::size_t i = 0; i < grid.x.size(); ++i) {
        const double t = surface_y_raw(shape.upper, grid.x[i]) - surface_y_raw(shape.lower, grid.x[i]);
        if (i > 0) area += 0.5 * (t + prev) * (grid.x[i] - grid.x[i - 1]);
        prev = t;
    }
    return scale * area;
}

double surface_area(const AirfoilShape& shape, bool upper) {
    const StationGrid& grid = station_grid();
    const double scale = thickness_scale(shape);
    const auto& w = upper ? shape.upper : shape.lower;
    double area = 0.0;
    double prev = 0.0;
    for (std::size_t i = 0; i < grid.x.size(); ++i) {
        const double y = surface_y_raw(w, grid.x[i]);
        if (i > 0) area += 0.5 * (y + prev) * (grid.x[i] - grid.x[i - 1]);
        prev = y;
    }
    return scale * area;
}

std::array<double, kCstCount> refit_cst(const std::vector<double>& y, double* rms_out) {
    const StationGrid& grid = station_grid();
    if (y.size() != grid.x.size())
        throw Error(msg("refit_cst: expected ", grid.x.size(), " samples, got ", y.size()));

    // Normal equations over the CST basis evaluated at the grid.
    const int n = kCstCount;
    std::vector<std::array<double, kCstCount>> basis(grid.x.size());
    for (std::size_t s = 0; s < grid.x.size(); ++s) {
        const double x = grid.x[s];
        const double cf = class_fn(x);
        double xi = 1.0;
        for (int i = 0; i < n; ++i) {
            basis[s][i] = cf * kBinom[i] * xi * std::pow(1.0 - x, kCstOrder - i);
            xi *= x;
        }
    }

    double ata[kCstCount][kCstCount] = {};
    std::array<double, kCstCount> atb{};
    for (std::size_t s = 0; s < grid.x.size(); ++s) {
        for (int i = 0; i < n; ++i) {
            atb[i] += basis[s][i] * y[s];
            for (int j = i; j < n; ++j) ata[i][j] += basis[s][i] * basis[s][j];
        }
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < i; ++j) ata[i][j] = ata[j][i];

    // Cholesky with a tiny diagonal regularizer for safety.
    double chol[kCstCount][kCstCount] = {};
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double sum = ata[i][j];
            for (int k = 0; k < j; ++k) sum -= chol[i][k] * chol[j][k];
            if (i == j) {
                sum += 1e-14;
                if (sum <= 0.0) throw Error("refit_cst: basis Gram matrix not positive definite");
                chol[i][i] = std::sqrt(sum);
            } else {
                chol[i][j] = sum / chol[j][j];
            }
        }
    }
    std::array<double, kCstCount> z{};
    for (int i = 0; i < n; ++i) {
        double sum = atb[i];
        for (int k = 0; k < i; ++k) sum -= chol[i][k] * z[k];
        z[i] = sum / chol[i][i];
    }
    std::array<double, kCstCount> w{};
    for (int i = n - 1; i >= 0; --i) {
        double sum = z[i];
        for (int k = i + 1; k < n; ++k) sum -= chol[k][i] * w[k];
        w[i] = sum / chol[i][i];
    }

    if (rms_out) {
        double sse = 0.0;
        for (std::size_t s = 0; s < grid.x.size(); ++s) {
            double fit = 0.0;
            for (int i = 0; i < n; ++i) fit += basis[s][i] * w[i];
            const double d = fit - y[s];
            sse += d * d;
        }
        *rms_out = std::sqrt(sse / static_cast<double>(grid.x.size()));
    }
    return w;
}

namespace {

double hicks_henne(double x, double center, double width) {
    if (x <= 0.0 || x >= 1.0) return 0.0;
    const double m = std::log(0.5) / std::log(center);
    const double s = std::sin(kPi * std::pow(x, m));
    return std::pow(std::fabs(s), width) * (s >= 0.0 ? 1.0 : -1.0);
}

} // namespace

AirfoilShape perturb_and_refit(const AirfoilShape& baseline, int bump_count,
                               double amplitude, Rng& rng) {
    if (amplitude < 0.0) throw Error("perturb_and_refit: amplitude must be non-negative");
    if (bump_count < 0) throw Error("perturb_and_refit: bump count must be non-negative");
    baseline.validate();

    const StationGrid& grid = station_grid();
    std::vector<double> base_u(grid.x.size()), base_l(grid.x.size());
    for (std::size_t i = 0; i < grid.x.size(); ++i) {
        base_u[i] = surface_y_raw(baseline.upper, grid.x[i]);
        base_l[i] = surface_y_raw(baseline.lower, grid.x[i]);
    }

    constexpr int kMaxTries = 64;
    for (int attempt = 0; attempt < kMaxTries; ++attempt) {
        std::vector<double> yu = base_u;
        std::vector<double> yl = base_l;
        for (int surf = 0; surf < 2; ++surf) {
            std::vector<double>& y = surf == 0 ? yu : yl;
            for (int k = 0; k < bump_count; ++k) {
                const double center = rng.uniform(0.05, 0.95);
                const double width = rng.uniform(0.3, 1.0);
                const double amp = rng.uniform(-amplitude, amplitude);
                for (std::size_t i = 0; i < grid.x.size(); ++i)
                    y[i] += amp * hicks_henne(grid.x[i], center, width);
            }
        }
        double rms_u = 0.0, rms_l = 0.0;
        AirfoilShape out;
        out.upper = refit_cst(yu, &rms_u);
        out.lower = refit_cst(yl, &rms_l);
        out.tc_max = baseline.tc_max;
        if (rms_u <= 5e-3 && rms_l <= 5e-3) return out;
    }
    throw Error("perturb_and_refit: could not fit a perturbed surface within 5e-3 RMS");
}

void write_airfoil_csv(const std::string& path, const AirfoilShape& shape) {
    std::ofstream f(path);
    if (!f) throw Error(msg("cannot open '", path, "' for writing"));
    const StationGrid& grid = station_grid();
    const SurfaceCoords coords = cst_evaluate(shape, grid);
    f << "# ua-dbo airfoil v1\n";
    f.precision(12);
    for (std::size_t i = 0; i < grid.x.size(); ++i) f << grid.x[i] << "," << coords.upper_y[i] << "\n";
    for (std::size_t i = 0; i < grid.x.size(); ++i) f << grid.x[i] << "," << coords.lower_y[i] << "\n";
    if (!f) throw Error(msg("write failed for '", path, "'"));
}

} // namespace uadbo::geom
