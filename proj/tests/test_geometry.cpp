#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "uadbo/geometry.hpp"

using namespace uadbo;
using namespace uadbo::geom;

namespace {
AirfoilShape flat_plate_upper() {
    AirfoilShape s;
    s.upper.fill(1.0);
    s.lower.fill(0.0);
    return s;
}
} // namespace

TEST_CASE("station grid is cosine clustered") {
    const StationGrid& g = station_grid();
    REQUIRE(g.x.size() == 101);
    CHECK(g.x.front() == 0.0);
    CHECK(g.x.back() == 1.0);
    for (std::size_t i = 1; i < g.x.size(); ++i) CHECK(g.x[i] > g.x[i - 1]);
    const double uniform = 1.0 / 100.0;
    CHECK(g.x[1] - g.x[0] < uniform / 4.0);
    CHECK(g.x[100] - g.x[99] < uniform / 4.0);
}

TEST_CASE("cst evaluation basics") {
    SUBCASE("zero coefficients give the zero curve") {
        AirfoilShape s;
        const auto coords = cst_evaluate(s, station_grid());
        for (double y : coords.upper_y) CHECK(y == 0.0);
        for (double y : coords.lower_y) CHECK(y == 0.0);
    }
    SUBCASE("class function vanishes at the leading edge") {
        AirfoilShape s = flat_plate_upper();
        const auto coords = cst_evaluate(s, station_grid());
        CHECK(coords.upper_y.front() == 0.0);
        CHECK(coords.upper_y.back() == 0.0);
    }
    SUBCASE("unit weights reduce to the class function") {
        AirfoilShape s = flat_plate_upper();
        StationGrid g;
        g.x = {0.25};
        const auto coords = cst_evaluate(s, g);
        CHECK(coords.upper_y[0] == doctest::Approx(0.375).epsilon(1e-12));
    }
    SUBCASE("linearity in the coefficients") {
        Rng rng(17);
        AirfoilShape s;
        for (auto& w : s.upper) w = rng.uniform(-0.2, 0.4);
        for (auto& w : s.lower) w = rng.uniform(-0.4, 0.2);
        AirfoilShape s3 = s;
        for (auto& w : s3.upper) w *= 3.0;
        for (auto& w : s3.lower) w *= 3.0;
        const auto a = cst_evaluate(s, station_grid());
        const auto b = cst_evaluate(s3, station_grid());
        for (std::size_t i = 0; i < a.upper_y.size(); ++i) {
            CHECK(b.upper_y[i] == doctest::Approx(3.0 * a.upper_y[i]).epsilon(1e-12));
            CHECK(b.lower_y[i] == doctest::Approx(3.0 * a.lower_y[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("thickness") {
    SUBCASE("zero shape") {
        AirfoilShape s;
        CHECK(thickness_at(s, 0.3) == 0.0);
    }
    SUBCASE("hand value at 15% chord") {
        AirfoilShape s = flat_plate_upper();
        CHECK(thickness_at(s, 0.15) == doctest::Approx(std::sqrt(0.15) * 0.85).epsilon(1e-12));
    }
    SUBCASE("symmetric shape doubles the upper surface") {
        Rng rng(4);
        AirfoilShape s;
        for (int i = 0; i < kCstCount; ++i) {
            s.upper[i] = rng.uniform(0.05, 0.3);
            s.lower[i] = -s.upper[i];
        }
        for (double x : {0.1, 0.3, 0.6, 0.9}) {
            StationGrid g;
            g.x = {x};
            const double yu = cst_evaluate(s, g).upper_y[0];
            CHECK(thickness_at(s, x) == doctest::Approx(2.0 * yu).epsilon(1e-12));
        }
    }
    SUBCASE("max thickness rescale") {
        AirfoilShape s = flat_plate_upper();
        s.tc_max = 0.12;
        CHECK(max_thickness(s) == doctest::Approx(0.12));
        double maxt = 0.0;
        for (double x : station_grid().x) maxt = std::max(maxt, thickness_at(s, x));
        CHECK(maxt == doctest::Approx(0.12).epsilon(1e-12));
    }
    SUBCASE("invalid rescale rejected") {
        AirfoilShape s = flat_plate_upper();
        s.tc_max = 0.3;
        CHECK_THROWS_AS(s.validate(), Error);
    }
}

TEST_CASE("section area") {
    SUBCASE("zero shape") {
        AirfoilShape s;
        CHECK(section_area(s) == 0.0);
    }
    SUBCASE("beta integral of the class function") {
        AirfoilShape s = flat_plate_upper();
        CHECK(std::fabs(section_area(s) - 4.0 / 15.0) < 1e-3);
    }
    SUBCASE("linearity") {
        Rng rng(9);
        AirfoilShape s;
        for (int i = 0; i < kCstCount; ++i) {
            s.upper[i] = rng.uniform(0.05, 0.3);
            s.lower[i] = rng.uniform(-0.3, 0.0);
        }
        AirfoilShape d = s;
        for (auto& w : d.upper) w *= 2.0;
        for (auto& w : d.lower) w *= 2.0;
        CHECK(section_area(d) == doctest::Approx(2.0 * section_area(s)).epsilon(1e-12));
    }
}

TEST_CASE("perturb and refit") {
    AirfoilShape baseline;
    for (int i = 0; i < kCstCount; ++i) {
        baseline.upper[i] = 0.12 + 0.02 * i / 9.0;
        baseline.lower[i] = -0.10 + 0.012 * i;
    }

    SUBCASE("zero amplitude is the identity") {
        Rng rng(1);
        const AirfoilShape p = perturb_and_refit(baseline, 4, 0.0, rng);
        for (int i = 0; i < kCstCount; ++i) {
            CHECK(std::fabs(p.upper[i] - baseline.upper[i]) < 1e-10);
            CHECK(std::fabs(p.lower[i] - baseline.lower[i]) < 1e-10);
        }
    }
    SUBCASE("CST-representable perturbations are recovered exactly") {
        AirfoilShape target = baseline;
        target.upper[3] += 0.013;
        target.lower[6] -= 0.008;
        const auto coords = cst_evaluate(target, station_grid());
        double rms = 0.0;
        const auto wu = refit_cst(coords.upper_y, &rms);
        CHECK(rms < 1e-10);
        const auto wl = refit_cst(coords.lower_y, nullptr);
        for (int i = 0; i < kCstCount; ++i) {
            CHECK(std::fabs(wu[i] - target.upper[i]) < 1e-8);
            CHECK(std::fabs(wl[i] - target.lower[i]) < 1e-8);
        }
    }
    SUBCASE("fixed seed reproduces the sample") {
        Rng a(77), b(77);
        const AirfoilShape pa = perturb_and_refit(baseline, 4, 0.004, a);
        const AirfoilShape pb = perturb_and_refit(baseline, 4, 0.004, b);
        for (int i = 0; i < kCstCount; ++i) {
            CHECK(pa.upper[i] == pb.upper[i]);
            CHECK(pa.lower[i] == pb.lower[i]);
        }
    }
    SUBCASE("refit is a projection") {
        Rng rng(5);
        AirfoilShape p = perturb_and_refit(baseline, 4, 0.004, rng);
        const auto coords = cst_evaluate(p, station_grid());
        const auto wu = refit_cst(coords.upper_y, nullptr);
        for (int i = 0; i < kCstCount; ++i) CHECK(wu[i] == doctest::Approx(p.upper[i]).epsilon(1e-9));
    }
}

TEST_CASE("airfoil csv export") {
    AirfoilShape s = flat_plate_upper();
    const std::string path = "test_airfoil_out.csv";
    write_airfoil_csv(path, s);
    std::ifstream f(path);
    REQUIRE(f.good());
    std::string line;
    std::getline(f, line);
    CHECK(line == "# ua-dbo airfoil v1");
    int rows = 0;
    while (std::getline(f, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 202);
    std::remove(path.c_str());
}
