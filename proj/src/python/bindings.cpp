#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "uadbo/cli.hpp"
#include "uadbo/objective.hpp"
#include "uadbo/optimizer.hpp"
#include "uadbo/oracle.hpp"
#include "uadbo/uq.hpp"

namespace py = pybind11;
using namespace uadbo;

namespace {

struct PredictionSummary {
    double mean, sigma, lb, ub;
};

/// Mean-drag prediction for a shape from a stored checkpoint: the cruise
/// state is evaluated with the built-in oracle and fed to the surrogate as
/// the prior, mirroring the optimization pipeline.
PredictionSummary predict_cdbar(const std::string& ckpt_path, const geom::AirfoilShape& shape,
                                double cruise_mach, double cruise_cl, int n_s,
                                std::uint64_t seed, double alpha) {
    auto handle = model::ModelHandle::load(ckpt_path);
    const auto cruise = oracle::evaluate(shape, oracle::OperatingCondition::at_cl(cruise_mach, cruise_cl));
    data::ConditionSample cs;
    cs.mach = cruise_mach;
    cs.cl = cruise_cl;
    cs.aoa_deg = cruise.aoa_deg;
    cs.cd = cruise.cd;
    cs.cp = cruise.cp;
    cs.cf = cruise.cf;

    if (!handle.probabilistic()) {
        model::Predictor pred(handle, shape, cs);
        const double bar = obj::mean_drag(pred.mean_cd(obj::mach_sweep())) * 1e4;
        return {bar, 0.0, bar, bar};
    }
    const auto dist = uq::propagate(handle, shape, cs, obj::mach_sweep(),
                                    [](const std::vector<double>& row) {
                                        return obj::mean_drag(row) * 1e4;
                                    },
                                    n_s, seed);
    uq::CalibrationFactors factors;
    factors.kappa_l = handle.calibration.kappa_l;
    factors.kappa_u = handle.calibration.kappa_u;
    const auto ci = uq::interval(dist, alpha, factors);
    return {dist.mean, dist.stdev, ci.lb, ci.ub};
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "uncertainty-aware data-based airfoil optimization core";

    py::class_<geom::AirfoilShape>(m, "AirfoilShape")
        .def(py::init<>())
        .def_readwrite("upper", &geom::AirfoilShape::upper)
        .def_readwrite("lower", &geom::AirfoilShape::lower)
        .def_readwrite("tc_max", &geom::AirfoilShape::tc_max)
        .def("__repr__", [](const geom::AirfoilShape& s) {
            return "AirfoilShape(tc_max=" +
                   (s.tc_max ? std::to_string(*s.tc_max) : std::string("None")) + ")";
        });

    m.def("default_baseline", &obj::default_baseline);
    m.def("station_grid", [] { return geom::station_grid().x; });
    m.def("cst_evaluate", [](const geom::AirfoilShape& s) {
        const auto c = geom::cst_evaluate(s, geom::station_grid());
        return py::make_tuple(c.upper_y, c.lower_y);
    });
    m.def("thickness_at", &geom::thickness_at, py::arg("shape"), py::arg("x"));
    m.def("max_thickness", &geom::max_thickness);
    m.def("section_area", &geom::section_area);
    m.def("perturb_and_refit", [](const geom::AirfoilShape& baseline, int bumps, double amplitude,
                                  std::uint64_t seed) {
        Rng rng(seed);
        return geom::perturb_and_refit(baseline, bumps, amplitude, rng);
    }, py::arg("baseline"), py::arg("bumps") = 4, py::arg("amplitude") = 0.004, py::arg("seed") = 1);
    m.def("write_airfoil_csv", &geom::write_airfoil_csv);

    py::class_<oracle::SurfaceField>(m, "SurfaceField")
        .def_readonly("upper", &oracle::SurfaceField::upper)
        .def_readonly("lower", &oracle::SurfaceField::lower);

    py::class_<oracle::OracleResult>(m, "OracleResult")
        .def_readonly("cd", &oracle::OracleResult::cd)
        .def_readonly("cl", &oracle::OracleResult::cl)
        .def_readonly("cm", &oracle::OracleResult::cm)
        .def_readonly("aoa_deg", &oracle::OracleResult::aoa_deg)
        .def_readonly("cp", &oracle::OracleResult::cp)
        .def_readonly("cf", &oracle::OracleResult::cf);

    m.def("oracle_evaluate", [](const geom::AirfoilShape& shape, double mach,
                                std::optional<double> cl, std::optional<double> aoa_deg,
                                double noise) {
        oracle::OperatingCondition cond;
        cond.mach = mach;
        cond.target_cl = cl;
        cond.aoa_deg = aoa_deg;
        oracle::OracleConfig cfg;
        cfg.noise_scale = noise;
        return oracle::evaluate(shape, cond, cfg);
    }, py::arg("shape"), py::arg("mach"), py::arg("cl") = std::nullopt,
       py::arg("aoa_deg") = std::nullopt, py::arg("noise") = 0.0);
    m.def("trim", &oracle::trim, py::arg("shape"), py::arg("mach"), py::arg("target_cl"));
    m.def("lift_curve", &oracle::lift_curve);
    m.def("korn_ma_dd", &oracle::korn_ma_dd);
    m.def("wave_term", &oracle::wave_term);
    m.def("base_drag", &oracle::base_drag);
    m.def("integrate_coefficients", [](const oracle::SurfaceField& cp, const oracle::SurfaceField& cf,
                                       double aoa_deg) {
        const auto c = oracle::integrate_coefficients(cp, cf, aoa_deg);
        return py::make_tuple(c.cl, c.cd, c.cm);
    });

    m.def("sample_designs", [](int count, std::uint64_t seed) {
        return data::sample_designs(count, seed, {});
    }, py::arg("count"), py::arg("seed") = 1);

    m.def("t_quantile", &uq::t_quantile, py::arg("p"), py::arg("dof"));
    m.def("ece_from_coverages", &uq::ece_from_coverages);
    m.def("empirical_quantile", &uq::empirical_quantile);
    m.def("mean_drag", &obj::mean_drag);
    m.def("mach_sweep", [] { return obj::mach_sweep(); });
    m.def("buffet_onset", [](const std::vector<double>& aoa, const std::vector<double>& cl) {
        const auto onset = obj::buffet_onset(aoa, cl);
        return py::make_tuple(onset.aoa_star, onset.cl_buffet);
    });
    m.def("hypervolume_2d", [](const std::vector<std::pair<double, double>>& front,
                               std::pair<double, double> ref) {
        std::vector<std::array<double, 2>> pts;
        for (const auto& p : front) pts.push_back({p.first, p.second});
        return opt::hypervolume_2d(pts, {ref.first, ref.second});
    });
    m.def("kl_std_normal", &model::kl_std_normal);

    py::class_<PredictionSummary>(m, "PredictionSummary")
        .def_readonly("mean", &PredictionSummary::mean)
        .def_readonly("sigma", &PredictionSummary::sigma)
        .def_readonly("lb", &PredictionSummary::lb)
        .def_readonly("ub", &PredictionSummary::ub)
        .def("__repr__", [](const PredictionSummary& p) {
            return "PredictionSummary(mean=" + std::to_string(p.mean) +
                   ", sigma=" + std::to_string(p.sigma) + ")";
        });

    m.def("predict_cdbar", &predict_cdbar, py::arg("checkpoint"), py::arg("shape"),
          py::arg("cruise_mach") = 0.73, py::arg("cruise_cl") = 0.824, py::arg("n_s") = 16,
          py::arg("seed") = 1, py::arg("alpha") = 0.9,
          py::call_guard<py::gil_scoped_release>());

    m.def("run_cli", [](const std::vector<std::string>& args) {
        std::vector<std::string> argv_storage;
        argv_storage.push_back("uadbo");
        argv_storage.insert(argv_storage.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : argv_storage) argv.push_back(a.c_str());
        return cli::run_cli(static_cast<int>(argv.size()), argv.data());
    }, py::call_guard<py::gil_scoped_release>(),
       "Run a CLI command, e.g. run_cli(['gen-data', '--out', 'data.jsonl'])");
}
