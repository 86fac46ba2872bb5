#include "uadbo/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

namespace uadbo::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

template <typename F>
void parallel_for(int n, int jobs, F&& fn) {
    jobs = std::max(1, std::min(jobs, n));
    if (jobs <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t)
        pool.emplace_back([&] {
            for (int i; (i = next.fetch_add(1)) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

double mean_of(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

double stderr_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / (static_cast<double>(v.size()) - 1.0) / static_cast<double>(v.size()));
}

} // namespace

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

void derive_pool_split(const data::Dataset& ds, double train_fraction,
                       std::vector<int>* pool, std::vector<int>* test) {
    data::split_pool(ds.records, train_fraction, Rng(ds.seed).child(3).next_u64(), pool, test);
}

void derive_cv_split(const data::Dataset& ds, const std::vector<int>& pool,
                     double val_fraction, int run, std::vector<int>* train, std::vector<int>* val) {
    data::draw_validation(ds.records, pool, val_fraction,
                          Rng(ds.seed).child(40 + static_cast<std::uint64_t>(run)).next_u64(),
                          train, val);
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

std::string stats_path_for(const std::string& dataset_path) {
    const std::string suffix = ".jsonl";
    if (dataset_path.size() > suffix.size() &&
        dataset_path.compare(dataset_path.size() - suffix.size(), suffix.size(), suffix) == 0)
        return dataset_path.substr(0, dataset_path.size() - suffix.size()) + ".stats.json";
    return dataset_path + ".stats.json";
}

int cmd_gen_data(const RunConfig& config, std::uint64_t seed, const std::string& out_path) {
    const Rng root(seed);
    const auto designs = data::sample_designs(config.dataset_airfoils,
                                              root.child(1).next_u64(), config.lhs);
    data::Dataset ds = data::build_dataset(designs, config.dataset, root.child(2).next_u64());
    ds.seed = seed; // commands re-derive splits from the recorded seed
    data::write_dataset(out_path, ds);

    std::vector<int> pool, test;
    derive_pool_split(ds, config.train_fraction, &pool, &test);
    const auto stats = data::compute_stats(ds.records, pool);
    data::write_stats(stats_path_for(out_path), stats);
    return static_cast<int>(ds.records.size());
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

TrainOutcome cmd_train(const RunConfig& config, const data::Dataset& ds, std::uint64_t seed) {
    if (config.model.mode == model::Mode::Ensemble)
        throw Error("cmd_train: use the ensemble path for ensemble mode");
    std::vector<int> pool, test;
    derive_pool_split(ds, config.train_fraction, &pool, &test);
    const auto stats = data::compute_stats(ds.records, pool);

    TrainOutcome outcome;
    outcome.runs.resize(std::max(1, config.cv_runs));
    const Rng root(seed);
    for (int run = 0; run < static_cast<int>(outcome.runs.size()); ++run) {
        std::vector<int> train_idx, val_idx;
        derive_cv_split(ds, pool, config.val_fraction, run, &train_idx, &val_idx);
        auto result = model::train(config.model, ds.records, train_idx, val_idx, stats,
                                   root.child(100 + static_cast<std::uint64_t>(run)).next_u64());
        result.checkpoint.dataset_seed = ds.seed;
        outcome.runs[run] = std::move(result);
    }
    for (std::size_t run = 1; run < outcome.runs.size(); ++run)
        if (outcome.runs[run].checkpoint.val_loss < outcome.runs[outcome.best_run].checkpoint.val_loss)
            outcome.best_run = static_cast<int>(run);
    return outcome;
}

model::EnsembleCheckpoint cmd_train_ensemble(const RunConfig& config, const data::Dataset& ds,
                                             std::uint64_t seed) {
    std::vector<int> pool, test;
    derive_pool_split(ds, config.train_fraction, &pool, &test);
    const auto stats = data::compute_stats(ds.records, pool);
    std::vector<int> train_idx, val_idx;
    derive_cv_split(ds, pool, config.val_fraction, 0, &train_idx, &val_idx);

    const auto results = model::ensemble_train(config.model, ds.records, train_idx, val_idx,
                                               stats, seed);
    model::EnsembleCheckpoint ens;
    for (const auto& r : results) {
        auto ckpt = r.checkpoint;
        ckpt.dataset_seed = ds.seed;
        ens.members.push_back(std::move(ckpt));
    }
    return ens;
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

/// Canonical per-record draw stream: a record's Monte Carlo draws are the
/// same in calibration and evaluation, which keeps the post-calibration
/// training coverage exact.
std::uint64_t record_draw_seed(const data::Dataset& ds, int record_index) {
    return Rng(ds.seed).child(9100).child(static_cast<std::uint64_t>(record_index)).next_u64();
}

std::uint64_t airfoil_draw_seed(const data::Dataset& ds, int airfoil_id) {
    return Rng(ds.seed).child(9200).child(static_cast<std::uint64_t>(airfoil_id)).next_u64();
}

void cmd_calibrate(model::ModelHandle& handle, const data::Dataset& ds, const RunConfig& config,
                   std::uint64_t seed) {
    if (handle.mode() == model::Mode::Ed)
        throw Error("calibrate: deterministic ED models carry no uncertainty to calibrate");
    (void)seed;

    std::vector<int> pool, test;
    derive_pool_split(ds, config.train_fraction, &pool, &test);

    std::vector<uq::CalibrationSample> samples;
    if (config.calibration_target == "cd") {
        samples.reserve(pool.size());
        for (std::size_t k = 0; k < pool.size(); ++k) {
            const auto& r = ds.records[pool[k]];
            const auto dist = uq::mc_predict(handle, r.shape, r.cruise, r.target.mach, config.n_s,
                                             record_draw_seed(ds, pool[k]));
            uq::CalibrationSample s;
            s.truth = r.target.cd;
            s.mean = dist.mean;
            s.stdev = dist.stdev;
            s.n_s = dist.n_s();
            samples.push_back(s);
        }
    } else {
        // per-airfoil mean drag over the sweep
        std::set<int> seen;
        for (std::size_t k = 0; k < pool.size(); ++k) {
            const auto& r = ds.records[pool[k]];
            if (!seen.insert(r.airfoil_id).second) continue;
            std::vector<double> truth_cds;
            bool ok = true;
            for (double mach : obj::mach_sweep()) {
                try {
                    truth_cds.push_back(
                        oracle::evaluate(r.shape, oracle::OperatingCondition::at_cl(mach, ds.config.cruise_cl),
                                         config.dataset.oracle_config)
                            .cd);
                } catch (const TrimFailure&) {
                    ok = false;
                    break;
                }
            }
            if (!ok) continue;
            const auto dist = uq::propagate(handle, r.shape, r.cruise, obj::mach_sweep(),
                                            [](const std::vector<double>& row) {
                                                return obj::mean_drag(row);
                                            },
                                            config.n_s, airfoil_draw_seed(ds, r.airfoil_id));
            uq::CalibrationSample s;
            s.truth = obj::mean_drag(truth_cds);
            s.mean = dist.mean;
            s.stdev = dist.stdev;
            s.n_s = dist.n_s();
            samples.push_back(s);
        }
    }

    const auto factors = uq::calibrate(samples, config.alpha);
    handle.calibration.kappa_l = factors.kappa_l;
    handle.calibration.kappa_u = factors.kappa_u;
    handle.calibration.alpha = factors.alpha;
    handle.calibration.n_calib = factors.n_calib;
    handle.calibration.target = config.calibration_target;
    handle.calibration.calibrated = true;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

EvalReport cmd_evaluate_split(model::ModelHandle& handle, const data::Dataset& ds,
                              const std::vector<int>& idx, const RunConfig& config,
                              std::uint64_t seed) {
    if (idx.empty()) throw Error("evaluate: empty index set");
    (void)seed;
    EvalReport report;
    report.has_uq = handle.probabilistic();

    std::vector<uq::CalibrationSample> samples;
    double mae_all = 0.0;
    std::set<int> airfoils;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto& r = ds.records[idx[k]];
        airfoils.insert(r.airfoil_id);
        double pred = 0.0;
        if (report.has_uq) {
            const auto dist = uq::mc_predict(handle, r.shape, r.cruise, r.target.mach, config.n_s,
                                             record_draw_seed(ds, idx[k]));
            pred = dist.mean;
            uq::CalibrationSample s;
            s.truth = r.target.cd;
            s.mean = dist.mean;
            s.stdev = dist.stdev;
            s.n_s = dist.n_s();
            samples.push_back(s);
        } else {
            model::Predictor p(handle, r.shape, r.cruise);
            pred = p.mean_cd({r.target.mach})[0];
        }
        mae_all += std::fabs(pred - r.target.cd);
    }
    report.n_samples = static_cast<int>(idx.size());
    report.mae_all_counts = mae_all / static_cast<double>(idx.size()) * 1e4;

    // per-airfoil mean-drag metric
    double mae_metric = 0.0;
    int n_metric = 0;
    std::set<int> seen;
    for (int i : idx) {
        const auto& r = ds.records[i];
        if (!seen.insert(r.airfoil_id).second) continue;
        std::vector<double> truth_cds;
        bool ok = true;
        for (double mach : obj::mach_sweep()) {
            try {
                truth_cds.push_back(
                    oracle::evaluate(r.shape, oracle::OperatingCondition::at_cl(mach, ds.config.cruise_cl),
                                     config.dataset.oracle_config)
                        .cd);
            } catch (const TrimFailure&) {
                ok = false;
                break;
            }
        }
        if (!ok) continue;
        model::Predictor p(handle, r.shape, r.cruise);
        double pred_bar = 0.0;
        if (report.has_uq) {
            const auto matrix = p.sample_cd(obj::mach_sweep(), config.n_s,
                                            airfoil_draw_seed(ds, r.airfoil_id));
            std::vector<double> per_draw(matrix.size());
            for (std::size_t s = 0; s < matrix.size(); ++s) per_draw[s] = obj::mean_drag(matrix[s]);
            pred_bar = mean_of(per_draw);
        } else {
            pred_bar = obj::mean_drag(p.mean_cd(obj::mach_sweep()));
        }
        mae_metric += std::fabs(pred_bar - obj::mean_drag(truth_cds));
        ++n_metric;
    }
    report.n_airfoils = n_metric;
    report.mae_metric_counts = n_metric > 0 ? mae_metric / n_metric * 1e4 : 0.0;

    if (report.has_uq) {
        uq::CalibrationFactors factors;
        factors.kappa_l = handle.calibration.kappa_l;
        factors.kappa_u = handle.calibration.kappa_u;
        factors.alpha = handle.calibration.alpha;
        report.coverage = uq::coverage_report(samples, config.alpha, factors);
        report.ece = uq::ece(samples, factors);
    }
    return report;
}

std::string eval_report_json(const EvalReport& train, const EvalReport& test,
                             const RunConfig& config) {
    auto one = [&](const EvalReport& r) {
        json j{{"mae_all", r.mae_all_counts},
               {"mae_metric", r.mae_metric_counts},
               {"alpha", config.alpha},
               {"n_samples", r.n_samples},
               {"n_airfoils", r.n_airfoils}};
        if (r.has_uq) {
            j["ece"] = r.ece;
            j["coverage"] = {{"below", r.coverage.below},
                             {"inside", r.coverage.inside},
                             {"above", r.coverage.above}};
        } else {
            j["ece"] = nullptr;
            j["coverage"] = nullptr;
        }
        return j;
    };
    json j{{"format", "ua-dbo-metrics"}, {"version", 1},
           {"train", one(train)}, {"test", one(test)}};
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// optimize
// ---------------------------------------------------------------------------

std::vector<std::string> cmd_optimize(const RunConfig& config, model::ModelHandle* handle,
                                      obj::EvalMode mode, int repeats, std::uint64_t seed,
                                      const std::string& out_dir, int jobs) {
    if (repeats < 1) throw Error("optimize: repeats must be >= 1");
    if (mode == obj::EvalMode::UaDbo) {
        if (!handle) throw Error("optimize: ua-dbo requires a model checkpoint");
        if (!handle->calibration.calibrated)
            throw Error("optimize: ua-dbo requires a calibrated model (run calibrate first)");
    }
    if (mode == obj::EvalMode::Dbo && !handle) throw Error("optimize: dbo requires a model checkpoint");

    const auto problem = obj::make_problem(config.dataset.problem, config.baseline,
                                           config.dataset.cruise_mach, config.dataset.cruise_cl,
                                           config.dataset.oracle_config);
    fs::create_directories(out_dir);

    const bool drag = config.dataset.problem == data::ProblemKind::DragDivergence;
    std::vector<std::string> dirs(repeats);
    std::vector<json> run_rows(repeats);
    std::vector<double> preds, oracle_evals, errors, actual_bests, pred_reds, actual_reds;
    std::mutex agg_mutex;

    parallel_for(repeats, jobs, [&](int r) {
        obj::Evaluator evaluator(problem, mode, handle, config.alpha, config.n_s);
        opt::RunConfigSnapshot rc = config.optimizer;
        rc.alpha = config.alpha;
        rc.n_s = config.n_s;
        rc.seed = Rng(seed).child(static_cast<std::uint64_t>(r)).next_u64();
        const auto result = opt::run(evaluator, rc);
        const std::string dir = out_dir + "/run_" + std::to_string(r);
        opt::write_run_dir(dir, result);

        const auto& last = result.generations.back();
        json row{{"dir", "run_" + std::to_string(r)},
                 {"seed", rc.seed},
                 {"pred_best", last.best_pred},
                 {"pred_lb", last.lb},
                 {"pred_ub", last.ub}};
        double pred_red = drag ? result.baseline_value - last.best_pred
                               : last.best_pred - result.baseline_value;
        row["pred_reduction"] = pred_red;
        std::optional<double> err;
        if (last.oracle_best) {
            row["oracle_of_pred_best"] = *last.oracle_best;
            err = std::fabs(last.best_pred - *last.oracle_best);
            row["error"] = *err;
        }
        const auto best = opt::actual_best(last.population);
        std::optional<double> actual;
        if (best) {
            actual = drag ? *best : -*best;
            row["actual_best"] = *actual;
            row["actual_reduction"] = drag ? result.baseline_value - *actual
                                           : *actual - result.baseline_value;
        }

        std::lock_guard<std::mutex> lock(agg_mutex);
        dirs[r] = dir;
        run_rows[r] = std::move(row);
        preds.push_back(last.best_pred);
        if (last.oracle_best) oracle_evals.push_back(*last.oracle_best);
        if (err) errors.push_back(*err);
        if (actual) {
            actual_bests.push_back(*actual);
            actual_reds.push_back(drag ? result.baseline_value - *actual : *actual - result.baseline_value);
        }
        pred_reds.push_back(pred_red);
    });

    json summary{{"format", "ua-dbo-optimize-summary"},
                 {"version", 1},
                 {"mode", obj::eval_mode_name(mode)},
                 {"problem", data::problem_name(config.dataset.problem)},
                 {"repeats", repeats},
                 {"seed", seed},
                 {"baseline_value", drag ? problem.base_cd_bar_counts : problem.base_cl_buffet},
                 {"runs", run_rows},
                 {"mean", {{"pred_best", mean_of(preds)},
                           {"oracle_of_pred_best", mean_of(oracle_evals)},
                           {"error", mean_of(errors)},
                           {"actual_best", mean_of(actual_bests)},
                           {"pred_reduction", mean_of(pred_reds)},
                           {"actual_reduction", mean_of(actual_reds)}}},
                 {"stderr", {{"pred_best", stderr_of(preds)},
                             {"oracle_of_pred_best", stderr_of(oracle_evals)},
                             {"error", stderr_of(errors)},
                             {"actual_best", stderr_of(actual_bests)},
                             {"pred_reduction", stderr_of(pred_reds)},
                             {"actual_reduction", stderr_of(actual_reds)}}}};
    std::ofstream f(out_dir + "/summary.json");
    if (!f) throw Error(msg("cannot write '", out_dir, "/summary.json'"));
    f << summary.dump(2) << "\n";
    return dirs;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

SweepReport cmd_sweep(const RunConfig& config, const data::Dataset& ds,
                      const std::vector<double>& betas, const std::vector<int>& nls,
                      std::uint64_t seed, int jobs) {
    if (betas.empty() || nls.empty()) throw Error("sweep: empty grid");
    std::vector<int> pool, test;
    derive_pool_split(ds, config.train_fraction, &pool, &test);
    const auto stats = data::compute_stats(ds.records, pool);
    const int runs = std::max(1, config.cv_runs);

    struct Task {
        double beta;
        int n_l;
        int run;
        bool ed_reference;
    };
    std::vector<Task> tasks;
    for (double b : betas)
        for (int nl : nls)
            for (int r = 0; r < runs; ++r) tasks.push_back({b, nl, r, false});
    for (int r = 0; r < runs; ++r) tasks.push_back({0.0, 1, r, true});

    struct Outcome {
        double mae = 0.0;
        double ece = 0.0;
    };
    std::vector<Outcome> outcomes(tasks.size());

    parallel_for(static_cast<int>(tasks.size()), jobs, [&](int t) {
        const Task& task = tasks[t];
        RunConfig cell = config;
        cell.model.beta = task.beta;
        cell.model.n_l = task.n_l;
        cell.model.mode = task.ed_reference ? model::Mode::Ed : model::Mode::Gsed;

        std::vector<int> train_idx, val_idx;
        derive_cv_split(ds, pool, cell.val_fraction, task.run, &train_idx, &val_idx);
        const std::uint64_t train_seed =
            Rng(seed).child(fnv1a(msg(task.beta, ":", task.n_l, ":", task.run, ":", task.ed_reference)))
                .next_u64();
        const auto result = model::train(cell.model, ds.records, train_idx, val_idx, stats, train_seed);
        auto handle = model::ModelHandle::from_checkpoint(result.checkpoint);

        Outcome& o = outcomes[t];
        if (!task.ed_reference) {
            cmd_calibrate(handle, ds, cell, Rng(train_seed).child(5).next_u64());
            const auto report = cmd_evaluate_split(handle, ds, test, cell,
                                                   Rng(train_seed).child(6).next_u64());
            o.mae = report.mae_all_counts;
            o.ece = report.ece;
        } else {
            const auto report = cmd_evaluate_split(handle, ds, test, cell,
                                                   Rng(train_seed).child(6).next_u64());
            o.mae = report.mae_all_counts;
        }
    });

    SweepReport report;
    std::size_t t = 0;
    for (double b : betas)
        for (int nl : nls) {
            SweepCell cell;
            cell.beta = b;
            cell.n_l = nl;
            for (int r = 0; r < runs; ++r, ++t) {
                cell.mae_counts.push_back(outcomes[t].mae);
                cell.ece.push_back(outcomes[t].ece);
            }
            cell.mae_mean = mean_of(cell.mae_counts);
            cell.ece_mean = mean_of(cell.ece);
            report.cells.push_back(std::move(cell));
        }
    std::vector<double> ed_maes;
    for (int r = 0; r < runs; ++r, ++t) ed_maes.push_back(outcomes[t].mae);
    report.ed_reference_mae = mean_of(ed_maes);
    return report;
}

std::string sweep_report_json(const SweepReport& report) {
    json cells = json::array();
    for (const auto& c : report.cells)
        cells.push_back(json{{"beta", c.beta},
                             {"n_l", c.n_l},
                             {"mae_counts", c.mae_counts},
                             {"ece", c.ece},
                             {"mae_mean", c.mae_mean},
                             {"ece_mean", c.ece_mean}});
    json j{{"format", "ua-dbo-sweep"},
           {"version", 1},
           {"cells", cells},
           {"ed_reference_mae", report.ed_reference_mae}};
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

void cmd_report(const std::string& run_dir, const std::string& out_dir) {
    fs::create_directories(out_dir);

    std::ifstream run_file(run_dir + "/run.json");
    if (!run_file) throw Error(msg("report: '", run_dir, "' has no run.json"));
    const json run_meta = json::parse(run_file);
    const int iterations = run_meta.value("iterations", 0);

    for (const char* name : {"trajectory.csv", "pareto.csv"}) {
        std::ifstream src(run_dir + "/" + name);
        if (!src) {
            log_warn("report: missing ", name, "; partial report");
            continue;
        }
        std::ofstream dst(out_dir + "/" + name);
        dst << src.rdbuf();
    }

    // scatter: interval width vs signed error for initial + final populations
    std::ofstream scatter(out_dir + "/scatter.csv");
    if (!scatter) throw Error(msg("cannot write '", out_dir, "/scatter.csv'"));
    scatter << "interval_width,signed_error,population,index\n";
    bool partial = false;
    char buf[256];
    for (const auto& [gen, tag] : std::vector<std::pair<int, const char*>>{
             {0, "initial"}, {iterations, "final"}}) {
        std::ifstream pf(run_dir + "/population_" + std::to_string(gen) + ".jsonl");
        if (!pf) {
            log_warn("report: missing population_", gen, ".jsonl; partial report");
            partial = true;
            continue;
        }
        std::string line;
        while (std::getline(pf, line)) {
            if (line.empty()) continue;
            const json j = json::parse(line);
            if (!j.contains("oracle")) {
                partial = true;
                continue;
            }
            const double width = j["pred"]["ub"].get<double>() - j["pred"]["lb"].get<double>();
            const bool drag = run_meta.value("problem", "drag_divergence") == "drag_divergence";
            const double pred = j["pred"]["mean"].get<double>();
            const double truth = drag ? j["oracle"]["cd_bar_counts"].get<double>()
                                      : j["oracle"]["cl_buffet"].get<double>();
            std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%s,%d\n", width, truth - pred, tag,
                          j.value("index", 0));
            scatter << buf;
        }
    }
    if (partial) log_warn("report: some members lack oracle verification; partial scatter");
}

// ---------------------------------------------------------------------------
// CLI wiring
// ---------------------------------------------------------------------------

namespace {

RunConfig load_config(const std::string& path) {
    if (path.empty()) return default_config();
    return parse_config_file(path);
}

void print_eval_row(const char* name, const EvalReport& r) {
    std::printf("%-6s mae_cd=%.3f counts  mae_cdbar=%.3f counts", name, r.mae_all_counts,
                r.mae_metric_counts);
    if (r.has_uq)
        std::printf("  ece=%.4f  coverage=%.3f/%.3f/%.3f", r.ece, r.coverage.below,
                    r.coverage.inside, r.coverage.above);
    std::printf("  (n=%d)\n", r.n_samples);
}

} // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"uncertainty-aware data-based airfoil optimization"};
    app.require_subcommand(1);

    std::string config_path, out_path, data_path, ckpt_path, run_dir;
    std::uint64_t seed = 1;
    int jobs = 1;
    std::string mode_flag, opt_mode_flag = "ua-dbo";
    double alpha_flag = -1.0;
    int repeats_flag = -1;
    std::string betas_flag = "0,1e-6,1e-5,1e-4", nls_flag = "1,4,8";
    std::string target_flag;

    app.add_option("--config", config_path, "run configuration file (dotted keys)");
    app.add_option("--seed", seed, "master seed");
    app.add_option("--jobs", jobs, "maximum concurrent trainings/runs");

    auto* gen = app.add_subcommand("gen-data", "sample designs and build the dataset");
    gen->add_option("--out", out_path, "dataset output path (.jsonl)")->required();

    auto* train = app.add_subcommand("train", "train a surrogate with cross-validation");
    train->add_option("--data", data_path, "dataset path")->required();
    train->add_option("--out", out_path, "checkpoint output path")->required();
    train->add_option("--mode", mode_flag, "ed|gsed|ensemble (overrides config)");

    auto* calibrate = app.add_subcommand("calibrate", "fit interval calibration factors");
    calibrate->add_option("--ckpt", ckpt_path, "checkpoint path (updated in place)")->required();
    calibrate->add_option("--data", data_path, "dataset path")->required();
    calibrate->add_option("--alpha", alpha_flag, "confidence level (overrides config)");
    calibrate->add_option("--target", target_flag, "cd|cdbar (overrides config)");

    auto* evaluate = app.add_subcommand("evaluate", "accuracy and calibration metrics");
    evaluate->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    evaluate->add_option("--data", data_path, "dataset path")->required();
    evaluate->add_option("--out", out_path, "metrics JSON output path");
    evaluate->add_option("--alpha", alpha_flag, "confidence level (overrides config)");

    auto* optimize = app.add_subcommand("optimize", "constrained differential-evolution runs");
    optimize->add_option("--ckpt", ckpt_path, "checkpoint path (dbo and ua-dbo modes)");
    optimize->add_option("--out", out_path, "output directory")->required();
    optimize->add_option("--opt-mode", opt_mode_flag, "cfd-oracle|dbo|ua-dbo");
    optimize->add_option("--repeats", repeats_flag, "independent repeats (overrides config)");
    optimize->add_option("--alpha", alpha_flag, "confidence level (overrides config)");

    auto* sweep = app.add_subcommand("sweep", "beta x N_l hyperparameter study");
    sweep->add_option("--data", data_path, "dataset path")->required();
    sweep->add_option("--out", out_path, "sweep report JSON path")->required();
    sweep->add_option("--betas", betas_flag, "comma-separated beta grid");
    sweep->add_option("--nls", nls_flag, "comma-separated N_l grid");

    auto* report = app.add_subcommand("report", "plot data from a completed run directory");
    report->add_option("--run", run_dir, "run directory")->required();
    report->add_option("--out", out_path, "report output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        std::cerr << json{{"error", e.what()}}.dump() << "\n";
        return 1;
    }

    try {
        RunConfig config = load_config(config_path);
        if (alpha_flag > 0.0) {
            config.alpha = alpha_flag;
            config.optimizer.alpha = alpha_flag;
        }
        if (repeats_flag > 0) config.repeats = repeats_flag;
        if (!target_flag.empty()) {
            if (target_flag != "cd" && target_flag != "cdbar")
                throw Error(msg("unknown calibration target '", target_flag, "'"));
            config.calibration_target = target_flag;
        }
        if (!mode_flag.empty()) config.model.mode = model::mode_from_name(mode_flag);

        if (gen->parsed()) {
            const int n = cmd_gen_data(config, seed, out_path);
            std::printf("wrote %d records to %s (stats: %s)\n", n, out_path.c_str(),
                        stats_path_for(out_path).c_str());
        } else if (train->parsed()) {
            const auto ds = data::read_dataset(data_path);
            if (config.model.mode == model::Mode::Ensemble) {
                const auto ens = cmd_train_ensemble(config, ds, seed);
                model::write_ensemble(out_path, ens);
                std::printf("trained %zu ensemble members -> %s\n", ens.members.size(),
                            out_path.c_str());
            } else {
                const auto outcome = cmd_train(config, ds, seed);
                double val_sum = 0.0;
                for (std::size_t r = 0; r < outcome.runs.size(); ++r) {
                    const auto& ck = outcome.runs[r].checkpoint;
                    std::printf("run %zu: epochs=%d val_loss=%.6g wall=%.1fs\n", r, ck.epochs_run,
                                ck.val_loss, outcome.runs[r].wall_seconds);
                    val_sum += ck.val_loss;
                }
                std::printf("mean val_loss=%.6g; best run %d -> %s\n",
                            val_sum / outcome.runs.size(), outcome.best_run, out_path.c_str());
                model::write_checkpoint(out_path, outcome.runs[outcome.best_run].checkpoint);
            }
        } else if (calibrate->parsed()) {
            auto handle = model::ModelHandle::load(ckpt_path);
            const auto ds = data::read_dataset(data_path);
            cmd_calibrate(handle, ds, config, Rng(seed).child(11).next_u64());
            handle.save(ckpt_path);
            std::printf("calibrated: kappa_l=%.4f kappa_u=%.4f alpha=%.2f target=%s (n=%d)\n",
                        handle.calibration.kappa_l, handle.calibration.kappa_u,
                        handle.calibration.alpha, handle.calibration.target.c_str(),
                        handle.calibration.n_calib);
        } else if (evaluate->parsed()) {
            auto handle = model::ModelHandle::load(ckpt_path);
            const auto ds = data::read_dataset(data_path);
            std::vector<int> pool, test;
            derive_pool_split(ds, config.train_fraction, &pool, &test);
            const auto train_report =
                cmd_evaluate_split(handle, ds, pool, config, Rng(seed).child(21).next_u64());
            const auto test_report =
                cmd_evaluate_split(handle, ds, test, config, Rng(seed).child(22).next_u64());
            print_eval_row("train", train_report);
            print_eval_row("test", test_report);
            if (!out_path.empty()) {
                std::ofstream f(out_path);
                if (!f) throw Error(msg("cannot write '", out_path, "'"));
                f << eval_report_json(train_report, test_report, config) << "\n";
            }
        } else if (optimize->parsed()) {
            const obj::EvalMode mode = obj::eval_mode_from_name(opt_mode_flag);
            std::optional<model::ModelHandle> handle;
            if (mode != obj::EvalMode::OracleTruth) {
                if (ckpt_path.empty()) throw Error("optimize: --ckpt required for model-based modes");
                handle = model::ModelHandle::load(ckpt_path);
            }
            const auto dirs = cmd_optimize(config, handle ? &*handle : nullptr, mode,
                                           config.repeats, seed, out_path, jobs);
            std::printf("%zu run(s) under %s\n", dirs.size(), out_path.c_str());
        } else if (sweep->parsed()) {
            const auto ds = data::read_dataset(data_path);
            std::vector<double> betas;
            std::vector<int> nls;
            {
                std::stringstream sb(betas_flag);
                std::string item;
                while (std::getline(sb, item, ',')) betas.push_back(std::stod(item));
                std::stringstream sn(nls_flag);
                while (std::getline(sn, item, ',')) nls.push_back(std::stoi(item));
            }
            const auto rep = cmd_sweep(config, ds, betas, nls, seed, jobs);
            std::ofstream f(out_path);
            if (!f) throw Error(msg("cannot write '", out_path, "'"));
            f << sweep_report_json(rep) << "\n";
            for (const auto& c : rep.cells)
                std::printf("beta=%g N_l=%d: mae=%.3f counts ece=%.4f\n", c.beta, c.n_l,
                            c.mae_mean, c.ece_mean);
            std::printf("ed reference mae=%.3f counts\n", rep.ed_reference_mae);
        } else if (report->parsed()) {
            cmd_report(run_dir, out_path);
            std::printf("report written to %s\n", out_path.c_str());
        }
    } catch (const std::exception& e) {
        std::cerr << json{{"error", e.what()}}.dump() << "\n";
        return 1;
    }
    return 0;
}

} // namespace uadbo::cli
