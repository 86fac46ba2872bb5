#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "uadbo/config.hpp"
#include "uadbo/uq.hpp"

namespace uadbo::cli {

/// Entry point used by the binary; catches Error and prints a
/// machine-readable JSON object on stderr with a nonzero exit status.
int run_cli(int argc, const char* const* argv);

// --- reusable command bodies (also driven by the acceptance suite) ----------

/// Test/train-pool split seeds derive from the dataset seed alone, so every
/// command sees the same partition.
void derive_pool_split(const data::Dataset& ds, double train_fraction,
                       std::vector<int>* pool, std::vector<int>* test);
void derive_cv_split(const data::Dataset& ds, const std::vector<int>& pool,
                     double val_fraction, int run, std::vector<int>* train, std::vector<int>* val);

/// Dataset generation: JSON Lines plus the train-pool stats file. Returns
/// the record count.
int cmd_gen_data(const RunConfig& config, std::uint64_t seed, const std::string& out_path);

std::string stats_path_for(const std::string& dataset_path);

struct TrainOutcome {
    std::vector<model::TrainResult> runs;
    int best_run = 0;
};

/// cv_runs trainings with re-drawn validation subsets and init seeds;
/// best_run minimizes the monitored validation loss.
TrainOutcome cmd_train(const RunConfig& config, const data::Dataset& ds, std::uint64_t seed);

model::EnsembleCheckpoint cmd_train_ensemble(const RunConfig& config, const data::Dataset& ds,
                                             std::uint64_t seed);

/// Fits the calibration factors on the training pool (per-sample cd or
/// per-airfoil mean-drag target) and stores them on the handle.
void cmd_calibrate(model::ModelHandle& handle, const data::Dataset& ds, const RunConfig& config,
                   std::uint64_t seed);

struct EvalReport {
    double mae_all_counts = 0.0;
    double mae_metric_counts = 0.0;
    bool has_uq = false;
    double ece = 0.0;
    uq::Coverage coverage;
    int n_samples = 0;
    int n_airfoils = 0;
};

EvalReport cmd_evaluate_split(model::ModelHandle& handle, const data::Dataset& ds,
                              const std::vector<int>& idx, const RunConfig& config,
                              std::uint64_t seed);

std::string eval_report_json(const EvalReport& train, const EvalReport& test,
                             const RunConfig& config);

/// `repeats` independent optimization runs plus a summary.json in Table-3
/// layout (mean and standard error of the predicted / verified columns).
std::vector<std::string> cmd_optimize(const RunConfig& config, model::ModelHandle* handle,
                                      obj::EvalMode mode, int repeats, std::uint64_t seed,
                                      const std::string& out_dir, int jobs = 1);

struct SweepCell {
    double beta = 0.0;
    int n_l = 1;
    std::vector<double> mae_counts; // per cross-validation run
    std::vector<double> ece;
    double mae_mean = 0.0;
    double ece_mean = 0.0;
};

struct SweepReport {
    std::vector<SweepCell> cells;
    double ed_reference_mae = 0.0; // deterministic-ED test MAE reference line
};

SweepReport cmd_sweep(const RunConfig& config, const data::Dataset& ds,
                      const std::vector<double>& betas, const std::vector<int>& nls,
                      std::uint64_t seed, int jobs = 1);

std::string sweep_report_json(const SweepReport& report);

/// Plot-data extraction from a completed run directory: trajectory.csv,
/// scatter.csv (interval width vs signed error for the initial and final
/// populations) and pareto.csv. Missing oracle values degrade to a partial
/// report with a warning.
void cmd_report(const std::string& run_dir, const std::string& out_dir);

} // namespace uadbo::cli
