#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uadbo/geometry.hpp"
#include "uadbo/oracle.hpp"
#include "uadbo/util.hpp"

namespace uadbo::data {

struct ConditionSample {
    double mach = 0.0;
    double cl = 0.0;
    double aoa_deg = 0.0;
    double cd = 0.0;
    oracle::SurfaceField cp;
    oracle::SurfaceField cf;
};

struct SampleRecord {
    int airfoil_id = 0;
    geom::AirfoilShape shape;
    ConditionSample cruise; // cl is the trim target; cruise cd is not stored on disk
    ConditionSample target;
};

/// Per-channel affine ranges mapping to [-1, 1]. Computed on the training
/// split only and applied unchanged elsewhere.
struct NormalizationStats {
    double cp_min = 0, cp_max = 0;
    double cf_min = 0, cf_max = 0;
    double geom_min = 0, geom_max = 0;
    double mach_min = 0, mach_max = 0;
    double aoa_min = 0, aoa_max = 0;
    double cd_min = 0, cd_max = 0;

    double norm(double v, double lo, double hi) const { return 2.0 * (v - lo) / (hi - lo) - 1.0; }
    double denorm(double t, double lo, double hi) const { return lo + (hi - lo) * 0.5 * (t + 1.0); }

    double norm_cp(double v) const { return norm(v, cp_min, cp_max); }
    double norm_cf(double v) const { return norm(v, cf_min, cf_max); }
    double norm_geom(double v) const { return norm(v, geom_min, geom_max); }
    double norm_mach(double v) const { return norm(v, mach_min, mach_max); }
    double norm_aoa(double v) const { return norm(v, aoa_min, aoa_max); }
    double norm_cd(double v) const { return norm(v, cd_min, cd_max); }
    double denorm_cd(double t) const { return denorm(t, cd_min, cd_max); }
    double denorm_cp(double t) const { return denorm(t, cp_min, cp_max); }
    double denorm_cf(double t) const { return denorm(t, cf_min, cf_max); }
};

struct LhsBounds {
    double upper_min = 0.05, upper_max = 0.35;
    double lower_min = -0.35, lower_max = 0.05;
};

/// Centered Latin hypercube over the 20 CST coefficients: per dimension the
/// strata midpoints are permuted independently.
std::vector<geom::AirfoilShape> sample_designs(int count, std::uint64_t seed,
                                               const LhsBounds& bounds = {});

enum class ProblemKind { DragDivergence, BuffetOnset };

const char* problem_name(ProblemKind kind);
ProblemKind problem_from_name(const std::string& name);

struct DatasetConfig {
    ProblemKind problem = ProblemKind::DragDivergence;
    int conditions_per_airfoil = 10;
    double mach_min = 0.65, mach_max = 0.80; // drag problem: off-design mach window
    double daoa_min = -3.0, daoa_max = 5.0;  // buffet problem: aoa offset window
    double cruise_mach = 0.73;
    double cruise_cl = 0.824;
    oracle::OracleConfig oracle_config;
};

struct Dataset {
    DatasetConfig config;
    std::uint64_t seed = 0;
    std::vector<SampleRecord> records;
};

/// One cruise evaluation per airfoil, one record per off-design condition at
/// the cruise lift coefficient (drag problem) or cruise mach (buffet
/// problem). Trim failures are logged and skipped.
Dataset build_dataset(const std::vector<geom::AirfoilShape>& designs, const DatasetConfig& config,
                      std::uint64_t seed);

// --- splits (by airfoil id; no airfoil spans two parts) ---------------------

struct Split {
    std::vector<int> train; // record indices
    std::vector<int> val;
    std::vector<int> test;
};

/// Airfoil-id partition into a train pool and a held-out test set.
void split_pool(const std::vector<SampleRecord>& records, double train_fraction,
                std::uint64_t seed, std::vector<int>* pool_out, std::vector<int>* test_out);

/// Re-drawable validation subset (by airfoil) from a train pool.
void draw_validation(const std::vector<SampleRecord>& records, const std::vector<int>& pool,
                     double val_fraction_of_train, std::uint64_t seed,
                     std::vector<int>* train_out, std::vector<int>* val_out);

Split split(const std::vector<SampleRecord>& records, double train_fraction,
            double val_fraction_of_train, std::uint64_t seed);

// --- normalization -----------------------------------------------------------

/// Channel ranges over the given record subset (all indices when empty).
/// Throws, naming the channel, when a channel is constant.
NormalizationStats compute_stats(const std::vector<SampleRecord>& records,
                                 const std::vector<int>& indices = {});

/// Spec-shaped convenience: normalized copies plus the stats used.
std::pair<std::vector<SampleRecord>, NormalizationStats>
normalize(const std::vector<SampleRecord>& records);

std::vector<SampleRecord> apply_normalization(const std::vector<SampleRecord>& records,
                                              const NormalizationStats& stats);

// --- persistence -------------------------------------------------------------

void write_dataset(const std::string& path, const Dataset& dataset);
Dataset read_dataset(const std::string& path);

void write_stats(const std::string& path, const NormalizationStats& stats);
NormalizationStats read_stats(const std::string& path);

std::string stats_to_json(const NormalizationStats& stats);
NormalizationStats stats_from_json(const std::string& text);

} // namespace uadbo::data
