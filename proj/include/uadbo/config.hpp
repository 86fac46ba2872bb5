#pragma once

#include <string>

#include "uadbo/dataset.hpp"
#include "uadbo/objective.hpp"
#include "uadbo/optimizer.hpp"
#include "uadbo/surrogate.hpp"

namespace uadbo::cli {

/// Flat dotted-key run configuration; every default mirrors the reference
/// protocol (beta 1e-5, N_l 4, N_s 16, alpha 0.9, batch 16, epochs <= 300,
/// population 32, iterations 50, initial population 64).
struct RunConfig {
    // dataset
    int dataset_airfoils = 200;
    data::DatasetConfig dataset;
    data::LhsBounds lhs;

    // model and training
    model::ModelConfig model;
    double train_fraction = 0.82;
    double val_fraction = 0.10;
    int cv_runs = 3;

    // uncertainty
    int n_s = 16;
    double alpha = 0.9;
    std::string calibration_target = "cd"; // "cd" (per sample) or "cdbar" (per airfoil)

    // problem
    geom::AirfoilShape baseline = obj::default_baseline();

    // optimizer
    opt::RunConfigSnapshot optimizer;
    int repeats = 1;
};

/// Applies `key = value`; throws on unknown keys or malformed values.
void apply_key(RunConfig& config, const std::string& key, const std::string& value);

/// Parses a config file: `key = value` lines, '#' comments, blank lines.
RunConfig parse_config_file(const std::string& path);

RunConfig default_config();

} // namespace uadbo::cli
