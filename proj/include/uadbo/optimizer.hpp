#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "uadbo/objective.hpp"

namespace uadbo::opt {

// ---------------------------------------------------------------------------
// Generic constrained differential evolution (DE/rand/1/bin)
// ---------------------------------------------------------------------------

struct DeConfig {
    double f = 0.5;
    double cr = 0.9;
};

struct DeIndividual {
    std::vector<double> x;
    std::vector<double> objectives;
    double violation = 0.0;
    int meta = -1;                          // caller-side bookkeeping handle
    std::array<int, 3> parents = {-1, -1, -1}; // donor indices of the trial
};

using DeEvalFn = std::function<void(DeIndividual&, std::uint64_t seed)>;

/// a Pareto-dominates b (minimization, equal-length objective vectors).
bool dominates(const std::vector<double>& a, const std::vector<double>& b);

/// Deb's feasibility rules: feasible beats infeasible, infeasible compare by
/// violation, feasible single-objective compare by objective value.
bool deb_better(const DeIndividual& a, const DeIndividual& b);

/// Indices of the non-dominated subset (plain dominance on objectives).
std::vector<int> pareto_front_indices(const std::vector<std::vector<double>>& objectives);

/// Crowding distances within one front; boundary members get +infinity.
std::vector<double> crowding_distance(const std::vector<std::vector<double>>& objectives);

/// NSGA-II style environmental selection with Deb feasibility layering.
std::vector<DeIndividual> nsga2_select(std::vector<DeIndividual> pool, int n);

/// One DE generation: per-parent trial via rand/1/bin (one forced gene),
/// clipped to bounds, evaluated, then selected (greedy Deb replacement for a
/// single objective, pooled NSGA-II selection otherwise).
std::vector<DeIndividual> de_step(const std::vector<DeIndividual>& population,
                                  const DeEvalFn& evaluate,
                                  const std::vector<std::pair<double, double>>& bounds,
                                  const DeConfig& config, Rng& rng, long* eval_counter = nullptr);

/// Two-objective hypervolume against a reference point (minimization).
double hypervolume_2d(const std::vector<std::array<double, 2>>& front,
                      const std::array<double, 2>& ref);

// ---------------------------------------------------------------------------
// Airfoil optimization runs
// ---------------------------------------------------------------------------

struct Individual {
    geom::AirfoilShape shape;
    obj::CandidateEval eval;
    int generation = 0;
    std::array<int, 3> parents = {-1, -1, -1};
    std::uint64_t seed = 0;
    std::optional<std::vector<double>> oracle_objectives;
    std::optional<obj::PerformanceMetrics> oracle_metrics;
};

struct GenerationLog {
    int generation = 0;
    double best_pred = 0.0; // best model-predicted primary objective
    double lb = 0.0, ub = 0.0;
    std::optional<double> oracle_best; // truth value of the model-best member
    std::vector<Individual> population;
};

struct RunConfigSnapshot {
    std::string mode;
    std::string problem;
    std::uint64_t seed = 0;
    int iterations = 50;
    int population = 32;
    int init_population = 64;
    double alpha = 0.9;
    int n_s = 16;
    double de_f = 0.5;
    double de_cr = 0.9;
    double bounds_delta = 0.15;
    double bump_amplitude = 0.004;
    int bump_count = 4;
    bool verify = true;
};

struct OptimizationRun {
    RunConfigSnapshot config;
    std::vector<GenerationLog> generations; // iterations + 1 entries
    std::vector<Individual> pareto;         // final front (or the single best)
    long evaluations = 0;
    long oracle_calls = 0;
    double baseline_value = 0.0; // truth primary objective of the baseline
};

/// Bump-perturbed initial population (member 0 is the baseline itself).
/// Throws when more than half the members fail to trim.
std::vector<Individual> init_population(const obj::Evaluator& evaluator, int size, std::uint64_t seed,
                                        double bump_amplitude = 0.004, int bump_count = 4);

/// Full optimization: trajectory logged per generation; when `verify` is on,
/// every generation's model-best member and the whole final population are
/// re-evaluated with the oracle.
OptimizationRun run(const obj::Evaluator& evaluator, const RunConfigSnapshot& config);

/// Oracle-truth metrics attached to every individual; trim failures stay
/// marked and are excluded from actual-best extraction.
void verify_population(std::vector<Individual>& individuals, const obj::Evaluator& truth);

/// Lowest verified primary objective among trim-ok feasible members.
std::optional<double> actual_best(const std::vector<Individual>& individuals);

/// Serialize a run directory: run.json, trajectory.csv, population_G.jsonl,
/// pareto.csv and best_airfoil.csv.
void write_run_dir(const std::string& dir, const OptimizationRun& run);

} // namespace uadbo::opt
