#include "uadbo/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace uadbo::opt {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Generic DE core
// ---------------------------------------------------------------------------

bool dominates(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw Error("dominates: objective size mismatch");
    bool strictly = false;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k] > b[k]) return false;
        if (a[k] < b[k]) strictly = true;
    }
    return strictly;
}

bool deb_better(const DeIndividual& a, const DeIndividual& b) {
    const bool fa = a.violation == 0.0, fb = b.violation == 0.0;
    if (fa != fb) return fa;
    if (!fa) return a.violation < b.violation;
    if (a.objectives.size() == 1) return a.objectives[0] < b.objectives[0];
    return dominates(a.objectives, b.objectives);
}

std::vector<int> pareto_front_indices(const std::vector<std::vector<double>>& objectives) {
    std::vector<int> front;
    for (std::size_t i = 0; i < objectives.size(); ++i) {
        bool dominated = false;
        for (std::size_t j = 0; j < objectives.size() && !dominated; ++j)
            if (j != i && dominates(objectives[j], objectives[i])) dominated = true;
        if (!dominated) front.push_back(static_cast<int>(i));
    }
    return front;
}

std::vector<double> crowding_distance(const std::vector<std::vector<double>>& objectives) {
    const int n = static_cast<int>(objectives.size());
    std::vector<double> dist(n, 0.0);
    if (n == 0) return dist;
    const int m = static_cast<int>(objectives[0].size());
    for (int k = 0; k < m; ++k) {
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return objectives[a][k] < objectives[b][k]; });
        dist[order.front()] = std::numeric_limits<double>::infinity();
        dist[order.back()] = std::numeric_limits<double>::infinity();
        const double span = objectives[order.back()][k] - objectives[order.front()][k];
        if (span <= 0.0) continue;
        for (int i = 1; i + 1 < n; ++i)
            dist[order[i]] += (objectives[order[i + 1]][k] - objectives[order[i - 1]][k]) / span;
    }
    return dist;
}

namespace {

/// Fast non-dominated sort; returns fronts as index lists.
std::vector<std::vector<int>> non_dominated_fronts(const std::vector<DeIndividual>& pool,
                                                   const std::vector<int>& idx) {
    const int n = static_cast<int>(idx.size());
    std::vector<int> count(n, 0);
    std::vector<std::vector<int>> dominated_by(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            if (dominates(pool[idx[i]].objectives, pool[idx[j]].objectives))
                dominated_by[i].push_back(j);
            else if (dominates(pool[idx[j]].objectives, pool[idx[i]].objectives))
                ++count[i];
        }
    std::vector<std::vector<int>> fronts;
    std::vector<int> current;
    for (int i = 0; i < n; ++i)
        if (count[i] == 0) current.push_back(i);
    while (!current.empty()) {
        std::vector<int> next;
        for (int i : current)
            for (int j : dominated_by[i])
                if (--count[j] == 0) next.push_back(j);
        std::vector<int> mapped;
        mapped.reserve(current.size());
        for (int i : current) mapped.push_back(idx[i]);
        fronts.push_back(std::move(mapped));
        current = std::move(next);
    }
    return fronts;
}

} // namespace

std::vector<DeIndividual> nsga2_select(std::vector<DeIndividual> pool, int n) {
    if (n <= 0) throw Error("nsga2_select: n must be positive");
    std::vector<int> feasible, infeasible;
    for (std::size_t i = 0; i < pool.size(); ++i)
        (pool[i].violation == 0.0 ? feasible : infeasible).push_back(static_cast<int>(i));

    std::vector<int> chosen;
    if (!feasible.empty()) {
        for (const auto& front : non_dominated_fronts(pool, feasible)) {
            if (static_cast<int>(chosen.size() + front.size()) <= n) {
                chosen.insert(chosen.end(), front.begin(), front.end());
            } else {
                std::vector<std::vector<double>> objs;
                objs.reserve(front.size());
                for (int i : front) objs.push_back(pool[i].objectives);
                const auto dist = crowding_distance(objs);
                std::vector<int> order(front.size());
                std::iota(order.begin(), order.end(), 0);
                std::stable_sort(order.begin(), order.end(),
                                 [&](int a, int b) { return dist[a] > dist[b]; });
                for (int k = 0; static_cast<int>(chosen.size()) < n; ++k)
                    chosen.push_back(front[order[k]]);
            }
            if (static_cast<int>(chosen.size()) >= n) break;
        }
    }
    if (static_cast<int>(chosen.size()) < n) {
        std::stable_sort(infeasible.begin(), infeasible.end(),
                         [&](int a, int b) { return pool[a].violation < pool[b].violation; });
        for (int i : infeasible) {
            if (static_cast<int>(chosen.size()) >= n) break;
            chosen.push_back(i);
        }
    }
    if (static_cast<int>(chosen.size()) < n)
        throw Error("nsga2_select: pool smaller than the requested population");

    std::vector<DeIndividual> out;
    out.reserve(n);
    for (int i : chosen) out.push_back(pool[i]);
    return out;
}

std::vector<DeIndividual> de_step(const std::vector<DeIndividual>& population,
                                  const DeEvalFn& evaluate,
                                  const std::vector<std::pair<double, double>>& bounds,
                                  const DeConfig& config, Rng& rng, long* eval_counter) {
    const int n = static_cast<int>(population.size());
    if (n < 4) throw Error("de_step: population must hold at least 4 members");
    const int dim = static_cast<int>(bounds.size());
    for (const auto& ind : population)
        if (static_cast<int>(ind.x.size()) != dim) throw Error("de_step: genome/bounds size mismatch");

    std::vector<DeIndividual> trials(n);
    for (int i = 0; i < n; ++i) {
        int r1, r2, r3;
        do r1 = static_cast<int>(rng.below(n)); while (r1 == i);
        do r2 = static_cast<int>(rng.below(n)); while (r2 == i || r2 == r1);
        do r3 = static_cast<int>(rng.below(n)); while (r3 == i || r3 == r1 || r3 == r2);

        DeIndividual t;
        t.x.resize(dim);
        t.parents = {r1, r2, r3};
        const int forced = static_cast<int>(rng.below(dim));
        for (int j = 0; j < dim; ++j) {
            const double donor = population[r1].x[j] +
                                 config.f * (population[r2].x[j] - population[r3].x[j]);
            const bool cross = rng.uniform() < config.cr || j == forced;
            double v = cross ? donor : population[i].x[j];
            t.x[j] = std::clamp(v, bounds[j].first, bounds[j].second);
        }
        t.meta = -1;
        trials[i] = std::move(t);
    }

    std::vector<std::uint64_t> seeds(n);
    for (int i = 0; i < n; ++i) seeds[i] = rng.next_u64();
    for (int i = 0; i < n; ++i) {
        evaluate(trials[i], seeds[i]);
        if (eval_counter) ++*eval_counter;
    }

    const int n_obj = static_cast<int>(population[0].objectives.size());
    if (n_obj == 1) {
        std::vector<DeIndividual> next = population;
        for (int i = 0; i < n; ++i)
            if (deb_better(trials[i], next[i])) next[i] = trials[i];
        return next;
    }
    std::vector<DeIndividual> pool = population;
    pool.insert(pool.end(), trials.begin(), trials.end());
    return nsga2_select(std::move(pool), n);
}

double hypervolume_2d(const std::vector<std::array<double, 2>>& front,
                      const std::array<double, 2>& ref) {
    std::vector<std::array<double, 2>> pts;
    for (const auto& p : front)
        if (p[0] < ref[0] && p[1] < ref[1]) pts.push_back(p);
    if (pts.empty()) return 0.0;
    std::sort(pts.begin(), pts.end());
    // Horizontal slab decomposition over the staircase of sweep minima.
    double hv = 0.0;
    double prev_f2 = ref[1];
    for (const auto& p : pts) {
        if (p[1] >= prev_f2) continue; // dominated within the sweep
        hv += (ref[0] - p[0]) * (prev_f2 - p[1]);
        prev_f2 = p[1];
    }
    return hv;
}

// ---------------------------------------------------------------------------
// Airfoil runs
// ---------------------------------------------------------------------------

namespace {

struct Genome {
    bool with_tc = false;
    geom::AirfoilShape base;

    int dim() const { return with_tc ? 21 : 20; }

    std::vector<double> encode(const geom::AirfoilShape& s) const {
        std::vector<double> x(s.upper.begin(), s.upper.end());
        x.insert(x.end(), s.lower.begin(), s.lower.end());
        if (with_tc) x.push_back(s.tc_max.value_or(geom::max_thickness(s)));
        return x;
    }

    geom::AirfoilShape decode(const std::vector<double>& x) const {
        geom::AirfoilShape s;
        std::copy_n(x.begin(), geom::kCstCount, s.upper.begin());
        std::copy_n(x.begin() + geom::kCstCount, geom::kCstCount, s.lower.begin());
        if (with_tc) s.tc_max = x[2 * geom::kCstCount];
        return s;
    }

    std::vector<std::pair<double, double>> bounds(double delta) const {
        std::vector<std::pair<double, double>> b;
        const auto base_x = encode(base);
        for (int j = 0; j < 2 * geom::kCstCount; ++j)
            b.emplace_back(base_x[j] - delta, base_x[j] + delta);
        if (with_tc) {
            const double tc = base_x[2 * geom::kCstCount];
            b.emplace_back(0.96 * tc, 1.04 * tc);
        }
        return b;
    }
};

struct MetaArena {
    std::vector<Individual> items;
    int add(Individual ind) {
        items.push_back(std::move(ind));
        return static_cast<int>(items.size()) - 1;
    }
};

double primary_pred(const obj::CandidateEval& e, data::ProblemKind kind) {
    (void)kind;
    return e.pred_mean; // counts for drag, lift-coefficient units for buffet
}

double truth_primary_metrics(const obj::PerformanceMetrics& m, data::ProblemKind kind) {
    return kind == data::ProblemKind::DragDivergence ? m.cd_bar_counts : m.cl_buffet;
}

/// Index of the member whose model objective is best (Deb-layered).
int best_member(const std::vector<DeIndividual>& pop, data::ProblemKind kind) {
    int best = 0;
    const int key = kind == data::ProblemKind::DragDivergence ? 0 : 1;
    for (std::size_t i = 1; i < pop.size(); ++i) {
        const auto& a = pop[i];
        const auto& b = pop[best];
        const bool fa = a.violation == 0.0, fb = b.violation == 0.0;
        if (fa != fb) {
            if (fa) best = static_cast<int>(i);
        } else if (!fa) {
            if (a.violation < b.violation) best = static_cast<int>(i);
        } else if (a.objectives[key] < b.objectives[key]) {
            best = static_cast<int>(i);
        }
    }
    return best;
}

} // namespace

std::vector<Individual> init_population(const obj::Evaluator& evaluator, int size, std::uint64_t seed,
                                        double bump_amplitude, int bump_count) {
    if (size < 1) throw Error("init_population: size must be positive");
    const Rng root(seed);
    std::vector<Individual> out;
    out.reserve(size);

    geom::AirfoilShape baseline = evaluator.problem().baseline;
    if (evaluator.problem().kind == data::ProblemKind::BuffetOnset && !baseline.tc_max)
        baseline.tc_max = geom::max_thickness(baseline);

    int failures = 0;
    for (int k = 0; k < size; ++k) {
        Individual ind;
        ind.generation = 0;
        ind.seed = root.child(500 + static_cast<std::uint64_t>(k)).next_u64();
        if (k == 0) {
            ind.shape = baseline;
        } else {
            Rng rng = root.child(static_cast<std::uint64_t>(k));
            ind.shape = geom::perturb_and_refit(baseline, bump_count, bump_amplitude, rng);
            if (evaluator.problem().kind == data::ProblemKind::BuffetOnset) {
                // tc jitter within half the band constraint
                const double tc = *baseline.tc_max;
                ind.shape.tc_max = tc + rng.uniform(-0.01, 0.01) * tc;
            }
        }
        ind.eval = evaluator.evaluate(ind.shape, ind.seed);
        if (!ind.eval.trim_ok) ++failures;
        out.push_back(std::move(ind));
    }
    if (2 * failures > size)
        throw Error(msg("init_population: ", failures, " of ", size,
                        " members failed to trim; check the design bounds"));
    return out;
}

OptimizationRun run(const obj::Evaluator& evaluator, const RunConfigSnapshot& config) {
    const auto& problem = evaluator.problem();
    const obj::Evaluator truth(problem, obj::EvalMode::OracleTruth, nullptr);
    const long oracle_calls_at_start = evaluator.oracle_calls();

    OptimizationRun out;
    out.config = config;
    out.config.mode = obj::eval_mode_name(evaluator.mode());
    out.config.problem = data::problem_name(problem.kind);
    out.baseline_value = problem.kind == data::ProblemKind::DragDivergence
                             ? problem.base_cd_bar_counts
                             : problem.base_cl_buffet;

    Genome genome;
    genome.base = problem.baseline;
    genome.with_tc = problem.kind == data::ProblemKind::BuffetOnset;
    if (genome.with_tc && !genome.base.tc_max)
        genome.base.tc_max = geom::max_thickness(genome.base);
    const auto bounds = genome.bounds(config.bounds_delta);

    MetaArena arena;
    int current_gen = 0;
    const DeEvalFn eval_fn = [&](DeIndividual& d, std::uint64_t seed) {
        Individual ind;
        ind.shape = genome.decode(d.x);
        ind.seed = seed;
        ind.generation = current_gen;
        ind.parents = d.parents;
        ind.eval = evaluator.evaluate(ind.shape, seed);
        d.objectives = ind.eval.objectives;
        d.violation = ind.eval.constraints.total_violation();
        d.meta = arena.add(std::move(ind));
    };

    // Initial population
    auto init = init_population(evaluator, config.init_population, config.seed,
                                config.bump_amplitude, config.bump_count);
    out.evaluations += static_cast<long>(init.size());
    std::vector<DeIndividual> pop;
    pop.reserve(init.size());
    for (auto& ind : init) {
        DeIndividual d;
        d.x = genome.encode(ind.shape);
        d.objectives = ind.eval.objectives;
        d.violation = ind.eval.constraints.total_violation();
        d.meta = arena.add(std::move(ind));
        pop.push_back(std::move(d));
    }

    if (config.verify)
        for (auto& d : pop) {
            Individual& ind = arena.items[d.meta];
            const auto t = truth.evaluate(ind.shape, 0);
            if (t.trim_ok) {
                ind.oracle_objectives = t.objectives;
                ind.oracle_metrics = t.metrics;
            }
        }

    auto log_generation = [&](int gen, const std::vector<DeIndividual>& p) {
        GenerationLog log;
        log.generation = gen;
        const int bi = best_member(p, problem.kind);
        Individual& best = arena.items[p[bi].meta];
        log.best_pred = primary_pred(best.eval, problem.kind);
        log.lb = best.eval.pred_lb;
        log.ub = best.eval.pred_ub;
        if (config.verify) {
            if (!best.oracle_objectives) {
                const auto t = truth.evaluate(best.shape, 0);
                if (t.trim_ok) {
                    best.oracle_objectives = t.objectives;
                    best.oracle_metrics = t.metrics;
                }
            }
            if (best.oracle_metrics)
                log.oracle_best = truth_primary_metrics(*best.oracle_metrics, problem.kind);
        }
        log.population.reserve(p.size());
        for (const auto& d : p) log.population.push_back(arena.items[d.meta]);
        out.generations.push_back(std::move(log));
    };

    log_generation(0, pop);

    // Trim to the per-generation population size.
    if (static_cast<int>(pop.size()) > config.population) {
        if (evaluator.objective_count() == 1) {
            std::stable_sort(pop.begin(), pop.end(),
                             [](const DeIndividual& a, const DeIndividual& b) { return deb_better(a, b); });
            pop.resize(config.population);
        } else {
            pop = nsga2_select(std::move(pop), config.population);
        }
    }

    DeConfig de;
    de.f = config.de_f;
    de.cr = config.de_cr;
    Rng rng = Rng(config.seed).child(7);
    for (int gen = 1; gen <= config.iterations; ++gen) {
        current_gen = gen;
        pop = de_step(pop, eval_fn, bounds, de, rng, &out.evaluations);
        log_generation(gen, pop);
    }

    // Final population verification and front extraction.
    auto& final_log = out.generations.back();
    if (config.verify) {
        verify_population(final_log.population, truth);
        // re-sync the arena copies used by the pareto extraction below
    }

    if (evaluator.objective_count() == 1) {
        int bi = best_member(pop, problem.kind);
        out.pareto.push_back(final_log.population[bi]);
    } else {
        std::vector<std::vector<double>> objs;
        std::vector<int> feasible_idx;
        for (std::size_t i = 0; i < final_log.population.size(); ++i) {
            const auto& ind = final_log.population[i];
            if (ind.eval.trim_ok && ind.eval.constraints.feasible()) {
                feasible_idx.push_back(static_cast<int>(i));
                objs.push_back(ind.eval.objectives);
            }
        }
        for (int fi : pareto_front_indices(objs)) out.pareto.push_back(final_log.population[feasible_idx[fi]]);
    }

    out.oracle_calls = (evaluator.oracle_calls() - oracle_calls_at_start) + truth.oracle_calls();
    return out;
}

void verify_population(std::vector<Individual>& individuals, const obj::Evaluator& truth) {
    for (auto& ind : individuals) {
        if (ind.oracle_objectives) continue;
        const auto t = truth.evaluate(ind.shape, 0);
        if (t.trim_ok) {
            ind.oracle_objectives = t.objectives;
            ind.oracle_metrics = t.metrics;
        }
    }
}

std::optional<double> actual_best(const std::vector<Individual>& individuals) {
    std::optional<double> best;
    for (const auto& ind : individuals) {
        if (!ind.oracle_objectives || !ind.eval.trim_ok) continue;
        if (!ind.eval.constraints.feasible()) continue;
        const double v = (*ind.oracle_objectives)[ind.oracle_objectives->size() - 1];
        if (!best || v < *best) best = v;
    }
    return best;
}

// ---------------------------------------------------------------------------
// Run directory serialization
// ---------------------------------------------------------------------------

namespace {

json individual_to_json(const Individual& ind, int index) {
    json j;
    j["index"] = index;
    j["cst_upper"] = ind.shape.upper;
    j["cst_lower"] = ind.shape.lower;
    if (ind.shape.tc_max)
        j["tc_max"] = *ind.shape.tc_max;
    else
        j["tc_max"] = nullptr;
    j["objectives"] = ind.eval.objectives;
    j["violation"] = ind.eval.constraints.total_violation();
    j["feasible"] = ind.eval.trim_ok && ind.eval.constraints.feasible();
    j["pred"] = {{"mean", ind.eval.pred_mean},
                 {"sigma", ind.eval.pred_sigma},
                 {"lb", ind.eval.pred_lb},
                 {"ub", ind.eval.pred_ub}};
    j["provenance"] = {{"generation", ind.generation},
                       {"parents", ind.parents},
                       {"seed", ind.seed}};
    if (ind.oracle_objectives) {
        j["oracle"] = {{"objectives", *ind.oracle_objectives},
                       {"cd_bar_counts", ind.oracle_metrics->cd_bar_counts},
                       {"cl_buffet", ind.oracle_metrics->cl_buffet},
                       {"ld_cruise", ind.oracle_metrics->ld_cruise}};
    }
    return j;
}

} // namespace

void write_run_dir(const std::string& dir, const OptimizationRun& run) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    {
        const auto& last = run.generations.back();
        const double final_pred = last.best_pred;
        json summary{{"final_pred_best", final_pred},
                     {"final_pred_lb", last.lb},
                     {"final_pred_ub", last.ub},
                     {"baseline_value", run.baseline_value},
                     {"evaluations", run.evaluations},
                     {"oracle_calls", run.oracle_calls}};
        if (last.oracle_best) summary["final_oracle_best"] = *last.oracle_best;
        const auto best = actual_best(last.population);
        if (best) {
            const bool drag = run.config.problem == "drag_divergence";
            const double actual = drag ? (*best) : -(*best);
            summary["actual_best_last_pop"] = actual;
            summary["actual_reduction"] =
                drag ? run.baseline_value - actual : actual - run.baseline_value;
        }

        json j{{"format", "ua-dbo-run"},
               {"version", 1},
               {"mode", run.config.mode},
               {"problem", run.config.problem},
               {"seed", run.config.seed},
               {"iterations", run.config.iterations},
               {"population", run.config.population},
               {"init_population", run.config.init_population},
               {"alpha", run.config.alpha},
               {"n_s", run.config.n_s},
               {"de", {{"f", run.config.de_f}, {"cr", run.config.de_cr},
                       {"bounds_delta", run.config.bounds_delta}}},
               {"verify", run.config.verify},
               {"summary", summary}};
        std::ofstream f(dir + "/run.json");
        if (!f) throw Error(msg("cannot write '", dir, "/run.json'"));
        f << j.dump(2) << "\n";
    }

    {
        std::ofstream f(dir + "/trajectory.csv");
        if (!f) throw Error(msg("cannot write '", dir, "/trajectory.csv'"));
        f << "generation,pred_best,lb,ub,oracle_best\n";
        char buf[256];
        for (const auto& g : run.generations) {
            if (g.oracle_best)
                std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g\n", g.generation,
                              g.best_pred, g.lb, g.ub, *g.oracle_best);
            else
                std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,\n", g.generation,
                              g.best_pred, g.lb, g.ub);
            f << buf;
        }
    }

    for (const auto& g : run.generations) {
        std::ofstream f(dir + "/population_" + std::to_string(g.generation) + ".jsonl");
        if (!f) throw Error(msg("cannot write population file in '", dir, "'"));
        for (std::size_t i = 0; i < g.population.size(); ++i)
            f << individual_to_json(g.population[i], static_cast<int>(i)).dump() << "\n";
    }

    {
        std::ofstream f(dir + "/pareto.csv");
        if (!f) throw Error(msg("cannot write '", dir, "/pareto.csv'"));
        f << "f1,f2,oracle_f1,oracle_f2";
        for (int j = 0; j < geom::kCstCount; ++j) f << ",u" << j;
        for (int j = 0; j < geom::kCstCount; ++j) f << ",l" << j;
        f << ",tc_max\n";
        char buf[64];
        for (const auto& ind : run.pareto) {
            const auto& o = ind.eval.objectives;
            std::snprintf(buf, sizeof(buf), "%.10g", o[0]);
            f << buf;
            std::snprintf(buf, sizeof(buf), ",%.10g", o.size() > 1 ? o[1] : 0.0);
            f << buf;
            if (ind.oracle_objectives) {
                const auto& t = *ind.oracle_objectives;
                std::snprintf(buf, sizeof(buf), ",%.10g", t[0]);
                f << buf;
                std::snprintf(buf, sizeof(buf), ",%.10g", t.size() > 1 ? t[1] : 0.0);
                f << buf;
            } else {
                f << ",,";
            }
            for (double v : ind.shape.upper) {
                std::snprintf(buf, sizeof(buf), ",%.10g", v);
                f << buf;
            }
            for (double v : ind.shape.lower) {
                std::snprintf(buf, sizeof(buf), ",%.10g", v);
                f << buf;
            }
            if (ind.shape.tc_max) {
                std::snprintf(buf, sizeof(buf), ",%.10g", *ind.shape.tc_max);
                f << buf;
            } else {
                f << ",";
            }
            f << "\n";
        }
    }

    if (!run.pareto.empty())
        geom::write_airfoil_csv(dir + "/best_airfoil.csv", run.pareto.front().shape);
}

} // namespace uadbo::opt
