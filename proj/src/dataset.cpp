#include "uadbo/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include <json.hpp>

namespace uadbo::data {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Design-of-experiments sampling
// ---------------------------------------------------------------------------

std::vector<geom::AirfoilShape> sample_designs(int count, std::uint64_t seed,
                                               const LhsBounds& bounds) {
    if (count < 1) throw Error("sample_designs: count must be >= 1");
    if (!(bounds.upper_max > bounds.upper_min) || !(bounds.lower_max > bounds.lower_min))
        throw Error("sample_designs: degenerate coefficient bounds");

    Rng rng(seed);
    std::vector<geom::AirfoilShape> designs(count);

    // One independent stratum permutation per coordinate.
    std::vector<int> perm(count);
    for (int dim = 0; dim < 2 * geom::kCstCount; ++dim) {
        const bool upper = dim < geom::kCstCount;
        const double lo = upper ? bounds.upper_min : bounds.lower_min;
        const double hi = upper ? bounds.upper_max : bounds.lower_max;
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        for (int k = 0; k < count; ++k) {
            const double v = lo + (perm[k] + 0.5) / count * (hi - lo);
            if (upper)
                designs[k].upper[dim] = v;
            else
                designs[k].lower[dim - geom::kCstCount] = v;
        }
    }
    return designs;
}

// ---------------------------------------------------------------------------
// Record generation
// ---------------------------------------------------------------------------

const char* problem_name(ProblemKind kind) {
    return kind == ProblemKind::DragDivergence ? "drag_divergence" : "buffet_onset";
}

ProblemKind problem_from_name(const std::string& name) {
    if (name == "drag_divergence") return ProblemKind::DragDivergence;
    if (name == "buffet_onset") return ProblemKind::BuffetOnset;
    throw Error(msg("unknown problem kind '", name, "'"));
}

Dataset build_dataset(const std::vector<geom::AirfoilShape>& designs, const DatasetConfig& config,
                      std::uint64_t seed) {
    if (config.conditions_per_airfoil < 0)
        throw Error("build_dataset: conditions-per-airfoil must be >= 0");

    Dataset ds;
    ds.config = config;
    ds.seed = seed;
    const Rng root(seed);
    int skipped = 0;

    for (std::size_t a = 0; a < designs.size(); ++a) {
        Rng rng = root.child(a);
        const auto& shape = designs[a];

        oracle::OracleResult cruise;
        try {
            cruise = oracle::evaluate(shape, oracle::OperatingCondition::at_cl(config.cruise_mach, config.cruise_cl),
                                      config.oracle_config);
        } catch (const TrimFailure&) {
            ++skipped;
            log_debug("airfoil ", a, ": cruise trim failed, airfoil skipped");
            continue;
        }

        ConditionSample cruise_sample;
        cruise_sample.mach = config.cruise_mach;
        cruise_sample.cl = config.cruise_cl;
        cruise_sample.aoa_deg = cruise.aoa_deg;
        cruise_sample.cd = cruise.cd;
        cruise_sample.cp = cruise.cp;
        cruise_sample.cf = cruise.cf;

        for (int j = 0; j < config.conditions_per_airfoil; ++j) {
            oracle::OperatingCondition cond;
            if (config.problem == ProblemKind::DragDivergence) {
                cond = oracle::OperatingCondition::at_cl(rng.uniform(config.mach_min, config.mach_max),
                                                         config.cruise_cl);
            } else {
                const double aoa = cruise.aoa_deg + rng.uniform(config.daoa_min, config.daoa_max);
                cond = oracle::OperatingCondition::at_aoa(config.cruise_mach, aoa);
            }
            try {
                const auto r = oracle::evaluate(shape, cond, config.oracle_config);
                SampleRecord rec;
                rec.airfoil_id = static_cast<int>(a);
                rec.shape = shape;
                rec.cruise = cruise_sample;
                rec.target.mach = cond.mach;
                rec.target.cl = r.cl;
                rec.target.aoa_deg = r.aoa_deg;
                rec.target.cd = r.cd;
                rec.target.cp = r.cp;
                rec.target.cf = r.cf;
                ds.records.push_back(std::move(rec));
            } catch (const TrimFailure&) {
                ++skipped;
            }
        }
    }
    if (skipped > 0) log_info("build_dataset: ", skipped, " conditions skipped (trim failures)");
    return ds;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

namespace {

std::vector<int> distinct_airfoils(const std::vector<SampleRecord>& records) {
    std::set<int> ids;
    for (const auto& r : records) ids.insert(r.airfoil_id);
    return {ids.begin(), ids.end()};
}

std::vector<int> records_of(const std::vector<SampleRecord>& records, const std::set<int>& ids) {
    std::vector<int> out;
    for (std::size_t i = 0; i < records.size(); ++i)
        if (ids.count(records[i].airfoil_id)) out.push_back(static_cast<int>(i));
    return out;
}

} // namespace

void split_pool(const std::vector<SampleRecord>& records, double train_fraction,
                std::uint64_t seed, std::vector<int>* pool_out, std::vector<int>* test_out) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw Error("split: train fraction must lie in (0,1)");
    std::vector<int> ids = distinct_airfoils(records);
    if (ids.size() < 2) throw Error("split: need at least 2 airfoils");
    Rng rng(seed);
    rng.shuffle(ids);
    const std::size_t n_pool = std::min(ids.size() - 1,
        std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(train_fraction * ids.size()))));
    const std::set<int> pool_ids(ids.begin(), ids.begin() + n_pool);
    const std::set<int> test_ids(ids.begin() + n_pool, ids.end());
    *pool_out = records_of(records, pool_ids);
    *test_out = records_of(records, test_ids);
}

void draw_validation(const std::vector<SampleRecord>& records, const std::vector<int>& pool,
                     double val_fraction_of_train, std::uint64_t seed,
                     std::vector<int>* train_out, std::vector<int>* val_out) {
    if (!(val_fraction_of_train > 0.0 && val_fraction_of_train < 1.0))
        throw Error("split: validation fraction must lie in (0,1)");
    std::set<int> pool_ids;
    for (int i : pool) pool_ids.insert(records[i].airfoil_id);
    std::vector<int> ids(pool_ids.begin(), pool_ids.end());
    if (ids.size() < 2) throw Error("split: too few airfoils to draw a validation subset");
    Rng rng(seed);
    rng.shuffle(ids);
    const std::size_t n_val = std::min(ids.size() - 1,
        std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(val_fraction_of_train * ids.size()))));
    const std::set<int> val_ids(ids.begin(), ids.begin() + n_val);
    std::vector<int> train, val;
    for (int i : pool) {
        if (val_ids.count(records[i].airfoil_id))
            val.push_back(i);
        else
            train.push_back(i);
    }
    *train_out = std::move(train);
    *val_out = std::move(val);
}

Split split(const std::vector<SampleRecord>& records, double train_fraction,
            double val_fraction_of_train, std::uint64_t seed) {
    if (distinct_airfoils(records).size() < 3)
        throw Error("split: need at least 3 airfoils for three nonempty parts");
    Split s;
    std::vector<int> pool;
    split_pool(records, train_fraction, seed, &pool, &s.test);
    draw_validation(records, pool, val_fraction_of_train, Rng(seed).child(1).next_u64(),
                    &s.train, &s.val);
    if (s.train.empty() || s.val.empty() || s.test.empty())
        throw Error("split: too few airfoils for three nonempty parts");
    return s;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

namespace {

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    void take(double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void take(const std::vector<double>& vs) {
        for (double v : vs) take(v);
    }
    void finish(const char* channel, double* out_lo, double* out_hi) const {
        if (!(hi > lo)) throw Error(msg("normalization: channel '", channel, "' is constant"));
        *out_lo = lo;
        *out_hi = hi;
    }
};

} // namespace

NormalizationStats compute_stats(const std::vector<SampleRecord>& records,
                                 const std::vector<int>& indices) {
    if (records.empty()) throw Error("normalization: empty record set");
    std::vector<int> idx = indices;
    if (idx.empty()) {
        idx.resize(records.size());
        std::iota(idx.begin(), idx.end(), 0);
    }

    Range cp, cf, geo, mach, aoa, cd;
    for (int i : idx) {
        const SampleRecord& r = records[static_cast<std::size_t>(i)];
        for (const ConditionSample* c : {&r.cruise, &r.target}) {
            cp.take(c->cp.upper);
            cp.take(c->cp.lower);
            cf.take(c->cf.upper);
            cf.take(c->cf.lower);
            mach.take(c->mach);
            aoa.take(c->aoa_deg);
        }
        cd.take(r.target.cd);
        const auto coords = geom::cst_evaluate(r.shape, geom::station_grid());
        geo.take(coords.upper_y);
        geo.take(coords.lower_y);
    }

    NormalizationStats s;
    cp.finish("cp", &s.cp_min, &s.cp_max);
    cf.finish("cf", &s.cf_min, &s.cf_max);
    geo.finish("geometry-y", &s.geom_min, &s.geom_max);
    if (mach.hi > mach.lo) {
        mach.finish("mach", &s.mach_min, &s.mach_max);
    } else {
        // Buffet-flavor datasets hold mach fixed; the channel is unused by
        // the field task, so give it a harmless window instead of failing.
        s.mach_min = mach.lo - 0.075;
        s.mach_max = mach.hi + 0.075;
        log_debug("normalization: constant mach channel widened to [",
                  s.mach_min, ", ", s.mach_max, "]");
    }
    aoa.finish("aoa", &s.aoa_min, &s.aoa_max);
    cd.finish("cd", &s.cd_min, &s.cd_max);
    return s;
}

std::vector<SampleRecord> apply_normalization(const std::vector<SampleRecord>& records,
                                              const NormalizationStats& stats) {
    std::vector<SampleRecord> out = records;
    auto map_vec = [](std::vector<double>& v, auto&& f) {
        for (double& x : v) x = f(x);
    };
    for (auto& r : out) {
        for (ConditionSample* c : {&r.cruise, &r.target}) {
            map_vec(c->cp.upper, [&](double v) { return stats.norm_cp(v); });
            map_vec(c->cp.lower, [&](double v) { return stats.norm_cp(v); });
            map_vec(c->cf.upper, [&](double v) { return stats.norm_cf(v); });
            map_vec(c->cf.lower, [&](double v) { return stats.norm_cf(v); });
            c->mach = stats.norm_mach(c->mach);
            c->aoa_deg = stats.norm_aoa(c->aoa_deg);
        }
        r.cruise.cd = stats.norm_cd(r.cruise.cd);
        r.target.cd = stats.norm_cd(r.target.cd);
    }
    return out;
}

std::pair<std::vector<SampleRecord>, NormalizationStats>
normalize(const std::vector<SampleRecord>& records) {
    NormalizationStats stats = compute_stats(records);
    return {apply_normalization(records, stats), stats};
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

json field_to_json(const oracle::SurfaceField& f) {
    return json{{"upper", f.upper}, {"lower", f.lower}};
}

oracle::SurfaceField field_from_json(const json& j) {
    oracle::SurfaceField f;
    f.upper = j.at("upper").get<std::vector<double>>();
    f.lower = j.at("lower").get<std::vector<double>>();
    return f;
}

json condition_to_json(const ConditionSample& c, bool with_cd) {
    json j{{"mach", c.mach}, {"cl", c.cl}, {"aoa", c.aoa_deg},
           {"cp", field_to_json(c.cp)}, {"cf", field_to_json(c.cf)}};
    if (with_cd) j["cd"] = c.cd;
    return j;
}

ConditionSample condition_from_json(const json& j) {
    ConditionSample c;
    c.mach = j.at("mach").get<double>();
    c.cl = j.at("cl").get<double>();
    c.aoa_deg = j.at("aoa").get<double>();
    c.cd = j.value("cd", 0.0);
    c.cp = field_from_json(j.at("cp"));
    c.cf = field_from_json(j.at("cf"));
    return c;
}

} // namespace

void write_dataset(const std::string& path, const Dataset& dataset) {
    std::ofstream f(path);
    if (!f) throw Error(msg("cannot open '", path, "' for writing"));

    json header{{"format", "ua-dbo-dataset"},
                {"version", 1},
                {"seed", dataset.seed},
                {"problem", problem_name(dataset.config.problem)},
                {"cruise_mach", dataset.config.cruise_mach},
                {"cruise_cl", dataset.config.cruise_cl},
                {"conditions_per_airfoil", dataset.config.conditions_per_airfoil}};
    f << header.dump() << "\n";

    for (const auto& r : dataset.records) {
        json j;
        j["airfoil_id"] = r.airfoil_id;
        j["cst_upper"] = r.shape.upper;
        j["cst_lower"] = r.shape.lower;
        if (r.shape.tc_max)
            j["tc_max"] = *r.shape.tc_max;
        else
            j["tc_max"] = nullptr;
        j["cruise"] = condition_to_json(r.cruise, /*with_cd=*/false);
        j["target"] = condition_to_json(r.target, /*with_cd=*/true);
        f << j.dump() << "\n";
    }
    if (!f) throw Error(msg("write failed for '", path, "'"));
}

Dataset read_dataset(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(msg("cannot open '", path, "'"));
    std::string line;
    if (!std::getline(f, line)) throw Error(msg("dataset '", path, "' is empty"));
    json header = json::parse(line);
    if (header.value("format", "") != "ua-dbo-dataset" || header.value("version", 0) != 1)
        throw Error(msg("dataset '", path, "' has an unsupported header"));

    Dataset ds;
    ds.seed = header.value("seed", 0ULL);
    ds.config.problem = problem_from_name(header.value("problem", "drag_divergence"));
    ds.config.cruise_mach = header.value("cruise_mach", 0.73);
    ds.config.cruise_cl = header.value("cruise_cl", 0.824);
    ds.config.conditions_per_airfoil = header.value("conditions_per_airfoil", 0);

    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        SampleRecord r;
        r.airfoil_id = j.at("airfoil_id").get<int>();
        const auto cu = j.at("cst_upper").get<std::vector<double>>();
        const auto cl = j.at("cst_lower").get<std::vector<double>>();
        if (cu.size() != geom::kCstCount || cl.size() != geom::kCstCount)
            throw Error("dataset record: coefficient count must be 10 per surface");
        std::copy(cu.begin(), cu.end(), r.shape.upper.begin());
        std::copy(cl.begin(), cl.end(), r.shape.lower.begin());
        if (!j.at("tc_max").is_null()) r.shape.tc_max = j.at("tc_max").get<double>();
        r.cruise = condition_from_json(j.at("cruise"));
        r.target = condition_from_json(j.at("target"));
        ds.records.push_back(std::move(r));
    }
    return ds;
}

std::string stats_to_json(const NormalizationStats& s) {
    json j{{"cp", {{"min", s.cp_min}, {"max", s.cp_max}}},
           {"cf", {{"min", s.cf_min}, {"max", s.cf_max}}},
           {"geometry_y", {{"min", s.geom_min}, {"max", s.geom_max}}},
           {"mach", {{"min", s.mach_min}, {"max", s.mach_max}}},
           {"aoa", {{"min", s.aoa_min}, {"max", s.aoa_max}}},
           {"cd", {{"min", s.cd_min}, {"max", s.cd_max}}}};
    return j.dump(2);
}

NormalizationStats stats_from_json(const std::string& text) {
    json j = json::parse(text);
    NormalizationStats s;
    auto get = [&](const char* key, double* lo, double* hi) {
        *lo = j.at(key).at("min").get<double>();
        *hi = j.at(key).at("max").get<double>();
        if (!(*hi > *lo)) throw Error(msg("stats: channel '", key, "' has max <= min"));
    };
    get("cp", &s.cp_min, &s.cp_max);
    get("cf", &s.cf_min, &s.cf_max);
    get("geometry_y", &s.geom_min, &s.geom_max);
    get("mach", &s.mach_min, &s.mach_max);
    get("aoa", &s.aoa_min, &s.aoa_max);
    get("cd", &s.cd_min, &s.cd_max);
    return s;
}

void write_stats(const std::string& path, const NormalizationStats& stats) {
    std::ofstream f(path);
    if (!f) throw Error(msg("cannot open '", path, "' for writing"));
    f << stats_to_json(stats) << "\n";
    if (!f) throw Error(msg("write failed for '", path, "'"));
}

NormalizationStats read_stats(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(msg("cannot open '", path, "'"));
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return stats_from_json(text);
}

} // namespace uadbo::data
