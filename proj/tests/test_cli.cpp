#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "uadbo/cli.hpp"

using namespace uadbo;
using namespace uadbo::cli;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
    RunConfig c;
    c.dataset_airfoils = 24;
    c.dataset.conditions_per_airfoil = 5;
    c.model.max_epochs = 4;
    c.model.patience = 4;
    c.cv_runs = 1;
    c.optimizer.iterations = 2;
    c.optimizer.population = 8;
    c.optimizer.init_population = 10;
    return c;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("config parsing") {
    SUBCASE("defaults mirror the reference protocol") {
        const RunConfig c = default_config();
        CHECK(c.model.beta == doctest::Approx(1e-5));
        CHECK(c.model.n_l == 4);
        CHECK(c.n_s == 16);
        CHECK(c.alpha == doctest::Approx(0.9));
        CHECK(c.model.batch_size == 16);
        CHECK(c.model.max_epochs == 300);
        CHECK(c.optimizer.population == 32);
        CHECK(c.optimizer.iterations == 50);
        CHECK(c.optimizer.init_population == 64);
        CHECK(c.train_fraction == doctest::Approx(0.82));
        CHECK(c.val_fraction == doctest::Approx(0.10));
    }
    SUBCASE("unknown keys are rejected") {
        RunConfig c;
        CHECK_THROWS_AS(apply_key(c, "training.betaa", "1e-5"), Error);
        CHECK_THROWS_AS(apply_key(c, "nonsense", "1"), Error);
    }
    SUBCASE("values are typed") {
        RunConfig c;
        apply_key(c, "model.beta", "1e-4");
        CHECK(c.model.beta == doctest::Approx(1e-4));
        apply_key(c, "optimizer.verify", "false");
        CHECK(!c.optimizer.verify);
        CHECK_THROWS_AS(apply_key(c, "model.beta", "abc"), Error);
        CHECK_THROWS_AS(apply_key(c, "optimizer.verify", "maybe"), Error);
        apply_key(c, "problem.baseline_upper", "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0");
        CHECK(c.baseline.upper[9] == doctest::Approx(1.0));
        CHECK_THROWS_AS(apply_key(c, "problem.baseline_upper", "1,2,3"), Error);
    }
    SUBCASE("file parsing with comments") {
        const std::string path = "test_cfg.cfg";
        {
            std::ofstream f(path);
            f << "# comment\n\nmodel.beta = 2e-5  # trailing\n  training.batch_size = 8\n";
        }
        const RunConfig c = parse_config_file(path);
        CHECK(c.model.beta == doctest::Approx(2e-5));
        CHECK(c.model.batch_size == 8);
        fs::remove(path);

        {
            std::ofstream f(path);
            f << "model.beta 2e-5\n";
        }
        CHECK_THROWS_AS(parse_config_file(path), Error);
        fs::remove(path);
    }
    SUBCASE("the shipped example config parses and keeps the defaults") {
        const RunConfig c = parse_config_file(std::string(UADBO_SOURCE_DIR) + "/configs/default.cfg");
        const RunConfig d = default_config();
        CHECK(c.model.beta == d.model.beta);
        CHECK(c.model.n_l == d.model.n_l);
        CHECK(c.optimizer.iterations == d.optimizer.iterations);
        CHECK(c.dataset_airfoils == d.dataset_airfoils);
    }
}

TEST_CASE("cli pipeline determinism and contracts") {
    const RunConfig config = tiny_config();
    fs::create_directories("test_cli_work");

    SUBCASE("gen-data is reproducible byte for byte") {
        const int n1 = cmd_gen_data(config, 42, "test_cli_work/a.jsonl");
        const int n2 = cmd_gen_data(config, 42, "test_cli_work/b.jsonl");
        CHECK(n1 == n2);
        CHECK(slurp("test_cli_work/a.jsonl") == slurp("test_cli_work/b.jsonl"));
        CHECK(slurp(stats_path_for("test_cli_work/a.jsonl")) ==
              slurp(stats_path_for("test_cli_work/b.jsonl")));
        CHECK(n1 > 24 * 3); // most conditions trim
    }

    SUBCASE("train, calibrate, evaluate round trip") {
        cmd_gen_data(config, 42, "test_cli_work/d.jsonl");
        const auto ds = data::read_dataset("test_cli_work/d.jsonl");

        auto outcome = cmd_train(config, ds, 7);
        REQUIRE(outcome.runs.size() == 1);
        auto ckpt = outcome.runs[0].checkpoint;
        CHECK(ckpt.dataset_seed == 42);

        // determinism of the checkpoint bytes
        auto outcome2 = cmd_train(config, ds, 7);
        CHECK(model::checkpoint_to_json(ckpt) ==
              model::checkpoint_to_json(outcome2.runs[0].checkpoint));

        auto handle = model::ModelHandle::from_checkpoint(ckpt);
        cmd_calibrate(handle, ds, config, 9);
        CHECK(handle.calibration.calibrated);
        CHECK(handle.calibration.kappa_l > 0);

        // post-calibration training coverage matches the level within 1/N
        std::vector<int> pool, test;
        derive_pool_split(ds, config.train_fraction, &pool, &test);
        const auto report = cmd_evaluate_split(handle, ds, pool, config, 1);
        const double slack = 1.0 / static_cast<double>(pool.size());
        CHECK(std::fabs(report.coverage.inside - 0.9) <= 2.0 * slack + 1e-12);
        CHECK(std::fabs(report.coverage.below - 0.05) <= slack + 1e-12);
        CHECK(std::fabs(report.coverage.above - 0.05) <= slack + 1e-12);

        // evaluate is read-only with respect to the checkpoint
        handle.save("test_cli_work/ckpt.json");
        const std::string before = slurp("test_cli_work/ckpt.json");
        auto reloaded = model::ModelHandle::load("test_cli_work/ckpt.json");
        (void)cmd_evaluate_split(reloaded, ds, test, config, 2);
        reloaded.save("test_cli_work/ckpt2.json");
        CHECK(slurp("test_cli_work/ckpt2.json") == before);

        // calibrating a deterministic model is a mode mismatch
        RunConfig ed_config = config;
        ed_config.model.mode = model::Mode::Ed;
        auto ed_outcome = cmd_train(ed_config, ds, 3);
        auto ed_handle = model::ModelHandle::from_checkpoint(ed_outcome.runs[0].checkpoint);
        CHECK_THROWS_AS(cmd_calibrate(ed_handle, ds, ed_config, 1), Error);
    }

    SUBCASE("optimize emits the requested run directories and summary") {
        cmd_gen_data(config, 42, "test_cli_work/d2.jsonl");
        const auto ds = data::read_dataset("test_cli_work/d2.jsonl");
        auto outcome = cmd_train(config, ds, 7);
        auto handle = model::ModelHandle::from_checkpoint(outcome.runs[0].checkpoint);
        cmd_calibrate(handle, ds, config, 9);

        const auto dirs = cmd_optimize(config, &handle, obj::EvalMode::UaDbo, 2, 5,
                                       "test_cli_work/opt");
        CHECK(dirs.size() == 2);
        for (const auto& d : dirs) {
            CHECK(fs::exists(d + "/run.json"));
            CHECK(fs::exists(d + "/trajectory.csv"));
            CHECK(fs::exists(d + "/pareto.csv"));
        }
        CHECK(fs::exists("test_cli_work/opt/summary.json"));

        // trajectory rows = iterations + 1 (plus header)
        std::ifstream tf(dirs[0] + "/trajectory.csv");
        int lines = 0;
        std::string line;
        while (std::getline(tf, line))
            if (!line.empty()) ++lines;
        CHECK(lines == config.optimizer.iterations + 2);

        // cfd-oracle mode ignores the model argument
        const auto truth_dirs = cmd_optimize(config, nullptr, obj::EvalMode::OracleTruth, 1, 6,
                                             "test_cli_work/opt_truth");
        CHECK(truth_dirs.size() == 1);

        // ua-dbo without calibration is rejected
        auto raw = model::ModelHandle::from_checkpoint(outcome.runs[0].checkpoint);
        CHECK_THROWS_AS(cmd_optimize(config, &raw, obj::EvalMode::UaDbo, 1, 5,
                                     "test_cli_work/opt_bad"),
                        Error);
    }

    SUBCASE("report emits scatter rows for the initial and final populations") {
        cmd_gen_data(config, 42, "test_cli_work/d3.jsonl");
        const auto ds = data::read_dataset("test_cli_work/d3.jsonl");
        auto outcome = cmd_train(config, ds, 7);
        auto handle = model::ModelHandle::from_checkpoint(outcome.runs[0].checkpoint);
        cmd_calibrate(handle, ds, config, 9);
        const auto dirs = cmd_optimize(config, &handle, obj::EvalMode::UaDbo, 1, 8,
                                       "test_cli_work/opt_rep");
        cmd_report(dirs[0], "test_cli_work/rep");
        CHECK(fs::exists("test_cli_work/rep/trajectory.csv"));
        CHECK(fs::exists("test_cli_work/rep/scatter.csv"));
        std::ifstream sf("test_cli_work/rep/scatter.csv");
        int rows = -1; // discount header
        std::string line;
        while (std::getline(sf, line))
            if (!line.empty()) ++rows;
        CHECK(rows == config.optimizer.init_population + config.optimizer.population);

        // report is a pure transform: re-running gives identical bytes
        cmd_report(dirs[0], "test_cli_work/rep2");
        CHECK(slurp("test_cli_work/rep/scatter.csv") == slurp("test_cli_work/rep2/scatter.csv"));
    }

    fs::remove_all("test_cli_work");
}
