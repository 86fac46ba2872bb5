#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "uadbo/surrogate.hpp"

using namespace uadbo;
using namespace uadbo::model;

namespace {

data::Dataset small_dataset(int airfoils = 10, int conds = 4, std::uint64_t seed = 5,
                            data::ProblemKind kind = data::ProblemKind::DragDivergence) {
    const auto designs = data::sample_designs(airfoils, seed, {});
    data::DatasetConfig cfg;
    cfg.problem = kind;
    cfg.conditions_per_airfoil = conds;
    if (kind == data::ProblemKind::BuffetOnset) cfg.cruise_cl = 0.70;
    return data::build_dataset(designs, cfg, seed + 1);
}

ModelConfig tiny_config(Mode mode, DecoderKind kind = DecoderKind::Scalar) {
    ModelConfig c;
    c.mode = mode;
    c.decoder = kind;
    c.max_epochs = 8;
    c.patience = 8;
    return c;
}

} // namespace

TEST_CASE("reparameterization") {
    LatentGaussian lat;
    for (int i = 0; i < kLatentDim; ++i) {
        lat.mean[i] = 0.1 * i;
        lat.log_var[i] = 0.0;
    }
    SUBCASE("zero noise returns the mean") {
        std::array<double, kLatentDim> eps{};
        const auto z = reparameterize(lat, eps);
        for (int i = 0; i < kLatentDim; ++i) CHECK(z[i] == doctest::Approx(lat.mean[i]));
    }
    SUBCASE("unit sigma shifts by eps") {
        std::array<double, kLatentDim> eps{};
        eps.fill(1.0);
        const auto z = reparameterize(lat, eps);
        for (int i = 0; i < kLatentDim; ++i) CHECK(z[i] == doctest::Approx(lat.mean[i] + 1.0));
    }
    SUBCASE("monte carlo mean recovers mu") {
        for (int i = 0; i < kLatentDim; ++i) lat.log_var[i] = std::log(0.25); // sigma 0.5
        Rng rng(99);
        const int n = 100000;
        double acc = 0.0;
        for (int k = 0; k < n; ++k) {
            std::array<double, kLatentDim> eps{};
            for (auto& e : eps) e = rng.normal();
            acc += reparameterize(lat, eps)[7];
        }
        acc /= n;
        const double sigma = 0.5;
        CHECK(std::fabs(acc - lat.mean[7]) <= 3.0 * sigma / std::sqrt(static_cast<double>(n)));
    }
}

TEST_CASE("kl divergence against the standard normal") {
    SUBCASE("standard normal latent has zero kl") {
        std::vector<double> mu(5, 0.0), lv(5, 0.0);
        CHECK(kl_std_normal(mu, lv) == doctest::Approx(0.0));
    }
    SUBCASE("unit mean unit sigma contributes one half per dimension") {
        std::vector<double> mu(4, 1.0), lv(4, 0.0);
        CHECK(kl_std_normal(mu, lv) == doctest::Approx(0.5 * 4));
    }
    SUBCASE("non-negative everywhere, zero only at the standard normal") {
        Rng rng(3);
        for (int k = 0; k < 200; ++k) {
            std::vector<double> mu = {rng.uniform(-2, 2)};
            std::vector<double> lv = {rng.uniform(-2, 2)};
            const double kl = kl_std_normal(mu, lv);
            CHECK(kl >= -1e-12);
            if (std::fabs(mu[0]) > 1e-3 || std::fabs(lv[0]) > 1e-3) CHECK(kl > 0.0);
        }
    }
}

TEST_CASE("parameter accounting") {
    ModelConfig ed = tiny_config(Mode::Ed);
    ModelConfig gsed = tiny_config(Mode::Gsed);
    const std::size_t n_ed = member_param_count(ed);
    const std::size_t n_gsed = member_param_count(gsed);
    // The log-variance head is the only extra: 64*18 weights + 18 biases.
    CHECK(n_gsed - n_ed == 64 * kLatentDim + kLatentDim);
}

TEST_CASE("encoder basics") {
    const auto ds = small_dataset(4, 2);
    REQUIRE(!ds.records.empty());
    const auto stats = data::compute_stats(ds.records);
    Member member(tiny_config(Mode::Gsed), 7);

    const diff::Tensor x = make_input(ds.records[0].shape, ds.records[0].cruise, stats);

    SUBCASE("latent dimension is 18 and encoding is deterministic") {
        const auto a = member.encode(diff::constant(x));
        const auto mu_a = member.latent_mu(a.features);
        CHECK(mu_a->shape == std::vector<int>{1, kLatentDim});
        const auto b = member.encode(diff::constant(x));
        const auto mu_b = member.latent_mu(b.features);
        CHECK(mu_a->value == mu_b->value);
    }
    SUBCASE("zero weights reduce the heads to their biases") {
        for (auto& e : member.params().entries)
            for (auto& v : e.node->value) v = 0.0;
        member.params().at("head.mu.b")->value.assign(kLatentDim, 0.25);
        member.params().at("head.logvar.b")->value.assign(kLatentDim, -0.5);
        const auto enc = member.encode(diff::constant(x));
        const auto mu = member.latent_mu(enc.features);
        const auto lv = member.latent_log_var(enc.features);
        for (int i = 0; i < kLatentDim; ++i) {
            CHECK(mu->value[i] == doctest::Approx(0.25));
            CHECK(lv->value[i] == doctest::Approx(-0.5));
        }
    }
    SUBCASE("wrong station count is rejected") {
        CHECK_THROWS_AS(member.encode(diff::constant(diff::Tensor::zeros({1, 6, 50}))), Error);
    }
}

TEST_CASE("field decoder contracts") {
    const auto ds = small_dataset(4, 2, 21, data::ProblemKind::BuffetOnset);
    REQUIRE(!ds.records.empty());
    const auto stats = data::compute_stats(ds.records);

    ModelConfig cfg = tiny_config(Mode::Gsed, DecoderKind::Field);
    Member member(cfg, 3);
    const diff::Tensor x = make_input(ds.records[0].shape, ds.records[0].cruise, stats);
    const auto enc = member.encode(diff::constant(x));

    SUBCASE("skip shapes agree at all three levels and output is 2x101") {
        CHECK(enc.e1->shape == std::vector<int>{1, 16, 25});
        CHECK(enc.e2->shape == std::vector<int>{1, 32, 6});
        CHECK(enc.e3->shape == std::vector<int>{1, 64, 1});
        const auto z = member.latent_mu(enc.features);
        const auto c = diff::constant(diff::Tensor::zeros({1, 1}));
        const auto out = member.decode_field(z, c, enc, 1, Member::BnRun::Eval, nullptr);
        CHECK(out.cp->shape == std::vector<int>{1, 2, geom::kStationCount});
        CHECK(out.cf->shape == std::vector<int>{1, 2, geom::kStationCount});
    }
    SUBCASE("residual learning with a zero decoder returns the cruise fields") {
        for (auto& e : member.params().entries)
            if (e.name.rfind("dcp.", 0) == 0 || e.name.rfind("dcf.", 0) == 0)
                for (auto& v : e.node->value) v = 0.0;
        Checkpoint ckpt;
        ckpt.config = cfg;
        ckpt.stats = stats;
        ckpt.weights = member.params().flatten();
        auto handle = ModelHandle::from_checkpoint(ckpt);
        Predictor pred(handle, ds.records[0].shape, ds.records[0].cruise);
        const auto fields = pred.mean_fields({ds.records[0].cruise.aoa_deg + 1.0});
        for (int i = 0; i < geom::kStationCount; ++i) {
            CHECK(fields[0].cp.upper[i] == doctest::Approx(ds.records[0].cruise.cp.upper[i]).epsilon(1e-9));
            CHECK(fields[0].cf.lower[i] == doctest::Approx(ds.records[0].cruise.cf.lower[i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("gsed loss") {
    const auto ds = small_dataset(6, 3);
    const auto stats = data::compute_stats(ds.records);
    ModelConfig cfg = tiny_config(Mode::Gsed);
    Member member(cfg, 11);
    std::vector<int> batch = {0, 1, 2, 3};

    SUBCASE("deterministic per seed") {
        const double a = gsed_loss(member, ds.records, batch, stats, 4, 1e-5, 9);
        const double b = gsed_loss(member, ds.records, batch, stats, 4, 1e-5, 9);
        CHECK(a == b);
    }
    SUBCASE("beta scales only the kl part") {
        const double l0 = gsed_loss(member, ds.records, batch, stats, 4, 0.0, 9);
        const double l1 = gsed_loss(member, ds.records, batch, stats, 4, 1.0, 9);
        const double l2 = gsed_loss(member, ds.records, batch, stats, 4, 2.0, 9);
        CHECK(l2 - l1 == doctest::Approx(l1 - l0).epsilon(1e-9));
        CHECK(l1 - l0 > 0.0); // kl positive for a random net
    }
    SUBCASE("large N_l converges to the expected reconstruction (beta 0)") {
        const double big = gsed_loss(member, ds.records, batch, stats, 400, 0.0, 1234);
        // Independent oracle: Monte Carlo over N_l = 1 losses.
        const int reps = 150;
        double mean = 0.0, m2 = 0.0;
        for (int k = 0; k < reps; ++k) {
            const double v = gsed_loss(member, ds.records, batch, stats, 1, 0.0, 50000 + k);
            const double d = v - mean;
            mean += d / (k + 1);
            m2 += d * (v - mean);
        }
        const double se = std::sqrt(m2 / (reps - 1) / reps);
        CHECK(std::fabs(big - mean) <= 3.0 * se + 1e-9);
    }
}

TEST_CASE("training") {
    auto ds = small_dataset(24, 8, 31);
    REQUIRE(ds.records.size() >= 150);

    // Linear toy target: cd is an affine map of the target mach.
    for (auto& r : ds.records) r.target.cd = 0.01 + 0.1333 * (r.target.mach - 0.65);

    const auto split = data::split(ds.records, 0.7, 0.15, 3);
    const auto stats = data::compute_stats(ds.records);

    SUBCASE("ed mode recovers a linear map") {
        auto big = small_dataset(40, 10, 31);
        for (auto& r : big.records) r.target.cd = 0.01 + 0.1333 * (r.target.mach - 0.65);
        const auto bsplit = data::split(big.records, 0.82, 0.10, 3);
        const auto bstats = data::compute_stats(big.records);
        ModelConfig cfg = tiny_config(Mode::Ed);
        cfg.max_epochs = 150;
        cfg.patience = 40;
        const auto result = train(cfg, big.records, bsplit.train, bsplit.val, bstats, 77);
        auto handle = ModelHandle::from_checkpoint(result.checkpoint);

        // Recoverability is judged at fresh conditions for training-cloud
        // airfoils: the map is a function of the condition alone.
        double mse = 0.0;
        int n = 0;
        Rng crng(909);
        for (int i : bsplit.train) {
            if (n >= 80) break;
            const auto& r = big.records[i];
            const double mach = crng.uniform(0.66, 0.79);
            Predictor pred(handle, r.shape, r.cruise);
            const double truth = 0.01 + 0.1333 * (mach - 0.65);
            const double err = bstats.norm_cd(pred.mean_cd({mach})[0]) - bstats.norm_cd(truth);
            mse += err * err;
            ++n;
        }
        mse /= n;
        CHECK(mse < 1e-3);
    }
    SUBCASE("identical seeds give byte-identical checkpoints") {
        ModelConfig cfg = tiny_config(Mode::Gsed);
        cfg.max_epochs = 3;
        const auto a = train(cfg, ds.records, split.train, split.val, stats, 5);
        const auto b = train(cfg, ds.records, split.train, split.val, stats, 5);
        CHECK(checkpoint_to_json(a.checkpoint) == checkpoint_to_json(b.checkpoint));
    }
    SUBCASE("returned weights reproduce the best validation loss") {
        ModelConfig cfg = tiny_config(Mode::Gsed);
        cfg.max_epochs = 6;
        const auto result = train(cfg, ds.records, split.train, split.val, stats, 13);
        Member member(cfg, 0);
        member.params().load_flat(result.checkpoint.weights);
        const double val = validation_loss(member, ds.records, split.val, stats, 13);
        CHECK(val == doctest::Approx(result.checkpoint.val_loss).epsilon(1e-12));
    }
    SUBCASE("divergence aborts with diagnostics") {
        ModelConfig cfg = tiny_config(Mode::Gsed);
        cfg.lr.warmup_start = 1e9; // force blowup
        cfg.lr.warmup_end = 1e9;
        CHECK_THROWS_AS(train(cfg, ds.records, split.train, split.val, stats, 2), Error);
    }
}

TEST_CASE("ensemble training") {
    auto ds = small_dataset(10, 4, 17);
    const auto split = data::split(ds.records, 0.7, 0.2, 5);
    const auto stats = data::compute_stats(ds.records);

    SUBCASE("subsample index sets differ pairwise") {
        const auto s0 = ensemble_subsample(split.train, 0, 9);
        const auto s1 = ensemble_subsample(split.train, 1, 9);
        const auto s2 = ensemble_subsample(split.train, 2, 9);
        CHECK(s0.size() == s1.size());
        CHECK(s0 != s1);
        CHECK(s0 != s2);
        CHECK(s1 != s2);
        for (const auto& s : {s0, s1, s2})
            CHECK(s.size() == static_cast<std::size_t>(std::lround(0.9 * split.train.size())));
    }
    SUBCASE("three members with distinct weights") {
        ModelConfig cfg = tiny_config(Mode::Ensemble);
        cfg.ensemble_n = 3;
        cfg.max_epochs = 2;
        const auto results = ensemble_train(cfg, ds.records, split.train, split.val, stats, 21);
        REQUIRE(results.size() == 3);
        std::set<std::string> hashes;
        for (const auto& r : results) hashes.insert(base64_encode_doubles(r.checkpoint.weights));
        CHECK(hashes.size() == 3);
    }
}

TEST_CASE("checkpoint round trip and model handle") {
    const auto ds = small_dataset(8, 3, 41);
    const auto split = data::split(ds.records, 0.7, 0.2, 2);
    const auto stats = data::compute_stats(ds.records);
    ModelConfig cfg = tiny_config(Mode::Gsed);
    cfg.max_epochs = 2;
    const auto result = train(cfg, ds.records, split.train, split.val, stats, 8);

    const std::string text = checkpoint_to_json(result.checkpoint);
    const Checkpoint back = checkpoint_from_json(text);
    CHECK(back.weights == result.checkpoint.weights);
    CHECK(back.config.beta == cfg.beta);
    CHECK(back.val_loss == result.checkpoint.val_loss);

    const std::string path = "test_ckpt_roundtrip.json";
    write_checkpoint(path, result.checkpoint);
    auto handle = ModelHandle::load(path);
    CHECK(handle.mode() == Mode::Gsed);
    std::remove(path.c_str());

    // predictions agree between the trained result and the reloaded handle
    auto fresh = ModelHandle::from_checkpoint(result.checkpoint);
    const auto& r = ds.records[split.test[0]];
    Predictor a(fresh, r.shape, r.cruise);
    Predictor b(handle, r.shape, r.cruise);
    CHECK(a.mean_cd({0.73})[0] == b.mean_cd({0.73})[0]);
}

TEST_CASE("predictor sampling semantics") {
    const auto ds = small_dataset(8, 3, 47);
    const auto split = data::split(ds.records, 0.7, 0.2, 2);
    const auto stats = data::compute_stats(ds.records);

    SUBCASE("gsed draws are seeded and share z across conditions") {
        ModelConfig cfg = tiny_config(Mode::Gsed);
        cfg.max_epochs = 2;
        const auto result = train(cfg, ds.records, split.train, split.val, stats, 3);
        auto handle = ModelHandle::from_checkpoint(result.checkpoint);
        const auto& r = ds.records[0];
        Predictor pred(handle, r.shape, r.cruise);

        const auto m1 = pred.sample_cd({0.72, 0.72, 0.75}, 8, 42);
        const auto m2 = pred.sample_cd({0.72, 0.72, 0.75}, 8, 42);
        CHECK(m1 == m2);
        for (const auto& row : m1) CHECK(row[0] == row[1]); // identical condition, same z
        const auto m3 = pred.sample_cd({0.72, 0.72, 0.75}, 8, 43);
        CHECK(m1 != m3);
    }
    SUBCASE("ed model refuses to sample") {
        ModelConfig cfg = tiny_config(Mode::Ed);
        cfg.max_epochs = 2;
        const auto result = train(cfg, ds.records, split.train, split.val, stats, 3);
        auto handle = ModelHandle::from_checkpoint(result.checkpoint);
        Predictor pred(handle, ds.records[0].shape, ds.records[0].cruise);
        CHECK_THROWS_WITH_AS(pred.resolve_draws(16),
                             doctest::Contains("no uncertainty available"), Error);
    }
}
