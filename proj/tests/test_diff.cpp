#include <doctest.h>

#include <cmath>
#include <functional>

#include "uadbo/diff.hpp"

using namespace uadbo;
using namespace uadbo::diff;

namespace {

// Independent oracle: central finite differences over every scalar in the
// store, against a freshly rebuilt graph per evaluation.
void check_gradients(ParamStore& params, const std::function<NodePtr()>& build,
                     double h = 1e-5, double tol = 1e-4) {
    params.zero_grad();
    NodePtr out = build();
    backward(out);

    for (auto& e : params.entries) {
        if (!e.trainable) continue;
        for (std::size_t i = 0; i < e.node->value.size(); ++i) {
            const double saved = e.node->value[i];
            e.node->value[i] = saved + h;
            const double fp = build()->value[0];
            e.node->value[i] = saved - h;
            const double fm = build()->value[0];
            e.node->value[i] = saved;
            const double fd = (fp - fm) / (2.0 * h);
            const double ad = e.node->grad[i];
            const double denom = std::max({1e-6, std::fabs(fd), std::fabs(ad)});
            INFO("param ", e.name, "[", i, "] ad=", ad, " fd=", fd);
            CHECK(std::fabs(ad - fd) / denom <= tol);
        }
    }
}

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(-scale, scale);
    return t;
}

} // namespace

TEST_CASE("conv1d identity kernel reproduces the signal") {
    auto x = constant(Tensor({1, 1, 5}, {1.0, -2.0, 3.0, 0.5, 4.0}));
    auto w = constant(Tensor({1, 1, 3}, {0.0, 1.0, 0.0}));
    auto b = constant(Tensor::zeros({1}));
    auto y = conv1d(x, w, b, 1, -1);
    REQUIRE(y->shape == std::vector<int>{1, 1, 5});
    for (int i = 0; i < 5; ++i) CHECK(y->value[i] == doctest::Approx(x->value[i]));
}

TEST_CASE("conv1d box kernel with same padding") {
    auto x = constant(Tensor({1, 1, 3}, {1.0, 2.0, 3.0}));
    auto w = constant(Tensor({1, 1, 3}, {1.0, 1.0, 1.0}));
    auto b = constant(Tensor::zeros({1}));
    auto y = conv1d(x, w, b, 1, -1);
    CHECK(y->value[0] == doctest::Approx(3.0));
    CHECK(y->value[1] == doctest::Approx(6.0));
    CHECK(y->value[2] == doctest::Approx(5.0));
}

TEST_CASE("leaky relu definition") {
    auto x = constant(Tensor({1, 3}, {-1.0, 0.0, 2.0}));
    auto y = leaky_relu(x, 0.2);
    CHECK(y->value[0] == doctest::Approx(-0.2));
    CHECK(y->value[1] == doctest::Approx(0.0));
    CHECK(y->value[2] == doctest::Approx(2.0));
}

TEST_CASE("backward of w^2 and of a constant") {
    auto w = variable(Tensor::scalar(3.0));
    auto out = mul(w, w);
    backward(out);
    CHECK(w->grad[0] == doctest::Approx(6.0));

    auto c = constant(Tensor::scalar(7.0));
    auto out2 = mul(c, c);
    CHECK_NOTHROW(backward(out2)); // nothing requires grad; no-op

    auto w2 = variable(Tensor::scalar(2.0));
    auto out3 = add(scale(w2, 0.0), constant(Tensor::scalar(5.0)));
    backward(out3);
    CHECK(w2->grad[0] == doctest::Approx(0.0));
}

TEST_CASE("backward rejects non-scalar outputs") {
    auto w = variable(Tensor({2}, {1.0, 2.0}));
    auto y = scale(w, 2.0);
    CHECK_THROWS_AS(backward(y), Error);
}

TEST_CASE("random two-layer net matches finite differences") {
    Rng rng(42);
    ParamStore params;
    auto w1 = params.add("w1", random_tensor({4, 8}, rng, 0.7));
    auto b1 = params.add("b1", random_tensor({8}, rng, 0.2));
    auto w2 = params.add("w2", random_tensor({8, 1}, rng, 0.7));
    auto b2 = params.add("b2", random_tensor({1}, rng, 0.2));
    Tensor xt = random_tensor({3, 4}, rng);

    auto build = [&]() {
        auto x = constant(xt);
        auto h = leaky_relu(dense(x, w1, b1), 0.2);
        auto y = dense(h, w2, b2);
        return sum_all(square(y));
    };
    check_gradients(params, build);
}

TEST_CASE("gradient check for every layer kind") {
    Rng rng(2024);

    SUBCASE("conv1d strided") {
        ParamStore params;
        auto w = params.add("w", random_tensor({3, 2, 3}, rng));
        auto b = params.add("b", random_tensor({3}, rng, 0.1));
        Tensor xt = random_tensor({2, 2, 9}, rng);
        check_gradients(params, [&] { return sum_all(square(conv1d(constant(xt), w, b, 2, -1))); });
    }
    SUBCASE("conv1d through input") {
        ParamStore params;
        auto x = params.add("x", random_tensor({1, 2, 7}, rng));
        Tensor wt = random_tensor({2, 2, 3}, rng);
        Tensor bt = random_tensor({2}, rng, 0.1);
        check_gradients(params, [&] { return sum_all(square(conv1d(x, constant(wt), constant(bt), 2, -1))); });
    }
    SUBCASE("avgpool1d") {
        ParamStore params;
        auto x = params.add("x", random_tensor({2, 3, 8}, rng));
        check_gradients(params, [&] { return sum_all(square(avgpool1d(x, 2, 2))); });
    }
    SUBCASE("interp_upsample1d") {
        ParamStore params;
        auto x = params.add("x", random_tensor({2, 2, 5}, rng));
        check_gradients(params, [&] { return sum_all(square(interp_upsample1d(x, 3))); });
    }
    SUBCASE("interp_resize1d") {
        ParamStore params;
        auto x = params.add("x", random_tensor({1, 2, 6}, rng));
        check_gradients(params, [&] { return sum_all(square(interp_resize1d(x, 11))); });
    }
    SUBCASE("batchnorm1d training mode") {
        ParamStore params;
        auto x = params.add("x", random_tensor({5, 3}, rng));
        auto gamma = params.add("gamma", random_tensor({3}, rng));
        auto beta = params.add("beta", random_tensor({3}, rng));
        auto rm = params.add("rm", Tensor::zeros({3}), false);
        auto rv = params.add("rv", Tensor::full({3}, 1.0), false);
        check_gradients(params, [&] {
            return sum_all(square(batchnorm1d(x, gamma, beta, rm, rv, true)));
        }, 1e-5, 2e-4);
    }
    SUBCASE("batchnorm1d frozen stats") {
        ParamStore params;
        auto x = params.add("x", random_tensor({4, 2, 5}, rng));
        auto gamma = params.add("gamma", random_tensor({2}, rng));
        auto beta = params.add("beta", random_tensor({2}, rng));
        std::vector<double> mean = {0.1, -0.2}, var = {1.3, 0.8};
        check_gradients(params, [&] {
            return sum_all(square(batchnorm1d_stats(x, gamma, beta, mean, var)));
        });
    }
    SUBCASE("leakyrelu") {
        ParamStore params;
        auto x = params.add("x", random_tensor({3, 4}, rng));
        check_gradients(params, [&] { return sum_all(square(leaky_relu(x, 0.2))); });
    }
    SUBCASE("concat") {
        ParamStore params;
        auto a = params.add("a", random_tensor({2, 3}, rng));
        auto b = params.add("b", random_tensor({2, 2}, rng));
        check_gradients(params, [&] { return sum_all(square(concat({a, b}, 1))); });
    }
    SUBCASE("concat channel axis") {
        ParamStore params;
        auto a = params.add("a", random_tensor({2, 2, 4}, rng));
        auto b = params.add("b", random_tensor({2, 3, 4}, rng));
        check_gradients(params, [&] { return sum_all(square(concat({a, b}, 1))); });
    }
    SUBCASE("flatten and dense") {
        ParamStore params;
        auto x = params.add("x", random_tensor({2, 2, 3}, rng));
        Tensor wt = random_tensor({6, 2}, rng);
        Tensor bt = random_tensor({2}, rng, 0.1);
        check_gradients(params, [&] { return sum_all(square(dense(flatten(x), constant(wt), constant(bt)))); });
    }
    SUBCASE("leaky_clamp") {
        ParamStore params;
        auto x = params.add("x", Tensor({1, 4}, {-15.0, -1.0, 3.0, 11.0}));
        check_gradients(params, [&] { return sum_all(square(leaky_clamp(x, -12.0, 8.0, 0.05))); });
        auto y = leaky_clamp(constant(Tensor({1, 3}, {-20.0, 0.5, 10.0})), -12.0, 8.0, 0.05);
        CHECK(y->value[0] == doctest::Approx(-12.0 + 0.05 * -8.0));
        CHECK(y->value[1] == doctest::Approx(0.5));
        CHECK(y->value[2] == doctest::Approx(8.0 + 0.05 * 2.0));
    }
    SUBCASE("exp and elementwise chain") {
        ParamStore params;
        auto x = params.add("x", random_tensor({2, 3}, rng, 0.5));
        check_gradients(params, [&] {
            auto e = exp_elem(scale(x, 0.5));
            return mean_all(mul(e, add_scalar(x, 1.0)));
        });
    }
    SUBCASE("tile_rows") {
        ParamStore params;
        auto x = params.add("x", random_tensor({2, 3}, rng));
        check_gradients(params, [&] { return sum_all(square(tile_rows(x, 3))); });
    }
}

TEST_CASE("forward over a spec sequence with per-layer errors") {
    std::vector<LayerSpec> specs;
    LayerSpec conv;
    conv.kind = LayerSpec::Kind::Conv1d;
    conv.in_channels = 2;
    conv.out_channels = 4;
    conv.stride = 2;
    specs.push_back(conv);
    LayerSpec pool;
    pool.kind = LayerSpec::Kind::AvgPool1d;
    specs.push_back(pool);
    LayerSpec act;
    act.kind = LayerSpec::Kind::LeakyRelu;
    specs.push_back(act);
    LayerSpec flat;
    flat.kind = LayerSpec::Kind::Flatten;
    specs.push_back(flat);
    LayerSpec fc;
    fc.kind = LayerSpec::Kind::Dense;
    fc.features_in = 4 * 5;
    fc.features_out = 3;
    specs.push_back(fc);

    ParamStore params;
    Rng rng(7);
    init_sequence_params(specs, "enc", params, rng);

    Rng drng(8);
    Tensor xt = random_tensor({2, 2, 21}, drng);
    auto out = forward(specs, constant(xt), params, "enc", true);
    CHECK(out->shape == std::vector<int>{2, 3});

    // Wrong channel count must name the offending layer.
    Tensor bad = random_tensor({2, 3, 21}, drng);
    try {
        forward(specs, constant(bad), params, "enc", true);
        FAIL("expected error");
    } catch (const Error& e) {
        const std::string what = e.what();
        CHECK(what.find("layer 0") != std::string::npos);
        CHECK(what.find("conv1d") != std::string::npos);
    }
}

TEST_CASE("conv1d rejects even kernels via spec validation") {
    LayerSpec conv;
    conv.kind = LayerSpec::Kind::Conv1d;
    conv.in_channels = 1;
    conv.out_channels = 1;
    conv.kernel_size = 4;
    CHECK_THROWS_AS(conv.validate(), Error);
}

TEST_CASE("adam bias-corrected updates") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        ParamStore params;
        auto w = params.add("w", Tensor({2}, {0.4, -0.3}));
        AdamState st;
        params.zero_grad();
        adam_step(params, st, 1e-3);
        CHECK(w->value[0] == doctest::Approx(0.4));
        CHECK(w->value[1] == doctest::Approx(-0.3));
    }
    SUBCASE("single step with unit gradient") {
        ParamStore params;
        auto w = params.add("w", Tensor::scalar(0.0));
        AdamState st;
        params.zero_grad();
        w->grad[0] = 1.0;
        adam_step(params, st, 1e-3);
        CHECK(w->value[0] == doctest::Approx(-1e-3).epsilon(1e-6));
    }
    SUBCASE("two consecutive unit-gradient steps") {
        ParamStore params;
        auto w = params.add("w", Tensor::scalar(0.0));
        AdamState st;
        for (int i = 0; i < 2; ++i) {
            params.zero_grad();
            w->grad[0] = 1.0;
            adam_step(params, st, 1e-3);
        }
        CHECK(std::fabs(w->value[0] - (-2e-3)) < 1e-6);
    }
    SUBCASE("non-finite gradient is reported with the parameter name") {
        ParamStore params;
        auto w = params.add("wq", Tensor::scalar(0.0));
        AdamState st;
        params.zero_grad();
        w->grad[0] = std::numeric_limits<double>::quiet_NaN();
        try {
            adam_step(params, st, 1e-3);
            FAIL("expected error");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("wq") != std::string::npos);
        }
    }
}

TEST_CASE("learning rate schedule") {
    LrSchedule s;
    CHECK(lr_at(s, 0) == doctest::Approx(1e-4));
    CHECK(lr_at(s, 20) == doctest::Approx(1e-3));
    CHECK(lr_at(s, 21) == doctest::Approx(9.5e-4));
    CHECK(lr_at(s, 10) == doctest::Approx(5.5e-4));
    CHECK_THROWS_AS(lr_at(s, -1), Error);
}

TEST_CASE("determinism: identical seeds give bit-identical forward/backward") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        ParamStore params;
        std::vector<LayerSpec> specs;
        LayerSpec conv;
        conv.kind = LayerSpec::Kind::Conv1d;
        conv.in_channels = 1;
        conv.out_channels = 2;
        conv.stride = 2;
        specs.push_back(conv);
        LayerSpec act;
        act.kind = LayerSpec::Kind::LeakyRelu;
        specs.push_back(act);
        LayerSpec flat;
        flat.kind = LayerSpec::Kind::Flatten;
        specs.push_back(flat);
        LayerSpec fc;
        fc.kind = LayerSpec::Kind::Dense;
        fc.features_in = 2 * 4;
        fc.features_out = 1;
        specs.push_back(fc);
        init_sequence_params(specs, "m", params, rng);
        Rng drng(seed + 1);
        Tensor xt = random_tensor({2, 1, 8}, drng);
        params.zero_grad();
        auto out = mean_all(square(forward(specs, constant(xt), params, "m", true)));
        backward(out);
        std::vector<double> result = {out->value[0]};
        for (auto& e : params.entries)
            if (e.trainable) result.insert(result.end(), e.node->grad.begin(), e.node->grad.end());
        return result;
    };
    const auto a = run(99);
    const auto b = run(99);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("avgpool followed by matching upsample preserves window means") {
    Rng rng(5);
    for (int factor : {2, 3, 4}) {
        Tensor xt = random_tensor({1, 2, 4 * factor}, rng);
        auto x = constant(xt);
        auto pooled = avgpool1d(x, factor, factor);
        auto up = interp_upsample1d(pooled, factor);
        REQUIRE(up->shape == x->shape);
        const int L = up->shape[2];
        for (int c = 0; c < 2; ++c) {
            for (int j = 0; j * factor < L; ++j) {
                double mean_up = 0.0;
                for (int r = 0; r < factor; ++r) mean_up += up->value[c * L + j * factor + r];
                mean_up /= factor;
                CHECK(mean_up == doctest::Approx(pooled->value[c * (L / factor) + j]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("batchnorm training output is standardized before affine") {
    Rng rng(11);
    Tensor xt = random_tensor({64, 3, 7}, rng, 3.0);
    auto x = constant(xt);
    auto gamma = constant(Tensor::full({3}, 1.0));
    auto beta = constant(Tensor::zeros({3}));
    auto rm = constant(Tensor::zeros({3}));
    auto rv = constant(Tensor::full({3}, 1.0));
    auto y = batchnorm1d(x, gamma, beta, rm, rv, true);
    const int B = 64, C = 3, L = 7;
    for (int c = 0; c < C; ++c) {
        double mean = 0.0, var = 0.0;
        for (int b = 0; b < B; ++b)
            for (int l = 0; l < L; ++l) mean += y->value[(static_cast<std::size_t>(b) * C + c) * L + l];
        mean /= B * L;
        for (int b = 0; b < B; ++b)
            for (int l = 0; l < L; ++l) {
                const double d = y->value[(static_cast<std::size_t>(b) * C + c) * L + l] - mean;
                var += d * d;
            }
        var /= B * L;
        CHECK(std::fabs(mean) <= 1e-6);
        CHECK(std::fabs(var - 1.0) <= 1e-6);
    }
}

TEST_CASE("parameter store flatten/load round trip") {
    Rng rng(3);
    ParamStore params;
    params.add("a", random_tensor({3, 2}, rng));
    params.add("b", random_tensor({4}, rng), false);
    auto flat = params.flatten();
    REQUIRE(flat.size() == params.total_size());
    flat[0] += 1.5;
    params.load_flat(flat);
    CHECK(params.at("a")->value[0] == doctest::Approx(flat[0]));
    CHECK_THROWS_AS(params.load_flat(std::vector<double>(3, 0.0)), Error);
}
