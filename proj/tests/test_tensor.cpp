#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "trackrank/tensor.hpp"

using namespace trackrank;

TEST_CASE("matmul against identity leaves the matrix unchanged") {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor id = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor out = matmul(a, id);
    CHECK(out.value() == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("softmax of a constant vector is uniform") {
    Tensor out = softmax(Tensor::from({4}, {0, 0, 0, 0}), 0);
    for (double v : out.value()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("time_conv1d with identity kernel reproduces the signal") {
    Tensor x = Tensor::from({3, 1}, {5, 7, 9});
    Tensor w = Tensor::from({1, 1, 1}, {1});
    Tensor b = Tensor::from({1}, {0});
    Tensor out = time_conv1d(x, w, b);
    CHECK(out.value() == std::vector<double>{5, 7, 9});
}

TEST_CASE("backward of sum(x*x) gives 2x") {
    Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    Tensor loss = reduce_sum(mul(x, x), 0);
    backward(loss);
    CHECK(x.grad() == std::vector<double>{2, 4, 6});
}

TEST_CASE("backward of sigmoid at 0 gives 0.25") {
    Tensor x = Tensor::scalar(0.0, true);
    backward(sigmoid(x));
    CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("constant loss has zero gradients and passes grad_check") {
    auto rng = seeded_engine(7);
    Tensor x = Tensor::uniform({4}, rng, -1, 1, "x");
    std::vector<Tensor> leaves{x};
    auto report = grad_check(leaves, [&] { return add(reduce_sum(mul(x, Tensor::zeros({4})), 0), Tensor::scalar(3.0)); });
    CHECK(report.pass);
    CHECK(report.max_rel_err == 0.0);
}

TEST_CASE("random small graphs match central finite differences") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        auto rng = seeded_engine(seed, 11);
        Tensor a = Tensor::uniform({3, 4}, rng, -1, 1, "a");
        Tensor b = Tensor::uniform({4, 2}, rng, -1, 1, "b");
        Tensor c = Tensor::uniform({2}, rng, -1, 1, "c");
        std::vector<Tensor> leaves{a, b, c};
        auto report = grad_check(leaves, [&] {
            Tensor h = tanh(affine(a, b, c));
            Tensor s = softmax(h, 1);
            Tensor mixed = add(mul(s, h), scale(sigmoid(h), 0.5));
            return logsumexp(reshape(mixed, {6}), 0);
        });
        INFO("seed ", seed, " max rel err ", report.max_rel_err, " ", report.failure);
        CHECK(report.pass);
    }
}

TEST_CASE("every primitive passes grad_check on kink-free inputs") {
    auto rng = seeded_engine(42);
    // inputs separated so max/relu subgradients are unambiguous
    auto separated = [&rng](Shape shape, const std::string& name) {
        Tensor t = Tensor::uniform(shape, rng, -1, 1, name);
        auto& v = t.mutable_value();
        for (size_t i = 0; i < v.size(); ++i) v[i] += (v[i] >= 0 ? 0.01 : -0.01) + 0.002 * static_cast<double>(i);
        return t;
    };
    Tensor x = separated({2, 3}, "x");
    Tensor y = separated({2, 3}, "y");
    std::vector<Tensor> leaves{x, y};

    auto run = [&](const std::string& what, std::function<Tensor()> f) {
        auto report = grad_check(leaves, f);
        INFO(what, ": max rel err ", report.max_rel_err, " ", report.failure);
        CHECK(report.pass);
    };
    run("add/sub/mul", [&] { return reduce_sum(reshape(mul(add(x, y), sub(x, y)), {6}), 0); });
    run("scale/add_const", [&] { return reduce_sum(reshape(add_const(scale(x, 1.7), -0.3), {6}), 0); });
    run("sigmoid", [&] { return reduce_sum(reshape(sigmoid(x), {6}), 0); });
    run("tanh", [&] { return reduce_sum(reshape(tanh(x), {6}), 0); });
    run("relu", [&] { return reduce_sum(reshape(relu(x), {6}), 0); });
    run("exp/log", [&] { return reduce_sum(reshape(log(add_const(exp(x), 1.0)), {6}), 0); });
    run("sqrt", [&] { return reduce_sum(reshape(sqrt(add_const(mul(x, x), 0.5)), {6}), 0); });
    run("recip/scale_by", [&] {
        Tensor total = reduce_sum(reshape(add_const(mul(y, y), 1.0), {6}), 0);
        return reduce_sum(reshape(scale_by(x, recip(total)), {6}), 0);
    });
    run("matmul", [&] { return reduce_sum(reduce_sum(matmul(x, reshape(y, {3, 2})), 0), 0); });
    run("softmax", [&] { return reduce_sum(reshape(mul(softmax(x, 1), y), {6}), 0); });
    run("logsumexp", [&] { return reduce_sum(logsumexp(x, 0), 0); });
    run("reduce_mean", [&] { return reduce_sum(reduce_mean(mul(x, y), 1), 0); });
    run("reduce_max/min", [&] { return add(reduce_sum(reduce_max(x, 1), 0), reduce_sum(reduce_min(y, 0), 0)); });
    run("masked extremes", [&] {
        Tensor mask = Tensor::from({2, 3}, {1, 0, 1, 0, 1, 1});
        return add(reduce_sum(masked_max(x, mask, 1), 0), reduce_sum(masked_min(y, mask, 1), 0));
    });
    run("concat/slice", [&] {
        Tensor cat = concat({x, y}, 0);
        return reduce_sum(reshape(slice(cat, 0, 1, 2), {6}), 0);
    });
    run("time_conv1d", [&] {
        Tensor w = reshape(slice(reshape(y, {6}), 0, 0, 6), {2, 3, 1});
        Tensor b = slice(reshape(x, {6}), 0, 0, 2);
        return reduce_sum(reduce_sum(time_conv1d(x, w, b), 0), 0);
    });
    run("pairwise_distance", [&] { return reduce_sum(reduce_sum(pairwise_distance(x, y), 0), 0); });
    run("spatial_conv_full", [&] {
        Tensor maps = reshape(x, {2, 1, 1, 3});
        return reduce_sum(reduce_sum(spatial_conv_full(maps, reshape(y, {3, 2}), Tensor::from({2}, {0.1, -0.2})), 0), 0);
    });
}

TEST_CASE("softmax rows are positive, sum to 1, and ignore constant shifts") {
    auto rng = seeded_engine(3);
    Tensor x = Tensor::uniform({5, 7}, rng, -4, 4);
    Tensor s = softmax(x, 1);
    for (int64_t i = 0; i < 5; ++i) {
        double sum = 0.0;
        for (int64_t j = 0; j < 7; ++j) {
            const double v = s.value()[static_cast<size_t>(i * 7 + j)];
            CHECK(v > 0.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    Tensor shifted = softmax(add_const(x, 123.456), 1);
    for (size_t i = 0; i < s.value().size(); ++i)
        CHECK(s.value()[i] == doctest::Approx(shifted.value()[i]).epsilon(1e-12));
}

TEST_CASE("logsumexp stays finite where plain exp overflows") {
    Tensor big = Tensor::from({2}, {1000.0, 1000.0});
    CHECK(logsumexp(big, 0).item() == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));
    CHECK_THROWS_AS((void)exp(big), NumericError);
}

TEST_CASE("forward evaluation is deterministic") {
    auto make = [] {
        auto rng = seeded_engine(99);
        Tensor x = Tensor::uniform({4, 4}, rng, -2, 2);
        return softmax(matmul(tanh(x), sigmoid(x)), 1).value();
    };
    CHECK(make() == make());
}

TEST_CASE("reductions and shape ops match hand loops") {
    Tensor x = Tensor::from({2, 3}, {1, -2, 3, -4, 5, -6});
    CHECK(reduce_sum(x, 0).value() == std::vector<double>{-3, 3, -3});
    CHECK(reduce_sum(x, 1).value() == std::vector<double>{2, -5});
    CHECK(reduce_mean(x, 1).value() == std::vector<double>{1 * (1.0 / 3) + (-2) * (1.0 / 3) + 3 * (1.0 / 3),
                                                           (-4) * (1.0 / 3) + 5 * (1.0 / 3) + (-6) * (1.0 / 3)});
    CHECK(reduce_max(x, 1).value() == std::vector<double>{3, 5});
    CHECK(reduce_min(x, 0).value() == std::vector<double>{-4, -2, -6});
    Tensor cat = concat({x, x}, 1);
    CHECK(cat.shape() == Shape{2, 6});
    CHECK(slice(cat, 1, 3, 3).value() == x.value());
    CHECK(reshape(x, {3, 2}).value() == x.value());
}

TEST_CASE("masked extremes pick only selected entries and first-tie wins") {
    Tensor x = Tensor::from({1, 4}, {5, 9, 9, 1}, true);
    Tensor mask = Tensor::from({1, 4}, {1, 1, 1, 0});
    Tensor mx = masked_max(x, mask, 1);
    CHECK(mx.value()[0] == 9);
    backward(reduce_sum(mx, 0));
    CHECK(x.grad() == std::vector<double>{0, 1, 0, 0});  // first of the tied maxima
    Tensor none = Tensor::from({1, 4}, {0, 0, 0, 0});
    CHECK_THROWS_AS((void)masked_max(x, none, 1), ShapeError);
}

TEST_CASE("pairwise_distance handles the 3-4-5 case and coincident points") {
    Tensor a = Tensor::from({1, 2}, {0, 0}, true);
    Tensor b = Tensor::from({2, 2}, {3, 4, 0, 0});
    Tensor d = pairwise_distance(a, b);
    CHECK(d.value()[0] == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(d.value()[1] == doctest::Approx(1e-8).epsilon(1e-12));  // floored at sqrt(1e-16)
    backward(reduce_sum(reduce_sum(d, 0), 0));
    for (double g : a.grad()) CHECK(std::isfinite(g));
}

TEST_CASE("time_conv1d matches a brute-force oracle with zero padding") {
    auto rng = seeded_engine(17);
    const int64_t T = 6, C = 3, K = 3;
    Tensor x = Tensor::uniform({T, C}, rng, -1, 1);
    Tensor w = Tensor::uniform({1, C, K}, rng, -1, 1);
    Tensor b = Tensor::uniform({1}, rng, -1, 1);
    Tensor out = time_conv1d(x, w, b);
    for (int64_t t = 0; t < T; ++t) {
        double expect = b.value()[0];
        for (int64_t k = 0; k < K; ++k) {
            const int64_t tt = t + k - 1;
            if (tt < 0 || tt >= T) continue;
            for (int64_t c = 0; c < C; ++c)
                expect += x.value()[static_cast<size_t>(tt * C + c)] * w.value()[static_cast<size_t>(c * K + k)];
        }
        CHECK(out.value()[static_cast<size_t>(t)] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("shape errors name the primitive and the shapes") {
    Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::from({2, 2}, {1, 2, 3, 4});
    CHECK_THROWS_WITH_AS((void)matmul(a, b), doctest::Contains("matmul"), ShapeError);
    try {
        (void)matmul(a, b);
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("[2 x 3]") != std::string::npos);
        CHECK(std::string(e.what()).find("[2 x 2]") != std::string::npos);
    }
    CHECK_THROWS_AS((void)add(a, b), ShapeError);
    CHECK_THROWS_AS((void)slice(a, 1, 2, 5), ShapeError);
    CHECK_THROWS_AS((void)reshape(a, {4, 2}), ShapeError);
    CHECK_THROWS_AS((void)time_conv1d(a, Tensor::from({1, 3, 2}, {1, 2, 3, 4, 5, 6}), Tensor::from({1}, {0})),
                    ShapeError);
    CHECK_THROWS_AS(backward(a), ShapeError);  // non-scalar loss
}

TEST_CASE("non-finite values are surfaced, never propagated") {
    Tensor x = Tensor::from({1}, {800.0});
    try {
        (void)exp(x);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("exp") != std::string::npos);
    }
    CHECK_THROWS_AS((void)log(Tensor::from({1}, {0.0})), NumericError);
    CHECK_THROWS_AS((void)Tensor::from({1}, {std::nan("")}), NumericError);
}

TEST_CASE("grad_check reports per-leaf errors and fails at absurd tolerance") {
    auto rng = seeded_engine(5);
    Tensor a = Tensor::uniform({3}, rng, 0.2, 1.0, "a");
    Tensor b = Tensor::uniform({3}, rng, 0.2, 1.0, "b");
    std::vector<Tensor> leaves{a, b};
    auto build = [&] { return reduce_sum(mul(tanh(a), sigmoid(b)), 0); };
    auto loose = grad_check(leaves, build, 1e-4);
    CHECK(loose.pass);
    REQUIRE(loose.leaves.size() == 2);
    CHECK(loose.leaves[0].name == "a");
    CHECK(loose.leaves[1].name == "b");
    auto absurd = grad_check(leaves, build, 1e-15);
    CHECK_FALSE(absurd.pass);  // finite differences cannot reach 1e-15
}

TEST_CASE("backward through a shared subexpression accumulates both paths") {
    Tensor x = Tensor::scalar(0.7, true);
    Tensor s = mul(x, x);            // x^2
    Tensor loss = add(s, scale(s, 2.0));  // 3 x^2
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(6 * 0.7).epsilon(1e-12));
}
