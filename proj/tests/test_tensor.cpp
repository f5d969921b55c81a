#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "macnet/ops.hpp"
#include "macnet/optim.hpp"
#include "macnet/rng.hpp"
#include "macnet/tensor.hpp"
#include "testutil.hpp"

using namespace macnet;
using testutil::grad_check;
using testutil::random_away_from_kinks;

namespace {

// Independent 6-nested-loop convolution oracle.
std::vector<double> conv_reference(const std::vector<double>& x, int n, int c, int h, int w,
                                   const std::vector<double>& wt, int o, int kh, int kw, int stride,
                                   int pad, const std::vector<double>& bias) {
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    std::vector<double> out(static_cast<size_t>(n) * o * oh * ow, 0.0);
    for (int in = 0; in < n; ++in)
        for (int io = 0; io < o; ++io)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = bias.empty() ? 0.0 : bias[io];
                    for (int ic = 0; ic < c; ++ic)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const int y = oy * stride + ky - pad;
                                const int xx = ox * stride + kx - pad;
                                if (y < 0 || y >= h || xx < 0 || xx >= w) continue;
                                acc += x[((static_cast<size_t>(in) * c + ic) * h + y) * w + xx] *
                                       wt[((static_cast<size_t>(io) * c + ic) * kh + ky) * kw + kx];
                            }
                    out[((static_cast<size_t>(in) * o + io) * oh + oy) * ow + ox] = acc;
                }
    return out;
}

Tensor randn_tensor(Shape shape, uint64_t seed, double scale = 1.0, bool requires_grad = true) {
    auto eng = std::mt19937_64(splitmix64(seed));
    std::normal_distribution<double> dist(0.0, scale);
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (double& v : t.values()) v = dist(eng);
    return t;
}

}  // namespace

TEST_CASE("conv2d all-ones 3x3 gives the element count") {
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor b = Tensor::zeros({1});
    Tensor y = ops::conv2d(x, w, b, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.values()[0] == doctest::Approx(9.0));
}

TEST_CASE("conv2d identity kernel reproduces the input") {
    Tensor x = randn_tensor({2, 1, 5, 5}, 11, 1.0, false);
    Tensor w = Tensor::full({1, 1, 1, 1}, 1.0);
    Tensor y = ops::conv2d(x, w, Tensor(), 1, 0);
    for (int64_t i = 0; i < x.size(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("conv2d matches the nested-loop reference") {
    Tensor x = randn_tensor({2, 3, 8, 8}, 21, 1.0, false);
    Tensor w = randn_tensor({4, 3, 3, 3}, 22, 1.0, false);
    Tensor b = randn_tensor({4}, 23, 1.0, false);
    for (const auto& [stride, pad] : {std::pair{1, 1}, std::pair{1, 0}, std::pair{2, 1}}) {
        Tensor y = ops::conv2d(x, w, b, stride, pad);
        const auto ref = conv_reference({x.values().begin(), x.values().end()}, 2, 3, 8, 8,
                                        {w.values().begin(), w.values().end()}, 4, 3, 3, stride,
                                        pad, {b.values().begin(), b.values().end()});
        REQUIRE(y.size() == static_cast<int64_t>(ref.size()));
        for (size_t i = 0; i < ref.size(); ++i)
            CHECK(std::abs(y.values()[i] - ref[i]) < 1e-10);
    }
}

TEST_CASE("conv2d rejects mismatched shapes with both shapes named") {
    Tensor x = Tensor::zeros({1, 3, 8, 8});
    Tensor w = Tensor::zeros({4, 2, 3, 3});
    try {
        ops::conv2d(x, w, Tensor(), 1, 0);
        FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[1x3x8x8]") != std::string::npos);
        CHECK(msg.find("[4x2x3x3]") != std::string::npos);
    }
}

TEST_CASE("conv2d rejects kernels larger than the padded input") {
    Tensor x = Tensor::zeros({1, 1, 2, 2});
    Tensor w = Tensor::zeros({1, 1, 5, 5});
    CHECK_THROWS_AS(ops::conv2d(x, w, Tensor(), 1, 1), std::invalid_argument);
}

TEST_CASE("backward on the linear case") {
    Tensor w = Tensor::from_data({1}, {2.0}, true);
    Tensor x = Tensor::from_data({1}, {3.0});
    Tensor loss = ops::l1_loss(ops::scale(w, 3.0), Tensor::zeros({1}));  // |3w|, w>0
    loss.backward();
    CHECK(w.grad()[0] == doctest::Approx(3.0));
}

TEST_CASE("backward rejects non-scalar roots") {
    Tensor x = Tensor::zeros({2, 2}, true);
    CHECK_THROWS_AS(ops::relu(x).backward(), std::invalid_argument);
}

TEST_CASE("clamp01 forward and subgradient convention") {
    Tensor x = Tensor::from_data({3}, {-2.0, 0.5, 3.0}, true);
    Tensor y = ops::clamp01(x);
    CHECK(y.values()[0] == 0.0);
    CHECK(y.values()[1] == 0.5);
    CHECK(y.values()[2] == 1.0);

    Tensor w = Tensor::from_data({3}, {-1.0, 0.5, 2.0}, true);
    Tensor loss = ops::l1_loss(ops::clamp01(w), Tensor::from_data({3}, {-9.0, -9.0, -9.0}));
    loss.backward();  // d/dw sum(clamp01(w) - (-9)) = clamp mask
    CHECK(w.grad()[0] == 0.0);
    CHECK(w.grad()[1] == 1.0);
    CHECK(w.grad()[2] == 0.0);

    Tensor z = Tensor::from_data({3}, {-0.1, 0.3, 1.2}, true);
    Tensor loss2 = ops::l1_loss(ops::clamp01(z), Tensor::from_data({3}, {-9.0, -9.0, -9.0}));
    loss2.backward();
    CHECK(z.grad()[0] == 0.0);
    CHECK(z.grad()[1] == 1.0);
    CHECK(z.grad()[2] == 0.0);

    // boundary values pass gradient
    Tensor bd = Tensor::from_data({2}, {0.0, 1.0}, true);
    Tensor loss3 = ops::l1_loss(ops::clamp01(bd), Tensor::from_data({2}, {-9.0, -9.0}));
    loss3.backward();
    CHECK(bd.grad()[0] == 1.0);
    CHECK(bd.grad()[1] == 1.0);
}

TEST_CASE("sgd_step basic, momentum recurrence, and fixed point") {
    SUBCASE("single step") {
        Parameter p("w", Tensor::from_data({1}, {1.0}, true));
        p.value.grad_mut()[0] = 1.0;
        sgd_step({&p}, {0.1, 0.0, 0.0});
        CHECK(p.value.values()[0] == doctest::Approx(0.9));
        CHECK_FALSE(p.value.has_grad());  // cleared
    }
    SUBCASE("two momentum steps: 1 - 0.1 - 0.19 = 0.71") {
        Parameter p("w", Tensor::from_data({1}, {1.0}, true));
        for (int i = 0; i < 2; ++i) {
            p.value.grad_mut()[0] = 1.0;
            sgd_step({&p}, {0.1, 0.9, 0.0});
        }
        CHECK(p.value.values()[0] == doctest::Approx(0.71));
    }
    SUBCASE("zero grads leave parameters unchanged") {
        Parameter p("w", Tensor::from_data({2}, {1.5, -0.5}, true));
        p.value.grad_mut();
        sgd_step({&p}, {0.1, 0.0, 0.0});
        CHECK(p.value.values()[0] == 1.5);
        CHECK(p.value.values()[1] == -0.5);
    }
    SUBCASE("missing grad rejected") {
        Parameter p("w", Tensor::from_data({1}, {1.0}, true));
        CHECK_THROWS_AS(sgd_step({&p}, {0.1, 0.0, 0.0}), std::runtime_error);
    }
    SUBCASE("optimizer state validated") {
        Parameter p("w", Tensor::from_data({1}, {1.0}, true));
        p.value.grad_mut()[0] = 1.0;
        CHECK_THROWS_AS(sgd_step({&p}, {-0.1, 0.0, 0.0}), std::invalid_argument);
        CHECK_THROWS_AS(sgd_step({&p}, {0.1, 1.0, 0.0}), std::invalid_argument);
        CHECK_THROWS_AS(sgd_step({&p}, {0.1, 0.0, -1.0}), std::invalid_argument);
    }
}

TEST_CASE("softmax probabilities are a distribution per row") {
    Tensor logits = randn_tensor({16, 7}, 31, 5.0, false);
    const auto probs = ops::softmax_rows(logits);
    for (int i = 0; i < 16; ++i) {
        double sum = 0.0;
        for (int j = 0; j < 7; ++j) {
            const double p = probs[i * 7 + j];
            CHECK(p > 0.0);
            CHECK(p < 1.0);
            sum += p;
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("softmax_cross_entropy is stable for huge logits") {
    Tensor logits = Tensor::from_data({1, 3}, {1e4, -1e4, 0.0}, true);
    Tensor loss = ops::softmax_cross_entropy(logits, {0});
    CHECK(std::isfinite(loss.scalar()));
    CHECK(loss.scalar() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("gradients match central finite differences per op") {
    std::mt19937_64 eng(splitmix64(77));

    SUBCASE("conv2d") {
        Tensor x = randn_tensor({2, 2, 6, 6}, 101);
        Tensor w = randn_tensor({3, 2, 3, 3}, 102, 0.5);
        Tensor b = randn_tensor({3}, 103, 0.5);
        const Tensor target =
            testutil::signed_target(ops::flatten(ops::conv2d(x, w, b, 1, 1)), 9001);
        auto make = [&] { return ops::l1_loss(ops::flatten(ops::conv2d(x, w, b, 1, 1)), target); };
        const auto rep = grad_check({x, w, b}, make);
        CHECK_MESSAGE(rep.max_rel_err < 1e-4, rep.worst);
    }
    SUBCASE("conv2d strided") {
        Tensor x = randn_tensor({1, 2, 7, 7}, 104);
        Tensor w = randn_tensor({2, 2, 3, 3}, 105, 0.5);
        Tensor b = randn_tensor({2}, 106, 0.5);
        const Tensor target =
            testutil::signed_target(ops::flatten(ops::conv2d(x, w, b, 2, 1)), 9002);
        auto make = [&] { return ops::l1_loss(ops::flatten(ops::conv2d(x, w, b, 2, 1)), target); };
        const auto rep = grad_check({x, w, b}, make);
        CHECK_MESSAGE(rep.max_rel_err < 1e-4, rep.worst);
    }
    SUBCASE("maxpool2x2") {
        // margins > 1e-3 between window entries keep FD away from the kink
        Tensor x = Tensor::zeros({1, 1, 4, 4}, true);
        auto vals = random_away_from_kinks(eng, 16, 1.0, {}, 0.0);
        std::sort(vals.begin(), vals.end());
        for (size_t i = 1; i < vals.size(); ++i)
            if (vals[i] - vals[i - 1] < 2e-3) vals[i] = vals[i - 1] + 2e-3;
        std::shuffle(vals.begin(), vals.end(), eng);
        std::copy(vals.begin(), vals.end(), x.values().begin());
        const Tensor target = testutil::signed_target(ops::flatten(ops::maxpool2x2(x)), 9003);
        auto make = [&] { return ops::l1_loss(ops::flatten(ops::maxpool2x2(x)), target); };
        const auto rep = grad_check({x}, make);
        CHECK_MESSAGE(rep.max_rel_err < 1e-4, rep.worst);
    }
    SUBCASE("relu and clamp01 away from kinks") {
        Tensor x = Tensor::zeros({12}, true);
        const auto vals = random_away_from_kinks(eng, 12, 2.0, {0.0, 1.0});
        std::copy(vals.begin(), vals.end(), x.values().begin());
        const Tensor rt = testutil::signed_target(ops::relu(x), 9004);
        auto make_relu = [&] { return ops::l1_loss(ops::relu(x), rt); };
        auto rep = grad_check({x}, make_relu);
        CHECK_MESSAGE(rep.max_rel_err < 1e-4, rep.worst);
        const Tensor ct = testutil::signed_target(ops::clamp01(x), 9005);
        auto make_clamp = [&] { return ops::l1_loss(ops::clamp01(x), ct); };
        rep = grad_check({x}, make_clamp);
        CHECK_MESSAGE(rep.max_rel_err < 1e-4, rep.worst);
    }
    SUBCASE("linear + softmax cross entropy") {
        Tensor x = randn_tensor({4, 5}, 201);
        Tensor w = randn_tensor({5, 3}, 202, 0.5);
        Tensor b = randn_tensor({3}, 203, 0.5);
        const std::vector<int> labels = {0, 2, 1, 2};
        auto make = [&] { return ops::softmax_cross_entropy(ops::linear(x, w, b), labels); };
        const auto rep = grad_check({x, w, b}, make);
        CHECK_MESSAGE(rep.max_rel_err < 1e-4, rep.worst);
    }
    SUBCASE("concat + select_col + category_mean") {
        Tensor a = randn_tensor({4, 3}, 301);
        Tensor b = randn_tensor({4, 2}, 302);
        const std::vector<int> labels = {1, 0, 1, 0};
        const Tensor mt =
            testutil::signed_target(ops::category_mean(ops::concat_cols({a, b}), labels, {0, 1}), 9006);
        const Tensor colt = testutil::signed_target(ops::select_col(ops::concat_cols({a, b}), 4), 9007);
        auto make = [&] {
            Tensor cat = ops::concat_cols({a, b});
            Tensor l1 = ops::l1_loss(ops::category_mean(cat, labels, {0, 1}), mt);
            Tensor l2 = ops::l1_loss(ops::select_col(cat, 4), colt);
            return ops::add(l1, ops::scale(l2, 0.5));
        };
        const auto rep = grad_check({a, b}, make);
        CHECK_MESSAGE(rep.max_rel_err < 1e-4, rep.worst);
    }
    SUBCASE("kde density + kl against beta") {
        Tensor samples = Tensor::zeros({10}, true);
        std::uniform_real_distribution<double> uni(0.05, 0.95);
        for (double& v : samples.values()) v = uni(eng);
        std::vector<double> grid, beta_vals;
        for (int i = 0; i < 8; ++i) {
            grid.push_back((2.0 * i + 1.0) / 16.0);
            beta_vals.push_back(1.2 - 0.05 * i);
        }
        auto make = [&] {
            return ops::kl_beta_vs_kde(ops::kde_density(samples, grid, 0.1), beta_vals);
        };
        const auto rep = grad_check({samples}, make);
        CHECK_MESSAGE(rep.max_rel_err < 1e-4, rep.worst);
    }
}

TEST_CASE("forward and backward are bitwise repeatable") {
    Tensor x = randn_tensor({2, 3, 8, 8}, 401);
    Tensor w = randn_tensor({4, 3, 3, 3}, 402, 0.5);
    Tensor b = randn_tensor({4}, 403, 0.5);
    auto run = [&] {
        x.zero_grad();
        w.zero_grad();
        b.zero_grad();
        Tensor y = ops::relu(ops::conv2d(x, w, b, 1, 1));
        Tensor loss = ops::l1_loss(ops::flatten(ops::maxpool2x2(y)), Tensor::full({2, 64}, 10.0));

        loss.backward();
        std::vector<double> out(loss.values().begin(), loss.values().end());
        out.insert(out.end(), w.grad().begin(), w.grad().end());
        out.insert(out.end(), x.grad().begin(), x.grad().end());
        return out;
    };
    const auto first = run();
    const auto second = run();
    REQUIRE(first.size() == second.size());
    for (size_t i = 0; i < first.size(); ++i) CHECK(first[i] == second[i]);
}

TEST_CASE("kde_density rejects degenerate inputs") {
    Tensor one = Tensor::from_data({1}, {0.5});
    CHECK_THROWS_AS(ops::kde_density(one, {0.5}, 0.1), std::invalid_argument);
    Tensor two = Tensor::from_data({2}, {0.4, 0.6});
    CHECK_THROWS_AS(ops::kde_density(two, {0.5}, 0.0), std::invalid_argument);
}

TEST_CASE("kl_beta_vs_kde rejects non-positive q") {
    Tensor q = Tensor::from_data({2}, {0.5, 0.0});
    CHECK_THROWS_AS(ops::kl_beta_vs_kde(q, {1.0, 1.0}), std::invalid_argument);
}

TEST_CASE("maxpool2x2 requires even extents") {
    CHECK_THROWS_AS(ops::maxpool2x2(Tensor::zeros({1, 1, 3, 4})), std::invalid_argument);
}
