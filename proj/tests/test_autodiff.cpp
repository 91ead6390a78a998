#include <doctest.h>

#include "atx/autodiff.hpp"

#include <cmath>
#include <functional>

using namespace atx;
using ad::Var;

namespace {

// Central finite differences against the analytic gradient of a scalar graph.
void check_gradients(const std::vector<Var>& leaves,
                     const std::function<Var()>& build, double h = 1e-5,
                     double rel_tol = 1e-6) {
    Var loss = build();
    ad::backward(loss);
    for (const Var& leaf : leaves) {
        REQUIRE(leaf->grad_alloc);
        Tensor analytic = leaf->grad;
        for (int64_t i = 0; i < leaf->val.numel(); ++i) {
            double orig = leaf->val[i];
            leaf->val[i] = orig + h;
            double fp = build()->val[0];
            leaf->val[i] = orig - h;
            double fm = build()->val[0];
            leaf->val[i] = orig;
            double numeric = (fp - fm) / (2 * h);
            double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-8});
            CHECK(std::abs(numeric - analytic[i]) / denom < rel_tol);
        }
    }
}

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    fill_normal(t, rng, 0.0, scale);
    return t;
}

}  // namespace

TEST_CASE("elementwise ops forward values") {
    Var a = ad::leaf(Tensor({2}, {1.0, -2.0}), true);
    Var b = ad::leaf(Tensor({2}, {3.0, 4.0}), true);
    CHECK(ad::add(a, b)->val[0] == 4.0);
    CHECK(ad::sub(a, b)->val[1] == -6.0);
    CHECK(ad::mul(a, b)->val[1] == -8.0);
    CHECK(ad::affine(a, 2.0, 1.0)->val[0] == 3.0);
    CHECK(ad::relu(a)->val[1] == 0.0);
    CHECK(ad::leaky_relu(a, 0.2)->val[1] == doctest::Approx(-0.4));
    CHECK(ad::tanh_op(ad::leaf(Tensor({1}, {0.0})))->val[0] == 0.0);
    CHECK(ad::sigmoid_op(ad::leaf(Tensor({1}, {0.0})))->val[0] == 0.5);
    CHECK(ad::softplus(ad::leaf(Tensor({1}, {0.0})))->val[0] == doctest::Approx(std::log(2.0)));
    CHECK(ad::mean_all(b)->val[0] == doctest::Approx(3.5));
}

TEST_CASE("softplus is stable at extreme logits") {
    Var big = ad::leaf(Tensor({2}, {800.0, -800.0}));
    Tensor v = ad::softplus(big)->val;
    CHECK(v[0] == doctest::Approx(800.0));
    CHECK(v[1] == 0.0);
    CHECK(std::isfinite(v[0]));
}

TEST_CASE("gradients of smooth elementwise chain") {
    Rng rng(7);
    Var x = ad::leaf(random_tensor({3, 2}, rng), true);
    Var y = ad::leaf(random_tensor({3, 2}, rng), true);
    check_gradients({x, y}, [&] {
        Var z = ad::mul(ad::tanh_op(x), ad::sigmoid_op(y));
        return ad::mean_all(ad::square(ad::add(z, ad::affine(x, 0.3, 0.1))));
    });
}

TEST_CASE("conv2d forward matches direct loop") {
    Rng rng(3);
    Tensor xt = random_tensor({1, 2, 5, 5}, rng);
    Tensor wt = random_tensor({3, 2, 3, 3}, rng);
    Tensor bt = random_tensor({3}, rng);
    Var out = ad::conv2d(ad::leaf(xt), ad::leaf(wt), ad::leaf(bt), 1, 1);
    REQUIRE(out->val.shape() == std::vector<int64_t>{1, 3, 5, 5});
    // brute-force reference
    for (int64_t co = 0; co < 3; ++co)
        for (int64_t oh = 0; oh < 5; ++oh)
            for (int64_t ow = 0; ow < 5; ++ow) {
                double acc = bt[co];
                for (int64_t ci = 0; ci < 2; ++ci)
                    for (int ki = 0; ki < 3; ++ki)
                        for (int kj = 0; kj < 3; ++kj) {
                            int64_t ih = oh - 1 + ki, iw = ow - 1 + kj;
                            if (ih < 0 || ih >= 5 || iw < 0 || iw >= 5) continue;
                            acc += xt.at4(0, ci, ih, iw) * wt.at4(co, ci, ki, kj);
                        }
                CHECK(out->val.at4(0, co, oh, ow) == doctest::Approx(acc).epsilon(1e-12));
            }
}

TEST_CASE("conv2d gradients (stride 2, dilation 2)") {
    Rng rng(11);
    Var x = ad::leaf(random_tensor({2, 2, 8, 8}, rng), true);
    Var w = ad::leaf(random_tensor({3, 2, 3, 3}, rng, 0.3), true);
    Var b = ad::leaf(random_tensor({3}, rng), true);
    check_gradients({x, w, b}, [&] {
        return ad::mean_all(ad::square(ad::conv2d(x, w, b, 2, 2, 2)));
    });
}

TEST_CASE("conv_transpose2d doubles spatial dims and has correct gradients") {
    Rng rng(13);
    Var x = ad::leaf(random_tensor({1, 3, 4, 4}, rng), true);
    Var w = ad::leaf(random_tensor({3, 2, 3, 3}, rng, 0.3), true);
    Var b = ad::leaf(random_tensor({2}, rng), true);
    Var y = ad::conv_transpose2d(x, w, b, 2, 1, 1);
    CHECK(y->val.shape() == std::vector<int64_t>{1, 2, 8, 8});
    check_gradients({x, w, b}, [&] {
        return ad::mean_all(ad::square(ad::conv_transpose2d(x, w, b, 2, 1, 1)));
    });
}

TEST_CASE("batch_norm2d training gradients") {
    Rng rng(17);
    Var x = ad::leaf(random_tensor({3, 2, 4, 4}, rng), true);
    Var g = ad::leaf(random_tensor({2}, rng, 0.5), true);
    Var b = ad::leaf(random_tensor({2}, rng), true);
    // Weight the output by a fixed tensor: a plain quadratic of the normalized
    // activations is invariant to the input and its true x-gradient vanishes.
    Var w = ad::constant(random_tensor({3, 2, 4, 4}, rng));
    check_gradients({x, g, b}, [&] {
        Tensor rm({2}), rv = Tensor::full({2}, 1.0);
        return ad::mean_all(ad::square(ad::mul(w, ad::batch_norm2d(x, g, b, rm, rv, true))));
    }, 1e-5, 1e-5);
}

TEST_CASE("batch_norm2d eval uses running stats and is pure") {
    Var x = ad::leaf(Tensor({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0}), false);
    Var g = ad::leaf(Tensor({1}, {2.0}));
    Var b = ad::leaf(Tensor({1}, {0.5}));
    Tensor rm({1}, {1.0}), rv({1}, {4.0});
    Tensor rm_copy = rm, rv_copy = rv;
    Var y = ad::batch_norm2d(x, g, b, rm, rv, false);
    CHECK(y->val[0] == doctest::Approx(0.5 + 2.0 * (1.0 - 1.0) / std::sqrt(4.0 + 1e-5)));
    CHECK(y->val[3] == doctest::Approx(0.5 + 2.0 * (4.0 - 1.0) / std::sqrt(4.0 + 1e-5)));
    CHECK(rm[0] == rm_copy[0]);  // eval must not touch running stats
    CHECK(rv[0] == rv_copy[0]);
}

TEST_CASE("max_pool2d forward and gradient routing") {
    Var x = ad::leaf(Tensor({1, 1, 2, 2}, {1.0, 5.0, 3.0, 2.0}), true);
    Var y = ad::max_pool2d(x);
    CHECK(y->val.numel() == 1);
    CHECK(y->val[0] == 5.0);
    ad::backward(ad::sum_all(y));
    CHECK(x->grad[1] == 1.0);
    CHECK(x->grad[0] == 0.0);
}

TEST_CASE("mask_mul broadcasts over channels with gradients") {
    Rng rng(23);
    Var m = ad::leaf(random_tensor({2, 1, 3, 3}, rng), true);
    Var x = ad::leaf(random_tensor({2, 4, 3, 3}, rng), true);
    check_gradients({m, x}, [&] { return ad::mean_all(ad::square(ad::mask_mul(m, x))); });
}

TEST_CASE("softmax_xent matches hand-computed value and gradient") {
    Var logits = ad::leaf(Tensor({1, 3}, {1.0, 2.0, 3.0}), true);
    std::vector<int> labels = {2};
    Var loss = ad::softmax_xent(logits, labels);
    double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(loss->val[0] == doctest::Approx(std::log(z) - 3.0));
    check_gradients({logits}, [&] { return ad::softmax_xent(logits, labels); });
}

TEST_CASE("backward rejects non-scalar roots") {
    Var x = ad::leaf(Tensor({2}, {1.0, 2.0}), true);
    CHECK_THROWS_AS(ad::backward(ad::relu(x)), InputError);
}
