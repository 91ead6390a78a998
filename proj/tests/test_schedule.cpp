#include <doctest.h>

#include "atx/schedule.hpp"

#include <cmath>

using namespace atx;

namespace {

// Independent scalar model of the lambda controller, written directly from
// its stated update rule rather than sharing any code with the implementation.
struct LambdaRef {
    double lambda = 0, ema = 0;
    bool init = false, frozen = false;
    int64_t k = 0;
    void observe(double adv, double decay, double thresh, double step, int64_t interval) {
        ema = init ? decay * ema + (1 - decay) * adv : adv;
        init = true;
        k++;
        if (!frozen) {
            if (k % interval == 0) lambda += step;
            if (ema > thresh) frozen = true;
        }
    }
};

}  // namespace

TEST_CASE("learning rate schedule values") {
    train::OptimizerConfig o;
    CHECK(train::lr_at(o, 0) == 2e-4);
    CHECK(train::lr_at(o, 4999) == 2e-4);
    CHECK(train::lr_at(o, 5000) == 2e-4);  // continuous at the knee
    CHECK(train::lr_at(o, 7500) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(train::lr_at(o, 10000) == 0.0);
    CHECK_THROWS_AS(train::lr_at(o, -1), InputError);
    CHECK_THROWS_AS(train::lr_at(o, 10001), InputError);
    train::OptimizerConfig bad = o;
    bad.decay_start = 20000;
    CHECK_THROWS_AS(train::lr_at(bad, 0), ConfigError);
}

TEST_CASE("lr decay is piecewise linear and monotone") {
    train::OptimizerConfig o;
    double prev = train::lr_at(o, 5000);
    for (int64_t i = 5001; i <= 10000; ++i) {
        double cur = train::lr_at(o, i);
        CHECK(cur < prev);
        // exact linearity
        CHECK(cur == doctest::Approx(2e-4 * double(10000 - i) / 5000.0).epsilon(1e-12));
        prev = cur;
    }
}

TEST_CASE("lambda controller matches scalar reference on random trajectories") {
    Rng rng(31);
    std::uniform_real_distribution<double> adv(0.0, 2.0);
    for (int traj = 0; traj < 1000; ++traj) {
        train::AdaptiveLambdaState s;
        s.interval = 10;
        LambdaRef ref;
        double prev_lambda = 0;
        int64_t freeze_call = -1;
        for (int step = 0; step < 200; ++step) {
            double a = adv(rng);
            s = train::lambda_step(s, a);
            ref.observe(a, s.ema_decay, s.threshold, s.step_size, s.interval);
            REQUIRE(s.lambda == ref.lambda);
            REQUIRE(s.frozen == ref.frozen);
            REQUIRE(s.adv_ema == doctest::Approx(ref.ema).epsilon(1e-14));
            REQUIRE(s.lambda >= prev_lambda);  // non-decreasing
            if (s.frozen && freeze_call < 0) freeze_call = s.calls;
            if (freeze_call > 0 && s.calls > freeze_call)
                REQUIRE(s.lambda == prev_lambda);  // frozen is absorbing
            prev_lambda = s.lambda;
        }
    }
}

TEST_CASE("lambda freezes at the first EMA crossing and never grows after") {
    train::AdaptiveLambdaState s;
    s.interval = 5;
    // feed losses below threshold for a while, then a large burst
    for (int i = 0; i < 23; ++i) s = train::lambda_step(s, 0.1);
    CHECK(!s.frozen);
    CHECK(s.lambda == doctest::Approx(0.1 * 4).epsilon(1e-12));
    for (int i = 0; i < 2000 && !s.frozen; ++i) s = train::lambda_step(s, 5.0);
    CHECK(s.frozen);
    double frozen_lambda = s.lambda;
    for (int i = 0; i < 100; ++i) s = train::lambda_step(s, 5.0);
    CHECK(s.lambda == frozen_lambda);
}

TEST_CASE("lambda controller rejects non-finite observations") {
    train::AdaptiveLambdaState s;
    CHECK_THROWS_AS(train::lambda_step(s, std::nan("")), NumericError);
}

TEST_CASE("history buffer fills to capacity then holds") {
    train::HistoryBuffer buf(50, 7);
    Tensor img({1, 1, 1, 1});
    for (int i = 0; i < 200; ++i) {
        img[0] = double(i);
        buf.push_sample(img);
        CHECK(buf.size() <= 50);
    }
    CHECK(buf.size() == 50);
}

TEST_CASE("under capacity the pushed image is returned unchanged") {
    train::HistoryBuffer buf(50, 7);
    for (int i = 0; i < 50; ++i) {
        Tensor img({1, 1, 1, 1});
        img[0] = double(i);
        Tensor out = buf.push_sample(img);
        CHECK(out[0] == double(i));
    }
}

TEST_CASE("swap frequency approaches one half once full") {
    train::HistoryBuffer buf(50, 1234);
    Tensor img({1, 1, 1, 1});
    const int pushes = 10000;
    for (int i = 0; i < 50 + pushes; ++i) {
        img[0] = double(i);
        buf.push_sample(img);
    }
    CHECK(buf.full_pushes() == pushes);
    double freq = double(buf.swap_count()) / double(pushes);
    CHECK(freq > 0.48);
    CHECK(freq < 0.52);
}

TEST_CASE("swapped-out images come from the stored pool") {
    train::HistoryBuffer buf(10, 99);
    Tensor img({1});
    for (int i = 0; i < 10; ++i) {
        img[0] = double(i);
        buf.push_sample(img);
    }
    for (int i = 10; i < 500; ++i) {
        img[0] = double(i);
        Tensor out = buf.push_sample(img);
        // returned image is either the fresh one or something pushed earlier
        CHECK(out[0] <= double(i));
        CHECK(out[0] >= 0.0);
    }
    CHECK(buf.size() == 10);
}

TEST_CASE("Adam bias correction matches a hand-stepped scalar") {
    nn::ParamStore store(nn::NetworkId::CLASSIFIER);
    ad::Var& p = store.add("p", Tensor({1}, {1.0}));
    train::Adam opt(0.9, 0.999, 1e-8);

    double m = 0, v = 0, val = 1.0;
    for (int t = 1; t <= 5; ++t) {
        double g = 0.3 * t;  // arbitrary deterministic gradient stream
        p->ensure_grad()[0] = g;
        opt.step(store, 1e-2);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        double mh = m / (1 - std::pow(0.9, t));
        double vh = v / (1 - std::pow(0.999, t));
        val -= 1e-2 * mh / (std::sqrt(vh) + 1e-8);
        CHECK(p->val[0] == doctest::Approx(val).epsilon(1e-14));
        store.zero_grad();
    }
}

TEST_CASE("Adam skips frozen parameters and rejects non-finite gradients") {
    nn::ParamStore store(nn::NetworkId::CLASSIFIER);
    ad::Var& p = store.add("p", Tensor({1}, {1.0}));
    train::Adam opt(0.5, 0.999, 1e-8);
    p->ensure_grad()[0] = 1.0;
    store.set_trainable(false);
    opt.step(store, 0.1);
    CHECK(p->val[0] == 1.0);

    store.set_trainable(true);
    p->ensure_grad()[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(opt.step(store, 0.1), NumericError);
}
