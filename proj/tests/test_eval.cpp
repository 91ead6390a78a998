#include <doctest.h>

#include "atx/eval.hpp"
#include "atx/data.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace atx;
namespace fs = std::filesystem;

namespace {

eval::Image8 random_image8(int s, Rng& rng) {
    eval::Image8 im;
    im.h = im.w = s;
    im.rgb.resize(size_t(s * s * 3));
    std::uniform_int_distribution<int> d(0, 255);
    for (auto& v : im.rgb) v = uint8_t(d(rng));
    return im;
}

// Direct per-pixel reference implementation of the map accuracy protocol.
double map_accuracy_ref(const std::vector<eval::Image8>& pred,
                        const std::vector<eval::Image8>& gt, int threshold) {
    int64_t correct = 0, total = 0;
    for (size_t i = 0; i < pred.size(); ++i)
        for (int y = 0; y < pred[i].h; ++y)
            for (int x = 0; x < pred[i].w; ++x) {
                int diff = 0;
                for (int c = 0; c < 3; ++c)
                    diff += std::abs(int(pred[i].at(y, x, c)) - int(gt[i].at(y, x, c)));
                correct += diff <= threshold;
                total++;
            }
    return double(correct) / double(total);
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("map accuracy equals the pixel-loop reference on random pairs") {
    Rng rng(41);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<eval::Image8> pred, gt;
        for (int i = 0; i < 3; ++i) {
            pred.push_back(random_image8(8, rng));
            gt.push_back(random_image8(8, rng));
        }
        double got = eval::map_accuracy(pred, gt);
        double want = map_accuracy_ref(pred, gt, 12);
        REQUIRE(got == want);
    }
}

TEST_CASE("map accuracy endpoints and threshold sensitivity") {
    Rng rng(42);
    eval::Image8 a = random_image8(8, rng);
    CHECK(eval::map_accuracy({a}, {a}) == 1.0);
    eval::Image8 b = a;
    for (auto& v : b.rgb) v = uint8_t(255 - v);
    // with a tiny threshold almost everything inverted must be wrong
    CHECK(eval::map_accuracy({b}, {a}, eval::RgbDiffMode::L1Sum, 0) < 0.05);

    // per-channel mode: one channel off by 13 fails L1Sum(12) and PerChannelMax(12)
    eval::Image8 c = a;
    c.rgb[0] = uint8_t(std::min(255, int(c.rgb[0]) + 13));
    double l1 = eval::map_accuracy({c}, {a}, eval::RgbDiffMode::L1Sum, 12);
    double pc = eval::map_accuracy({c}, {a}, eval::RgbDiffMode::PerChannelMax, 12);
    CHECK(l1 == doctest::Approx(63.0 / 64.0));
    CHECK(pc == doctest::Approx(63.0 / 64.0));
    // spreading 12 across channels passes L1Sum only at threshold 12
    eval::Image8 d = a;
    for (int ch = 0; ch < 3; ++ch)
        d.rgb[size_t(ch)] = uint8_t(std::min(255, int(d.rgb[size_t(ch)]) + 4));
    CHECK(eval::map_accuracy({d}, {a}, eval::RgbDiffMode::L1Sum, 12) == 1.0);
}

TEST_CASE("gaussian_stats computes mean and unbiased covariance") {
    std::vector<std::vector<double>> f = {{1.0, 2.0}, {3.0, 6.0}};
    eval::GaussianStats s = eval::gaussian_stats(f);
    CHECK(s.count == 2);
    CHECK(s.mu[0] == 2.0);
    CHECK(s.mu[1] == 4.0);
    // unbiased: sum of outer products / (n-1)
    CHECK(s.sigma[0] == doctest::Approx(2.0));   // var x
    CHECK(s.sigma[3] == doctest::Approx(8.0));   // var y
    CHECK(s.sigma[1] == doctest::Approx(4.0));   // cov
    CHECK(s.sigma[1] == s.sigma[2]);
    CHECK_THROWS_AS(eval::gaussian_stats({{1.0}}), InputError);
}

TEST_CASE("fid of a distribution with itself is zero") {
    Rng rng(43);
    std::vector<std::vector<double>> f;
    for (int i = 0; i < 30; ++i) {
        std::vector<double> v(4);
        for (auto& x : v) x = std::normal_distribution<double>(0, 1)(rng);
        f.push_back(v);
    }
    eval::GaussianStats s = eval::gaussian_stats(f);
    CHECK(std::abs(eval::fid(s, s)) <= 1e-6);
}

TEST_CASE("fid matches the closed form for diagonal covariances at d=4") {
    // With commuting (diagonal) covariances:
    //   FID = |mu_a - mu_b|^2 + sum_i (sqrt(va_i) - sqrt(vb_i))^2
    eval::GaussianStats a, b;
    a.mu = {0.0, 1.0, -2.0, 0.5};
    b.mu = {1.0, 1.0, 0.0, -0.5};
    a.sigma = std::vector<double>(16, 0.0);
    b.sigma = std::vector<double>(16, 0.0);
    double va[4] = {1.0, 4.0, 0.25, 2.0};
    double vb[4] = {9.0, 1.0, 1.0, 0.5};
    for (int i = 0; i < 4; ++i) {
        a.sigma[size_t(i * 4 + i)] = va[i];
        b.sigma[size_t(i * 4 + i)] = vb[i];
    }
    a.count = b.count = 100;
    double want = 0;
    for (int i = 0; i < 4; ++i) {
        double dm = a.mu[size_t(i)] - b.mu[size_t(i)];
        double ds = std::sqrt(va[i]) - std::sqrt(vb[i]);
        want += dm * dm + ds * ds;
    }
    double got = eval::fid(a, b);
    CHECK(std::abs(got - want) < 1e-8);
    CHECK(std::abs(eval::fid(b, a) - got) < 1e-8);  // symmetric
}

TEST_CASE("fid is non-negative on random sample stats") {
    Rng rng(44);
    auto draw = [&](double shift) {
        std::vector<std::vector<double>> f;
        for (int i = 0; i < 40; ++i) {
            std::vector<double> v(4);
            for (auto& x : v) x = std::normal_distribution<double>(shift, 1.3)(rng);
            f.push_back(v);
        }
        return eval::gaussian_stats(f);
    };
    eval::GaussianStats a = draw(0.0), b = draw(0.7);
    double d = eval::fid(a, b);
    CHECK(d >= 0.0);
    CHECK(d > 0.1);  // shifted means must register
}

TEST_CASE("fid embedding has extractor width and is deterministic") {
    Rng rng(45);
    nn::ModelConfig m;
    m.image_size = 16;
    m.vgg_width_scale = 0.0625;
    nn::ParamStore vgg(nn::NetworkId::VGG_EXTRACTOR);
    nn::init_vgg_extractor(vgg, m, rng, nullptr, true);
    Tensor img({1, 3, 16, 16});
    fill_uniform(img, rng, -1, 1);
    std::vector<double> e1 = eval::fid_embedding(vgg, img, m);
    std::vector<double> e2 = eval::fid_embedding(vgg, img, m);
    CHECK(int(e1.size()) == m.vgg_channels(6));
    CHECK(e1 == e2);
}

TEST_CASE("attention IoU on constructed maps") {
    Tensor attn({1, 1, 2, 2}, {0.9, 0.8, 0.1, 0.2});
    Tensor mask_same({1, 1, 2, 2}, {1.0, 1.0, 0.0, 0.0});
    Tensor mask_disjoint({1, 1, 2, 2}, {0.0, 0.0, 1.0, 1.0});
    Tensor mask_half({1, 1, 2, 2}, {1.0, 0.0, 0.0, 0.0});
    CHECK(eval::attention_iou(attn, mask_same, 0.5) == 1.0);
    CHECK(eval::attention_iou(attn, mask_disjoint, 0.5) == 0.0);
    CHECK(eval::attention_iou(attn, mask_half, 0.5) == doctest::Approx(0.5));

    Tensor low = Tensor::full({1, 1, 2, 2}, 0.1);
    Tensor empty({1, 1, 2, 2});
    CHECK(eval::attention_iou(low, empty, 0.5) == 1.0);  // both empty
    // threshold inclusivity: attn >= thresh counts as foreground
    Tensor edge({1, 1, 1, 1}, {0.5});
    Tensor one({1, 1, 1, 1}, {1.0});
    CHECK(eval::attention_iou(edge, one, 0.5) == 1.0);
}

TEST_CASE("adapt_classify learns separable toy classes through identity translation") {
    Rng rng(46);
    eval::LabeledSet train_set, test_set;
    auto make = [&](eval::LabeledSet& s, int n) {
        for (int i = 0; i < n; ++i) {
            int label = i % 2;
            Tensor img({1, 3, 8, 8});
            // class 0 dark, class 1 bright, plus noise
            fill_normal(img, rng, label == 0 ? -0.6 : 0.6, 0.1);
            for (int64_t j = 0; j < img.numel(); ++j)
                img[j] = std::clamp(img[j], -1.0, 1.0);
            s.images.push_back(img);
            s.labels.push_back(label);
        }
    };
    make(train_set, 40);
    make(test_set, 20);
    double acc = eval::adapt_classify([](const Tensor& t) { return t; }, train_set, test_set,
                                      2, /*epochs=*/5, /*batch=*/8, /*seed=*/3);
    CHECK(acc > 0.9);
}

TEST_CASE("report serialization carries metric fields and validates input") {
    eval::MetricReport r = eval::make_report("map_accuracy", 0.5, 10, "abc123");
    std::string j = r.to_json();
    CHECK(j.find("\"metric\":\"map_accuracy\"") != std::string::npos);
    CHECK(j.find("\"sample_count\":10") != std::string::npos);
    CHECK(j.find("abc123") != std::string::npos);
    CHECK(j.find("\"timestamp\"") != std::string::npos);
    CHECK_THROWS_AS(eval::make_report("m", std::nan(""), 1, "h"), NumericError);
    CHECK_THROWS_AS(eval::make_report("m", 0.0, 0, "h"), InputError);
}

TEST_CASE("export_grid writes a fixed-layout image deterministically") {
    Rng rng(47);
    std::vector<Tensor> ins, g0s, attns, finals;
    for (int i = 0; i < 2; ++i) {
        Tensor x({1, 3, 8, 8}), g({1, 3, 8, 8}), f({1, 3, 8, 8});
        fill_uniform(x, rng, -1, 1);
        fill_uniform(g, rng, -1, 1);
        fill_uniform(f, rng, -1, 1);
        Tensor a({1, 1, 8, 8});
        fill_uniform(a, rng, 0, 1);
        ins.push_back(x);
        g0s.push_back(g);
        attns.push_back(a);
        finals.push_back(f);
    }
    fs::path p1 = "/tmp/atx_grid_1.png", p2 = "/tmp/atx_grid_2.png";
    eval::export_grid(ins, g0s, attns, finals, p1);
    eval::export_grid(ins, g0s, attns, finals, p2);
    std::string b1 = slurp(p1), b2 = slurp(p2);
    REQUIRE(!b1.empty());
    CHECK(b1 == b2);  // byte-identical across runs
    eval::Image8 grid = eval::load_image8(p1);
    CHECK(grid.w == 4 * (8 + 2) + 2);  // 4 columns with 2px padding
    CHECK(grid.h == 2 * (8 + 2) + 2);
    CHECK_THROWS_AS(eval::export_grid({}, {}, {}, {}, p1), InputError);
}
