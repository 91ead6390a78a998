#include <doctest.h>

#include "atx/nn.hpp"

#include <cmath>

using namespace atx;
using ad::Var;

namespace {

Tensor random_images(int n, int s, Rng& rng) {
    Tensor t({n, 3, s, s});
    fill_uniform(t, rng, -1.0, 1.0);
    return t;
}

nn::ModelConfig tiny_config(int image_size) {
    nn::ModelConfig m;
    m.image_size = image_size;
    m.g0_base = 4;
    m.g0_res_blocks = 2;
    m.vgg_width_scale = 0.0625;  // 4,4,8,8,16,16,16
    m.attn_deconv1 = 8;
    m.attn_deconv2 = 4;
    m.d_base = 4;
    return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("full-size output shapes: generator, attention, discriminator") {
    Rng rng(1);
    nn::ModelConfig m;  // defaults: 256px full model
    Tensor x = random_images(1, 256, rng);

    nn::ParamStore g0(nn::NetworkId::G0);
    nn::init_g0(g0, m, rng);
    Var gy = nn::g0_forward(g0, ad::constant(x), m, false);
    CHECK(gy->val.shape() == std::vector<int64_t>{1, 3, 256, 256});

    nn::ParamStore ga(nn::NetworkId::GATTN);
    nn::init_attention(ga, m, rng, nullptr, true);
    Var ay = nn::attention_forward(ga, ad::constant(x), m, false);
    CHECK(ay->val.shape() == std::vector<int64_t>{1, 1, 256, 256});
    for (int64_t i = 0; i < ay->val.numel(); ++i) {
        CHECK(ay->val[i] >= 0.0);
        CHECK(ay->val[i] <= 1.0);
    }

    nn::ParamStore d(nn::NetworkId::DISC);
    nn::init_discriminator(d, m, rng);
    Var dy = nn::discriminator_forward(d, ad::constant(x), m, false);
    CHECK(dy->val.shape() == std::vector<int64_t>{1, 1, 30, 30});
}

TEST_CASE("generator output stays in [-1,1]") {
    Rng rng(2);
    nn::ModelConfig m = tiny_config(32);
    nn::ParamStore g0(nn::NetworkId::G0);
    nn::init_g0(g0, m, rng);
    Var y = nn::g0_forward(g0, ad::constant(random_images(2, 32, rng)), m, false);
    for (int64_t i = 0; i < y->val.numel(); ++i) {
        CHECK(y->val[i] >= -1.0);
        CHECK(y->val[i] <= 1.0);
    }
}

TEST_CASE("composite identities") {
    Rng rng(3);
    Tensor xt = random_images(2, 16, rng);
    Tensor gt = random_images(2, 16, rng);
    Var x = ad::constant(xt), g = ad::constant(gt);

    SUBCASE("mask of ones returns the initial translation exactly") {
        Var ones = ad::constant(Tensor::full({2, 1, 16, 16}, 1.0));
        Tensor out = nn::composite(x, g, ones)->val;
        CHECK(max_abs_diff(out, gt) == 0.0);
    }
    SUBCASE("mask of zeros returns the input exactly") {
        Var zeros = ad::constant(Tensor({2, 1, 16, 16}));
        Tensor out = nn::composite(x, g, zeros)->val;
        CHECK(max_abs_diff(out, xt) == 0.0);
    }
    SUBCASE("interior mask blends per pixel") {
        Tensor mt({1, 1, 1, 1}, {0.25});
        Tensor x1({1, 3, 1, 1}, {1.0, -1.0, 0.5});
        Tensor g1({1, 3, 1, 1}, {-1.0, 1.0, 0.0});
        Tensor out = nn::composite(ad::constant(x1), ad::constant(g1), ad::constant(mt))->val;
        CHECK(out[0] == doctest::Approx(0.25 * -1.0 + 0.75 * 1.0));
        CHECK(out[1] == doctest::Approx(0.25 * 1.0 + 0.75 * -1.0));
        CHECK(out[2] == doctest::Approx(0.75 * 0.5));
    }
}

TEST_CASE("inference forwards are pure and deterministic") {
    Rng rng(4);
    nn::ModelConfig m = tiny_config(32);
    nn::ParamStore g0(nn::NetworkId::G0);
    nn::init_g0(g0, m, rng);
    Tensor x = random_images(1, 32, rng);
    Tensor first = nn::g0_forward(g0, ad::constant(x), m, false)->val;
    // Snapshot every buffer; a pure eval pass must leave them bitwise intact.
    std::map<std::string, Tensor> before = g0.buffers();
    Tensor second = nn::g0_forward(g0, ad::constant(x), m, false)->val;
    CHECK(max_abs_diff(first, second) == 0.0);
    for (auto& [k, v] : g0.buffers()) CHECK(max_abs_diff(v, before.at(k)) == 0.0);
}

TEST_CASE("training-mode forward updates batchnorm running stats") {
    Rng rng(5);
    nn::ModelConfig m = tiny_config(32);
    nn::ParamStore g0(nn::NetworkId::G0);
    nn::init_g0(g0, m, rng);
    std::map<std::string, Tensor> before = g0.buffers();
    nn::g0_forward(g0, ad::constant(random_images(2, 32, rng)), m, true);
    bool any_changed = false;
    for (auto& [k, v] : g0.buffers())
        if (max_abs_diff(v, before.at(k)) > 0) any_changed = true;
    CHECK(any_changed);
}

TEST_CASE("validate_image_batch rejects bad batches") {
    Tensor ok({1, 3, 8, 8});
    CHECK_NOTHROW(nn::validate_image_batch(ok));
    CHECK_THROWS_AS(nn::validate_image_batch(Tensor({1, 1, 8, 8})), InputError);
    CHECK_THROWS_AS(nn::validate_image_batch(Tensor({1, 3, 6, 8})), InputError);
    Tensor range({1, 3, 8, 8});
    range[0] = 1.5;
    CHECK_THROWS_AS(nn::validate_image_batch(range), InputError);
    CHECK_THROWS_AS(nn::validate_image_batch(Tensor({3, 8, 8})), InputError);
}

TEST_CASE("gradient flows through composited tiny generator stack") {
    // Analytic gradients of the full G(x) = a(x)*g0(x) + (1-a(x))*x pipeline
    // against central differences on a handful of parameters.
    Rng rng(6);
    nn::ModelConfig m = tiny_config(8);
    m.g0_res_blocks = 2;
    nn::ParamStore g0(nn::NetworkId::G0);
    nn::init_g0(g0, m, rng);
    nn::ParamStore ga(nn::NetworkId::GATTN);
    nn::init_attention(ga, m, rng, nullptr, true);
    Tensor xt = random_images(1, 8, rng);

    auto build = [&] {
        Var x = ad::constant(xt);
        Var gy = nn::g0_forward(g0, x, m, false);
        Var ay = nn::attention_forward(ga, x, m, false);
        return ad::mean_all(ad::square(nn::composite(x, gy, ay)));
    };
    Var loss = build();
    ad::backward(loss);

    const double h = 1e-5;
    for (const char* path : {"enc1.conv.weight", "res0.conv1.weight", "out.conv.bias"}) {
        ad::Var p = g0.at(path);
        REQUIRE(p->grad_alloc);
        for (int64_t i : {int64_t(0), p->val.numel() / 2}) {
            double orig = p->val[i];
            p->val[i] = orig + h;
            double fp = build()->val[0];
            p->val[i] = orig - h;
            double fm = build()->val[0];
            p->val[i] = orig;
            double numeric = (fp - fm) / (2 * h);
            double denom = std::max({std::abs(numeric), std::abs(p->grad[i]), 1e-6});
            CHECK(std::abs(numeric - p->grad[i]) / denom < 1e-4);
        }
    }
    for (const char* path : {"vgg.conv1_1.weight", "dec1.deconv.weight", "out.conv.bias"}) {
        ad::Var p = ga.at(path);
        REQUIRE(p->grad_alloc);
        int64_t i = p->val.numel() / 3;
        double orig = p->val[i];
        p->val[i] = orig + h;
        double fp = build()->val[0];
        p->val[i] = orig - h;
        double fm = build()->val[0];
        p->val[i] = orig;
        double numeric = (fp - fm) / (2 * h);
        double denom = std::max({std::abs(numeric), std::abs(p->grad[i]), 1e-6});
        CHECK(std::abs(numeric - p->grad[i]) / denom < 1e-4);
    }
}

TEST_CASE("feature_extract returns requested taps with pooled shapes") {
    Rng rng(7);
    nn::ModelConfig m = tiny_config(32);
    nn::ParamStore vgg(nn::NetworkId::VGG_EXTRACTOR);
    nn::init_vgg_extractor(vgg, m, rng, nullptr, true);
    auto taps = nn::feature_extract(vgg, ad::constant(random_images(1, 32, rng)), m,
                                    {"relu1_2", "relu2_2", "relu3_3"});
    REQUIRE(taps.size() == 3);
    CHECK(taps[0].first == "relu1_2");
    CHECK(taps[0].second->val.shape() ==
          std::vector<int64_t>{1, m.vgg_channels(1), 32, 32});
    CHECK(taps[1].second->val.shape() ==
          std::vector<int64_t>{1, m.vgg_channels(3), 16, 16});
    CHECK(taps[2].second->val.shape() ==
          std::vector<int64_t>{1, m.vgg_channels(6), 8, 8});
    CHECK_THROWS_AS(nn::feature_extract(vgg, ad::constant(random_images(1, 32, rng)), m,
                                        {"relu9_9"}),
                    ConfigError);
}

TEST_CASE("weights archive round-trips bitwise at float32 and detects corruption") {
    Rng rng(8);
    nn::WeightsArchive a;
    Tensor t({3, 4});
    fill_normal(t, rng, 0, 1);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = double(float(t[i]));
    a.arrays["block.w"] = t;
    a.metadata_json = "{\"k\":1}";
    std::string path = "/tmp/atx_test_archive.bin";
    a.save(path);
    nn::WeightsArchive b = nn::WeightsArchive::load(path);
    CHECK(b.metadata_json == a.metadata_json);
    REQUIRE(b.arrays.count("block.w") == 1);
    CHECK(b.arrays["block.w"].shape() == t.shape());
    CHECK(max_abs_diff(b.arrays["block.w"], t) == 0.0);

    // flip one payload byte -> CRC failure
    FILE* f = fopen(path.c_str(), "r+b");
    REQUIRE(f);
    fseek(f, -2, SEEK_END);
    int c = fgetc(f);
    fseek(f, -1, SEEK_CUR);
    fputc(c ^ 0xFF, f);
    fclose(f);
    CHECK_THROWS_AS(nn::WeightsArchive::load(path), DataError);
}

TEST_CASE("attention init without weights requires explicit opt-in") {
    Rng rng(9);
    nn::ModelConfig m = tiny_config(32);
    nn::ParamStore ga(nn::NetworkId::GATTN);
    CHECK_THROWS_AS(nn::init_attention(ga, m, rng, nullptr, false), ConfigError);
}

TEST_CASE("classifier emits (N,K) logits") {
    Rng rng(10);
    nn::ParamStore c(nn::NetworkId::CLASSIFIER);
    nn::init_classifier(c, 16, 5, rng);
    Var logits = nn::classifier_forward(c, ad::constant(random_images(3, 16, rng)), false);
    CHECK(logits->val.shape() == std::vector<int64_t>{3, 5});
}
