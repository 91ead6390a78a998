#include "atx/nn.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

namespace atx::nn {

using ad::Var;

std::string network_id_name(NetworkId id) {
    switch (id) {
        case NetworkId::G0: return "G0";
        case NetworkId::GATTN: return "GATTN";
        case NetworkId::DISC: return "DISC";
        case NetworkId::VGG_EXTRACTOR: return "VGG";
        case NetworkId::CLASSIFIER: return "CLS";
    }
    return "?";
}

Var& ParamStore::add(const std::string& path, Tensor init, bool trainable, bool pretrained) {
    if (params_.count(path)) throw ConfigError("duplicate parameter path: " + path);
    Entry e;
    e.var = ad::leaf(std::move(init), trainable);
    e.pretrained = pretrained;
    return params_.emplace(path, std::move(e)).first->second.var;
}

Var& ParamStore::at(const std::string& path) {
    auto it = params_.find(path);
    if (it == params_.end())
        throw ConfigError(network_id_name(id_) + ": missing parameter " + path);
    return it->second.var;
}

const Var& ParamStore::at(const std::string& path) const {
    auto it = params_.find(path);
    if (it == params_.end())
        throw ConfigError(network_id_name(id_) + ": missing parameter " + path);
    return it->second.var;
}

Tensor& ParamStore::buffer(const std::string& path) {
    auto it = buffers_.find(path);
    if (it == buffers_.end())
        throw ConfigError(network_id_name(id_) + ": missing buffer " + path);
    return it->second;
}

Tensor& ParamStore::add_buffer(const std::string& path, Tensor init) {
    if (buffers_.count(path)) throw ConfigError("duplicate buffer path: " + path);
    return buffers_.emplace(path, std::move(init)).first->second;
}

void ParamStore::set_trainable(bool trainable) {
    for (auto& [k, e] : params_) e.var->requires_grad = trainable;
}

void ParamStore::zero_grad() {
    for (auto& [k, e] : params_) {
        if (e.var->grad_alloc)
            std::fill(e.var->grad.data(), e.var->grad.data() + e.var->grad.numel(), 0.0);
    }
}

int64_t ParamStore::param_count() const {
    int64_t n = 0;
    for (auto& [k, e] : params_) n += e.var->val.numel();
    return n;
}

int ModelConfig::vgg_channels(int idx) const {
    static const int base[7] = {64, 64, 128, 128, 256, 256, 256};
    int c = int(std::lround(base[idx] * vgg_width_scale));
    return c < 1 ? 1 : c;
}

void validate_image_batch(const Tensor& t) {
    if (t.ndim() != 4 || t.shape(1) != 3)
        throw InputError("image batch must be (N,3,H,W), got " + Tensor::shape_str(t.shape()));
    if (t.shape(2) % 4 != 0 || t.shape(3) % 4 != 0)
        throw InputError("image batch spatial dims must be divisible by 4");
    const double eps = 1e-5;
    for (int64_t i = 0; i < t.numel(); ++i) {
        double v = t[i];
        if (!std::isfinite(v)) throw InputError("image batch contains non-finite values");
        if (v < -1.0 - eps || v > 1.0 + eps)
            throw InputError("image batch values outside [-1,1]");
    }
}

// ---- archive IO ----

namespace {

template <typename T>
void write_pod(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw DataError("archive truncated");
    return v;
}

constexpr char kMagic[8] = {'A', 'T', 'X', 'A', 'R', 'C', 'H', '1'};

}  // namespace

void WeightsArchive::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for write: " + path);
    f.write(kMagic, 8);
    write_pod<uint64_t>(f, metadata_json.size());
    f.write(metadata_json.data(), std::streamsize(metadata_json.size()));
    write_pod<uint64_t>(f, arrays.size());
    std::vector<float> buf;
    for (const auto& [name, t] : arrays) {
        write_pod<uint32_t>(f, uint32_t(name.size()));
        f.write(name.data(), std::streamsize(name.size()));
        write_pod<uint32_t>(f, uint32_t(t.ndim()));
        for (size_t i = 0; i < t.ndim(); ++i) write_pod<int64_t>(f, t.shape(i));
        buf.resize(size_t(t.numel()));
        for (int64_t i = 0; i < t.numel(); ++i) buf[size_t(i)] = float(t[i]);
        uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(buf.data()),
                          uInt(buf.size() * sizeof(float)));
        write_pod<uint32_t>(f, uint32_t(crc));
        write_pod<uint64_t>(f, buf.size() * sizeof(float));
        f.write(reinterpret_cast<const char*>(buf.data()),
                std::streamsize(buf.size() * sizeof(float)));
    }
    if (!f) throw DataError("write failed: " + path);
}

WeightsArchive WeightsArchive::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open archive: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw DataError("bad archive magic: " + path);
    WeightsArchive a;
    uint64_t meta_len = read_pod<uint64_t>(f);
    a.metadata_json.resize(meta_len);
    f.read(a.metadata_json.data(), std::streamsize(meta_len));
    uint64_t count = read_pod<uint64_t>(f);
    for (uint64_t i = 0; i < count; ++i) {
        uint32_t name_len = read_pod<uint32_t>(f);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        uint32_t ndim = read_pod<uint32_t>(f);
        std::vector<int64_t> shape(ndim);
        for (auto& d : shape) d = read_pod<int64_t>(f);
        uint32_t stored_crc = read_pod<uint32_t>(f);
        uint64_t nbytes = read_pod<uint64_t>(f);
        std::vector<float> buf(nbytes / sizeof(float));
        f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(nbytes));
        if (!f) throw DataError("archive truncated: " + path);
        uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), uInt(nbytes));
        if (uint32_t(crc) != stored_crc)
            throw DataError("checksum mismatch for entry '" + name + "' in " + path);
        Tensor t(shape);
        if (size_t(t.numel()) != buf.size()) throw DataError("entry size mismatch: " + name);
        for (int64_t j = 0; j < t.numel(); ++j) t[j] = double(buf[size_t(j)]);
        a.arrays.emplace(std::move(name), std::move(t));
    }
    return a;
}

// ---- initializers ----

namespace {

Tensor gaussian(std::vector<int64_t> shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    fill_normal(t, rng, 0.0, stddev);
    return t;
}

void reg_conv(ParamStore& s, const std::string& name, int64_t cout, int64_t cin, int kh, int kw,
              Rng& rng, double stddev = 0.02) {
    s.add(name + ".weight", gaussian({cout, cin, kh, kw}, rng, stddev));
    s.add(name + ".bias", Tensor({cout}));
}

// conv_transpose weight layout is (Cin, Cout, kh, kw)
void reg_deconv(ParamStore& s, const std::string& name, int64_t cin, int64_t cout, int k,
                Rng& rng) {
    s.add(name + ".weight", gaussian({cin, cout, k, k}, rng, 0.02));
    s.add(name + ".bias", Tensor({cout}));
}

void reg_bn(ParamStore& s, const std::string& name, int64_t c) {
    s.add(name + ".gamma", Tensor::full({c}, 1.0));
    s.add(name + ".beta", Tensor({c}));
    s.add_buffer(name + ".running_mean", Tensor({c}));
    s.add_buffer(name + ".running_var", Tensor::full({c}, 1.0));
}

const char* kVggConvNames[7] = {"conv1_1", "conv1_2", "conv2_1", "conv2_2",
                                "conv3_1", "conv3_2", "conv3_3"};

// Registers the VGG-19 front-end (up to conv3_3) under `prefix`.
void reg_vgg_front(ParamStore& s, const std::string& prefix, const ModelConfig& cfg, Rng& rng,
                   const WeightsArchive* vgg, bool allow_random, bool trainable) {
    int cin = 3;
    for (int i = 0; i < 7; ++i) {
        int cout = cfg.vgg_channels(i);
        std::string name = prefix + kVggConvNames[i];
        Tensor w, b;
        if (vgg) {
            auto wit = vgg->arrays.find(std::string(kVggConvNames[i]) + ".weight");
            auto bit = vgg->arrays.find(std::string(kVggConvNames[i]) + ".bias");
            if (wit == vgg->arrays.end() || bit == vgg->arrays.end())
                throw DataError("pretrained archive missing " + std::string(kVggConvNames[i]));
            w = wit->second;
            b = bit->second;
            if (w.shape() != std::vector<int64_t>{cout, cin, 3, 3})
                throw ConfigError("pretrained " + name + " shape mismatch (width scale?)");
        } else if (allow_random) {
            // He init stand-in when no pretrained archive is configured.
            w = gaussian({cout, cin, 3, 3}, rng, std::sqrt(2.0 / (cin * 9.0)));
            b = Tensor({cout});
        } else {
            throw ConfigError("missing pretrained VGG weights for " + name +
                              " (set pretrained_vgg path or allow_random_vgg)");
        }
        s.add(name + ".weight", std::move(w), trainable, vgg != nullptr);
        s.add(name + ".bias", std::move(b), trainable, vgg != nullptr);
        cin = cout;
    }
}

}  // namespace

void init_g0(ParamStore& s, const ModelConfig& cfg, Rng& rng) {
    int c1 = cfg.g0_base, c2 = 2 * cfg.g0_base, c3 = 4 * cfg.g0_base;
    reg_conv(s, "enc1.conv", c1, 3, 7, 7, rng);
    reg_bn(s, "enc1.bn", c1);
    reg_conv(s, "enc2.conv", c2, c1, 3, 3, rng);
    reg_bn(s, "enc2.bn", c2);
    reg_conv(s, "enc3.conv", c3, c2, 3, 3, rng);
    reg_bn(s, "enc3.bn", c3);
    for (int i = 0; i < cfg.g0_res_blocks; ++i) {
        std::string p = "res" + std::to_string(i);
        reg_conv(s, p + ".conv1", c3, c3, 3, 3, rng);
        reg_bn(s, p + ".bn1", c3);
        reg_conv(s, p + ".conv2", c3, c3, 3, 3, rng);
        reg_bn(s, p + ".bn2", c3);
    }
    reg_deconv(s, "dec1.deconv", c3, c2, 3, rng);
    reg_bn(s, "dec1.bn", c2);
    reg_deconv(s, "dec2.deconv", c2, c1, 3, rng);
    reg_bn(s, "dec2.bn", c1);
    reg_conv(s, "out.conv", 3, c1, 7, 7, rng);
}

void init_discriminator(ParamStore& s, const ModelConfig& cfg, Rng& rng) {
    int c[4] = {cfg.d_base, 2 * cfg.d_base, 4 * cfg.d_base, 8 * cfg.d_base};
    reg_conv(s, "l1.conv", c[0], 3, 4, 4, rng);
    reg_conv(s, "l2.conv", c[1], c[0], 4, 4, rng);
    reg_bn(s, "l2.bn", c[1]);
    reg_conv(s, "l3.conv", c[2], c[1], 4, 4, rng);
    reg_bn(s, "l3.bn", c[2]);
    reg_conv(s, "l4.conv", c[3], c[2], 4, 4, rng);
    reg_bn(s, "l4.bn", c[3]);
    reg_conv(s, "l5.conv", 1, c[3], 4, 4, rng);
}

void init_attention(ParamStore& s, const ModelConfig& cfg, Rng& rng, const WeightsArchive* vgg,
                    bool allow_random_vgg) {
    reg_vgg_front(s, "vgg.", cfg, rng, vgg, allow_random_vgg, /*trainable=*/true);
    int c3 = cfg.vgg_channels(6);
    reg_deconv(s, "dec1.deconv", c3, cfg.attn_deconv1, 3, rng);
    reg_bn(s, "dec1.bn", cfg.attn_deconv1);
    reg_deconv(s, "dec2.deconv", cfg.attn_deconv1, cfg.attn_deconv2, 3, rng);
    reg_bn(s, "dec2.bn", cfg.attn_deconv2);
    reg_conv(s, "out.conv", 1, cfg.attn_deconv2, 3, 3, rng);
}

void init_vgg_extractor(ParamStore& s, const ModelConfig& cfg, Rng& rng,
                        const WeightsArchive* vgg, bool allow_random_vgg) {
    reg_vgg_front(s, "", cfg, rng, vgg, allow_random_vgg, /*trainable=*/false);
}

// ---- forward passes ----

namespace {

Var conv(ParamStore& s, const std::string& name, const Var& x, int stride, int pad, int dil = 1) {
    return ad::conv2d(x, s.at(name + ".weight"), s.at(name + ".bias"), stride, pad, dil);
}

Var deconv(ParamStore& s, const std::string& name, const Var& x) {
    return ad::conv_transpose2d(x, s.at(name + ".weight"), s.at(name + ".bias"), 2, 1, 1);
}

Var bn(ParamStore& s, const std::string& name, const Var& x, bool training) {
    return ad::batch_norm2d(x, s.at(name + ".gamma"), s.at(name + ".beta"),
                            s.buffer(name + ".running_mean"), s.buffer(name + ".running_var"),
                            training);
}

Var conv_bn_relu(ParamStore& s, const std::string& p, const Var& x, int stride, int pad, int dil,
                 bool training) {
    return ad::relu(bn(s, p + ".bn", conv(s, p + ".conv", x, stride, pad, dil), training));
}

// Remaps model space [-1,1] to the extractor's ImageNet normalization.
Var imagenet_normalize(const Var& x) {
    static const double mean[3] = {0.485, 0.456, 0.406};
    static const double stddev[3] = {0.229, 0.224, 0.225};
    const Tensor& v = x->val;
    int64_t N = v.shape(0), HW = v.shape(2) * v.shape(3);
    Tensor sc(v.shape()), sh(v.shape());
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < 3; ++c) {
            double a = 0.5 / stddev[c];
            double b = (0.5 - mean[c]) / stddev[c];
            double* ps = sc.data() + (n * 3 + c) * HW;
            double* pb = sh.data() + (n * 3 + c) * HW;
            std::fill(ps, ps + HW, a);
            std::fill(pb, pb + HW, b);
        }
    return ad::add(ad::mul(x, ad::constant(std::move(sc))), ad::constant(std::move(sh)));
}

void check_store(const ParamStore& s, NetworkId want, const char* op) {
    if (s.id() != want)
        throw ConfigError(std::string(op) + ": store is " + network_id_name(s.id()) +
                          ", expected " + network_id_name(want));
}

// Shared VGG-19 front-end walk; records requested relu taps.
Var vgg_front_forward(ParamStore& s, const std::string& prefix, const Var& input,
                      const std::vector<std::string>* want,
                      std::vector<std::pair<std::string, Var>>* taps) {
    static const char* kTapNames[7] = {"relu1_1", "relu1_2", "relu2_1", "relu2_2",
                                       "relu3_1", "relu3_2", "relu3_3"};
    Var h = input;
    for (int i = 0; i < 7; ++i) {
        h = ad::relu(conv(s, prefix + kVggConvNames[i], h, 1, 1));
        if (taps && want) {
            for (const auto& name : *want)
                if (name == kTapNames[i]) taps->emplace_back(name, h);
        }
        if (i == 1 || i == 3) h = ad::max_pool2d(h);  // after relu1_2 and relu2_2
    }
    return h;
}

}  // namespace

Var g0_forward(ParamStore& s, const Var& x, const ModelConfig& cfg, bool training) {
    check_store(s, NetworkId::G0, "g0_forward");
    validate_image_batch(x->val);
    Var h = conv_bn_relu(s, "enc1", x, 1, 3, 1, training);
    h = conv_bn_relu(s, "enc2", h, 2, 1, 1, training);
    h = conv_bn_relu(s, "enc3", h, 2, 1, 1, training);
    int d = cfg.g0_dilation;
    for (int i = 0; i < cfg.g0_res_blocks; ++i) {
        std::string p = "res" + std::to_string(i);
        Var a = ad::relu(bn(s, p + ".bn1", conv(s, p + ".conv1", h, 1, d, d), training));
        Var b = ad::relu(bn(s, p + ".bn2", conv(s, p + ".conv2", a, 1, d, d), training));
        h = ad::add(h, b);
    }
    h = ad::relu(bn(s, "dec1.bn", deconv(s, "dec1.deconv", h), training));
    h = ad::relu(bn(s, "dec2.bn", deconv(s, "dec2.deconv", h), training));
    return ad::tanh_op(conv(s, "out.conv", h, 1, 3));
}

Var attention_forward(ParamStore& s, const Var& x, const ModelConfig& cfg, bool training) {
    check_store(s, NetworkId::GATTN, "attention_forward");
    validate_image_batch(x->val);
    Var h = vgg_front_forward(s, "vgg.", imagenet_normalize(x), nullptr, nullptr);
    h = ad::relu(bn(s, "dec1.bn", deconv(s, "dec1.deconv", h), training));
    h = ad::relu(bn(s, "dec2.bn", deconv(s, "dec2.deconv", h), training));
    return ad::sigmoid_op(conv(s, "out.conv", h, 1, 1));
}

Var discriminator_forward(ParamStore& s, const Var& img, const ModelConfig& cfg, bool training) {
    check_store(s, NetworkId::DISC, "discriminator_forward");
    double sl = cfg.leaky_slope;
    Var h = ad::leaky_relu(conv(s, "l1.conv", img, 2, 1), sl);
    h = ad::leaky_relu(bn(s, "l2.bn", conv(s, "l2.conv", h, 2, 1), training), sl);
    h = ad::leaky_relu(bn(s, "l3.bn", conv(s, "l3.conv", h, 2, 1), training), sl);
    h = ad::leaky_relu(bn(s, "l4.bn", conv(s, "l4.conv", h, 1, 1), training), sl);
    return conv(s, "l5.conv", h, 1, 1);
}

Var composite(const Var& x, const Var& g0_out, const Var& attn) {
    if (!x->val.same_shape(g0_out->val))
        throw InputError("composite: x and g0_out shapes differ");
    Var masked_g0 = ad::mask_mul(attn, g0_out);
    Var inv = ad::affine(attn, -1.0, 1.0);
    Var masked_x = ad::mask_mul(inv, x);
    return ad::add(masked_g0, masked_x);
}

std::vector<std::pair<std::string, Var>> feature_extract(ParamStore& vgg_store, const Var& x,
                                                         const ModelConfig& cfg,
                                                         const std::vector<std::string>& layers) {
    check_store(vgg_store, NetworkId::VGG_EXTRACTOR, "feature_extract");
    validate_image_batch(x->val);
    std::vector<std::pair<std::string, Var>> taps;
    vgg_front_forward(vgg_store, "", imagenet_normalize(x), &layers, &taps);
    if (taps.size() != layers.size())
        throw ConfigError("feature_extract: unknown layer in reg_layers");
    (void)cfg;
    return taps;
}

void init_classifier(ParamStore& s, int image_size, int n_classes, Rng& rng) {
    if (image_size % 4 != 0) throw ConfigError("classifier image size must be divisible by 4");
    reg_conv(s, "c1.conv", 16, 3, 3, 3, rng, 0.05);
    reg_conv(s, "c2.conv", 32, 16, 3, 3, rng, 0.05);
    int k = image_size / 4;
    s.add("fc1.weight", gaussian({64, 32, k, k}, rng, std::sqrt(2.0 / (32.0 * k * k))));
    s.add("fc1.bias", Tensor({64}));
    s.add("fc2.weight", gaussian({n_classes, 64, 1, 1}, rng, 0.05));
    s.add("fc2.bias", Tensor({int64_t(n_classes)}));
}

Var classifier_forward(ParamStore& s, const Var& x, bool training) {
    check_store(s, NetworkId::CLASSIFIER, "classifier_forward");
    (void)training;
    Var h = ad::max_pool2d(ad::relu(conv(s, "c1.conv", x, 1, 1)));
    h = ad::max_pool2d(ad::relu(conv(s, "c2.conv", h, 1, 1)));
    h = ad::relu(ad::conv2d(h, s.at("fc1.weight"), s.at("fc1.bias"), 1, 0));
    h = ad::conv2d(h, s.at("fc2.weight"), s.at("fc2.bias"), 1, 0);
    int64_t n = h->val.shape(0), k = h->val.shape(1);
    return ad::reshape(h, {n, k});
}

}  // namespace atx::nn
