#include "atx/config.hpp"

#include <json.hpp>

#include <fstream>

namespace atx::cfg {

using nlohmann::json;

std::string hash_string(const std::string& text) {
    uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
    throw ConfigError("config field '" + field + "': " + why);
}

template <typename T>
T get_or(const json& j, const std::string& key, T def) {
    if (!j.contains(key)) return def;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        bad_field(key, "wrong type");
    }
}

void apply_override(json& j, const std::string& spec) {
    auto eq = spec.find('=');
    if (eq == std::string::npos) throw ConfigError("override must be key.path=value: " + spec);
    std::string path = spec.substr(0, eq), value = spec.substr(eq + 1);
    json* cur = &j;
    size_t pos = 0;
    while (true) {
        size_t dot = path.find('.', pos);
        std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (key.empty()) throw ConfigError("bad override path: " + path);
        if (dot == std::string::npos) {
            json parsed = json::parse(value, nullptr, false);
            (*cur)[key] = parsed.is_discarded() ? json(value) : parsed;
            return;
        }
        cur = &(*cur)[key];
        pos = dot + 1;
    }
}

}  // namespace

RunConfig config_from_json_text(const std::string& text, const std::vector<std::string>& overrides,
                                uint64_t seed_override) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config is not valid JSON");
    if (!j.is_object()) throw ConfigError("config root must be an object");
    for (const auto& o : overrides) apply_override(j, o);
    if (seed_override != uint64_t(-1)) j["seed"] = seed_override;

    static const std::vector<std::string> known = {
        "data",      "model",          "optimizer", "stages",     "adaptive_lambda",
        "buffer",    "batch_size",     "seed",      "output_dir", "pretrained_vgg",
        "allow_random_vgg", "sample_every", "log_every", "reg_weights"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            bad_field(it.key(), "unknown field");

    RunConfig c;
    if (!j.contains("data") || !j["data"].is_object()) bad_field("data", "required object");
    const json& d = j["data"];
    if (!d.contains("domain_x")) bad_field("data.domain_x", "required");
    if (!d.contains("domain_y")) bad_field("data.domain_y", "required");
    c.domain_x = d.at("domain_x").get<std::string>();
    c.domain_y = d.at("domain_y").get<std::string>();
    c.image_size = get_or<int>(d, "image_size", 256);
    if (c.image_size < 8 || c.image_size % 4 != 0)
        bad_field("data.image_size", "must be >= 8 and divisible by 4");

    c.batch_size = get_or<int>(j, "batch_size", 1);
    if (c.batch_size < 1) bad_field("batch_size", "must be >= 1");
    c.seed = get_or<uint64_t>(j, "seed", 0);
    if (!j.contains("output_dir")) bad_field("output_dir", "required");
    c.output_dir = j.at("output_dir").get<std::string>();
    c.pretrained_vgg = get_or<std::string>(j, "pretrained_vgg", "");
    c.allow_random_vgg = get_or<bool>(j, "allow_random_vgg", false);
    c.sample_every = get_or<int64_t>(j, "sample_every", 0);
    c.log_every = get_or<int64_t>(j, "log_every", 1);

    if (j.contains("model")) {
        const json& m = j["model"];
        c.model.g0_base = get_or<int>(m, "g0_base", 64);
        c.model.g0_res_blocks = get_or<int>(m, "g0_res_blocks", 9);
        c.model.g0_dilation = get_or<int>(m, "g0_dilation", 2);
        c.model.vgg_width_scale = get_or<double>(m, "vgg_width_scale", 1.0);
        c.model.attn_deconv1 = get_or<int>(m, "attn_deconv1", 128);
        c.model.attn_deconv2 = get_or<int>(m, "attn_deconv2", 64);
        c.model.d_base = get_or<int>(m, "d_base", 64);
        c.model.reg_layers = get_or<std::vector<std::string>>(
            m, "reg_layers", {"relu1_2", "relu2_2", "relu3_3"});
        if (c.model.g0_base < 1 || c.model.d_base < 1) bad_field("model", "widths must be >= 1");
        if (c.model.g0_res_blocks < 1) bad_field("model.g0_res_blocks", "must be >= 1");
        if (c.model.vgg_width_scale <= 0 || c.model.vgg_width_scale > 1.0)
            bad_field("model.vgg_width_scale", "must be in (0,1]");
    }
    c.model.image_size = c.image_size;

    c.reg_weights = get_or<std::vector<double>>(j, "reg_weights", {1.0 / 32, 1.0 / 16, 1.0 / 8});
    if (c.reg_weights.size() != c.model.reg_layers.size())
        bad_field("reg_weights", "length must match model.reg_layers");
    for (double w : c.reg_weights)
        if (w <= 0) bad_field("reg_weights", "must be positive");

    if (j.contains("optimizer")) {
        const json& o = j["optimizer"];
        c.optimizer.base_lr = get_or<double>(o, "base_lr", 2e-4);
        c.optimizer.decay_start = get_or<int64_t>(o, "decay_start", 5000);
        c.optimizer.total_iters = get_or<int64_t>(o, "total_iters", 10000);
        c.optimizer.adam_beta1 = get_or<double>(o, "adam_beta1", 0.5);
        c.optimizer.adam_beta2 = get_or<double>(o, "adam_beta2", 0.999);
        c.optimizer.adam_eps = get_or<double>(o, "adam_eps", 1e-8);
        if (c.optimizer.base_lr <= 0) bad_field("optimizer.base_lr", "must be > 0");
        if (c.optimizer.decay_start <= 0 || c.optimizer.decay_start > c.optimizer.total_iters)
            bad_field("optimizer.decay_start", "require 0 < decay_start <= total_iters");
    }

    if (j.contains("stages")) {
        const json& s = j["stages"];
        c.stages.g0_iters = get_or<int64_t>(s, "g0_iters", 10000);
        c.stages.attn_iters = get_or<int64_t>(s, "attn_iters", 5000);
        c.stages.joint_iters = get_or<int64_t>(s, "joint_iters", 5000);
        c.stages.joint_lr_scale = get_or<double>(s, "joint_lr_scale", 0.1);
        c.stages.reset_d_per_stage = get_or<bool>(s, "reset_d_per_stage", false);
        if (c.stages.g0_iters < 1 || c.stages.attn_iters < 1 || c.stages.joint_iters < 1)
            bad_field("stages", "stage lengths must be >= 1");
        if (c.stages.joint_lr_scale <= 0) bad_field("stages.joint_lr_scale", "must be > 0");
    }

    if (j.contains("adaptive_lambda")) {
        const json& a = j["adaptive_lambda"];
        c.adaptive_lambda.threshold =
            get_or<double>(a, "threshold", c.adaptive_lambda.threshold);
        c.adaptive_lambda.step_size = get_or<double>(a, "step_size", 0.1);
        c.adaptive_lambda.interval = get_or<int64_t>(a, "interval", 100);
        c.adaptive_lambda.ema_decay = get_or<double>(a, "ema_decay", 0.99);
        if (c.adaptive_lambda.interval < 1) bad_field("adaptive_lambda.interval", "must be >= 1");
        if (c.adaptive_lambda.step_size < 0) bad_field("adaptive_lambda.step_size", "must be >= 0");
    }

    if (j.contains("buffer")) {
        c.buffer_capacity = get_or<int64_t>(j["buffer"], "capacity", 50);
        if (c.buffer_capacity < 1) bad_field("buffer.capacity", "must be >= 1");
    }

    // Canonical form (sorted keys) drives the config hash; seeds and paths included.
    c.canonical_json = j.dump();
    c.config_hash = hash_string(c.canonical_json);
    return c;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                      uint64_t seed_override) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return config_from_json_text(text, overrides, seed_override);
}

}  // namespace atx::cfg
