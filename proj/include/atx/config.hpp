#pragma once

#include <string>
#include <vector>

#include "atx/losses.hpp"
#include "atx/nn.hpp"
#include "atx/schedule.hpp"

namespace atx::cfg {

struct StageConfig {
    int64_t g0_iters = 10000;
    int64_t attn_iters = 5000;
    int64_t joint_iters = 5000;
    double joint_lr_scale = 0.1;
    bool reset_d_per_stage = false;
};

struct AdaptiveLambdaConfig {
    double threshold = 1.2 * 0.6931471805599453;
    double step_size = 0.1;
    int64_t interval = 100;
    double ema_decay = 0.99;
};

struct RunConfig {
    std::string domain_x;
    std::string domain_y;
    int image_size = 256;
    int batch_size = 1;
    uint64_t seed = 0;
    std::string output_dir;
    std::string pretrained_vgg;  // weights archive path; empty means none
    bool allow_random_vgg = false;
    int64_t sample_every = 0;  // 0 -> stage boundaries only
    int64_t log_every = 1;

    nn::ModelConfig model;
    std::vector<double> reg_weights = {1.0 / 32, 1.0 / 16, 1.0 / 8};
    train::OptimizerConfig optimizer;
    StageConfig stages;
    AdaptiveLambdaConfig adaptive_lambda;
    int64_t buffer_capacity = 50;

    std::string config_hash;  // filled by load/finalize
    std::string canonical_json;
};

// Parses + validates; throws ConfigError naming the offending field.
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {},
                      uint64_t seed_override = uint64_t(-1));
RunConfig config_from_json_text(const std::string& text,
                                const std::vector<std::string>& overrides = {},
                                uint64_t seed_override = uint64_t(-1));

// FNV-1a over the canonical serialized form.
std::string hash_string(const std::string& text);

}  // namespace atx::cfg
