#pragma once

#include <filesystem>

#include "atx/config.hpp"
#include "atx/data.hpp"
#include "atx/losses.hpp"
#include "atx/schedule.hpp"

namespace atx::train {

enum class TrainStage { G0_ONLY, ATTN_ONLY, JOINT };

std::string stage_name(TrainStage s);
TrainStage stage_from_name(const std::string& name);

struct StepLosses {
    double d = 0;
    losses::LossBreakdown g;
    double lr = 0;
};

// Owns every piece of mutable training state; one logical thread of control.
class Trainer {
  public:
    explicit Trainer(const cfg::RunConfig& config);

    // Full three-stage schedule (or the remainder after resume). Writes
    // checkpoints at stage boundaries plus a per-iteration manifest.
    void run();

    // Restore a stage-boundary checkpoint; refuses on config hash mismatch.
    void resume(const std::string& checkpoint_path);

    StepLosses train_step(const Tensor& x_batch, const Tensor& y_batch);

    // Applies freeze contracts and per-stage optimizer/lambda/buffer resets.
    void begin_stage(TrainStage stage);

    void save_checkpoint(const std::filesystem::path& path) const;

    nn::ParamStore& g0() { return g0_; }
    nn::ParamStore& gattn() { return gattn_; }
    nn::ParamStore& disc() { return disc_; }
    nn::ParamStore& vgg() { return vgg_; }
    TrainStage stage() const { return stage_; }
    int64_t stage_iter() const { return stage_iter_; }
    const AdaptiveLambdaState& lambda_state() const { return lambda_; }
    const cfg::RunConfig& config() const { return config_; }
    HistoryBuffer& buffer() { return buffer_; }
    OptimizerConfig stage_opt_config(TrainStage stage) const;

    // Float32 round-trip applied at checkpoint time so that a continued run
    // and a resumed run start the next stage from identical parameters.
    void quantize_params_to_f32();

  private:
    void load_checkpoint_arrays(const nn::WeightsArchive& a);
    int64_t stage_length(TrainStage s) const;
    void write_samples(const std::filesystem::path& path);

    cfg::RunConfig config_;
    nn::ParamStore g0_{nn::NetworkId::G0};
    nn::ParamStore gattn_{nn::NetworkId::GATTN};
    nn::ParamStore disc_{nn::NetworkId::DISC};
    nn::ParamStore vgg_{nn::NetworkId::VGG_EXTRACTOR};
    losses::RegWeights reg_weights_;
    Adam opt_g_;
    Adam opt_d_;
    AdaptiveLambdaState lambda_;
    HistoryBuffer buffer_;
    TrainStage stage_ = TrainStage::G0_ONLY;
    int64_t stage_iter_ = 0;
    int64_t global_iter_ = 0;
    int resume_stage_index_ = 0;  // first stage to run
    Rng rng_train_, rng_x_, rng_y_;

    friend struct TrainerTestAccess;
};

// Inference-side view of a checkpoint.
struct LoadedModel {
    nn::ModelConfig model;
    TrainStage stage = TrainStage::G0_ONLY;
    std::string config_hash;
    nn::ParamStore g0{nn::NetworkId::G0};
    nn::ParamStore gattn{nn::NetworkId::GATTN};
    nn::ParamStore disc{nn::NetworkId::DISC};

    bool has_attention() const { return stage != TrainStage::G0_ONLY; }
    // x (1,3,H,W) -> final output; optionally exposes G0 output and attention.
    Tensor translate(const Tensor& x, Tensor* g0_out = nullptr, Tensor* attn = nullptr);
};

LoadedModel load_model(const std::string& checkpoint_path);

}  // namespace atx::train
