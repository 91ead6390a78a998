#pragma once

#include <map>
#include <optional>

#include "atx/autodiff.hpp"

namespace atx::nn {

enum class NetworkId { G0, GATTN, DISC, VGG_EXTRACTOR, CLASSIFIER };

std::string network_id_name(NetworkId id);

// Named, shaped parameter collection. Values live inside leaf autodiff nodes
// so forward graphs reference them without copies; gradients accumulate in
// the same nodes and are consumed by the optimizer.
class ParamStore {
  public:
    explicit ParamStore(NetworkId id) : id_(id) {}

    ad::Var& add(const std::string& path, Tensor init, bool trainable = true,
                 bool pretrained = false);
    ad::Var& at(const std::string& path);
    const ad::Var& at(const std::string& path) const;
    bool has(const std::string& path) const { return params_.count(path) > 0; }

    // BN running statistics and similar non-learned state.
    Tensor& buffer(const std::string& path);
    Tensor& add_buffer(const std::string& path, Tensor init);
    bool has_buffer(const std::string& path) const { return buffers_.count(path) > 0; }

    void set_trainable(bool trainable);
    void zero_grad();
    int64_t param_count() const;
    NetworkId id() const { return id_; }

    struct Entry {
        ad::Var var;
        bool pretrained = false;
    };
    const std::map<std::string, Entry>& params() const { return params_; }
    std::map<std::string, Entry>& params() { return params_; }
    const std::map<std::string, Tensor>& buffers() const { return buffers_; }
    std::map<std::string, Tensor>& buffers() { return buffers_; }

  private:
    NetworkId id_;
    std::map<std::string, Entry> params_;
    std::map<std::string, Tensor> buffers_;
};

// Architecture knobs. Defaults are the full-size model; tests and the toy
// benchmark shrink widths/depth through these.
struct ModelConfig {
    int image_size = 256;
    int g0_base = 64;           // encoder widths g0_base, 2x, 4x
    int g0_res_blocks = 9;
    int g0_dilation = 2;
    double vgg_width_scale = 1.0;  // scales VGG-19 channel widths
    int attn_deconv1 = 128;
    int attn_deconv2 = 64;
    int d_base = 64;            // discriminator widths d_base * {1,2,4,8}
    double leaky_slope = 0.2;
    std::vector<std::string> reg_layers = {"relu1_2", "relu2_2", "relu3_3"};

    int vgg_channels(int idx) const;  // idx over the 7 convs up to conv3_3
};

// ε slack on the [-1,1] range check.
void validate_image_batch(const Tensor& t);

// Simple float32 blob archive: name -> array, CRC-checked. Used both for
// pretrained VGG weights and (with extra metadata) checkpoints.
struct WeightsArchive {
    std::map<std::string, Tensor> arrays;
    std::string metadata_json;  // optional free-form header block

    void save(const std::string& path) const;
    static WeightsArchive load(const std::string& path);
};

// Parameter construction. All randomness comes from the passed engine.
void init_g0(ParamStore& store, const ModelConfig& cfg, Rng& rng);
void init_discriminator(ParamStore& store, const ModelConfig& cfg, Rng& rng);
// vgg == nullptr requires allow_random_vgg, otherwise initialization error.
void init_attention(ParamStore& store, const ModelConfig& cfg, Rng& rng,
                    const WeightsArchive* vgg, bool allow_random_vgg);
void init_vgg_extractor(ParamStore& store, const ModelConfig& cfg, Rng& rng,
                        const WeightsArchive* vgg, bool allow_random_vgg);

// Forward passes. `training` selects batch statistics + running-stat updates
// in batch norm; inference uses running statistics and is pure.
ad::Var g0_forward(ParamStore& store, const ad::Var& x, const ModelConfig& cfg, bool training);
ad::Var attention_forward(ParamStore& store, const ad::Var& x, const ModelConfig& cfg,
                          bool training);
ad::Var discriminator_forward(ParamStore& store, const ad::Var& img, const ModelConfig& cfg,
                              bool training);
// out = attn*g0 + (1-attn)*x, attn broadcast across channels.
ad::Var composite(const ad::Var& x, const ad::Var& g0_out, const ad::Var& attn);

// Frozen perceptual extractor taps. Returns (layer_id, activation) in the
// order requested; layer ids are reluB_C names up to relu3_3.
std::vector<std::pair<std::string, ad::Var>> feature_extract(
    ParamStore& vgg_store, const ad::Var& x, const ModelConfig& cfg,
    const std::vector<std::string>& layers);

// Small fixed digit classifier used by the adaptation protocol.
void init_classifier(ParamStore& store, int image_size, int n_classes, Rng& rng);
ad::Var classifier_forward(ParamStore& store, const ad::Var& x, bool training);

}  // namespace atx::nn
