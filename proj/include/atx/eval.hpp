#pragma once

#include <filesystem>
#include <functional>

#include "atx/nn.hpp"

namespace atx::eval {

struct MetricReport {
    std::string metric;
    double value = 0;
    int64_t sample_count = 0;
    std::string config_hash;
    std::string timestamp;  // ISO-8601 UTC

    std::string to_json() const;
};

MetricReport make_report(const std::string& metric, double value, int64_t sample_count,
                         const std::string& config_hash);

struct Image8 {
    int h = 0, w = 0;
    std::vector<uint8_t> rgb;  // HWC

    uint8_t at(int y, int x, int c) const { return rgb[size_t((y * w + x) * 3 + c)]; }
};

Image8 load_image8(const std::filesystem::path& file);

enum class RgbDiffMode { L1Sum, PerChannelMax };

// Pixel correct iff total RGB difference <= threshold (default 12).
double map_accuracy(const std::vector<Image8>& pred, const std::vector<Image8>& gt,
                    RgbDiffMode mode = RgbDiffMode::L1Sum, int threshold = 12);

struct GaussianStats {
    std::vector<double> mu;
    std::vector<double> sigma;  // row-major d x d, symmetric
    int64_t count = 0;
    int64_t dim() const { return int64_t(mu.size()); }
};

GaussianStats gaussian_stats(const std::vector<std::vector<double>>& features);

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}), eigendecomposition with
// negative-eigenvalue clipping.
double fid(const GaussianStats& a, const GaussianStats& b);

// Mean-pooled frozen extractor features of one image, used as the FID embedding.
std::vector<double> fid_embedding(nn::ParamStore& vgg, const Tensor& img,
                                  const nn::ModelConfig& cfg);

// IoU between (attn >= thresh) and a binary mask. Empty union: 1 if both
// empty, else 0.
double attention_iou(const Tensor& attn, const Tensor& mask, double thresh);

// Translate labeled source images, train the fixed small classifier on them,
// report top-1 accuracy on the target test set.
struct LabeledSet {
    std::vector<Tensor> images;  // each (1,3,S,S)
    std::vector<int> labels;
};

double adapt_classify(const std::function<Tensor(const Tensor&)>& translator,
                      const LabeledSet& labeled_source, const LabeledSet& target_test,
                      int n_classes, int epochs = 10, int batch = 16, uint64_t seed = 0);

// Row-per-sample grid: input | initial translation | attention | final.
void export_grid(const std::vector<Tensor>& inputs, const std::vector<Tensor>& g0_outs,
                 const std::vector<Tensor>& attns, const std::vector<Tensor>& finals,
                 const std::filesystem::path& path);

}  // namespace atx::eval
