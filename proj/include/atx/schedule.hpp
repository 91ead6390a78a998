#pragma once

#include "atx/nn.hpp"

namespace atx::train {

struct OptimizerConfig {
    double base_lr = 2e-4;
    int64_t decay_start = 5000;
    int64_t total_iters = 10000;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
};

// Flat until decay_start, then linear to zero at total_iters.
double lr_at(const OptimizerConfig& cfg, int64_t iter);

struct AdaptiveLambdaState {
    double lambda = 0.0;
    bool frozen = false;
    double adv_ema = 0.0;
    bool ema_init = false;
    double threshold = 1.2 * 0.6931471805599453;  // 1.2 * ln 2
    double step_size = 0.1;
    int64_t interval = 100;
    double ema_decay = 0.99;
    int64_t calls = 0;
};

// One observation of the generator adversarial loss. Grows lambda every
// `interval` calls until the EMA first crosses the threshold; frozen is
// absorbing.
AdaptiveLambdaState lambda_step(AdaptiveLambdaState s, double current_adv);

// Pool of previously generated images; returns either the pushed image or a
// random stored one (which the pushed image then replaces).
class HistoryBuffer {
  public:
    explicit HistoryBuffer(int64_t capacity = 50, uint64_t seed = 0)
        : capacity_(capacity), rng_(seed) {}

    Tensor push_sample(const Tensor& img);
    int64_t size() const { return int64_t(pool_.size()); }
    int64_t capacity() const { return capacity_; }
    int64_t swap_count() const { return swaps_; }
    int64_t full_pushes() const { return full_pushes_; }
    const std::vector<Tensor>& pool() const { return pool_; }
    Rng& rng() { return rng_; }

  private:
    int64_t capacity_;
    std::vector<Tensor> pool_;
    Rng rng_;
    int64_t swaps_ = 0;
    int64_t full_pushes_ = 0;
};

// Adam with externally supplied per-step learning rate.
class Adam {
  public:
    Adam(double beta1, double beta2, double eps) : b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(nn::ParamStore& store, double lr);
    void reset() {
        m_.clear();
        v_.clear();
        t_ = 0;
    }

  private:
    double b1_, b2_, eps_;
    int64_t t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

}  // namespace atx::train
