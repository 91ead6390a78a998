#include "atx/schedule.hpp"

#include <cmath>

namespace atx::train {

double lr_at(const OptimizerConfig& cfg, int64_t iter) {
    if (cfg.decay_start <= 0 || cfg.decay_start > cfg.total_iters)
        throw ConfigError("lr_at: require 0 < decay_start <= total_iters");
    if (iter < 0 || iter > cfg.total_iters) throw InputError("lr_at: iteration out of range");
    if (iter < cfg.decay_start) return cfg.base_lr;
    double span = double(cfg.total_iters - cfg.decay_start);
    return cfg.base_lr * double(cfg.total_iters - iter) / span;
}

AdaptiveLambdaState lambda_step(AdaptiveLambdaState s, double current_adv) {
    if (!std::isfinite(current_adv)) throw NumericError("lambda_step: non-finite adv loss");
    if (!s.ema_init) {
        s.adv_ema = current_adv;
        s.ema_init = true;
    } else {
        s.adv_ema = s.ema_decay * s.adv_ema + (1.0 - s.ema_decay) * current_adv;
    }
    s.calls++;
    if (!s.frozen) {
        if (s.calls % s.interval == 0) s.lambda += s.step_size;
        if (s.adv_ema > s.threshold) s.frozen = true;  // absorbing; lambda held from here on
    }
    return s;
}

Tensor HistoryBuffer::push_sample(const Tensor& img) {
    if (int64_t(pool_.size()) < capacity_) {
        pool_.push_back(img);
        return img;
    }
    full_pushes_++;
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(rng_) < 0.5) return img;
    std::uniform_int_distribution<int64_t> pick(0, int64_t(pool_.size()) - 1);
    int64_t idx = pick(rng_);
    Tensor out = pool_[size_t(idx)];
    pool_[size_t(idx)] = img;
    swaps_++;
    return out;
}

void Adam::step(nn::ParamStore& store, double lr) {
    t_++;
    double bc1 = 1.0 - std::pow(b1_, double(t_));
    double bc2 = 1.0 - std::pow(b2_, double(t_));
    for (auto& [name, entry] : store.params()) {
        ad::Node& node = *entry.var;
        if (!node.requires_grad || !node.grad_alloc) continue;
        auto mit = m_.find(name);
        if (mit == m_.end()) {
            mit = m_.emplace(name, Tensor(node.val.shape())).first;
            v_.emplace(name, Tensor(node.val.shape()));
        }
        Tensor& m = mit->second;
        Tensor& v = v_.at(name);
        for (int64_t i = 0; i < node.val.numel(); ++i) {
            double g = node.grad[i];
            if (!std::isfinite(g)) throw NumericError("Adam: non-finite gradient in " + name);
            m[i] = b1_ * m[i] + (1.0 - b1_) * g;
            v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
            node.val[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
        }
    }
}

}  // namespace atx::train
