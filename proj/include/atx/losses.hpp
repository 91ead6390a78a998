#pragma once

#include "atx/nn.hpp"

namespace atx::losses {

struct LossBreakdown {
    double adv = 0;
    double reg = 0;
    double lambda = 0;
    double total = 0;
};

struct RegWeights {
    std::vector<double> w = {1.0 / 32, 1.0 / 16, 1.0 / 8};
};

// Discriminator objective in minimization form:
// mean over patches of -log sigma(real) - log(1 - sigma(fake)).
ad::Var d_loss(const ad::Var& real_logits, const ad::Var& fake_logits);

// Non-saturating generator adversarial loss: mean of -log sigma(fake).
ad::Var g_adv_loss(const ad::Var& fake_logits);

// Sum over layers of w_l^2 * sum_c mean_{h,w} (F(x) - F(gx))^2, batch-averaged.
ad::Var perceptual_reg(nn::ParamStore& vgg, const ad::Var& x, const ad::Var& gx,
                       const nn::ModelConfig& cfg, const RegWeights& weights);

// adv + lambda * reg as a graph node plus the scalar breakdown.
ad::Var total_g_loss(const ad::Var& fake_logits, nn::ParamStore& vgg, const ad::Var& x,
                     const ad::Var& gx, double lambda, const nn::ModelConfig& cfg,
                     const RegWeights& weights, LossBreakdown* breakdown = nullptr);

}  // namespace atx::losses
