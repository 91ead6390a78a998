#include "atx/losses.hpp"

namespace atx::losses {

using ad::Var;

static void check_finite(const Var& v, const char* what) {
    if (!v->val.all_finite()) throw NumericError(std::string(what) + ": non-finite logits");
}

Var d_loss(const Var& real_logits, const Var& fake_logits) {
    check_finite(real_logits, "d_loss");
    check_finite(fake_logits, "d_loss");
    // -log sigma(z) = softplus(-z); -log(1 - sigma(z)) = softplus(z)
    Var real_term = ad::mean_all(ad::softplus(ad::scale(real_logits, -1.0)));
    Var fake_term = ad::mean_all(ad::softplus(fake_logits));
    return ad::add(real_term, fake_term);
}

Var g_adv_loss(const Var& fake_logits) {
    check_finite(fake_logits, "g_adv_loss");
    return ad::mean_all(ad::softplus(ad::scale(fake_logits, -1.0)));
}

Var perceptual_reg(nn::ParamStore& vgg, const Var& x, const Var& gx, const nn::ModelConfig& cfg,
                   const RegWeights& weights) {
    if (!x->val.same_shape(gx->val)) throw InputError("perceptual_reg: shape mismatch");
    if (weights.w.size() != cfg.reg_layers.size())
        throw ConfigError("perceptual_reg: weight count does not match reg_layers");
    for (double w : weights.w)
        if (w <= 0) throw ConfigError("perceptual_reg: weights must be positive");
    auto fx = nn::feature_extract(vgg, x, cfg, cfg.reg_layers);
    auto fgx = nn::feature_extract(vgg, gx, cfg, cfg.reg_layers);
    int64_t batch = x->val.shape(0);
    Var total;
    for (size_t l = 0; l < fx.size(); ++l) {
        const auto& shape = fx[l].second->val.shape();
        double hl_wl = double(shape[2] * shape[3]);
        Var diff = ad::sub(fx[l].second, fgx[l].second);
        double w2 = weights.w[l] * weights.w[l];
        // w_l scales the channel vector inside the squared norm, so it enters squared.
        Var term = ad::scale(ad::sum_all(ad::square(diff)), w2 / (hl_wl * double(batch)));
        total = total ? ad::add(total, term) : term;
    }
    return total;
}

Var total_g_loss(const Var& fake_logits, nn::ParamStore& vgg, const Var& x, const Var& gx,
                 double lambda, const nn::ModelConfig& cfg, const RegWeights& weights,
                 LossBreakdown* breakdown) {
    if (lambda < 0) throw ConfigError("total_g_loss: lambda must be >= 0");
    Var adv = g_adv_loss(fake_logits);
    Var reg = perceptual_reg(vgg, x, gx, cfg, weights);
    Var total = ad::add(adv, ad::scale(reg, lambda));
    if (breakdown) {
        breakdown->adv = adv->val[0];
        breakdown->reg = reg->val[0];
        breakdown->lambda = lambda;
        breakdown->total = total->val[0];
    }
    return total;
}

}  // namespace atx::losses
