#include "atx/train.hpp"

#include <json.hpp>

#include "atx/eval.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace atx::train {

namespace fs = std::filesystem;
using nlohmann::json;

std::string stage_name(TrainStage s) {
    switch (s) {
        case TrainStage::G0_ONLY: return "G0_ONLY";
        case TrainStage::ATTN_ONLY: return "ATTN_ONLY";
        case TrainStage::JOINT: return "JOINT";
    }
    return "?";
}

TrainStage stage_from_name(const std::string& name) {
    if (name == "G0_ONLY") return TrainStage::G0_ONLY;
    if (name == "ATTN_ONLY") return TrainStage::ATTN_ONLY;
    if (name == "JOINT") return TrainStage::JOINT;
    throw DataError("unknown stage name: " + name);
}

static const TrainStage kSchedule[3] = {TrainStage::G0_ONLY, TrainStage::ATTN_ONLY,
                                        TrainStage::JOINT};

Trainer::Trainer(const cfg::RunConfig& config)
    : config_(config),
      opt_g_(config.optimizer.adam_beta1, config.optimizer.adam_beta2, config.optimizer.adam_eps),
      opt_d_(config.optimizer.adam_beta1, config.optimizer.adam_beta2, config.optimizer.adam_eps),
      buffer_(config.buffer_capacity, config.seed + 4),
      rng_train_(config.seed + 1),
      rng_x_(config.seed + 2),
      rng_y_(config.seed + 3) {
    reg_weights_.w = config.reg_weights;
    lambda_.threshold = config.adaptive_lambda.threshold;
    lambda_.step_size = config.adaptive_lambda.step_size;
    lambda_.interval = config.adaptive_lambda.interval;
    lambda_.ema_decay = config.adaptive_lambda.ema_decay;

    Rng init_rng(config.seed);
    std::unique_ptr<nn::WeightsArchive> vgg_weights;
    if (!config.pretrained_vgg.empty())
        vgg_weights = std::make_unique<nn::WeightsArchive>(
            nn::WeightsArchive::load(config.pretrained_vgg));
    nn::init_g0(g0_, config.model, init_rng);
    nn::init_discriminator(disc_, config.model, init_rng);
    nn::init_attention(gattn_, config.model, init_rng, vgg_weights.get(),
                       config.allow_random_vgg);
    nn::init_vgg_extractor(vgg_, config.model, init_rng, vgg_weights.get(),
                           config.allow_random_vgg);
    vgg_.set_trainable(false);
}

int64_t Trainer::stage_length(TrainStage s) const {
    switch (s) {
        case TrainStage::G0_ONLY: return config_.stages.g0_iters;
        case TrainStage::ATTN_ONLY: return config_.stages.attn_iters;
        case TrainStage::JOINT: return config_.stages.joint_iters;
    }
    return 0;
}

OptimizerConfig Trainer::stage_opt_config(TrainStage stage) const {
    OptimizerConfig oc = config_.optimizer;
    int64_t iters = stage_length(stage);
    double frac = double(oc.decay_start) / double(oc.total_iters);
    oc.total_iters = iters;
    oc.decay_start = std::max<int64_t>(1, int64_t(std::llround(frac * double(iters))));
    if (stage == TrainStage::JOINT) oc.base_lr *= config_.stages.joint_lr_scale;
    return oc;
}

void Trainer::begin_stage(TrainStage stage) {
    stage_ = stage;
    stage_iter_ = 0;
    // Freeze contract: in ATTN_ONLY all G0 parameters are frozen.
    g0_.set_trainable(stage != TrainStage::ATTN_ONLY);
    gattn_.set_trainable(stage != TrainStage::G0_ONLY);
    disc_.set_trainable(true);
    vgg_.set_trainable(false);
    opt_g_.reset();
    opt_d_.reset();
    buffer_ = HistoryBuffer(config_.buffer_capacity,
                            config_.seed + 4 + 101 * uint64_t(stage));
    if (config_.stages.reset_d_per_stage && stage != TrainStage::G0_ONLY) {
        Rng r(config_.seed + 7 + uint64_t(stage));
        disc_ = nn::ParamStore(nn::NetworkId::DISC);
        nn::init_discriminator(disc_, config_.model, r);
    }
    // Adaptive weight induction is re-run for G0 and for the attention branch;
    // the joint stage continues with the lambda it inherited.
    if (stage != TrainStage::JOINT) {
        AdaptiveLambdaState fresh;
        fresh.threshold = config_.adaptive_lambda.threshold;
        fresh.step_size = config_.adaptive_lambda.step_size;
        fresh.interval = config_.adaptive_lambda.interval;
        fresh.ema_decay = config_.adaptive_lambda.ema_decay;
        lambda_ = fresh;
    }
}

namespace {

Tensor slice_image(const Tensor& batch, int64_t i) {
    int64_t c = batch.shape(1), h = batch.shape(2), w = batch.shape(3);
    Tensor out({1, c, h, w});
    std::copy(batch.data() + i * c * h * w, batch.data() + (i + 1) * c * h * w, out.data());
    return out;
}

}  // namespace

StepLosses Trainer::train_step(const Tensor& x_batch, const Tensor& y_batch) {
    nn::validate_image_batch(x_batch);
    nn::validate_image_batch(y_batch);
    const nn::ModelConfig& mc = config_.model;
    OptimizerConfig oc = stage_opt_config(stage_);
    double lr = lr_at(oc, std::min(stage_iter_, oc.total_iters));

    ad::Var x = ad::constant(x_batch);
    ad::Var y = ad::constant(y_batch);

    // Generator forward. In ATTN_ONLY the frozen G0 runs in inference mode so
    // its batch-norm buffers stay bitwise untouched.
    ad::Var g0x, gx;
    switch (stage_) {
        case TrainStage::G0_ONLY:
            g0x = nn::g0_forward(g0_, x, mc, true);
            gx = g0x;
            break;
        case TrainStage::ATTN_ONLY: {
            g0x = nn::g0_forward(g0_, x, mc, false);
            ad::Var attn = nn::attention_forward(gattn_, x, mc, true);
            gx = nn::composite(x, g0x, attn);
            break;
        }
        case TrainStage::JOINT: {
            g0x = nn::g0_forward(g0_, x, mc, true);
            ad::Var attn = nn::attention_forward(gattn_, x, mc, true);
            gx = nn::composite(x, g0x, attn);
            break;
        }
    }

    StepLosses out;
    out.lr = lr;

    // Generator update with D frozen.
    disc_.set_trainable(false);
    ad::Var fake_logits = nn::discriminator_forward(disc_, gx, mc, true);
    g0_.zero_grad();
    gattn_.zero_grad();
    ad::Var g_total = losses::total_g_loss(fake_logits, vgg_, x, gx, lambda_.lambda, mc,
                                           reg_weights_, &out.g);
    ad::backward(g_total);
    if (stage_ != TrainStage::ATTN_ONLY) opt_g_.step(g0_, lr);
    if (stage_ != TrainStage::G0_ONLY) opt_g_.step(gattn_, lr);
    disc_.set_trainable(true);

    // Discriminator update on real batch vs history-buffered fakes.
    int64_t n = x_batch.shape(0);
    Tensor buffered(gx->val.shape());
    for (int64_t i = 0; i < n; ++i) {
        Tensor ret = buffer_.push_sample(slice_image(gx->val, i));
        std::copy(ret.data(), ret.data() + ret.numel(), buffered.data() + i * ret.numel());
    }
    ad::Var real_logits = nn::discriminator_forward(disc_, y, mc, true);
    ad::Var fake_logits_d = nn::discriminator_forward(disc_, ad::constant(buffered), mc, true);
    ad::Var dl = losses::d_loss(real_logits, fake_logits_d);
    out.d = dl->val[0];
    disc_.zero_grad();
    ad::backward(dl);
    opt_d_.step(disc_, lr);

    lambda_ = lambda_step(lambda_, out.g.adv);

    if (!std::isfinite(out.g.total) || !std::isfinite(out.d)) {
        json dump = {{"stage", stage_name(stage_)},   {"stage_iter", stage_iter_},
                     {"global_iter", global_iter_},   {"d_loss", out.d},
                     {"adv", out.g.adv},              {"reg", out.g.reg},
                     {"lambda", out.g.lambda},        {"total", out.g.total}};
        if (!config_.output_dir.empty()) {
            fs::create_directories(config_.output_dir);
            std::ofstream f(fs::path(config_.output_dir) / "diagnostic_dump.json");
            f << dump.dump(2) << "\n";
        }
        throw NumericError("NaN loss at " + stage_name(stage_) + " iteration " +
                           std::to_string(stage_iter_) + " (diagnostic state dumped)");
    }

    stage_iter_++;
    global_iter_++;
    return out;
}

void Trainer::quantize_params_to_f32() {
    auto quant = [](nn::ParamStore& s) {
        for (auto& [k, e] : s.params())
            for (int64_t i = 0; i < e.var->val.numel(); ++i)
                e.var->val[i] = double(float(e.var->val[i]));
        for (auto& [k, t] : s.buffers())
            for (int64_t i = 0; i < t.numel(); ++i) t[i] = double(float(t[i]));
    };
    quant(g0_);
    quant(gattn_);
    quant(disc_);
}

namespace {

json lambda_to_json(const AdaptiveLambdaState& l) {
    return {{"lambda", l.lambda},       {"frozen", l.frozen},     {"adv_ema", l.adv_ema},
            {"ema_init", l.ema_init},   {"threshold", l.threshold},
            {"step_size", l.step_size}, {"interval", l.interval}, {"ema_decay", l.ema_decay},
            {"calls", l.calls}};
}

AdaptiveLambdaState lambda_from_json(const json& j) {
    AdaptiveLambdaState l;
    l.lambda = j.at("lambda");
    l.frozen = j.at("frozen");
    l.adv_ema = j.at("adv_ema");
    l.ema_init = j.at("ema_init");
    l.threshold = j.at("threshold");
    l.step_size = j.at("step_size");
    l.interval = j.at("interval");
    l.ema_decay = j.at("ema_decay");
    l.calls = j.at("calls");
    return l;
}

json model_to_json(const nn::ModelConfig& m) {
    return {{"image_size", m.image_size},
            {"g0_base", m.g0_base},
            {"g0_res_blocks", m.g0_res_blocks},
            {"g0_dilation", m.g0_dilation},
            {"vgg_width_scale", m.vgg_width_scale},
            {"attn_deconv1", m.attn_deconv1},
            {"attn_deconv2", m.attn_deconv2},
            {"d_base", m.d_base},
            {"leaky_slope", m.leaky_slope},
            {"reg_layers", m.reg_layers}};
}

nn::ModelConfig model_from_json(const json& j) {
    nn::ModelConfig m;
    m.image_size = j.at("image_size");
    m.g0_base = j.at("g0_base");
    m.g0_res_blocks = j.at("g0_res_blocks");
    m.g0_dilation = j.at("g0_dilation");
    m.vgg_width_scale = j.at("vgg_width_scale");
    m.attn_deconv1 = j.at("attn_deconv1");
    m.attn_deconv2 = j.at("attn_deconv2");
    m.d_base = j.at("d_base");
    m.leaky_slope = j.at("leaky_slope");
    m.reg_layers = j.at("reg_layers").get<std::vector<std::string>>();
    return m;
}

void store_to_archive(const nn::ParamStore& s, const std::string& prefix,
                      nn::WeightsArchive& a) {
    for (const auto& [k, e] : s.params()) a.arrays.emplace(prefix + ".p/" + k, e.var->val);
    for (const auto& [k, t] : s.buffers()) a.arrays.emplace(prefix + ".b/" + k, t);
}

void store_from_archive(nn::ParamStore& s, const std::string& prefix,
                        const nn::WeightsArchive& a) {
    for (auto& [k, e] : s.params()) {
        auto it = a.arrays.find(prefix + ".p/" + k);
        if (it == a.arrays.end()) throw DataError("checkpoint missing " + prefix + ".p/" + k);
        if (it->second.shape() != e.var->val.shape())
            throw DataError("checkpoint shape mismatch for " + k);
        e.var->val = it->second;
    }
    for (auto& [k, t] : s.buffers()) {
        auto it = a.arrays.find(prefix + ".b/" + k);
        if (it == a.arrays.end()) throw DataError("checkpoint missing " + prefix + ".b/" + k);
        t = it->second;
    }
}

std::string rng_to_string(const Rng& r) {
    std::ostringstream os;
    os << r;
    return os.str();
}

void rng_from_string(Rng& r, const std::string& s) {
    std::istringstream is(s);
    is >> r;
    if (!is) throw DataError("bad RNG state in checkpoint");
}

}  // namespace

void Trainer::save_checkpoint(const fs::path& path) const {
    nn::WeightsArchive a;
    json meta = {{"format_version", 1},
                 {"config_hash", config_.config_hash},
                 {"stage", stage_name(stage_)},
                 {"stage_iter", stage_iter_},
                 {"global_iter", global_iter_},
                 {"lambda", lambda_to_json(lambda_)},
                 {"rng_train", rng_to_string(rng_train_)},
                 {"rng_x", rng_to_string(rng_x_)},
                 {"rng_y", rng_to_string(rng_y_)},
                 {"model", model_to_json(config_.model)}};
    a.metadata_json = meta.dump();
    store_to_archive(g0_, "G0", a);
    store_to_archive(gattn_, "GATTN", a);
    store_to_archive(disc_, "DISC", a);
    a.save(path.string());
}

void Trainer::load_checkpoint_arrays(const nn::WeightsArchive& a) {
    store_from_archive(g0_, "G0", a);
    store_from_archive(gattn_, "GATTN", a);
    store_from_archive(disc_, "DISC", a);
}

void Trainer::resume(const std::string& checkpoint_path) {
    nn::WeightsArchive a = nn::WeightsArchive::load(checkpoint_path);
    json meta = json::parse(a.metadata_json);
    if (meta.at("config_hash").get<std::string>() != config_.config_hash)
        throw ConfigError("checkpoint config hash " +
                          meta.at("config_hash").get<std::string>() +
                          " does not match current config " + config_.config_hash);
    TrainStage done = stage_from_name(meta.at("stage"));
    if (meta.at("stage_iter").get<int64_t>() != stage_length(done))
        throw ConfigError("checkpoint is not at a stage boundary; cannot resume");
    load_checkpoint_arrays(a);
    lambda_ = lambda_from_json(meta.at("lambda"));
    global_iter_ = meta.at("global_iter");
    rng_from_string(rng_train_, meta.at("rng_train"));
    rng_from_string(rng_x_, meta.at("rng_x"));
    rng_from_string(rng_y_, meta.at("rng_y"));
    stage_ = done;
    stage_iter_ = stage_length(done);
    resume_stage_index_ = int(done) + 1;
}

void Trainer::write_samples(const fs::path& path) {
    int64_t n = std::min<int64_t>(4, 4);
    Rng r(config_.seed + 99);
    data::DomainDataset dsx =
        data::DomainDataset::open(config_.domain_x, data::DomainId::X, config_.image_size);
    std::vector<Tensor> inputs, g0s, attns, finals;
    for (int64_t i = 0; i < n; ++i) {
        Tensor x = data::load_batch(dsx, 1, r);
        Tensor g0_out, attn;
        // Inference through current params, no buffer mutation.
        ad::Var xv = ad::constant(x);
        ad::Var g0v = nn::g0_forward(g0_, xv, config_.model, false);
        g0_out = g0v->val;
        if (stage_ != TrainStage::G0_ONLY) {
            ad::Var av = nn::attention_forward(gattn_, xv, config_.model, false);
            attn = av->val;
            finals.push_back(nn::composite(xv, g0v, av)->val);
        } else {
            attn = Tensor::full({1, 1, x.shape(2), x.shape(3)}, 0.5);
            finals.push_back(g0_out);
        }
        inputs.push_back(x);
        g0s.push_back(g0_out);
        attns.push_back(attn);
    }
    eval::export_grid(inputs, g0s, attns, finals, path);
}

void Trainer::run() {
    fs::path out(config_.output_dir);
    fs::create_directories(out / "checkpoints");
    fs::create_directories(out / "samples");
    data::DomainDataset dsx =
        data::DomainDataset::open(config_.domain_x, data::DomainId::X, config_.image_size);
    data::DomainDataset dsy =
        data::DomainDataset::open(config_.domain_y, data::DomainId::Y, config_.image_size);

    std::ofstream manifest(out / "manifest.jsonl",
                           resume_stage_index_ == 0 ? std::ios::trunc : std::ios::app);
    std::vector<std::string> stage_sequence;

    for (int si = resume_stage_index_; si < 3; ++si) {
        TrainStage st = kSchedule[si];
        begin_stage(st);
        stage_sequence.push_back(stage_name(st));
        int64_t iters = stage_length(st);
        for (int64_t it = 0; it < iters; ++it) {
            Tensor xb = data::load_batch(dsx, config_.batch_size, rng_x_);
            Tensor yb = data::load_batch(dsy, config_.batch_size, rng_y_);
            StepLosses l = train_step(xb, yb);
            if (config_.log_every > 0 && (it % config_.log_every == 0 || it + 1 == iters)) {
                char row[512];
                std::snprintf(row, sizeof row,
                              "{\"global_iter\":%lld,\"stage\":\"%s\",\"iter\":%lld,"
                              "\"d_loss\":%.17g,\"adv\":%.17g,\"reg\":%.17g,"
                              "\"lambda\":%.17g,\"total\":%.17g,\"lr\":%.17g}",
                              static_cast<long long>(global_iter_ - 1), stage_name(st).c_str(),
                              static_cast<long long>(it), l.d, l.g.adv, l.g.reg, l.g.lambda,
                              l.g.total, l.lr);
                manifest << row << "\n";
            }
            if (config_.sample_every > 0 && (it + 1) % config_.sample_every == 0)
                write_samples(out / "samples" /
                              (stage_name(st) + "_" + std::to_string(it + 1) + ".png"));
        }
        quantize_params_to_f32();
        save_checkpoint(out / "checkpoints" / ("stage_" + stage_name(st) + ".ckpt"));
        write_samples(out / "samples" / (stage_name(st) + "_final.png"));
    }
    manifest.close();

    json run_manifest = {{"config_hash", config_.config_hash},
                         {"stage_sequence", stage_sequence},
                         {"global_iters", global_iter_},
                         {"config", json::parse(config_.canonical_json)}};
    std::ofstream rm(out / "run_manifest.json");
    rm << run_manifest.dump(2) << "\n";
}

Tensor LoadedModel::translate(const Tensor& x, Tensor* g0_out, Tensor* attn) {
    ad::Var xv = ad::constant(x);
    ad::Var g0v = nn::g0_forward(g0, xv, model, false);
    if (g0_out) *g0_out = g0v->val;
    if (!has_attention()) {
        if (attn) throw InputError("checkpoint stage G0_ONLY has no attention branch output");
        return g0v->val;
    }
    ad::Var av = nn::attention_forward(gattn, xv, model, false);
    if (attn) *attn = av->val;
    return nn::composite(xv, g0v, av)->val;
}

LoadedModel load_model(const std::string& checkpoint_path) {
    nn::WeightsArchive a = nn::WeightsArchive::load(checkpoint_path);
    json meta = json::parse(a.metadata_json);
    if (meta.at("format_version").get<int>() != 1)
        throw DataError("unsupported checkpoint format version");
    LoadedModel m;
    m.model = model_from_json(meta.at("model"));
    m.stage = stage_from_name(meta.at("stage"));
    m.config_hash = meta.at("config_hash");
    Rng r(0);
    nn::init_g0(m.g0, m.model, r);
    nn::init_attention(m.gattn, m.model, r, nullptr, /*allow_random_vgg=*/true);
    nn::init_discriminator(m.disc, m.model, r);
    store_from_archive(m.g0, "G0", a);
    store_from_archive(m.gattn, "GATTN", a);
    store_from_archive(m.disc, "DISC", a);
    m.g0.set_trainable(false);
    m.gattn.set_trainable(false);
    m.disc.set_trainable(false);
    return m;
}

}  // namespace atx::train
