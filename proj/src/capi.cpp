#include "atx/atx.h"

#include <json.hpp>

#include "atx/config.hpp"
#include "atx/data.hpp"
#include "atx/eval.hpp"
#include "atx/train.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>

namespace fs = std::filesystem;
using nlohmann::json;
using atx::Tensor;

struct atx_config {
    atx::cfg::RunConfig cfg;
};

struct atx_model {
    atx::train::LoadedModel model;
};

namespace {

thread_local std::string g_last_error;

int set_error(int code, const std::string& msg) {
    g_last_error = msg;
    return code;
}

template <typename F>
int guarded(F&& fn) {
    try {
        fn();
        return ATX_OK;
    } catch (const atx::ConfigError& e) {
        return set_error(ATX_ERR_CONFIG, e.what());
    } catch (const atx::NumericError& e) {
        return set_error(ATX_ERR_NUMERIC, e.what());
    } catch (const atx::DataError& e) {
        return set_error(ATX_ERR_DATA, e.what());
    } catch (const atx::InputError& e) {
        return set_error(ATX_ERR_DATA, e.what());
    } catch (const std::exception& e) {
        return set_error(ATX_ERR_DATA, e.what());
    }
}

std::vector<fs::path> list_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw atx::DataError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw atx::DataError("no images in " + dir.string());
    return files;
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

atx::nn::ParamStore make_extractor(const json& args) {
    atx::nn::ModelConfig mc;
    mc.vgg_width_scale = args.value("vgg_width_scale", 1.0);
    std::string vgg_path = args.value("pretrained_vgg", std::string());
    bool allow_random = args.value("allow_random_vgg", vgg_path.empty());
    std::unique_ptr<atx::nn::WeightsArchive> w;
    if (!vgg_path.empty())
        w = std::make_unique<atx::nn::WeightsArchive>(atx::nn::WeightsArchive::load(vgg_path));
    atx::Rng rng(args.value("seed", uint64_t(0)));
    atx::nn::ParamStore store(atx::nn::NetworkId::VGG_EXTRACTOR);
    atx::nn::init_vgg_extractor(store, mc, rng, w.get(), allow_random);
    store.set_trainable(false);
    return store;
}

std::string eval_map(const json& args) {
    fs::path pred_dir = args.at("pred_dir").get<std::string>();
    fs::path gt_dir = args.at("gt_dir").get<std::string>();
    auto mode = args.value("mode", std::string("l1sum")) == "max"
                    ? atx::eval::RgbDiffMode::PerChannelMax
                    : atx::eval::RgbDiffMode::L1Sum;
    int threshold = args.value("threshold", 12);
    auto pred_files = list_images(pred_dir);
    auto gt_files = list_images(gt_dir);
    if (pred_files.size() != gt_files.size())
        throw atx::InputError("map: pred and gt sets differ in size");
    std::vector<atx::eval::Image8> pred, gt;
    for (size_t i = 0; i < pred_files.size(); ++i) {
        pred.push_back(atx::eval::load_image8(pred_files[i]));
        gt.push_back(atx::eval::load_image8(gt_files[i]));
    }
    double acc = atx::eval::map_accuracy(pred, gt, mode, threshold);
    return atx::eval::make_report("map_accuracy", acc, int64_t(pred.size()),
                                  atx::cfg::hash_string(args.dump()))
        .to_json();
}

std::string eval_fid(const json& args) {
    fs::path dir_a = args.at("dir_a").get<std::string>();
    fs::path dir_b = args.at("dir_b").get<std::string>();
    int image_size = args.value("image_size", 256);
    atx::nn::ParamStore vgg = make_extractor(args);
    atx::nn::ModelConfig mc;
    mc.vgg_width_scale = args.value("vgg_width_scale", 1.0);
    mc.image_size = image_size;
    auto embed_dir = [&](const fs::path& dir) {
        std::vector<std::vector<double>> features;
        for (const auto& f : list_images(dir))
            features.push_back(
                atx::eval::fid_embedding(vgg, atx::data::load_image(f, image_size), mc));
        return features;
    };
    auto fa = embed_dir(dir_a);
    auto fb = embed_dir(dir_b);
    double v = atx::eval::fid(atx::eval::gaussian_stats(fa), atx::eval::gaussian_stats(fb));
    return atx::eval::make_report("fid", v, int64_t(fa.size() + fb.size()),
                                  atx::cfg::hash_string(args.dump()))
        .to_json();
}

std::string eval_attn_iou(const json& args) {
    std::string checkpoint = args.at("checkpoint").get<std::string>();
    fs::path input_dir = args.at("input_dir").get<std::string>();
    fs::path mask_dir = args.at("mask_dir").get<std::string>();
    double thresh = args.value("thresh", 0.5);
    atx::train::LoadedModel m = atx::train::load_model(checkpoint);
    if (!m.has_attention())
        throw atx::ConfigError("attn-iou requires a checkpoint at stage ATTN_ONLY or later");
    auto inputs = list_images(input_dir);
    auto masks = list_images(mask_dir);
    if (inputs.size() != masks.size())
        throw atx::InputError("attn-iou: input and mask sets differ in size");
    double sum = 0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        Tensor x = atx::data::load_image(inputs[i], m.model.image_size);
        Tensor attn;
        m.translate(x, nullptr, &attn);
        Tensor mask_img = atx::data::load_image(masks[i], m.model.image_size);
        Tensor mask({1, 1, mask_img.shape(2), mask_img.shape(3)});
        for (int64_t p = 0; p < mask.numel(); ++p) mask[p] = mask_img[p] > 0 ? 1.0 : 0.0;
        sum += atx::eval::attention_iou(attn, mask, thresh);
    }
    return atx::eval::make_report("attention_iou", sum / double(inputs.size()),
                                  int64_t(inputs.size()), atx::cfg::hash_string(args.dump()))
        .to_json();
}

atx::eval::LabeledSet load_labeled_dir(const fs::path& root, int image_size, int& n_classes) {
    // class subdirectories named by integer label
    atx::eval::LabeledSet set;
    std::vector<fs::path> class_dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) class_dirs.push_back(e.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw atx::DataError("no class subdirectories in " + root.string());
    n_classes = std::max(n_classes, int(class_dirs.size()));
    for (const auto& cd : class_dirs) {
        int label = std::stoi(cd.filename().string());
        for (const auto& f : list_images(cd)) {
            set.images.push_back(atx::data::load_image(f, image_size));
            set.labels.push_back(label);
        }
    }
    return set;
}

std::string eval_adapt(const json& args) {
    fs::path source_dir = args.at("source_dir").get<std::string>();
    fs::path test_dir = args.at("test_dir").get<std::string>();
    int image_size = args.value("image_size", 32);
    int epochs = args.value("epochs", 10);
    uint64_t seed = args.value("seed", uint64_t(0));
    std::string checkpoint = args.value("checkpoint", std::string());

    std::function<Tensor(const Tensor&)> translator = [](const Tensor& t) { return t; };
    std::unique_ptr<atx::train::LoadedModel> model;
    if (!checkpoint.empty()) {
        model = std::make_unique<atx::train::LoadedModel>(atx::train::load_model(checkpoint));
        translator = [&model](const Tensor& t) { return model->translate(t); };
    }
    int n_classes = 0;
    atx::eval::LabeledSet src = load_labeled_dir(source_dir, image_size, n_classes);
    atx::eval::LabeledSet tst = load_labeled_dir(test_dir, image_size, n_classes);
    double acc = atx::eval::adapt_classify(translator, src, tst, n_classes, epochs, 16, seed);
    return atx::eval::make_report("adapt_accuracy", acc, int64_t(tst.images.size()),
                                  atx::cfg::hash_string(args.dump()))
        .to_json();
}

}  // namespace

extern "C" {

const char* atx_last_error(void) { return g_last_error.c_str(); }

int atx_config_load(const char* path, const char* const* overrides, int n_overrides,
                    long long seed_override, atx_config** out) {
    return guarded([&] {
        std::vector<std::string> ov(overrides, overrides + n_overrides);
        auto cfg = std::make_unique<atx_config>();
        cfg->cfg = atx::cfg::load_config(
            path, ov, seed_override >= 0 ? uint64_t(seed_override) : uint64_t(-1));
        *out = cfg.release();
    });
}

void atx_config_free(atx_config* cfg) { delete cfg; }

const char* atx_config_hash(const atx_config* cfg) { return cfg->cfg.config_hash.c_str(); }

int atx_train(const atx_config* cfg, const char* resume_checkpoint) {
    return guarded([&] {
        atx::train::Trainer trainer(cfg->cfg);
        if (resume_checkpoint && *resume_checkpoint) trainer.resume(resume_checkpoint);
        trainer.run();
    });
}

int atx_model_load(const char* checkpoint_path, atx_model** out) {
    return guarded([&] {
        auto m = std::make_unique<atx_model>();
        m->model = atx::train::load_model(checkpoint_path);
        *out = m.release();
    });
}

void atx_model_free(atx_model* model) { delete model; }

int atx_model_has_attention(const atx_model* model) {
    return model->model.has_attention() ? 1 : 0;
}

int atx_translate_dir(const atx_model* model, const char* input_dir, const char* out_dir,
                      int export_attention, int export_initial) {
    return guarded([&] {
        auto& m = const_cast<atx::train::LoadedModel&>(model->model);
        if (export_attention && !m.has_attention())
            throw atx::ConfigError(
                "checkpoint is at stage G0_ONLY; train the attention branch before "
                "requesting attention export");
        fs::path out(out_dir);
        fs::create_directories(out);
        if (export_attention) fs::create_directories(out / "attention");
        if (export_initial) fs::create_directories(out / "initial");
        for (const auto& f : list_images(input_dir)) {
            Tensor x = atx::data::load_image(f, m.model.image_size);
            Tensor g0_out, attn;
            Tensor final_img = m.translate(x, &g0_out, m.has_attention() ? &attn : nullptr);
            std::string name = f.filename().string();
            atx::data::save_image(final_img, out / name);
            if (export_initial) atx::data::save_image(g0_out, out / "initial" / name);
            if (export_attention) {
                fs::path p = out / "attention" / f.stem();
                atx::data::save_image(attn, p.string() + ".png");
            }
        }
    });
}

int atx_make_toy_data(const char* out_dir, int canvas, int count, unsigned long long seed,
                      int overwrite, int stripes_in_y) {
    return guarded([&] {
        atx::data::ToySpec spec;
        spec.canvas = canvas;
        spec.count = count;
        spec.seed = seed;
        spec.stripes_in_y = stripes_in_y != 0;
        atx::data::gen_toy(spec, out_dir, overwrite != 0);
    });
}

int atx_evaluate(const char* kind, const char* args_json, char** report_json_out) {
    return guarded([&] {
        json args = json::parse(args_json, nullptr, false);
        if (args.is_discarded()) throw atx::InputError("evaluate: args must be valid JSON");
        std::string k = kind ? kind : "";
        std::string report;
        if (k == "map")
            report = eval_map(args);
        else if (k == "fid")
            report = eval_fid(args);
        else if (k == "adapt")
            report = eval_adapt(args);
        else if (k == "attn-iou")
            report = eval_attn_iou(args);
        else
            throw atx::ConfigError("unknown evaluate kind: '" + k +
                                   "' (expected map|fid|adapt|attn-iou)");
        *report_json_out = dup_string(report);
    });
}

void atx_string_free(char* s) { std::free(s); }

}  // extern "C"
