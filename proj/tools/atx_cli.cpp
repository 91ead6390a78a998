// Command-line front end. Talks to the core exclusively through the C API.
#include <CLI11.hpp>

#include "atx/atx.h"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

int report_error(int code) {
    std::cerr << "error: " << atx_last_error() << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unpaired image translation with a learned attention mask"};
    app.require_subcommand(1);

    std::string config_path, resume, seed_str;
    std::vector<std::string> overrides;

    auto add_config_opts = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "Run config (JSON)")->required();
        sub->add_option("--override", overrides, "key.path=value config overrides (repeatable)");
        sub->add_option("--seed", seed_str, "Seed override");
    };

    // train
    auto* train = app.add_subcommand("train", "Run the three-stage training schedule");
    add_config_opts(train);
    train->add_option("--resume", resume, "Stage-boundary checkpoint to resume from");

    // translate
    auto* translate = app.add_subcommand("translate", "Translate a directory of images");
    std::string ckpt, input_dir, out_dir;
    bool export_attention = false, export_initial = false;
    translate->add_option("checkpoint", ckpt, "Checkpoint file")->required();
    translate->add_option("input_dir", input_dir, "Input image directory")->required();
    translate->add_option("out_dir", out_dir, "Output directory")->required();
    translate->add_flag("--export-attention", export_attention, "Also write attention maps");
    translate->add_flag("--export-initial", export_initial, "Also write raw G0 outputs");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Compute a metric report");
    std::string kind, args_json = "{}", report_out;
    evaluate->add_option("kind", kind, "map | fid | adapt | attn-iou")->required();
    evaluate->add_option("--args", args_json, "Kind-specific arguments as JSON")->required();
    evaluate->add_option("--out", report_out, "Append the report to this JSONL file");

    // make-toy-data
    auto* toy = app.add_subcommand("make-toy-data", "Generate the synthetic two-domain benchmark");
    std::string toy_out;
    int canvas = 64, count = 200;
    unsigned long long toy_seed = 0;
    bool overwrite = false, no_stripes = false;
    toy->add_option("out_dir", toy_out, "Output directory")->required();
    toy->add_option("--canvas", canvas, "Canvas size (default 64)");
    toy->add_option("--count", count, "Images per domain (default 200)");
    toy->add_option("--seed", toy_seed, "Generator seed");
    toy->add_flag("--overwrite", overwrite, "Allow writing into a non-empty directory");
    toy->add_flag("--no-stripes", no_stripes, "Disable stripes in domain Y (domains match)");

    CLI11_PARSE(app, argc, argv);

    long long seed_override = -1;
    if (!seed_str.empty()) {
        try {
            seed_override = std::stoll(seed_str);
        } catch (...) {
            std::cerr << "error: --seed must be an integer\n";
            return ATX_ERR_CONFIG;
        }
    }

    if (train->parsed()) {
        std::vector<const char*> ov;
        for (const auto& o : overrides) ov.push_back(o.c_str());
        atx_config* cfg = nullptr;
        int rc = atx_config_load(config_path.c_str(), ov.data(), int(ov.size()), seed_override,
                                 &cfg);
        if (rc != ATX_OK) return report_error(rc);
        std::cout << "config hash: " << atx_config_hash(cfg) << "\n";
        rc = atx_train(cfg, resume.empty() ? nullptr : resume.c_str());
        atx_config_free(cfg);
        if (rc != ATX_OK) return report_error(rc);
        return 0;
    }

    if (translate->parsed()) {
        atx_model* model = nullptr;
        int rc = atx_model_load(ckpt.c_str(), &model);
        if (rc != ATX_OK) return report_error(rc);
        rc = atx_translate_dir(model, input_dir.c_str(), out_dir.c_str(),
                               export_attention ? 1 : 0, export_initial ? 1 : 0);
        atx_model_free(model);
        if (rc != ATX_OK) return report_error(rc);
        return 0;
    }

    if (evaluate->parsed()) {
        char* report = nullptr;
        int rc = atx_evaluate(kind.c_str(), args_json.c_str(), &report);
        if (rc != ATX_OK) return report_error(rc);
        std::cout << report << "\n";
        if (!report_out.empty()) {
            std::ofstream f(report_out, std::ios::app);
            f << report << "\n";
        }
        atx_string_free(report);
        return 0;
    }

    if (toy->parsed()) {
        int rc = atx_make_toy_data(toy_out.c_str(), canvas, count, toy_seed, overwrite ? 1 : 0,
                                   no_stripes ? 0 : 1);
        if (rc != ATX_OK) return report_error(rc);
        return 0;
    }

    return 0;
}
