// d2a command line: train / eval / predict / selftest / info.
// Exit codes: 0 ok, 1 usage, 2 data or file problem, 3 numeric failure.

#include <CLI11.hpp>
#include <iostream>

#include "d2a/selftest.hpp"
#include "d2a/trainer.hpp"

namespace {

bool looks_numeric(const std::string& msg) {
    return msg.find("non-finite") != std::string::npos || msg.find("NaN") != std::string::npos ||
           msg.find("nan") != std::string::npos;
}

void print_cost(const d2a::ModelConfig& cfg) {
    d2a::CostReport r = d2a::count_params_flops(cfg);
    std::cout << "parameters: " << r.params << " (" << (double)r.params / 1e6 << "M)\n";
    std::cout << "forward MACs at " << cfg.input_extent << "x" << cfg.input_extent << ": "
              << r.macs << " (" << (double)r.macs / 1e9 << "G)\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"d2a: dilated dual-attention U-Net segmentation"};
    app.require_subcommand(1);

    std::string config_path, resume, data_dir, out_dir = "runs/default", ckpt, image_path,
                                                csv_out;
    bool inject_fault = false;

    auto* train_cmd = app.add_subcommand("train", "train a model");
    train_cmd->add_option("--config", config_path, "key = value config file")->required();
    train_cmd->add_option("--data", data_dir, "dataset dir with images/ and masks/");
    train_cmd->add_option("--out", out_dir, "output dir for checkpoints and metrics");
    train_cmd->add_option("--resume", resume, "checkpoint to continue from");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--data", data_dir, "dataset dir with images/ and masks/")->required();
    eval_cmd->add_option("--csv", csv_out, "optional metrics CSV output path");

    auto* predict_cmd = app.add_subcommand("predict", "segment one image");
    predict_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
    predict_cmd->add_option("--image", image_path, "grayscale PGM or PNG")->required();
    predict_cmd->add_option("--out", out_dir, "output dir for mask and overlay");

    auto* selftest_cmd = app.add_subcommand("selftest", "run the numeric sanity suite");
    selftest_cmd->add_flag("--inject-fault", inject_fault,
                           "corrupt one gradient to prove the suite catches it");

    auto* info_cmd = app.add_subcommand("info", "describe a checkpoint");
    info_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*train_cmd) {
            auto kv = d2a::parse_config_file(config_path);
            d2a::ModelConfig mc = d2a::model_config_from(kv);
            d2a::TrainConfig tc = d2a::train_config_from(kv);
            d2a::AugmentConfig ac = d2a::augment_config_from(kv);
            if (data_dir.empty() && kv.count("data_dir")) data_dir = kv.at("data_dir");
            if (kv.count("out_dir") && out_dir == "runs/default") out_dir = kv.at("out_dir");
            if (data_dir.empty())
                throw std::runtime_error("no dataset: pass --data or set data_dir in the config");
            d2a::TrainResult r = d2a::train(mc, tc, ac, data_dir, out_dir, resume);
            std::cout << "metrics: " << r.metrics_csv_path << "\n";
            std::cout << "last checkpoint: " << r.last_checkpoint << "\n";
            if (!r.train_history.empty()) {
                const auto& m = r.train_history.back();
                std::cout << "final train loss " << m.loss << ", dice " << m.dice << "\n";
            }
            if (!r.val_history.empty()) {
                const auto& m = r.val_history.back();
                std::cout << "final val loss " << m.loss << ", dice " << m.dice << "\n";
            }
        } else if (*eval_cmd) {
            d2a::EvalResult r = d2a::evaluate(ckpt, data_dir, csv_out);
            std::cout << "slices: " << r.slices << "\n";
            std::cout << "loss: " << r.loss << "\n";
            std::cout << "dice: " << r.dice << "\n";
            std::cout << "pixel_error: " << r.pixel_error << "\n";
            std::cout << "recall: " << r.recall << "\n";
        } else if (*predict_cmd) {
            d2a::PredictResult r = d2a::predict(ckpt, image_path, out_dir);
            std::cout << "mask: " << r.mask_path << "\n";
            std::cout << "overlay: " << r.overlay_path << "\n";
        } else if (*selftest_cmd) {
            int failures = d2a::run_selftest(std::cout, inject_fault);
            return failures == 0 ? 0 : 3;
        } else if (*info_cmd) {
            d2a::TrainerState st;
            d2a::D2AUNet<float> model = d2a::load_checkpoint(ckpt, nullptr, st);
            std::cout << "[model]\n" << d2a::serialize_model_config(st.model_cfg);
            std::cout << "epochs completed: " << st.epoch << "\n";
            std::cout << "current lr: " << st.sched.lr << "\n";
            print_cost(st.model_cfg);
            if (!st.metrics_csv.empty()) {
                std::cout << "-- metrics --\n" << st.metrics_csv;
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return looks_numeric(e.what()) ? 3 : 2;
    }
    return 0;
}
