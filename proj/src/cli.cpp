#include <CLI11.hpp>
#include <iostream>

#include "pcdc/harness.hpp"

namespace pcdc {

namespace {

RunConfig build_config(const std::string& config_path, std::optional<uint64_t> seed,
                       std::optional<double> rmax, std::optional<double> ratio,
                       bool reset_per_image) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (rmax && ratio) throw Error("give either --rmax-bits or --target-ratio, not both");
    if (rmax) {
        cfg.rmax_bits = *rmax;
        cfg.target_ratio = 0;
    }
    if (ratio) {
        cfg.target_ratio = *ratio;
        cfg.rmax_bits = 0;
    }
    if (reset_per_image) cfg.reset_per_image = true;
    return cfg;
}

std::vector<double> parse_budget_list(const std::string& text) {
    std::vector<double> out;
    std::string cur;
    std::istringstream in(text);
    while (std::getline(in, cur, ',')) {
        if (cur.empty()) continue;
        out.push_back(std::stod(cur));
    }
    return out;
}

std::vector<std::string> parse_mode_list(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(text);
    while (std::getline(in, cur, ','))
        if (!cur.empty()) out.push_back(cur);
    return out;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"pcdc: block-allocated conditional-diffusion image codec"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<double> rmax_bits, target_ratio;
    bool reset_per_image = false;
    app.add_option("--config", config_path, "key = value config file");
    app.add_option("--seed", seed, "RNG seed");
    app.add_option("--rmax-bits", rmax_bits, "bitrate budget in bits");
    app.add_option("--target-ratio", target_ratio, "budget as 24*pixels/ratio bits");
    app.add_flag("--reset-per-image", reset_per_image,
                 "reinitialize the policy before every image");

    auto* train = app.add_subcommand("train", "train encoder + entropy model + denoiser");
    std::string train_dir, ckpt_out = "model.ckpt", train_log = "train_log.csv";
    train->add_option("input_dir", train_dir)->required();
    train->add_option("--checkpoint", ckpt_out, "output checkpoint path");
    train->add_option("--log", train_log, "training log CSV path");

    auto* compress = app.add_subcommand("compress", "compress one image to a bitstream");
    std::string c_image, c_ckpt, c_out = "out.pcdc", c_mode = "ppo";
    compress->add_option("image", c_image)->required();
    compress->add_option("--checkpoint", c_ckpt)->required();
    compress->add_option("--out", c_out, "output bitstream path");
    compress->add_option("--mode", c_mode, "ppo | uniform | uniform-<k>");

    auto* decompress = app.add_subcommand("decompress", "reconstruct an image");
    std::string d_stream, d_ckpt, d_out = "out.ppm";
    decompress->add_option("bitstream", d_stream)->required();
    decompress->add_option("--checkpoint", d_ckpt)->required();
    decompress->add_option("--out", d_out, "output image path");

    auto* evaluate = app.add_subcommand("evaluate", "metrics for paired image dirs");
    std::string e_orig, e_recon, e_out = "metrics.csv";
    evaluate->add_option("originals_dir", e_orig)->required();
    evaluate->add_option("reconstructions_dir", e_recon)->required();
    evaluate->add_option("--out", e_out, "output CSV path");

    auto* sweep = app.add_subcommand("rd-sweep", "rate-distortion sweep");
    std::string s_dir, s_ckpt, s_budgets, s_modes = "ppo,uniform", s_out = "rd.csv";
    sweep->add_option("input_dir", s_dir)->required();
    sweep->add_option("--checkpoint", s_ckpt)->required();
    sweep->add_option("--budgets", s_budgets, "comma-separated budgets in bits")->required();
    sweep->add_option("--modes", s_modes, "comma-separated modes");
    sweep->add_option("--out", s_out, "output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        RunConfig cfg = build_config(config_path, seed, rmax_bits, target_ratio, reset_per_image);
        if (*train) {
            TrainStats stats = cmd_train(cfg, train_dir, ckpt_out, train_log);
            std::cout << "trained " << stats.steps << " steps; rate " << stats.first_rate
                      << " -> " << stats.last_rate << " bits/dim; denoise mse "
                      << stats.first_mse << " -> " << stats.last_mse << "\n";
        } else if (*compress) {
            cmd_compress(cfg, c_image, c_ckpt, c_out, c_mode);
            std::cout << "wrote " << c_out << "\n";
        } else if (*decompress) {
            cmd_decompress(cfg, d_stream, d_ckpt, d_out, seed);
            std::cout << "wrote " << d_out << "\n";
        } else if (*evaluate) {
            EvaluateResult res = cmd_evaluate(cfg, e_orig, e_recon, e_out);
            std::cout << "evaluated " << res.rows.size() << " pairs -> " << e_out << "\n";
            if (!res.unpaired.empty()) {
                for (const auto& f : res.unpaired)
                    std::cerr << "unpaired, skipped: " << f << "\n";
                return 4;
            }
        } else if (*sweep) {
            auto records =
                cmd_rd_sweep(cfg, s_dir, s_ckpt, parse_budget_list(s_budgets),
                             parse_mode_list(s_modes), s_out);
            std::cout << "wrote " << records.size() << " RD rows -> " << s_out << "\n";
        }
        return 0;
    } catch (const InfeasibleBudgetError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace pcdc
