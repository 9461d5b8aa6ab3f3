#include "pcdc/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace pcdc {

namespace {

// Sum over channels of the squared per-channel mean. The entropy model is
// zero-mean, so biased channels would be priced badly at coarse steps.
Tensor channel_mean_penalty(const Tensor& latent) {
    const int channels = latent.dim(0);
    const int64_t plane = int64_t(latent.dim(1)) * latent.dim(2);
    auto v = latent.values();
    double total = 0;
    std::vector<double> means(static_cast<size_t>(channels));
    for (int c = 0; c < channels; ++c) {
        double s = 0;
        for (int64_t i = 0; i < plane; ++i) s += v[size_t(int64_t(c) * plane + i)];
        means[size_t(c)] = s / double(plane);
        total += means[size_t(c)] * means[size_t(c)];
    }
    return Tensor::make_op("channel_mean_penalty", {1}, {total}, {latent},
                           [means, plane, channels](detail::Node& n) {
                               auto& p = *n.parents[0];
                               p.ensure_grad();
                               double g = n.grad[0];
                               for (int c = 0; c < channels; ++c) {
                                   double d = g * 2.0 * means[size_t(c)] / double(plane);
                                   for (int64_t i = 0; i < plane; ++i)
                                       p.grad[size_t(int64_t(c) * plane + i)] += d;
                               }
                           });
}

std::vector<std::string> config_comment_lines(const RunConfig& cfg, uint64_t ckpt_hash) {
    std::vector<std::string> lines;
    std::istringstream in(serialize_config(cfg));
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    std::ostringstream os;
    os << "checkpoint_hash = " << std::hex << ckpt_hash;
    lines.push_back(os.str());
    return lines;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw DataError("cannot write file: " + path);
        out << text;
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw DataError("cannot move temp file into place: " + path);
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

}  // namespace

ModelBundle::ModelBundle(const RunConfig& cfg, Rng& rng)
    : encoder(rng), denoiser(rng, cfg.latent_channels), schedule(cfg.schedule_steps) {
    sigma.assign(size_t(cfg.latent_channels), 1.0);
}

void ModelBundle::save(const std::string& path) const {
    std::vector<std::pair<std::string, Tensor>> tensors;
    for (const auto& e : encoder.params().entries()) tensors.push_back(e);
    for (const auto& e : denoiser.params().entries()) tensors.push_back(e);
    tensors.emplace_back("entropy.sigma", Tensor::from({int(sigma.size())}, sigma));
    tensors.emplace_back("meta.info",
                         Tensor::from({3}, {double(schedule.steps()), double(sigma.size()),
                                            double(ladder.levels())}));
    save_checkpoint(tensors, path);
}

ModelBundle ModelBundle::load(const std::string& path, const RunConfig& cfg) {
    Rng rng(0);
    ModelBundle bundle(cfg, rng);
    auto tensors = load_checkpoint(path);
    const Tensor* meta = nullptr;
    for (const auto& [name, t] : tensors)
        if (name == "meta.info") meta = &t;
    if (!meta || meta->size() != 3) throw DataError("checkpoint: missing meta.info");
    if (int((*meta)[0]) != cfg.schedule_steps || int((*meta)[1]) != cfg.latent_channels ||
        int((*meta)[2]) != cfg.k_levels)
        throw DataError("checkpoint/model mismatch: checkpoint has schedule_steps=" +
                        std::to_string(int((*meta)[0])) + " latent_channels=" +
                        std::to_string(int((*meta)[1])) + " k_levels=" +
                        std::to_string(int((*meta)[2])));
    restore_params(bundle.encoder.params(), tensors);
    restore_params(bundle.denoiser.params(), tensors);
    for (const auto& [name, t] : tensors)
        if (name == "entropy.sigma") {
            auto v = t.values();
            bundle.sigma.assign(v.begin(), v.end());
        }
    return bundle;
}

std::vector<std::string> list_images(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        if (e.path().extension() == ".ppm") out.push_back(e.path().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---- training ----

TrainStats cmd_train(const RunConfig& cfg, const std::string& input_dir,
                     const std::string& checkpoint_path, const std::string& log_csv_path) {
    auto files = list_images(input_dir);
    if (files.empty()) throw DataError("no .ppm training images in " + input_dir);
    std::vector<ImagePlane> images;
    images.reserve(files.size());
    for (const auto& f : files) images.push_back(pad_to_multiple(load_ppm(f), cfg.block_size));

    Rng rng(cfg.seed);
    Rng init_rng = rng.fork(1);
    ModelBundle bundle(cfg, init_rng);

    std::vector<Tensor> all_params = bundle.encoder.params().tensors();
    for (auto& t : bundle.denoiser.params().tensors()) all_params.push_back(t);
    Adam opt(all_params, cfg.train_lr);

    const int crop = cfg.train_crop > 0 ? cfg.train_crop : 0;
    if (crop > 0 && crop % cfg.block_size != 0)
        throw Error("train_crop must be a multiple of block_size");

    std::vector<double> sigma_ema(size_t(cfg.latent_channels), 1.0);
    StepLadder ladder;

    std::ostringstream log;
    log << "step,rate_bits_per_dim,denoise_mse\n";
    TrainStats stats;
    stats.steps = cfg.train_steps;
    std::vector<double> rate_hist, mse_hist;

    for (int step = 0; step < cfg.train_steps; ++step) {
        const ImagePlane& full = images[size_t(rng.next_below(images.size()))];
        ImagePlane patch = full;
        if (crop > 0 && (full.height > crop || full.width > crop)) {
            int oy = int(rng.next_below(uint64_t(full.height - crop + 1)));
            int ox = int(rng.next_below(uint64_t(full.width - crop + 1)));
            patch = ImagePlane(crop, crop);
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < crop; ++y)
                    for (int x = 0; x < crop; ++x)
                        patch.at(c, y, x) = full.at(c, oy + y, ox + x);
        }
        Tensor x = patch.to_tensor();
        Tensor z = bundle.encoder.forward(x);

        // Additive-uniform-noise quantization relaxation at unit step.
        std::vector<double> noise(size_t(z.size()));
        for (auto& v : noise) v = rng.uniform(-0.5, 0.5);
        Tensor z_tilde = add(z, Tensor::from(z.shape(), std::move(noise)));

        // Track per-channel spread for the rate model.
        {
            auto zv = z_tilde.values();
            int64_t plane = int64_t(z.dim(1)) * z.dim(2);
            for (int c = 0; c < cfg.latent_channels; ++c) {
                double sum = 0, sq = 0;
                for (int64_t i = 0; i < plane; ++i) {
                    double v = zv[size_t(int64_t(c) * plane + i)];
                    sum += v;
                    sq += v * v;
                }
                double mean = sum / double(plane);
                double sd = std::sqrt(std::max(0.0, sq / double(plane) - mean * mean));
                sigma_ema[size_t(c)] =
                    std::max(0.95 * sigma_ema[size_t(c)] + 0.05 * sd, kSigmaFloor);
            }
        }

        Tensor rate = scale(gaussian_rate_bits(z_tilde, sigma_ema), 1.0 / double(z.size()));

        // Anchor the latent's second moment at 1: without it the rate term
        // collapses z to zero before the conditioning gradient (zero-init
        // output conv) can push back. Per-channel means are pushed to zero
        // to match the zero-mean entropy model.
        Tensor moment = add_scalar(mean_all(mul(z_tilde, z_tilde)), -1.0);
        Tensor scale_anchor = add(mul(moment, moment), channel_mean_penalty(z));

        // Conditioning: relaxed latent on even steps (encoder gets a
        // distortion gradient), hard-quantized random allocations on odd
        // steps (the denoiser sees what inference produces).
        Tensor cond_latent;
        if (step % 2 == 0) {
            cond_latent = z_tilde;
        } else {
            NoGradGuard ng;
            BlockGrid grid = partition(patch, cfg.block_size);
            std::vector<int> actions(size_t(grid.count()));
            for (auto& a : actions) a = int(rng.next_below(uint64_t(cfg.k_levels)));
            Tensor frozen = Tensor::from(z.shape(),
                                         std::vector<double>(z.values().begin(), z.values().end()));
            cond_latent = dequantize(quantize(frozen, actions, grid, ladder), grid, ladder);
        }
        Tensor cond = upsample_nearest(cond_latent, kLatentDownsample);

        Tensor x0s = add_scalar(scale(x, 2.0), -1.0);
        int n = 1 + int(rng.next_below(uint64_t(cfg.schedule_steps)));
        std::vector<double> eps_data(size_t(x.size()));
        for (auto& v : eps_data) v = rng.normal();
        Tensor eps = Tensor::from(x.shape(), std::move(eps_data));
        Tensor x_n = forward_diffuse(x0s, n, eps, bundle.schedule);

        try {
            Tensor eps_hat = bundle.denoiser.forward(x_n, n, cond);
            Tensor distortion = mse(eps, eps_hat);
            Tensor loss = add(add(scale(rate, cfg.train_rate_weight),
                                  scale(distortion, cfg.weights.pixel)),
                              scale(scale_anchor, cfg.train_scale_weight));
            opt.zero_grad();
            backward(loss);
            opt.step();
            rate_hist.push_back(rate.item());
            mse_hist.push_back(distortion.item());
            log << step << "," << rate.item() << "," << distortion.item() << "\n";
        } catch (const NumericError& e) {
            throw Error("training diverged at step " + std::to_string(step) + ": " + e.what());
        }
    }

    // Final entropy fit over the full training latents.
    {
        NoGradGuard ng;
        std::vector<double> sum(size_t(cfg.latent_channels), 0.0);
        std::vector<double> sq(size_t(cfg.latent_channels), 0.0);
        int64_t count = 0;
        for (const auto& img : images) {
            Tensor z = bundle.encoder.forward(img.to_tensor());
            auto zv = z.values();
            int64_t plane = int64_t(z.dim(1)) * z.dim(2);
            for (int c = 0; c < cfg.latent_channels; ++c)
                for (int64_t i = 0; i < plane; ++i) {
                    double v = zv[size_t(int64_t(c) * plane + i)];
                    sum[size_t(c)] += v;
                    sq[size_t(c)] += v * v;
                }
            count += plane;
        }
        for (int c = 0; c < cfg.latent_channels; ++c) {
            double mean = sum[size_t(c)] / double(count);
            double var = std::max(0.0, sq[size_t(c)] / double(count) - mean * mean);
            bundle.sigma[size_t(c)] = std::max(std::sqrt(var), kSigmaFloor);
        }
    }
    bundle.save(checkpoint_path);

    if (!log_csv_path.empty()) {
        std::ostringstream head;
        for (const auto& line : config_comment_lines(cfg, checkpoint_hash(checkpoint_path)))
            head << "# " << line << "\n";
        write_text_file(log_csv_path, head.str() + log.str());
    }

    size_t window = std::max<size_t>(1, std::min<size_t>(50, rate_hist.size() / 4));
    auto mean_of = [&](const std::vector<double>& v, bool tail) {
        double s = 0;
        for (size_t i = 0; i < window; ++i) s += tail ? v[v.size() - 1 - i] : v[i];
        return s / double(window);
    };
    stats.first_rate = mean_of(rate_hist, false);
    stats.last_rate = mean_of(rate_hist, true);
    stats.first_mse = mean_of(mse_hist, false);
    stats.last_mse = mean_of(mse_hist, true);
    return stats;
}

// ---- compression ----

ModeSpec parse_mode(const std::string& text) {
    if (text == "ppo") return {CompressMode::Ppo, 0};
    if (text == "uniform") return {CompressMode::UniformAuto, 0};
    if (text.rfind("uniform-", 0) == 0) {
        std::string num = text.substr(8);
        if (num.size() == 1 && num[0] >= '1' && num[0] <= '8')
            return {CompressMode::UniformFixed, num[0] - '1'};
    }
    throw Error("unknown mode '" + text + "' (expected ppo, uniform or uniform-<k>)");
}

PpoRunner::PpoRunner(const RunConfig& cfg) : cfg_(cfg), base_rng_(cfg.seed) {
    dual_.rho = cfg.dual_rho;
    reset_nets();
}

void PpoRunner::reset_nets() {
    Rng net_rng(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
    policy_ = std::make_unique<PolicyNet>(net_rng, cfg_.k_levels);
    value_ = std::make_unique<ValueNet>(net_rng);
    dual_.eta = 0.0;
}

AdaptResult PpoRunner::adapt(CodecAllocationEnv& env) {
    if (cfg_.reset_per_image && images_seen_ > 0) reset_nets();
    dual_.r_max = env.r_max();
    Rng episode_rng = base_rng_.fork(++images_seen_);
    return adapt_per_image(env, *policy_, *value_, dual_, cfg_.ppo, episode_rng);
}

CompressResult compress_image(const RunConfig& cfg, const ImagePlane& image,
                              const ModelBundle& models, const ModeSpec& mode,
                              PpoRunner* runner) {
    const bool needs_budget = mode.mode != CompressMode::UniformFixed;
    double rmax = 0;
    if (cfg.has_budget())
        rmax = cfg.resolve_rmax(image.height, image.width);
    else if (needs_budget)
        throw Error("mode requires a bitrate budget (--rmax-bits or --target-ratio)");

    SamplerConfig adapt_decode{cfg.seed, false, cfg.adapt_decode_steps};
    CodecAllocationEnv env(image, models.encoder, models.denoiser, models.schedule,
                           models.ladder, cfg.weights, cfg.block_size, rmax, adapt_decode,
                           models.sigma);

    CompressResult result;
    result.r_max = rmax;
    int64_t min_bits = env.uniform_bits(0);
    auto infeasible = [&](double budget) {
        std::ostringstream os;
        os << "budget of " << budget << " bits is infeasible: minimum achievable (uniform "
              "coarsest allocation) is "
           << min_bits << " bits";
        return InfeasibleBudgetError(os.str(), double(min_bits));
    };

    switch (mode.mode) {
        case CompressMode::UniformFixed: {
            if (mode.k >= models.ladder.levels())
                throw Error("uniform level out of range for this model");
            std::vector<int> actions(size_t(env.grid().count()), mode.k);
            Bitstream bs = env.make_bitstream(actions);
            if (rmax > 0 && double(bs.total_bits()) > rmax) {
                if (min_bits > rmax) throw infeasible(rmax);
                throw InfeasibleBudgetError(
                    "uniform-" + std::to_string(mode.k + 1) + " needs " +
                        std::to_string(bs.total_bits()) + " bits > budget; minimum achievable is " +
                        std::to_string(min_bits) + " bits",
                    double(min_bits));
            }
            result.bitstream = std::move(bs);
            result.actions = std::move(actions);
            result.method_tag = "uniform-" + std::to_string(mode.k + 1);
            return result;
        }
        case CompressMode::UniformAuto: {
            if (min_bits > rmax) throw infeasible(rmax);
            for (int k = models.ladder.levels() - 1; k >= 0; --k) {
                std::vector<int> actions(size_t(env.grid().count()), k);
                Bitstream bs = env.make_bitstream(actions);
                if (double(bs.total_bits()) <= rmax) {
                    result.bitstream = std::move(bs);
                    result.actions = std::move(actions);
                    result.method_tag = "uniform-" + std::to_string(k + 1);
                    return result;
                }
            }
            throw infeasible(rmax);  // unreachable given the min_bits check
        }
        case CompressMode::Ppo: {
            if (double(min_bits) > rmax) throw infeasible(rmax);
            if (!runner) throw Error("ppo mode requires a PpoRunner");
            AdaptResult adapted = runner->adapt(env);
            result.bitstream = adapted.best.bitstream;
            result.actions = adapted.best_actions;
            result.report = std::move(adapted.report);
            result.method_tag = "pcdc";
            return result;
        }
    }
    throw Error("unhandled compress mode");
}

void cmd_compress(const RunConfig& cfg, const std::string& image_path,
                  const std::string& checkpoint_path, const std::string& out_path,
                  const std::string& mode_str) {
    ModelBundle models = ModelBundle::load(checkpoint_path, cfg);
    ImagePlane image = load_ppm(image_path);
    ModeSpec mode = parse_mode(mode_str);
    PpoRunner runner(cfg);
    CompressResult result = compress_image(cfg, image, models, mode, &runner);

    write_bitstream(result.bitstream, out_path);

    uint64_t hash = checkpoint_hash(checkpoint_path);
    std::ostringstream meta;
    meta << "# pcdc bitstream metadata\n";
    meta << "method = " << result.method_tag << "\n";
    meta << "r_max_bits = " << result.r_max << "\n";
    std::ostringstream hash_os;
    hash_os << std::hex << hash;
    meta << "checkpoint_hash = " << hash_os.str() << "\n";
    meta << serialize_config(cfg);
    write_text_file(out_path + ".meta", meta.str());

    if (mode.mode == CompressMode::Ppo) {
        std::ostringstream csv;
        for (const auto& line : config_comment_lines(cfg, hash)) csv << "# " << line << "\n";
        csv << "epoch,episode,utility,r_tot_bits,eta,feasible\n";
        csv.precision(10);
        for (const auto& row : result.report)
            csv << row.epoch << "," << row.episode << "," << row.utility << "," << row.r_tot
                << "," << row.eta << "," << (row.feasible ? 1 : 0) << "\n";
        write_text_file(out_path + ".report.csv", csv.str());
    }
}

ImagePlane cmd_decompress(const RunConfig& cfg, const std::string& bitstream_path,
                          const std::string& checkpoint_path, const std::string& out_path,
                          std::optional<uint64_t> seed) {
    ModelBundle models = ModelBundle::load(checkpoint_path, cfg);
    Bitstream bs = read_bitstream(bitstream_path);
    DecodedStream stream = deserialize(bs);
    if (stream.latent.channels != cfg.latent_channels)
        throw DataError("bitstream/model mismatch: bitstream has " +
                        std::to_string(stream.latent.channels) + " latent channels");
    SamplerConfig sampler{seed.value_or(cfg.seed), false, cfg.decode_steps};
    ImagePlane recon = decode_stream(stream, models.denoiser, models.schedule, sampler);
    if (!out_path.empty()) {
        auto comments = config_comment_lines(cfg, checkpoint_hash(checkpoint_path));
        comments.insert(comments.begin(), "pcdc reconstruction");
        save_ppm(recon, out_path, comments);
    }
    return recon;
}

// ---- evaluation ----

namespace {

std::string eval_csv_header() {
    return "image," + MetricReport::csv_header() + ",bpp,ratio";
}

std::string eval_csv_row(const EvaluateRow& row) {
    std::ostringstream os;
    os.precision(10);
    os << row.name << "," << row.report.csv_row() << "," << row.bpp << "," << row.ratio;
    return os.str();
}

}  // namespace

EvaluateResult cmd_evaluate(const RunConfig& cfg, const std::string& originals_dir,
                            const std::string& reconstructions_dir,
                            const std::string& out_csv_path) {
    auto originals = list_images(originals_dir);
    auto recons = list_images(reconstructions_dir);
    std::map<std::string, std::string> recon_by_name;
    for (const auto& r : recons) recon_by_name[fs::path(r).filename().string()] = r;

    EvaluateResult result;
    std::vector<std::string> matched_names;
    for (const auto& o : originals) {
        std::string name = fs::path(o).filename().string();
        auto it = recon_by_name.find(name);
        if (it == recon_by_name.end()) {
            result.unpaired.push_back(originals_dir + "/" + name);
            continue;
        }
        matched_names.push_back(name);
        ImagePlane a = load_ppm(o);
        ImagePlane b = load_ppm(it->second);
        EvaluateRow row;
        row.name = name;
        row.report = evaluate_pair(a, b, cfg.weights);
        std::string bs_path =
            (fs::path(reconstructions_dir) / (stem_of(name) + ".pcdc")).string();
        if (fs::exists(bs_path)) {
            Bitstream bs = read_bitstream(bs_path);
            double pixels = double(a.height) * a.width;
            row.bpp = double(bs.total_bits()) / pixels;
            row.ratio = 24.0 * pixels / double(bs.total_bits());
        }
        result.rows.push_back(std::move(row));
        recon_by_name.erase(it);
    }
    for (const auto& [name, path] : recon_by_name) result.unpaired.push_back(path);

    if (!result.rows.empty()) {
        EvaluateRow& m = result.mean;
        m.name = "mean";
        for (const auto& r : result.rows) {
            m.report.mse += r.report.mse;
            m.report.psnr_db += r.report.psnr_db;
            m.report.ssim += r.report.ssim;
            m.report.lpips_proxy += r.report.lpips_proxy;
            m.report.dists_proxy += r.report.dists_proxy;
            m.report.utility += r.report.utility;
            m.bpp += r.bpp;
            m.ratio += r.ratio;
        }
        double n = double(result.rows.size());
        m.report.mse /= n;
        m.report.psnr_db /= n;
        m.report.ssim /= n;
        m.report.lpips_proxy /= n;
        m.report.dists_proxy /= n;
        m.report.utility /= n;
        m.bpp /= n;
        m.ratio /= n;
    }

    if (!out_csv_path.empty()) {
        std::ostringstream csv;
        csv << eval_csv_header() << "\n";
        for (const auto& r : result.rows) csv << eval_csv_row(r) << "\n";
        if (!result.rows.empty()) csv << eval_csv_row(result.mean) << "\n";
        write_text_file(out_csv_path, csv.str());
    }
    return result;
}

// ---- rate-distortion sweep ----

std::vector<RDRecord> cmd_rd_sweep(const RunConfig& cfg, const std::string& input_dir,
                                   const std::string& checkpoint_path,
                                   const std::vector<double>& budgets,
                                   const std::vector<std::string>& modes,
                                   const std::string& out_csv_path) {
    if (budgets.empty()) throw Error("rd-sweep: no budgets given");
    if (modes.empty()) throw Error("rd-sweep: no modes given");
    ModelBundle models = ModelBundle::load(checkpoint_path, cfg);
    auto files = list_images(input_dir);
    if (files.empty()) throw DataError("no .ppm images in " + input_dir);
    std::vector<ImagePlane> images;
    for (const auto& f : files) images.push_back(load_ppm(f));

    PpoRunner runner(cfg);
    struct Accum {
        MetricReport sum;
        double bpp = 0, ratio = 0;
        int n = 0;
    };
    std::map<std::pair<std::string, double>, Accum> groups;

    SamplerConfig decode{cfg.seed, false, cfg.decode_steps};
    for (double budget : budgets) {
        RunConfig bc = cfg;
        bc.rmax_bits = budget;
        bc.target_ratio = 0;
        for (const auto& mode_str : modes) {
            ModeSpec mode = parse_mode(mode_str);
            for (size_t i = 0; i < images.size(); ++i) {
                CompressResult cr = compress_image(bc, images[i], models, mode, &runner);
                DecodedStream stream = deserialize(cr.bitstream);
                ImagePlane recon = decode_stream(stream, models.denoiser, models.schedule, decode);
                MetricReport rep = evaluate_pair(images[i], recon, cfg.weights);
                double pixels = double(images[i].height) * images[i].width;
                Accum& acc = groups[{cr.method_tag, budget}];
                acc.sum.mse += rep.mse;
                acc.sum.psnr_db += rep.psnr_db;
                acc.sum.ssim += rep.ssim;
                acc.sum.lpips_proxy += rep.lpips_proxy;
                acc.sum.dists_proxy += rep.dists_proxy;
                acc.sum.utility += rep.utility;
                acc.bpp += double(cr.bitstream.total_bits()) / pixels;
                acc.ratio += 24.0 * pixels / double(cr.bitstream.total_bits());
                acc.n += 1;
            }
        }
    }

    std::vector<RDRecord> records;
    for (const auto& [key, acc] : groups) {
        RDRecord r;
        r.method = key.first;
        r.budget_bits = key.second;
        double n = double(acc.n);
        r.report.mse = acc.sum.mse / n;
        r.report.psnr_db = acc.sum.psnr_db / n;
        r.report.ssim = acc.sum.ssim / n;
        r.report.lpips_proxy = acc.sum.lpips_proxy / n;
        r.report.dists_proxy = acc.sum.dists_proxy / n;
        r.report.utility = acc.sum.utility / n;
        r.bpp = acc.bpp / n;
        r.ratio = acc.ratio / n;
        r.images = acc.n;
        records.push_back(r);
    }
    std::sort(records.begin(), records.end(), [](const RDRecord& a, const RDRecord& b) {
        if (a.method != b.method) return a.method < b.method;
        if (a.bpp != b.bpp) return a.bpp < b.bpp;
        return a.budget_bits < b.budget_bits;
    });
    // Strict bpp ordering within a method: drop duplicate rate points.
    std::vector<RDRecord> unique;
    for (const auto& r : records)
        if (unique.empty() || unique.back().method != r.method || unique.back().bpp != r.bpp)
            unique.push_back(r);

    if (!out_csv_path.empty()) {
        std::ostringstream csv;
        for (const auto& line : config_comment_lines(cfg, checkpoint_hash(checkpoint_path)))
            csv << "# " << line << "\n";
        csv << "method,budget_bits,bpp,ratio," << MetricReport::csv_header() << ",images\n";
        csv.precision(10);
        for (const auto& r : unique)
            csv << r.method << "," << r.budget_bits << "," << r.bpp << "," << r.ratio << ","
                << r.report.csv_row() << "," << r.images << "\n";
        write_text_file(out_csv_path, csv.str());
    }
    return unique;
}

}  // namespace pcdc
