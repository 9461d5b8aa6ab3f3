#include "pcdc/allocator.hpp"

#include <algorithm>
#include <cmath>

namespace pcdc {

std::vector<double> latent_block_stats(const Tensor& latent, const Block& block) {
    if (latent.ndim() != 3) throw ShapeError("latent_block_stats: expected (C,h,w)");
    const int channels = latent.dim(0), h = latent.dim(1), w = latent.dim(2);
    const int side = block.h / kLatentDownsample;
    const int y0 = block.row * side, x0 = block.col * side;
    if (y0 + side > h || x0 + side > w)
        throw Error("latent_block_stats: footprint outside latent");
    auto v = latent.values();
    std::vector<double> out;
    out.reserve(size_t(channels) * 2);
    for (int c = 0; c < channels; ++c) {
        double sum = 0, sum_sq = 0;
        for (int y = y0; y < y0 + side; ++y)
            for (int x = x0; x < x0 + side; ++x) {
                double z = v[(size_t(c) * h + y) * w + x];
                sum += z;
                sum_sq += z * z;
            }
        double n = double(side) * side;
        double mean = sum / n;
        out.push_back(mean);
        out.push_back(std::sqrt(std::max(0.0, sum_sq / n - mean * mean)));
    }
    return out;
}

namespace {

std::vector<double> assemble_state(const std::vector<double>& phi_h,
                                   const std::vector<double>& phi_z, double rho, int row,
                                   int col, int grid_rows, int grid_cols) {
    if (phi_h.size() != 4 || phi_z.size() != 16)
        throw ShapeError("state: expected 4 residual stats and 16 latent stats");
    std::vector<double> s;
    s.reserve(kStateDim);
    s.insert(s.end(), phi_h.begin(), phi_h.end());
    s.insert(s.end(), phi_z.begin(), phi_z.end());
    s.push_back(rho);
    s.push_back(grid_rows > 1 ? double(row) / (grid_rows - 1) : 0.0);
    s.push_back(grid_cols > 1 ? double(col) / (grid_cols - 1) : 0.0);
    return s;
}

}  // namespace

std::vector<double> build_state(const std::vector<double>& phi_h,
                                const std::vector<double>& phi_z, double bits_committed,
                                double r_max, int row, int col, int grid_rows, int grid_cols) {
    if (r_max <= 0) throw Error("build_state: r_max must be positive");
    double rho = std::max(0.0, (r_max - bits_committed) / r_max);
    return assemble_state(phi_h, phi_z, rho, row, col, grid_rows, grid_cols);
}

std::vector<int> mask_actions(double remaining_bits, const std::vector<double>& action_costs) {
    std::vector<int> mask(action_costs.size(), 0);
    for (size_t k = 0; k < action_costs.size(); ++k)
        if (action_costs[k] <= remaining_bits) mask[k] = 1;
    mask[0] = 1;  // the coarsest step is always available
    return mask;
}

double compute_reward(double utility_value, double r_tot, const DualController& dual) {
    return utility_value - dual.eta * (r_tot - dual.r_max);
}

double compute_reward(const ImagePlane& original, const ImagePlane& reconstruction,
                      double r_tot, const DualController& dual, const MetricWeights& weights) {
    MetricReport rep = evaluate_pair(original, reconstruction, weights);
    return compute_reward(rep.utility, r_tot, dual);
}

// ---- networks ----

namespace {

Tensor linear_init(Rng& rng, int in, int out, double gain = 1.0) {
    std::vector<double> w(size_t(in) * out);
    double std_dev = gain * std::sqrt(1.0 / double(in));
    for (auto& v : w) v = rng.normal() * std_dev;
    return Tensor::from({in, out}, std::move(w));
}

constexpr int kHidden = 64;

}  // namespace

PolicyNet::PolicyNet(Rng& rng, int actions) : actions_(actions) {
    params_.add("pol.l1.w", linear_init(rng, kStateDim, kHidden));
    params_.add("pol.l1.b", Tensor::zeros({kHidden}));
    params_.add("pol.l2.w", linear_init(rng, kHidden, kHidden));
    params_.add("pol.l2.b", Tensor::zeros({kHidden}));
    // Small head: the initial policy stays near uniform.
    params_.add("pol.l3.w", linear_init(rng, kHidden, actions, 0.01));
    params_.add("pol.l3.b", Tensor::zeros({actions}));
}

Tensor PolicyNet::forward(const Tensor& states) const {
    Tensor h = relu(add_row_bias(matmul(states, params_.find("pol.l1.w")),
                                 params_.find("pol.l1.b")));
    h = relu(add_row_bias(matmul(h, params_.find("pol.l2.w")), params_.find("pol.l2.b")));
    return add_row_bias(matmul(h, params_.find("pol.l3.w")), params_.find("pol.l3.b"));
}

ValueNet::ValueNet(Rng& rng) {
    params_.add("val.l1.w", linear_init(rng, kStateDim, kHidden));
    params_.add("val.l1.b", Tensor::zeros({kHidden}));
    params_.add("val.l2.w", linear_init(rng, kHidden, kHidden));
    params_.add("val.l2.b", Tensor::zeros({kHidden}));
    params_.add("val.l3.w", linear_init(rng, kHidden, 1, 0.01));
    params_.add("val.l3.b", Tensor::zeros({1}));
}

Tensor ValueNet::forward(const Tensor& states) const {
    Tensor h = relu(add_row_bias(matmul(states, params_.find("val.l1.w")),
                                 params_.find("val.l1.b")));
    h = relu(add_row_bias(matmul(h, params_.find("val.l2.w")), params_.find("val.l2.b")));
    return add_row_bias(matmul(h, params_.find("val.l3.w")), params_.find("val.l3.b"));
}

// ---- rollout ----

Trajectory rollout(AllocationEnv& env, const PolicyNet& policy, const PPOConfig& config,
                   Rng& rng) {
    NoGradGuard ng;
    const int blocks = env.num_blocks();
    const int actions = env.num_actions();
    const double rmax = env.r_max();

    // Suffix sums of the coarsest-step cost: what the rest of the episode
    // needs at minimum.
    std::vector<double> floor_suffix(size_t(blocks) + 1, 0.0);
    for (int b = blocks - 1; b >= 0; --b)
        floor_suffix[size_t(b)] = floor_suffix[size_t(b) + 1] + env.est_bits(b, 0);

    Trajectory traj;
    traj.steps.reserve(size_t(blocks));
    std::vector<int> chosen;
    chosen.reserve(size_t(blocks));
    double committed = 0;
    for (int b = 0; b < blocks; ++b) {
        TrajectoryStep step;
        double rho = rmax > 0 ? std::max(0.0, (rmax - committed) / rmax) : 0.0;
        step.state = env.state(b, rho);

        std::vector<double> costs(static_cast<size_t>(actions));
        for (int k = 0; k < actions; ++k) costs[size_t(k)] = env.est_bits(b, k);
        std::vector<int> mask(size_t(actions), 1);
        if (config.mask_enabled) {
            double remaining = (rmax - env.fixed_bits()) / kMaskMargin - committed -
                               floor_suffix[size_t(b) + 1];
            mask = mask_actions(remaining, costs);
        }
        step.mask.assign(mask.begin(), mask.end());

        Tensor state_t = Tensor::from({1, kStateDim}, step.state);
        Tensor mask_t = Tensor::from({1, actions}, step.mask);
        Tensor lp = masked_log_softmax(policy.forward(state_t), mask_t);

        std::vector<double> probs(size_t(actions), 0.0);
        double total = 0;
        for (int k = 0; k < actions; ++k)
            if (mask[size_t(k)]) {
                probs[size_t(k)] = std::exp(lp[k]);
                total += probs[size_t(k)];
            }
        int action = 0;
        if (config.greedy) {
            for (int k = 1; k < actions; ++k)
                if (probs[size_t(k)] > probs[size_t(action)]) action = k;
        } else {
            double u = rng.uniform() * total;
            double acc = 0;
            action = -1;
            for (int k = 0; k < actions; ++k) {
                if (!mask[size_t(k)]) continue;
                acc += probs[size_t(k)];
                if (u <= acc) {
                    action = k;
                    break;
                }
            }
            if (action < 0) {  // numerical tail
                for (int k = actions - 1; k >= 0; --k)
                    if (mask[size_t(k)]) {
                        action = k;
                        break;
                    }
            }
        }
        step.action = action;
        step.logprob_old = lp[action];
        committed += costs[size_t(action)];
        chosen.push_back(action);
        traj.steps.push_back(std::move(step));
    }
    traj.outcome = env.finish(chosen);
    traj.feasible = traj.outcome.r_tot <= rmax;
    return traj;
}

std::vector<double> advantages(const Trajectory& traj, const ValueNet& value) {
    NoGradGuard ng;
    const int n = int(traj.steps.size());
    std::vector<double> flat;
    flat.reserve(size_t(n) * kStateDim);
    for (const auto& s : traj.steps) flat.insert(flat.end(), s.state.begin(), s.state.end());
    Tensor v = value.forward(Tensor::from({n, kStateDim}, std::move(flat)));
    std::vector<double> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out[size_t(i)] = traj.reward - v[i];
    return out;
}

PPOUpdateStats ppo_update(const std::vector<Trajectory>& trajectories, PolicyNet& policy,
                          ValueNet& value, Adam& actor_opt, Adam& critic_opt,
                          const PPOConfig& config) {
    int64_t n = 0;
    for (const auto& t : trajectories) n += int64_t(t.steps.size());
    if (n == 0) throw Error("ppo_update: no samples");
    const int actions = int(trajectories.front().steps.front().mask.size());

    std::vector<double> states_flat, masks_flat, old_lp, returns;
    std::vector<int> act;
    states_flat.reserve(size_t(n) * kStateDim);
    masks_flat.reserve(size_t(n) * size_t(actions));
    for (const auto& t : trajectories)
        for (const auto& s : t.steps) {
            states_flat.insert(states_flat.end(), s.state.begin(), s.state.end());
            masks_flat.insert(masks_flat.end(), s.mask.begin(), s.mask.end());
            old_lp.push_back(s.logprob_old);
            act.push_back(s.action);
            returns.push_back(t.reward);  // G_b = r, terminal reward
        }

    Tensor states = Tensor::from({int(n), kStateDim}, states_flat);
    Tensor masks = Tensor::from({int(n), actions}, masks_flat);
    Tensor old_lp_t = Tensor::from({int(n)}, old_lp);
    Tensor returns_t = Tensor::from({int(n)}, returns);

    // Advantages against the critic as it stands before this update.
    std::vector<double> adv(static_cast<size_t>(n));
    {
        NoGradGuard ng;
        Tensor v = value.forward(states);
        for (int64_t i = 0; i < n; ++i) adv[size_t(i)] = returns[size_t(i)] - v[i];
    }
    if (config.normalize_advantages) {
        double mean = 0, sq = 0;
        for (double a : adv) mean += a;
        mean /= double(n);
        for (double a : adv) sq += (a - mean) * (a - mean);
        double std_dev = std::sqrt(sq / double(n)) + 1e-8;
        for (double& a : adv) a = (a - mean) / std_dev;
    }
    Tensor adv_t = Tensor::from({int(n)}, adv);

    PPOUpdateStats stats;
    try {
        for (int iter = 0; iter < std::max(1, config.updates_per_epoch); ++iter) {
            Tensor lp = masked_log_softmax(policy.forward(states), masks);
            Tensor chosen = gather_rows(lp, act);
            Tensor ratio = exp(sub(chosen, old_lp_t));
            Tensor surr = minimum(mul(ratio, adv_t),
                                  mul(clamp(ratio, 1.0 - config.clip, 1.0 + config.clip), adv_t));
            Tensor entropy = masked_entropy(lp, masks);
            Tensor actor_obj = add(mean_all(surr), scale(mean_all(entropy), config.entropy_weight));
            Tensor actor_loss = scale(actor_obj, -1.0);
            actor_opt.zero_grad();
            backward(actor_loss);
            actor_opt.step();

            Tensor v = reshape(value.forward(states), {int(n)});
            Tensor value_loss = mse(v, returns_t);
            critic_opt.zero_grad();
            backward(value_loss);
            critic_opt.step();

            stats.actor_loss = actor_loss.item();
            stats.value_loss = value_loss.item();
            stats.mean_entropy = mean_all(entropy).item();
        }
    } catch (const NumericError& e) {
        throw NumericError(std::string("ppo_update aborted: ") + e.what());
    }
    return stats;
}

AdaptResult adapt_per_image(AllocationEnv& env, PolicyNet& policy, ValueNet& value,
                            DualController& dual, const PPOConfig& config, Rng& rng) {
    Adam actor_opt(policy.params().tensors(), config.actor_lr);
    Adam critic_opt(value.params().tensors(), config.critic_lr);

    AdaptResult res;
    bool have_any = false;
    auto consider = [&](const Trajectory& t) {
        bool better;
        if (!have_any) {
            better = true;
        } else if (t.feasible != res.best_feasible) {
            better = t.feasible;
        } else if (t.feasible) {
            better = t.outcome.utility > res.best.utility;
        } else {
            better = t.outcome.r_tot < res.best.r_tot;
        }
        if (better) {
            res.best = t.outcome;
            res.best_feasible = t.feasible;
            res.best_actions.clear();
            for (const auto& s : t.steps) res.best_actions.push_back(s.action);
            have_any = true;
        }
    };

    const int rounds = std::max(1, config.epochs);
    const bool learn = config.epochs > 0;
    for (int epoch = 0; epoch < rounds; ++epoch) {
        std::vector<Trajectory> batch;
        batch.reserve(size_t(config.episodes_per_epoch));
        double rtot_sum = 0;
        for (int e = 0; e < config.episodes_per_epoch; ++e) {
            Trajectory t = rollout(env, policy, config, rng);
            t.reward = compute_reward(t.outcome.utility, t.outcome.r_tot, dual);
            rtot_sum += t.outcome.r_tot;
            res.report.push_back(AdaptReportRow{epoch, e, t.outcome.utility, t.outcome.r_tot,
                                                dual.eta, t.feasible});
            consider(t);
            batch.push_back(std::move(t));
        }
        if (learn) {
            ppo_update(batch, policy, value, actor_opt, critic_opt, config);
            dual.update(rtot_sum / double(config.episodes_per_epoch));
        }
    }
    return res;
}

// ---- codec-backed environment ----

namespace {

ImagePlane crop_plane(const Tensor& padded, int height, int width) {
    ImagePlane out(height, width);
    const int ph = padded.dim(1), pw = padded.dim(2);
    (void)ph;
    auto v = padded.values();
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                out.at(c, y, x) = v[(size_t(c) * ph + y) * pw + x];
    return out;
}

}  // namespace

CodecAllocationEnv::CodecAllocationEnv(const ImagePlane& original, const EncoderNet& encoder,
                                       const DenoiserNet& denoiser,
                                       const VarianceSchedule& schedule,
                                       const StepLadder& ladder, const MetricWeights& weights,
                                       int block_size, double r_max,
                                       const SamplerConfig& decode_config,
                                       const std::vector<double>& fallback_sigma)
    : original_(original),
      denoiser_(denoiser),
      schedule_(schedule),
      ladder_(ladder),
      weights_(weights),
      r_max_(r_max),
      decode_config_(decode_config) {
    grid_ = partition(original, block_size);
    padded_ = pad_to_multiple(original, block_size);
    {
        NoGradGuard ng;
        latent_ = encoder.forward(padded_.to_tensor());
    }
    if (int64_t(latent_.dim(1)) * latent_.dim(2) >= 100) {
        model_ = EntropyModel::fit(latent_, ladder_);
    } else if (int(fallback_sigma.size()) == latent_.dim(0)) {
        model_ = EntropyModel::from_sigma(fallback_sigma, ladder_);
    } else {
        throw DataError("image too small for a per-image entropy fit and no fallback sigma");
    }

    ResidualMap residual = highpass(padded_);
    phi_h_.reserve(size_t(grid_.count()));
    phi_z_.reserve(size_t(grid_.count()));
    est_table_.reserve(size_t(grid_.count()));
    const int side = block_size / kLatentDownsample;
    auto zv = latent_.values();
    const int lh = latent_.dim(1), lw = latent_.dim(2);
    for (const Block& blk : grid_.blocks) {
        phi_h_.push_back(block_stats(residual, blk));
        phi_z_.push_back(latent_block_stats(latent_, blk));
        std::vector<double> row(size_t(ladder_.levels()), 0.0);
        for (int k = 0; k < ladder_.levels(); ++k) {
            double step = ladder_.step(k);
            double bits = 0;
            for (int c = 0; c < latent_.dim(0); ++c) {
                const SymbolTable& t = model_.table(c, k);
                for (int y = blk.row * side; y < (blk.row + 1) * side; ++y)
                    for (int x = blk.col * side; x < (blk.col + 1) * side; ++x) {
                        double s = round_half_away_from_zero(
                            zv[(size_t(c) * lh + y) * lw + x] / step);
                        int sym = int(std::clamp(s, double(-kLatentClamp), double(kLatentClamp)));
                        bits += t.bits(sym);
                    }
            }
            row[size_t(k)] = bits;
        }
        est_table_.push_back(std::move(row));
    }
}

std::vector<double> CodecAllocationEnv::state(int block, double rho) const {
    const Block& blk = grid_.blocks[size_t(block)];
    return assemble_state(phi_h_[size_t(block)], phi_z_[size_t(block)], rho, blk.row, blk.col,
                          grid_.rows, grid_.cols);
}

double CodecAllocationEnv::est_bits(int block, int action) const {
    return est_table_[size_t(block)][size_t(action)];
}

double CodecAllocationEnv::fixed_bits() const {
    return double(header_bits(original_.height, original_.width, grid_.block_size,
                              ladder_.levels(), latent_.dim(0))) +
           kCoderSlackBits;
}

Bitstream CodecAllocationEnv::make_bitstream(const std::vector<int>& actions) const {
    QuantizedLatent q = quantize(latent_, actions, grid_, ladder_);
    return serialize(q, grid_, original_.height, original_.width, model_);
}

EpisodeOutcome CodecAllocationEnv::finish(const std::vector<int>& actions) {
    QuantizedLatent q = quantize(latent_, actions, grid_, ladder_);
    Bitstream bs = serialize(q, grid_, original_.height, original_.width, model_);

    Tensor cond = upsample_nearest(dequantize(q, grid_, ladder_), kLatentDownsample);
    Reconstruction rec = reverse_reconstruct(denoiser_.as_eps_model(), cond, grid_.padded_h,
                                             grid_.padded_w, schedule_, decode_config_);
    ImagePlane recon = crop_plane(rec.image, original_.height, original_.width);

    EpisodeOutcome out;
    out.r_tot = double(bs.total_bits());
    out.bitstream = std::move(bs);
    out.reconstruction = recon.to_tensor();
    MetricReport rep = evaluate_pair(original_, recon, weights_);
    out.utility = rep.utility;
    return out;
}

int64_t CodecAllocationEnv::uniform_bits(int action) const {
    std::vector<int> actions(size_t(grid_.count()), action);
    return make_bitstream(actions).total_bits();
}

ImagePlane decode_stream(const DecodedStream& stream, const DenoiserNet& denoiser,
                         const VarianceSchedule& schedule, const SamplerConfig& config,
                         double* clamp_fraction) {
    Tensor cond = upsample_nearest(
        dequantize(stream.latent, stream.grid, stream.model.ladder()), kLatentDownsample);
    Reconstruction rec = reverse_reconstruct(denoiser.as_eps_model(), cond,
                                             stream.grid.padded_h, stream.grid.padded_w,
                                             schedule, config);
    if (clamp_fraction) *clamp_fraction = rec.clamp_fraction;
    return crop_plane(rec.image, stream.height, stream.width);
}

}  // namespace pcdc
