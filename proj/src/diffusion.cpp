#include "pcdc/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "pcdc/optim.hpp"

namespace pcdc {

VarianceSchedule::VarianceSchedule(int steps) : n_(steps) {
    if (steps < 1) throw Error("schedule: steps must be >= 1");
    const double s = 0.008;
    auto f = [s](double u) {
        double v = std::cos((u + s) / (1.0 + s) * 1.5707963267948966);
        return v * v;
    };
    const double f0 = f(0.0);
    alpha_bar_.resize(size_t(steps) + 1);
    alpha_bar_[0] = 1.0;
    double prev_raw = 1.0;
    for (int n = 1; n <= steps; ++n) {
        double raw = f(double(n) / steps) / f0;
        // Clip the per-step ratio so late steps stay usable.
        double ratio = std::clamp(raw / prev_raw, 1e-3, 0.9999);
        alpha_bar_[size_t(n)] = alpha_bar_[size_t(n) - 1] * ratio;
        prev_raw = raw;
    }
}

double VarianceSchedule::alpha_bar(int n) const {
    if (n < 0 || n > n_)
        throw Error("schedule: step " + std::to_string(n) + " outside [0," +
                    std::to_string(n_) + "]");
    return alpha_bar_[size_t(n)];
}

Tensor forward_diffuse(const Tensor& x0, int n, const Tensor& eps,
                       const VarianceSchedule& schedule) {
    if (x0.shape() != eps.shape())
        throw ShapeError("forward_diffuse: x0/eps shape mismatch");
    double ab = schedule.alpha_bar(n);
    return add(scale(x0, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

std::vector<double> sinusoidal_embedding(int n, int dim) {
    const int half = dim / 2;
    std::vector<double> e(static_cast<size_t>(dim));
    for (int i = 0; i < half; ++i) {
        double freq = std::pow(10000.0, -double(i) / double(half));
        e[size_t(i)] = std::sin(n * freq);
        e[size_t(half + i)] = std::cos(n * freq);
    }
    return e;
}

namespace {

constexpr int kTimeEmbedDim = 32;

Tensor conv_init(Rng& rng, int cout, int cin, int k) {
    std::vector<double> w(size_t(cout) * cin * k * k);
    double std_dev = std::sqrt(2.0 / double(cin * k * k));
    for (auto& v : w) v = rng.normal() * std_dev;
    return Tensor::from({cout, cin, k, k}, std::move(w));
}

Tensor convt_init(Rng& rng, int cin, int cout, int k) {
    std::vector<double> w(size_t(cin) * cout * k * k);
    double std_dev = std::sqrt(2.0 / double(cin * k * k));
    for (auto& v : w) v = rng.normal() * std_dev;
    return Tensor::from({cin, cout, k, k}, std::move(w));
}

Tensor linear_init(Rng& rng, int in, int out) {
    std::vector<double> w(size_t(in) * out);
    double std_dev = std::sqrt(1.0 / double(in));
    for (auto& v : w) v = rng.normal() * std_dev;
    return Tensor::from({in, out}, std::move(w));
}

}  // namespace

DenoiserNet::DenoiserNet(Rng& rng, int cond_channels) : cond_channels_(cond_channels) {
    const int in_ch = 3 + cond_channels;
    params_.add("den.stem.w", conv_init(rng, 32, in_ch, 3));
    params_.add("den.stem.b", Tensor::zeros({32}));
    params_.add("den.temb0.w", linear_init(rng, kTimeEmbedDim, 32));
    params_.add("den.temb0.b", Tensor::zeros({32}));
    params_.add("den.down1.w", conv_init(rng, 64, 32, 3));
    params_.add("den.down1.b", Tensor::zeros({64}));
    params_.add("den.temb1.w", linear_init(rng, kTimeEmbedDim, 64));
    params_.add("den.temb1.b", Tensor::zeros({64}));
    params_.add("den.down2.w", conv_init(rng, 64, 64, 3));
    params_.add("den.down2.b", Tensor::zeros({64}));
    params_.add("den.temb2.w", linear_init(rng, kTimeEmbedDim, 64));
    params_.add("den.temb2.b", Tensor::zeros({64}));
    params_.add("den.mid.w", conv_init(rng, 64, 64, 3));
    params_.add("den.mid.b", Tensor::zeros({64}));
    params_.add("den.temb3.w", linear_init(rng, kTimeEmbedDim, 64));
    params_.add("den.temb3.b", Tensor::zeros({64}));
    params_.add("den.up1.w", convt_init(rng, 64, 64, 4));
    params_.add("den.up1.b", Tensor::zeros({64}));
    params_.add("den.post1.w", conv_init(rng, 32, 128, 3));
    params_.add("den.post1.b", Tensor::zeros({32}));
    params_.add("den.temb4.w", linear_init(rng, kTimeEmbedDim, 32));
    params_.add("den.temb4.b", Tensor::zeros({32}));
    params_.add("den.up2.w", convt_init(rng, 32, 32, 4));
    params_.add("den.up2.b", Tensor::zeros({32}));
    params_.add("den.post2.w", conv_init(rng, 32, 64, 3));
    params_.add("den.post2.b", Tensor::zeros({32}));
    params_.add("den.temb5.w", linear_init(rng, kTimeEmbedDim, 32));
    params_.add("den.temb5.b", Tensor::zeros({32}));
    // Zero init: an untrained net predicts zero noise.
    params_.add("den.out.w", Tensor::zeros({3, 32, 3, 3}));
    params_.add("den.out.b", Tensor::zeros({3}));
}

Tensor DenoiserNet::forward(const Tensor& x, int n, const Tensor& cond) const {
    if (x.ndim() != 3 || x.dim(0) != 3)
        throw ShapeError("denoiser: x must be (3,H,W), got " + shape_str(x.shape()));
    if (cond.ndim() != 3 || cond.dim(0) != cond_channels_ || cond.dim(1) != x.dim(1) ||
        cond.dim(2) != x.dim(2))
        throw ShapeError("denoiser: conditioning shape mismatch, got " +
                         shape_str(cond.shape()));
    if (x.dim(1) % 4 != 0 || x.dim(2) % 4 != 0)
        throw ShapeError("denoiser: dims must be multiples of 4");

    Tensor temb = Tensor::from({1, kTimeEmbedDim}, sinusoidal_embedding(n, kTimeEmbedDim));
    auto stage_bias = [&](const char* wname, const char* bname, int ch) {
        Tensor lin = reshape(matmul(temb, params_.find(wname)), {ch});
        return add(lin, params_.find(bname));
    };
    auto down = [&](const Tensor& h, const char* conv, const char* cb, const char* tw,
                    const char* tb, int ch, int stride) {
        Tensor c = conv2d(h, params_.find(conv), stride, 1);
        c = add_channel_bias(c, params_.find(cb));
        return silu(add_channel_bias(c, stage_bias(tw, tb, ch)));
    };

    Tensor input = concat_channels(x, cond);
    Tensor h0 = down(input, "den.stem.w", "den.stem.b", "den.temb0.w", "den.temb0.b", 32, 1);
    Tensor h1 = down(h0, "den.down1.w", "den.down1.b", "den.temb1.w", "den.temb1.b", 64, 2);
    Tensor h2 = down(h1, "den.down2.w", "den.down2.b", "den.temb2.w", "den.temb2.b", 64, 2);
    Tensor m = down(h2, "den.mid.w", "den.mid.b", "den.temb3.w", "den.temb3.b", 64, 1);

    Tensor u1 = conv_transpose2d(m, params_.find("den.up1.w"), 2, 1);
    u1 = add_channel_bias(u1, params_.find("den.up1.b"));
    Tensor p1 = down(concat_channels(u1, h1), "den.post1.w", "den.post1.b", "den.temb4.w",
                     "den.temb4.b", 32, 1);

    Tensor u2 = conv_transpose2d(p1, params_.find("den.up2.w"), 2, 1);
    u2 = add_channel_bias(u2, params_.find("den.up2.b"));
    Tensor p2 = down(concat_channels(u2, h0), "den.post2.w", "den.post2.b", "den.temb5.w",
                     "den.temb5.b", 32, 1);

    Tensor out = conv2d(p2, params_.find("den.out.w"), 1, 1);
    return add_channel_bias(out, params_.find("den.out.b"));
}

EpsModel DenoiserNet::as_eps_model() const {
    return [this](const Tensor& x, int n, const Tensor& cond) { return forward(x, n, cond); };
}

namespace {

std::vector<int> sampler_taus(int n_steps, int requested) {
    int s = (requested <= 0) ? n_steps : std::min(requested, n_steps);
    std::vector<int> taus;
    taus.reserve(size_t(s) + 1);
    for (int i = 0; i < s; ++i) {
        int tau = int(std::lround(double(n_steps) * double(s - i) / double(s)));
        tau = std::clamp(tau, 1, n_steps);
        if (taus.empty() || tau < taus.back()) taus.push_back(tau);
    }
    taus.push_back(0);
    return taus;
}

}  // namespace

Reconstruction reverse_reconstruct(const EpsModel& model, const Tensor& cond, int height,
                                   int width, const VarianceSchedule& schedule,
                                   const SamplerConfig& config) {
    NoGradGuard ng;
    Rng rng(config.seed);
    std::vector<double> init(size_t(3) * height * width);
    for (auto& v : init) v = rng.normal();
    Tensor x = Tensor::from({3, height, width}, std::move(init));

    auto taus = sampler_taus(schedule.steps(), config.steps);
    for (size_t i = 0; i + 1 < taus.size(); ++i) {
        int tau = taus[i], tau_next = taus[i + 1];
        double ab = schedule.alpha_bar(tau);
        double ab_next = schedule.alpha_bar(tau_next);
        Tensor eps_hat = model(x, tau, cond);
        // x0 estimate from the noise prediction, kept inside the image range.
        Tensor x0_hat = clamp(scale(sub(x, scale(eps_hat, std::sqrt(1.0 - ab))),
                                    1.0 / std::sqrt(ab)),
                              -1.0, 1.0);
        if (!config.stochastic || tau_next == 0) {
            x = add(scale(x0_hat, std::sqrt(ab_next)),
                    scale(eps_hat, std::sqrt(std::max(0.0, 1.0 - ab_next))));
        } else {
            double var = (1.0 - ab_next) / (1.0 - ab) * (1.0 - ab / ab_next);
            var = std::max(0.0, var);
            double dir = std::sqrt(std::max(0.0, 1.0 - ab_next - var));
            std::vector<double> noise(size_t(x.size()));
            for (auto& v : noise) v = rng.normal();
            x = add(add(scale(x0_hat, std::sqrt(ab_next)), scale(eps_hat, dir)),
                    scale(Tensor::from(x.shape(), std::move(noise)), std::sqrt(var)));
        }
    }

    // Back to [0,1].
    std::vector<double> out(size_t(x.size()));
    auto xv = x.values();
    int64_t clamped = 0;
    const double n_pixels = double(out.size());
    for (size_t i = 0; i < out.size(); ++i) {
        double v = (xv[i] + 1.0) / 2.0;
        if (v < 0.0 || v > 1.0) ++clamped;
        out[i] = std::clamp(v, 0.0, 1.0);
    }
    return Reconstruction{Tensor::from(x.shape(), std::move(out)), double(clamped) / n_pixels};
}

DenoiserTrainStats train_denoiser(DenoiserNet& net, const std::vector<Tensor>& images,
                                  const std::vector<Tensor>& conds,
                                  const VarianceSchedule& schedule, int steps, double lr,
                                  Rng& rng) {
    if (images.empty()) throw DataError("train_denoiser: empty dataset");
    if (images.size() != conds.size())
        throw DataError("train_denoiser: images/conditionings count mismatch");

    // Scale once to the [-1,1] domain the sampler works in.
    std::vector<Tensor> scaled;
    scaled.reserve(images.size());
    for (const auto& img : images) scaled.push_back(add_scalar(scale(img, 2.0), -1.0));

    Adam opt(net.params().tensors(), lr);
    DenoiserTrainStats stats;
    stats.losses.reserve(size_t(steps));
    for (int step = 0; step < steps; ++step) {
        size_t idx = size_t(rng.next_below(images.size()));
        int n = 1 + int(rng.next_below(uint64_t(schedule.steps())));
        std::vector<double> noise(size_t(scaled[idx].size()));
        for (auto& v : noise) v = rng.normal();
        Tensor eps = Tensor::from(scaled[idx].shape(), std::move(noise));
        Tensor x_n = forward_diffuse(scaled[idx], n, eps, schedule);
        try {
            Tensor eps_hat = net.forward(x_n, n, conds[idx]);
            Tensor loss = mse(eps, eps_hat);
            opt.zero_grad();
            backward(loss);
            opt.step();
            stats.losses.push_back(loss.item());
        } catch (const NumericError& e) {
            throw Error("denoiser training diverged at step " + std::to_string(step) + ": " +
                        e.what());
        }
    }
    size_t window = std::max<size_t>(1, std::min<size_t>(50, stats.losses.size() / 4));
    double a = 0, b = 0;
    for (size_t i = 0; i < window; ++i) {
        a += stats.losses[i];
        b += stats.losses[stats.losses.size() - 1 - i];
    }
    stats.initial_loss = a / double(window);
    stats.final_loss = b / double(window);
    return stats;
}

}  // namespace pcdc
