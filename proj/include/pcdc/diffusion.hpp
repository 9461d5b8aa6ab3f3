#ifndef PCDC_DIFFUSION_HPP
#define PCDC_DIFFUSION_HPP

#include <functional>
#include <vector>

#include "pcdc/image.hpp"
#include "pcdc/optim.hpp"
#include "pcdc/tensor.hpp"

namespace pcdc {

// Cosine signal-retention schedule. alpha_bar(0) = 1 by convention;
// alpha_bar is strictly decreasing and ends below 1e-2.
class VarianceSchedule {
public:
    explicit VarianceSchedule(int steps = 50);

    int steps() const { return n_; }
    double alpha_bar(int n) const;

private:
    int n_;
    std::vector<double> alpha_bar_;  // n_ + 1 entries
};

// x_n = sqrt(abar_n) x0 + sqrt(1 - abar_n) eps.
Tensor forward_diffuse(const Tensor& x0, int n, const Tensor& eps,
                       const VarianceSchedule& schedule);

// Anything that predicts the noise from (noisy image, step, conditioning).
// DenoiserNet implements it; tests plug in analytic oracles.
using EpsModel = std::function<Tensor(const Tensor& x, int n, const Tensor& cond)>;

// Small conditional U-Net: two stride-2 downsampling stages, two
// transposed-conv upsampling stages with skip connections, base width 32.
// The conditioning latent is nearest-upsampled to image resolution and
// concatenated to the noisy input; a 32-dim sinusoidal timestep embedding
// is mapped per stage onto channel biases. The output conv is zero-
// initialized so an untrained net predicts zero noise.
class DenoiserNet {
public:
    DenoiserNet(Rng& rng, int cond_channels);

    Tensor forward(const Tensor& x, int n, const Tensor& cond) const;
    EpsModel as_eps_model() const;

    int cond_channels() const { return cond_channels_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

private:
    int cond_channels_;
    ParamStore params_;
};

std::vector<double> sinusoidal_embedding(int n, int dim);

struct SamplerConfig {
    uint64_t seed = 0;
    bool stochastic = false;  // ancestral sampling when true
    int steps = 0;            // 0 means use the full schedule
};

struct Reconstruction {
    Tensor image;           // (3,H,W) in [0,1]
    double clamp_fraction;  // pixels clipped into [0,1]
};

// Reverse loop from pure noise, conditioned on `cond`. Images internally
// live in [-1,1]; the result is mapped back to [0,1] and clamped.
Reconstruction reverse_reconstruct(const EpsModel& model, const Tensor& cond, int height,
                                   int width, const VarianceSchedule& schedule,
                                   const SamplerConfig& config);

struct DenoiserTrainStats {
    double initial_loss = 0;  // mean over the first window of steps
    double final_loss = 0;    // mean over the last window of steps
    std::vector<double> losses;
};

// epsilon-prediction MSE training. `conds` pairs with `images` and holds
// the dequantized-latent conditioning per image.
DenoiserTrainStats train_denoiser(DenoiserNet& net, const std::vector<Tensor>& images,
                                  const std::vector<Tensor>& conds,
                                  const VarianceSchedule& schedule, int steps, double lr,
                                  Rng& rng);

}  // namespace pcdc

#endif
