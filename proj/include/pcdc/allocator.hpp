#ifndef PCDC_ALLOCATOR_HPP
#define PCDC_ALLOCATOR_HPP

#include <cstdint>
#include <vector>

#include "pcdc/codec.hpp"
#include "pcdc/diffusion.hpp"
#include "pcdc/entropy.hpp"
#include "pcdc/image.hpp"
#include "pcdc/metrics.hpp"
#include "pcdc/optim.hpp"
#include "pcdc/tensor.hpp"

namespace pcdc {

// State layout: [phi_h (4); phi_z (16); rho (1); p (2)].
inline constexpr int kStateDim = 23;

// Per-channel (mean, std) of the latent over one block's footprint,
// interleaved: [mean_0, std_0, mean_1, std_1, ...].
std::vector<double> latent_block_stats(const Tensor& latent, const Block& block);

std::vector<double> build_state(const std::vector<double>& phi_h,
                                const std::vector<double>& phi_z, double bits_committed,
                                double r_max, int row, int col, int grid_rows, int grid_cols);

// Feasibility over the action set: action k is feasible iff its projected
// cost fits in `remaining_bits`; index 0 (the coarsest step) is always
// feasible so an episode can always complete.
std::vector<int> mask_actions(double remaining_bits, const std::vector<double>& action_costs);

struct PPOConfig {
    double clip = 0.2;             // surrogate clip width
    double entropy_weight = 0.01;  // exploration bonus
    double actor_lr = 3e-4;
    double critic_lr = 1e-3;
    int epochs = 8;              // adaptation epochs per image (M)
    int episodes_per_epoch = 4;  // rollouts per epoch (E)
    int updates_per_epoch = 1;   // gradient steps per ppo_update call
    bool normalize_advantages = false;
    bool mask_enabled = true;
    bool greedy = false;  // argmax rollouts, ties to the lowest index
};

// Projected dual ascent on the budget constraint.
struct DualController {
    double eta = 0.0;
    double rho = 1e-3;
    double r_max = 0.0;

    void update(double r_tot) { eta = std::max(0.0, eta + rho * (r_tot - r_max)); }
};

// r = U - eta * (R_tot - R_max).
double compute_reward(double utility, double r_tot, const DualController& dual);
double compute_reward(const ImagePlane& original, const ImagePlane& reconstruction,
                      double r_tot, const DualController& dual, const MetricWeights& weights);

class PolicyNet {
public:
    PolicyNet(Rng& rng, int actions);
    Tensor forward(const Tensor& states) const;  // (N,23) -> (N,K)
    int actions() const { return actions_; }
    ParamStore& params() { return params_; }

private:
    int actions_;
    ParamStore params_;
};

class ValueNet {
public:
    explicit ValueNet(Rng& rng);
    Tensor forward(const Tensor& states) const;  // (N,23) -> (N,1)
    ParamStore& params() { return params_; }

private:
    ParamStore params_;
};

// One block decision as recorded during a rollout.
struct TrajectoryStep {
    std::vector<double> state;  // kStateDim
    std::vector<double> mask;   // K entries of 0/1
    int action = 0;
    double logprob_old = 0;
};

struct EpisodeOutcome {
    double utility = 0;
    double r_tot = 0;
    Bitstream bitstream;  // empty for synthetic environments
    Tensor reconstruction;
};

struct Trajectory {
    std::vector<TrajectoryStep> steps;
    EpisodeOutcome outcome;
    double reward = 0;  // terminal Lagrangian reward; G_b = reward for all b
    bool feasible = false;
};

// What a rollout needs from the world: per-block states, the masking cost
// table, and a way to realize an allocation. The codec-backed
// implementation is below; tests substitute additive synthetic versions.
class AllocationEnv {
public:
    virtual ~AllocationEnv() = default;
    virtual int num_blocks() const = 0;
    virtual int num_actions() const = 0;
    virtual double r_max() const = 0;
    virtual std::vector<double> state(int block, double rho) const = 0;
    virtual double est_bits(int block, int action) const = 0;
    virtual double fixed_bits() const = 0;
    virtual EpisodeOutcome finish(const std::vector<int>& actions) = 0;
};

// Safety margin applied to rate estimates when projecting feasibility;
// mirrors the coder's bounded overhead (64 bits plus 0.1%).
inline constexpr double kMaskMargin = 1.001;
inline constexpr double kCoderSlackBits = 64.0;

Trajectory rollout(AllocationEnv& env, const PolicyNet& policy, const PPOConfig& config,
                   Rng& rng);

// A_b = G_b - V(s_b) with G_b = r for every step.
std::vector<double> advantages(const Trajectory& traj, const ValueNet& value);

struct PPOUpdateStats {
    double actor_loss = 0;
    double value_loss = 0;
    double mean_entropy = 0;
};

PPOUpdateStats ppo_update(const std::vector<Trajectory>& trajectories, PolicyNet& policy,
                          ValueNet& value, Adam& actor_opt, Adam& critic_opt,
                          const PPOConfig& config);

struct AdaptReportRow {
    int epoch = 0;
    int episode = 0;
    double utility = 0;
    double r_tot = 0;
    double eta = 0;
    bool feasible = false;
};

struct AdaptResult {
    EpisodeOutcome best;           // highest-utility feasible rollout, or the
                                   // smallest-R_tot one if none was feasible
    std::vector<int> best_actions;
    bool best_feasible = false;
    std::vector<AdaptReportRow> report;
};

// Algorithm: M epochs of {collect E rollouts -> ppo_update -> dual update
// on the epoch-mean R_tot}. With epochs == 0, collects one batch of
// rollouts under the initial policy and only selects the best.
AdaptResult adapt_per_image(AllocationEnv& env, PolicyNet& policy, ValueNet& value,
                            DualController& dual, const PPOConfig& config, Rng& rng);

// Codec-backed environment: latent encoding, per-block rate table,
// bitstream serialization and diffusion decoding behind AllocationEnv.
class CodecAllocationEnv : public AllocationEnv {
public:
    // fallback_sigma: entropy scales to use when the image is too small
    // for a per-image fit (fewer than 100 latent samples per channel).
    CodecAllocationEnv(const ImagePlane& original, const EncoderNet& encoder,
                       const DenoiserNet& denoiser, const VarianceSchedule& schedule,
                       const StepLadder& ladder, const MetricWeights& weights, int block_size,
                       double r_max, const SamplerConfig& decode_config,
                       const std::vector<double>& fallback_sigma = {});

    int num_blocks() const override { return grid_.count(); }
    int num_actions() const override { return ladder_.levels(); }
    double r_max() const override { return r_max_; }
    std::vector<double> state(int block, double rho) const override;
    double est_bits(int block, int action) const override;
    double fixed_bits() const override;
    EpisodeOutcome finish(const std::vector<int>& actions) override;

    // Quantize + serialize under the given allocation, no decoding.
    Bitstream make_bitstream(const std::vector<int>& actions) const;
    // Actual serialized size of a uniform allocation at `action`.
    int64_t uniform_bits(int action) const;
    const BlockGrid& grid() const { return grid_; }
    const EntropyModel& model() const { return model_; }
    const Tensor& latent() const { return latent_; }

private:
    ImagePlane original_;
    ImagePlane padded_;
    const DenoiserNet& denoiser_;
    const VarianceSchedule& schedule_;
    StepLadder ladder_;
    MetricWeights weights_;
    BlockGrid grid_;
    Tensor latent_;
    EntropyModel model_;
    double r_max_;
    SamplerConfig decode_config_;
    std::vector<std::vector<double>> phi_h_;      // per block
    std::vector<std::vector<double>> phi_z_;      // per block
    std::vector<std::vector<double>> est_table_;  // blocks x actions
};

// Decode helper shared by the env and the CLI: dequantized latent ->
// conditioning -> reverse diffusion -> crop to original size.
ImagePlane decode_stream(const DecodedStream& stream, const DenoiserNet& denoiser,
                         const VarianceSchedule& schedule, const SamplerConfig& config,
                         double* clamp_fraction = nullptr);

}  // namespace pcdc

#endif
