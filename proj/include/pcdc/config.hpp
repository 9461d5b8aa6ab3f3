#ifndef PCDC_CONFIG_HPP
#define PCDC_CONFIG_HPP

#include <cstdint>
#include <string>

#include "pcdc/allocator.hpp"
#include "pcdc/metrics.hpp"

namespace pcdc {

// Run-wide knobs. Defaults follow the experiment setup: 16x16 blocks,
// K = 5 levels, clip 0.2, entropy weight 0.01, actor/critic learning
// rates 3e-4 / 1e-3, dual step 1e-3, metric weights 1.0/0.5/0.2/0.2.
struct RunConfig {
    int block_size = 16;
    int k_levels = 5;
    int latent_channels = 8;

    int schedule_steps = 50;
    int decode_steps = 0;        // 0: full schedule when decompressing
    int adapt_decode_steps = 6;  // cheap sampler inside adaptation rollouts

    int train_steps = 1500;
    int train_crop = 32;  // training crop side (0: whole images)
    double train_lr = 1e-3;
    double train_rate_weight = 0.02;   // on bits per latent element
    double train_scale_weight = 0.1;   // latent second-moment anchor

    double rmax_bits = 0;     // 0: not set
    double target_ratio = 0;  // alternative budget spec; rmax = 24*pixels/ratio

    PPOConfig ppo;
    double dual_rho = 1e-3;
    bool reset_per_image = false;

    MetricWeights weights;
    uint64_t seed = 0;

    // Budget in bits for an image of the given size; throws if neither
    // rmax_bits nor target_ratio is set.
    double resolve_rmax(int height, int width) const;
    bool has_budget() const { return rmax_bits > 0 || target_ratio > 0; }
};

// Text format: one `key = value` per line, '#' comments, unknown keys
// rejected. serialize_config emits every field in a fixed order.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& cfg);

}  // namespace pcdc

#endif
