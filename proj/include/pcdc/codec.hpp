#ifndef PCDC_CODEC_HPP
#define PCDC_CODEC_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "pcdc/entropy.hpp"
#include "pcdc/image.hpp"
#include "pcdc/optim.hpp"
#include "pcdc/tensor.hpp"

namespace pcdc {

inline constexpr int kLatentChannels = 8;
inline constexpr int kLatentDownsample = 4;

// Three conv layers (stride 2, 2, 1), 3 -> 32 -> 64 -> kLatentChannels,
// SiLU between layers. A 16x16 pixel block maps to a 4x4 latent footprint.
class EncoderNet {
public:
    explicit EncoderNet(Rng& rng);

    // image dims must be multiples of kLatentDownsample.
    Tensor forward(const Tensor& image) const;

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

private:
    ParamStore params_;
};

// Integer latent plus the per-block actions that chose its quantization.
struct QuantizedLatent {
    int channels = 0, h = 0, w = 0;   // latent grid dims
    std::vector<int> symbols;          // channel-major (c, y, x), row-major
    std::vector<int> actions;          // per block, raster order
    int64_t clamped = 0;               // symbols clipped to [-127, 127]

    int at(int c, int y, int x) const { return symbols[(size_t(c) * h + y) * w + x]; }
    int& at(int c, int y, int x) { return symbols[(size_t(c) * h + y) * w + x]; }
};

double round_half_away_from_zero(double v);

// Per-block quantization: each block's latent footprint is divided by the
// block's step and rounded, symbols clamped to the alphabet.
QuantizedLatent quantize(const Tensor& latent, const std::vector<int>& block_actions,
                         const BlockGrid& grid, const StepLadder& ladder);

// Inverse: symbols scaled back by each block's step. Returns (C,h,w).
Tensor dequantize(const QuantizedLatent& q, const BlockGrid& grid, const StepLadder& ladder);

struct RateEstimate {
    double total_bits = 0;
    std::vector<double> block_bits;  // one entry per block, raster order
};

// Ideal code length under the model's integer-frequency pmf; exact for the
// range coder up to renormalization slack and the flush bytes.
RateEstimate rate_estimate(const QuantizedLatent& q, const BlockGrid& grid,
                           const EntropyModel& model);

// Serialized compressed image. Layout (little endian):
//   "PCDC"  magic, 4 bytes
//   u8      version (1)
//   u16     height (original), u16 width (original)
//   u8      block_size
//   u8      K (ladder levels)
//   u8      C_lat
//   u16*C   per-channel sigma, fixed point sigma*256
//   bytes   per-block action indices, 3 bits each, MSB first, raster order
//   u32     payload length
//   bytes   payload: [crc8][range-coded symbols]
struct Bitstream {
    std::vector<uint8_t> bytes;

    int64_t total_bits() const { return int64_t(bytes.size()) * 8; }
};

inline constexpr uint8_t kBitstreamVersion = 1;

// Fixed per-image overhead (everything except the coded payload) in bits.
int64_t header_bits(int height, int width, int block_size, int k_levels, int c_lat);

Bitstream serialize(const QuantizedLatent& q, const BlockGrid& grid, int orig_height,
                    int orig_width, const EntropyModel& model);

struct DecodedStream {
    QuantizedLatent latent;
    BlockGrid grid;
    int height = 0, width = 0;  // original image dims
    EntropyModel model;
};

DecodedStream deserialize(const Bitstream& bs);

void write_bitstream(const Bitstream& bs, const std::string& path);
Bitstream read_bitstream(const std::string& path);

// Differentiable rate term for training: sum over elements of
// -log2(Phi((z+0.5)/sigma) - Phi((z-0.5)/sigma)), sigma per channel
// (constant). Used with additive-uniform-noise relaxed latents.
Tensor gaussian_rate_bits(const Tensor& latent, const std::vector<double>& sigma);

}  // namespace pcdc

#endif
