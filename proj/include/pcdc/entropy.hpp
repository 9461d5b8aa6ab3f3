#ifndef PCDC_ENTROPY_HPP
#define PCDC_ENTROPY_HPP

#include <cstdint>
#include <vector>

#include "pcdc/common.hpp"
#include "pcdc/tensor.hpp"

namespace pcdc {

// Quantization step multipliers indexed by allocation action, coarsest first.
struct StepLadder {
    std::vector<double> steps{4.0, 2.0, 1.0, 0.5, 0.25};

    int levels() const { return int(steps.size()); }
    double step(int action) const;  // action in [0, levels)
};

inline constexpr int kLatentClamp = 127;        // symbols live in [-127, 127]
inline constexpr uint32_t kFreqTotalBits = 16;  // frequency tables sum to 2^16
inline constexpr uint32_t kFreqTotal = 1u << kFreqTotalBits;

// Integer-frequency symbol table over the alphabet [lo, hi]. Frequencies
// sum to kFreqTotal and every symbol gets at least 1, which is what both
// rate_estimate and the range coder consume; the two therefore agree on
// probabilities by construction.
class SymbolTable {
public:
    static SymbolTable from_pmf(int lo, int hi, const std::vector<double>& pmf);
    static SymbolTable uniform(int lo, int hi);
    // Discretized zero-mean Gaussian over [-L, L] with escape mass 2^-16
    // spread uniformly over the alphabet.
    static SymbolTable discretized_gaussian(double sigma, int clamp = kLatentClamp);

    int lo() const { return lo_; }
    int hi() const { return hi_; }
    int alphabet_size() const { return hi_ - lo_ + 1; }
    bool contains(int symbol) const { return symbol >= lo_ && symbol <= hi_; }

    uint32_t freq(int symbol) const { return freq_[size_t(symbol - lo_)]; }
    uint32_t cum(int symbol) const { return cum_[size_t(symbol - lo_)]; }
    double pmf(int symbol) const { return double(freq(symbol)) / double(kFreqTotal); }
    double bits(int symbol) const;  // -log2 pmf

    // Inverse lookup: the symbol whose [cum, cum+freq) contains `value`.
    int find(uint32_t value) const;

private:
    int lo_ = 0, hi_ = 0;
    std::vector<uint32_t> freq_;
    std::vector<uint32_t> cum_;  // alphabet_size + 1 entries, cum_[0] = 0
    std::vector<double> bits_;
};

// High-precision discretized-Gaussian pmf (CDF differences plus the
// uniform escape mass), before integer quantization. Exposed so tests can
// recompute tables independently.
std::vector<double> discretized_gaussian_pmf(double sigma, int clamp = kLatentClamp);

// Per-channel zero-mean Gaussian entropy model. sigma is stored in u16
// fixed point (sigma*256) because that is what travels in the bitstream;
// coding tables are derived deterministically from the fixed-point value,
// scaled per allocation action (a step of delta scales symbols by 1/delta).
class EntropyModel {
public:
    EntropyModel() = default;
    static EntropyModel from_sigma(const std::vector<double>& sigma, const StepLadder& ladder);
    static EntropyModel from_sigma_q16(const std::vector<uint16_t>& q16, const StepLadder& ladder);

    // sigma_c = max(sample std, 0.05) over the channel's values. Requires
    // at least 100 samples per channel.
    static EntropyModel fit(const Tensor& latent, const StepLadder& ladder);

    int channels() const { return int(sigma_.size()); }
    double sigma(int c) const { return sigma_[size_t(c)]; }
    const std::vector<uint16_t>& sigma_q16() const { return sigma_q16_; }
    const StepLadder& ladder() const { return ladder_; }

    const SymbolTable& table(int channel, int action) const;

private:
    std::vector<double> sigma_;        // dequantized from fixed point
    std::vector<uint16_t> sigma_q16_;
    StepLadder ladder_;
    std::vector<SymbolTable> tables_;  // channels x actions
};

inline constexpr double kSigmaFloor = 0.05;

}  // namespace pcdc

#endif
