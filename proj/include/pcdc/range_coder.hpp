#ifndef PCDC_RANGE_CODER_HPP
#define PCDC_RANGE_CODER_HPP

#include <cstdint>
#include <vector>

#include "pcdc/common.hpp"
#include "pcdc/entropy.hpp"

namespace pcdc {

// Byte-wise range coder with a 48-bit window and carry counting. The wide
// window keeps the per-symbol truncation loss below 2^-24 bits, so coded
// length tracks the frequency-table entropy to within the flush bytes.
//
// Streams start with one CRC-8 byte over the coded payload; decoding
// verifies it before any symbol is produced.

class RangeEncoder {
public:
    void encode(uint32_t cum, uint32_t freq, uint32_t total = kFreqTotal);
    void encode_symbol(const SymbolTable& table, int symbol);
    // Flushes and returns [crc8][coded bytes...].
    std::vector<uint8_t> finish();

private:
    void shift_low();

    static constexpr uint64_t kWindow = 48;
    static constexpr uint64_t kWindowMask = (uint64_t(1) << kWindow) - 1;
    static constexpr uint64_t kRenorm = uint64_t(1) << 40;
    static constexpr uint64_t kCacheGuard = 0xFFull << 40;

    uint64_t low_ = 0;
    uint64_t range_ = kWindowMask;
    uint8_t cache_ = 0;
    bool have_cache_ = false;
    uint64_t pending_ = 0;
    std::vector<uint8_t> out_;
    bool finished_ = false;
};

class RangeDecoder {
public:
    explicit RangeDecoder(const std::vector<uint8_t>& bytes);

    // Two-phase decode: look up the scaled value, map it to a symbol via
    // the table, then consume the interval.
    uint32_t decode_value(uint32_t total = kFreqTotal);
    void consume(uint32_t cum, uint32_t freq);
    int decode_symbol(const SymbolTable& table);

private:
    uint8_t next_byte() { return pos_ < bytes_.size() ? bytes_[pos_++] : 0; }

    static constexpr uint64_t kWindowMask = (uint64_t(1) << 48) - 1;
    static constexpr uint64_t kRenorm = uint64_t(1) << 40;

    std::vector<uint8_t> bytes_;  // coded bytes (crc already stripped)
    size_t pos_ = 0;
    uint64_t code_ = 0;
    uint64_t range_ = kWindowMask;
    uint64_t r_ = 0;  // scaled range between decode_value and consume
};

uint8_t crc8(const uint8_t* data, size_t n);

// One-table convenience wrappers over the coder.
std::vector<uint8_t> range_encode(const std::vector<int>& symbols, const SymbolTable& table);
std::vector<int> range_decode(const std::vector<uint8_t>& bytes, size_t count,
                              const SymbolTable& table);

}  // namespace pcdc

#endif
