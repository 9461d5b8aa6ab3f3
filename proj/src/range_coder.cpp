#include "pcdc/range_coder.hpp"

#include <algorithm>

namespace pcdc {

uint8_t crc8(const uint8_t* data, size_t n) {
    uint8_t crc = 0;
    for (size_t i = 0; i < n; ++i) {
        crc ^= data[i];
        for (int b = 0; b < 8; ++b)
            crc = (crc & 0x80) ? uint8_t((crc << 1) ^ 0x07) : uint8_t(crc << 1);
    }
    return crc;
}

void RangeEncoder::shift_low() {
    if (low_ < kCacheGuard || low_ > kWindowMask) {
        uint8_t carry = uint8_t(low_ >> kWindow);
        if (have_cache_) out_.push_back(uint8_t(cache_ + carry));
        for (; pending_; --pending_) out_.push_back(uint8_t(0xFF + carry));
        cache_ = uint8_t((low_ >> (kWindow - 8)) & 0xFF);
        have_cache_ = true;
    } else {
        ++pending_;
    }
    low_ = (low_ << 8) & kWindowMask;
}

void RangeEncoder::encode(uint32_t cum, uint32_t freq, uint32_t total) {
    if (finished_) throw Error("range encoder: encode after finish");
    if (freq == 0 || cum + freq > total) throw Error("range encoder: bad interval");
    uint64_t r = range_ / total;
    low_ += uint64_t(cum) * r;
    range_ = uint64_t(freq) * r;
    while (range_ < kRenorm) {
        shift_low();
        range_ <<= 8;
    }
}

void RangeEncoder::encode_symbol(const SymbolTable& table, int symbol) {
    if (!table.contains(symbol))
        throw Error("range encoder: symbol " + std::to_string(symbol) + " outside alphabet");
    encode(table.cum(symbol), table.freq(symbol));
}

std::vector<uint8_t> RangeEncoder::finish() {
    if (finished_) throw Error("range encoder: double finish");
    finished_ = true;
    for (int i = 0; i < int(kWindow / 8) + 1; ++i) shift_low();
    std::vector<uint8_t> packet;
    packet.reserve(out_.size() + 1);
    packet.push_back(crc8(out_.data(), out_.size()));
    packet.insert(packet.end(), out_.begin(), out_.end());
    return packet;
}

RangeDecoder::RangeDecoder(const std::vector<uint8_t>& bytes) {
    if (bytes.empty()) throw DataError("range decoder: empty stream");
    bytes_.assign(bytes.begin() + 1, bytes.end());
    if (crc8(bytes_.data(), bytes_.size()) != bytes[0])
        throw DataError("range decoder: checksum mismatch, stream corrupted");
    for (int i = 0; i < 6; ++i) code_ = (code_ << 8) | next_byte();
}

uint32_t RangeDecoder::decode_value(uint32_t total) {
    r_ = range_ / total;
    uint64_t v = code_ / r_;
    return uint32_t(std::min<uint64_t>(v, total - 1));
}

void RangeDecoder::consume(uint32_t cum, uint32_t freq) {
    code_ -= uint64_t(cum) * r_;
    range_ = uint64_t(freq) * r_;
    while (range_ < kRenorm) {
        code_ = ((code_ << 8) | next_byte()) & kWindowMask;
        range_ <<= 8;
    }
}

int RangeDecoder::decode_symbol(const SymbolTable& table) {
    uint32_t v = decode_value();
    int symbol = table.find(v);
    consume(table.cum(symbol), table.freq(symbol));
    return symbol;
}

std::vector<uint8_t> range_encode(const std::vector<int>& symbols, const SymbolTable& table) {
    RangeEncoder enc;
    for (int s : symbols) enc.encode_symbol(table, s);
    return enc.finish();
}

std::vector<int> range_decode(const std::vector<uint8_t>& bytes, size_t count,
                              const SymbolTable& table) {
    RangeDecoder dec(bytes);
    std::vector<int> out;
    out.reserve(count);
    for (size_t i = 0; i < count; ++i) out.push_back(dec.decode_symbol(table));
    return out;
}

}  // namespace pcdc
