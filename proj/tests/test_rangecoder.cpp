#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pcdc/range_coder.hpp"
#include "support/test_util.hpp"

using namespace pcdc;

namespace {

std::vector<int> draw_symbols(const SymbolTable& t, size_t n, Rng& rng) {
    std::vector<int> out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        uint32_t v = uint32_t(rng.next_below(kFreqTotal));
        out.push_back(t.find(v));
    }
    return out;
}

double ideal_bits(const SymbolTable& t, const std::vector<int>& symbols) {
    double bits = 0;
    for (int s : symbols) bits += t.bits(s);
    return bits;
}

}  // namespace

TEST_CASE("empty stream stays under 8 bytes and decodes to nothing") {
    SymbolTable t = SymbolTable::uniform(0, 7);
    auto bytes = range_encode({}, t);
    CHECK(bytes.size() <= 8);
    CHECK(range_decode(bytes, 0, t).empty());
}

TEST_CASE("ten thousand model-drawn symbols round-trip exactly") {
    Rng rng(101);
    SymbolTable t = SymbolTable::discretized_gaussian(3.0);
    auto symbols = draw_symbols(t, 10000, rng);
    auto bytes = range_encode(symbols, t);
    CHECK(range_decode(bytes, symbols.size(), t) == symbols);
}

TEST_CASE("coded length stays within the entropy bound") {
    Rng rng(202);
    for (double sigma : {0.1, 0.9, 4.0, 25.0}) {
        SymbolTable t = SymbolTable::discretized_gaussian(sigma);
        auto symbols = draw_symbols(t, 10000, rng);
        auto bytes = range_encode(symbols, t);
        double entropy = ideal_bits(t, symbols);
        CHECK(double(bytes.size()) <= std::ceil(entropy / 8.0) + 8.0 + 0.001 * entropy / 8.0);
        CHECK(range_decode(bytes, symbols.size(), t) == symbols);
    }
}

TEST_CASE("many random models round-trip short bursts") {
    Rng rng(303);
    for (int trial = 0; trial < 60; ++trial) {
        double sigma = std::exp(rng.uniform(-3.0, 4.0));
        SymbolTable t = SymbolTable::discretized_gaussian(sigma);
        auto symbols = draw_symbols(t, 64 + rng.next_below(256), rng);
        auto bytes = range_encode(symbols, t);
        CHECK(range_decode(bytes, symbols.size(), t) == symbols);
    }
}

TEST_CASE("skewed custom tables round-trip") {
    Rng rng(404);
    std::vector<double> pmf{0.96, 0.01, 0.01, 0.01, 0.01};
    SymbolTable t = SymbolTable::from_pmf(0, 4, pmf);
    std::vector<int> symbols;
    for (int i = 0; i < 5000; ++i)
        symbols.push_back(rng.uniform() < 0.95 ? 0 : int(rng.next_below(5)));
    auto bytes = range_encode(symbols, t);
    CHECK(range_decode(bytes, symbols.size(), t) == symbols);
    // strongly skewed: far below 1 bit/symbol on this data
    CHECK(double(bytes.size()) < 5000.0 / 8.0);
}

TEST_CASE("corrupted payloads are rejected, never silently wrong") {
    Rng rng(505);
    SymbolTable t = SymbolTable::discretized_gaussian(2.0);
    auto symbols = draw_symbols(t, 500, rng);
    auto bytes = range_encode(symbols, t);

    for (size_t pos : {size_t(0), bytes.size() / 2, bytes.size() - 1}) {
        auto bad = bytes;
        bad[pos] ^= 0x40;
        CHECK_THROWS_AS(range_decode(bad, symbols.size(), t), DataError);
    }
    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS(range_decode(truncated, symbols.size(), t), DataError);
    CHECK_THROWS_AS(range_decode({}, 0, t), DataError);
}

TEST_CASE("interleaved tables on one stream round-trip") {
    Rng rng(606);
    SymbolTable narrow = SymbolTable::discretized_gaussian(0.4);
    SymbolTable wide = SymbolTable::discretized_gaussian(9.0);
    std::vector<int> a = draw_symbols(narrow, 2000, rng);
    std::vector<int> b = draw_symbols(wide, 2000, rng);

    RangeEncoder enc;
    for (size_t i = 0; i < a.size(); ++i) {
        enc.encode_symbol(narrow, a[size_t(i)]);
        enc.encode_symbol(wide, b[size_t(i)]);
    }
    auto bytes = enc.finish();

    RangeDecoder dec(bytes);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(dec.decode_symbol(narrow) == a[size_t(i)]);
        CHECK(dec.decode_symbol(wide) == b[size_t(i)]);
    }
}
