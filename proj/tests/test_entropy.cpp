#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pcdc/codec.hpp"
#include "pcdc/entropy.hpp"
#include "support/test_util.hpp"

using namespace pcdc;

TEST_CASE("step ladder is strictly decreasing and bounds-checked") {
    StepLadder ladder;
    REQUIRE(ladder.levels() == 5);
    CHECK(ladder.step(0) == 4.0);
    CHECK(ladder.step(4) == 0.25);
    for (int k = 1; k < ladder.levels(); ++k) CHECK(ladder.step(k) < ladder.step(k - 1));
    CHECK_THROWS_AS(ladder.step(5), Error);
    CHECK_THROWS_AS(ladder.step(-1), Error);
}

TEST_CASE("discretized gaussian tables are proper distributions") {
    for (double sigma : {0.05, 0.3, 1.0, 2.0, 8.0, 60.0}) {
        SymbolTable t = SymbolTable::discretized_gaussian(sigma);
        uint64_t total = 0;
        double pmf_sum = 0;
        for (int s = t.lo(); s <= t.hi(); ++s) {
            total += t.freq(s);
            pmf_sum += t.pmf(s);
            CHECK(t.freq(s) >= 1);
            CHECK(t.pmf(s) >= std::ldexp(1.0, -24));
        }
        CHECK(total == kFreqTotal);
        CHECK(pmf_sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("uniform 256-symbol table codes 8 bits per symbol exactly") {
    SymbolTable t = SymbolTable::uniform(0, 255);
    double bits = 0;
    for (int i = 0; i < 10; ++i) bits += t.bits(i * 7 % 256);
    CHECK(bits == 80.0);
}

TEST_CASE("single-symbol alphabet codes for free") {
    SymbolTable t = SymbolTable::uniform(5, 5);
    CHECK(t.bits(5) == 0.0);
}

TEST_CASE("out-of-alphabet symbols are rejected") {
    SymbolTable t = SymbolTable::discretized_gaussian(1.0);
    CHECK_THROWS_AS(t.bits(kLatentClamp + 1), Error);
    CHECK_THROWS_AS(t.bits(-kLatentClamp - 1), Error);
}

namespace {

// Independent pmf oracle: erf-based normal CDF differences in long double
// over the clamped alphabet, plus the uniform escape mass. Written against
// the documented construction, not the implementation.
std::vector<long double> oracle_pmf(long double sigma) {
    auto phi = [&](long double x) {
        return 0.5L * (1.0L + std::erf(x / (sigma * std::sqrt(2.0L))));
    };
    const int L = kLatentClamp;
    const int n = 2 * L + 1;
    std::vector<long double> q(static_cast<size_t>(n));
    long double mass = 0;
    for (int s = -L; s <= L; ++s) {
        q[size_t(s + L)] = phi(s + 0.5L) - phi(s - 0.5L);
        mass += q[size_t(s + L)];
    }
    long double esc = std::pow(2.0L, -16.0L);
    for (auto& p : q) p = (1.0L - esc) * (p / mass) + esc / n;
    return q;
}

// Independent integer quantization of the oracle pmf: round to 2^16
// total, floor each symbol at one count, settle the remainder on the
// currently-largest symbol.
std::vector<uint32_t> oracle_freqs(const std::vector<long double>& pmf) {
    std::vector<uint32_t> f(pmf.size());
    long long sum = 0;
    for (size_t i = 0; i < pmf.size(); ++i) {
        long long v = llroundl(pmf[i] * 65536.0L);
        f[i] = uint32_t(std::max(1LL, v));
        sum += f[i];
    }
    while (sum != 65536) {
        size_t top = 0;
        for (size_t i = 1; i < f.size(); ++i)
            if (f[i] > f[top]) top = i;
        if (sum < 65536) {
            long long add = std::min<long long>(65536 - sum, 1 << 12);
            f[top] += uint32_t(add);
            sum += add;
        } else {
            long long sub = std::min<long long>(sum - 65536, (long long)f[top] - 1);
            f[top] -= uint32_t(sub);
            sum -= sub;
        }
    }
    return f;
}

}  // namespace

TEST_CASE("sigma=2 table matches the independent high-precision pmf") {
    SymbolTable t = SymbolTable::discretized_gaussian(2.0);
    auto pmf = oracle_pmf(2.0L);
    auto freqs = oracle_freqs(pmf);
    for (int s = -kLatentClamp; s <= kLatentClamp; ++s)
        CHECK(t.freq(s) == freqs[size_t(s + kLatentClamp)]);

    // Rate over a fixed symbol list, recomputed from the oracle table.
    Rng rng(23);
    std::vector<int> symbols;
    for (int i = 0; i < 500; ++i)
        symbols.push_back(int(round_half_away_from_zero(rng.normal() * 2.0)));
    double actual = 0, expected = 0, continuous = 0;
    for (int s : symbols) {
        actual += t.bits(s);
        expected += 16.0 - std::log2(double(freqs[size_t(s + kLatentClamp)]));
        continuous += -double(std::log2(pmf[size_t(s + kLatentClamp)]));
    }
    CHECK(actual == doctest::Approx(expected).epsilon(1e-12));
    // The minimum-frequency floor reserves ~255/65536 of code space, so
    // the integer table can sit slightly above the continuous entropy.
    CHECK(actual == doctest::Approx(continuous).epsilon(7e-3));
    CHECK(actual >= continuous - 1e-9);
}

TEST_CASE("fit floors sigma at 0.05 on constant samples") {
    Tensor z = Tensor::zeros({2, 10, 20});
    StepLadder ladder;
    EntropyModel m = EntropyModel::fit(z, ladder);
    CHECK(m.sigma(0) == 0.05);
    CHECK(m.sigma(1) == 0.05);
}

TEST_CASE("fit recovers unit variance within 2 percent at n=1e5") {
    Rng rng(31);
    std::vector<double> data(100000);
    for (auto& v : data) v = rng.normal();
    Tensor z = Tensor::from({1, 100, 1000}, std::move(data));
    EntropyModel m = EntropyModel::fit(z, StepLadder{});
    CHECK(m.sigma(0) > 0.98);
    CHECK(m.sigma(0) < 1.02);
}

TEST_CASE("fit preserves the ratio between channel scales") {
    Rng rng(37);
    std::vector<double> data(2 * 100000);
    for (size_t i = 0; i < 100000; ++i) data[i] = rng.normal();
    for (size_t i = 100000; i < data.size(); ++i) data[i] = 3.0 * rng.normal();
    Tensor z = Tensor::from({2, 100, 1000}, std::move(data));
    EntropyModel m = EntropyModel::fit(z, StepLadder{});
    double ratio = m.sigma(1) / m.sigma(0);
    CHECK(ratio == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("fit rejects empty or undersized input") {
    CHECK_THROWS_AS(EntropyModel::fit(Tensor(), StepLadder{}), DataError);
    CHECK_THROWS_AS(EntropyModel::fit(Tensor::zeros({2, 3, 3}), StepLadder{}), DataError);
}

TEST_CASE("action-scaled tables get wider with finer steps") {
    std::vector<double> sigma{1.0};
    EntropyModel m = EntropyModel::from_sigma(sigma, StepLadder{});
    // finer step (larger index) -> symbols spread wider -> smaller p(0)
    double prev = 2.0;
    for (int a = 0; a < m.ladder().levels(); ++a) {
        double p0 = m.table(0, a).pmf(0);
        CHECK(p0 < prev);
        prev = p0;
    }
}

TEST_CASE("fixed-point sigma round-trips through the wire format") {
    std::vector<double> sigma{0.3, 1.7, 42.0};
    EntropyModel a = EntropyModel::from_sigma(sigma, StepLadder{});
    EntropyModel b = EntropyModel::from_sigma_q16(a.sigma_q16(), StepLadder{});
    for (int c = 0; c < 3; ++c)
        for (int k = 0; k < 5; ++k)
            for (int s = -5; s <= 5; ++s)
                CHECK(a.table(c, k).freq(s) == b.table(c, k).freq(s));
}
