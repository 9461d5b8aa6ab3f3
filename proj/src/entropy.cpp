#include "pcdc/entropy.hpp"

#include <algorithm>
#include <cmath>

namespace pcdc {

double StepLadder::step(int action) const {
    if (action < 0 || action >= levels())
        throw Error("step ladder: action index " + std::to_string(action) + " out of range");
    return steps[size_t(action)];
}

std::vector<double> discretized_gaussian_pmf(double sigma, int clamp) {
    const int n = 2 * clamp + 1;
    std::vector<double> q(static_cast<size_t>(n));
    auto cdf = [sigma](double x) { return 0.5 * std::erfc(-x / (sigma * 1.4142135623730951)); };
    double total = 0;
    for (int k = -clamp; k <= clamp; ++k) {
        double p = cdf(k + 0.5) - cdf(k - 0.5);
        q[size_t(k + clamp)] = p;
        total += p;
    }
    // Renormalize over the clamped alphabet, then blend in the escape mass.
    const double esc = std::ldexp(1.0, -16);
    std::vector<double> pmf(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        pmf[size_t(i)] = (1.0 - esc) * (q[size_t(i)] / total) + esc / n;
    return pmf;
}

SymbolTable SymbolTable::from_pmf(int lo, int hi, const std::vector<double>& pmf) {
    if (hi < lo || pmf.size() != size_t(hi - lo + 1))
        throw Error("symbol table: pmf size does not match alphabet");
    const int n = hi - lo + 1;
    SymbolTable t;
    t.lo_ = lo;
    t.hi_ = hi;
    t.freq_.resize(size_t(n));
    int64_t sum = 0;
    for (int i = 0; i < n; ++i) {
        double p = pmf[size_t(i)];
        if (!(p >= 0.0)) throw Error("symbol table: negative pmf entry");
        uint32_t f = uint32_t(std::max<int64_t>(1, std::llround(p * double(kFreqTotal))));
        t.freq_[size_t(i)] = f;
        sum += f;
    }
    // Deterministically settle the rounding remainder on the largest-
    // frequency symbols so the total is exactly kFreqTotal.
    while (sum != kFreqTotal) {
        size_t target = 0;
        if (sum < int64_t(kFreqTotal)) {
            for (size_t i = 1; i < t.freq_.size(); ++i)
                if (t.freq_[i] > t.freq_[target]) target = i;
            int64_t add = std::min<int64_t>(int64_t(kFreqTotal) - sum, 1 << 12);
            t.freq_[target] += uint32_t(add);
            sum += add;
        } else {
            for (size_t i = 1; i < t.freq_.size(); ++i)
                if (t.freq_[i] > t.freq_[target]) target = i;
            int64_t sub = std::min<int64_t>(sum - int64_t(kFreqTotal), int64_t(t.freq_[target]) - 1);
            if (sub <= 0) throw Error("symbol table: cannot normalize frequencies");
            t.freq_[target] -= uint32_t(sub);
            sum -= sub;
        }
    }
    t.cum_.resize(size_t(n) + 1);
    t.cum_[0] = 0;
    for (int i = 0; i < n; ++i) t.cum_[size_t(i) + 1] = t.cum_[size_t(i)] + t.freq_[size_t(i)];
    t.bits_.resize(size_t(n));
    for (int i = 0; i < n; ++i)
        t.bits_[size_t(i)] = double(kFreqTotalBits) - std::log2(double(t.freq_[size_t(i)]));
    return t;
}

SymbolTable SymbolTable::uniform(int lo, int hi) {
    std::vector<double> pmf(size_t(hi - lo + 1), 1.0 / double(hi - lo + 1));
    return from_pmf(lo, hi, pmf);
}

SymbolTable SymbolTable::discretized_gaussian(double sigma, int clamp) {
    return from_pmf(-clamp, clamp, discretized_gaussian_pmf(sigma, clamp));
}

double SymbolTable::bits(int symbol) const {
    if (!contains(symbol))
        throw Error("symbol " + std::to_string(symbol) + " outside alphabet [" +
                    std::to_string(lo_) + "," + std::to_string(hi_) + "]");
    return bits_[size_t(symbol - lo_)];
}

int SymbolTable::find(uint32_t value) const {
    // cum_ is strictly increasing; binary search for the covering interval.
    size_t lo = 0, hi = cum_.size() - 1;
    while (lo + 1 < hi) {
        size_t mid = (lo + hi) / 2;
        if (cum_[mid] <= value)
            lo = mid;
        else
            hi = mid;
    }
    return lo_ + int(lo);
}

namespace {

uint16_t quantize_sigma(double sigma) {
    double q = std::round(std::max(sigma, kSigmaFloor) * 256.0);
    return uint16_t(std::clamp(q, 13.0, 65535.0));
}

}  // namespace

EntropyModel EntropyModel::from_sigma(const std::vector<double>& sigma, const StepLadder& ladder) {
    std::vector<uint16_t> q(sigma.size());
    for (size_t i = 0; i < sigma.size(); ++i) q[i] = quantize_sigma(sigma[i]);
    EntropyModel m = from_sigma_q16(q, ladder);
    // Keep the caller's nominal sigma; coding tables stay on the
    // fixed-point grid so encoder and decoder agree bit for bit.
    m.sigma_ = sigma;
    return m;
}

EntropyModel EntropyModel::from_sigma_q16(const std::vector<uint16_t>& q16,
                                          const StepLadder& ladder) {
    if (q16.empty()) throw DataError("entropy model: no channels");
    EntropyModel m;
    m.sigma_q16_ = q16;
    m.ladder_ = ladder;
    m.sigma_.resize(q16.size());
    m.tables_.reserve(q16.size() * size_t(ladder.levels()));
    for (size_t c = 0; c < q16.size(); ++c) {
        m.sigma_[c] = double(q16[c]) / 256.0;
        for (int a = 0; a < ladder.levels(); ++a)
            m.tables_.push_back(
                SymbolTable::discretized_gaussian(m.sigma_[c] / ladder.step(a)));
    }
    return m;
}

EntropyModel EntropyModel::fit(const Tensor& latent, const StepLadder& ladder) {
    if (!latent.defined() || latent.size() == 0) throw DataError("entropy fit: empty input");
    if (latent.ndim() != 3) throw ShapeError("entropy fit: expected (C,h,w) latent");
    const int channels = latent.dim(0);
    const int64_t per_channel = int64_t(latent.dim(1)) * latent.dim(2);
    if (per_channel < 100)
        throw DataError("entropy fit: need at least 100 samples per channel, got " +
                        std::to_string(per_channel));
    auto v = latent.values();
    std::vector<double> sigma(static_cast<size_t>(channels));
    for (int c = 0; c < channels; ++c) {
        const double* p = v.data() + int64_t(c) * per_channel;
        double sum = 0, sum_sq = 0;
        for (int64_t i = 0; i < per_channel; ++i) {
            sum += p[i];
            sum_sq += p[i] * p[i];
        }
        double mean = sum / double(per_channel);
        double var = std::max(0.0, sum_sq / double(per_channel) - mean * mean);
        sigma[size_t(c)] = std::max(std::sqrt(var), kSigmaFloor);
    }
    return from_sigma(sigma, ladder);
}

const SymbolTable& EntropyModel::table(int channel, int action) const {
    if (channel < 0 || channel >= channels())
        throw Error("entropy model: channel out of range");
    if (action < 0 || action >= ladder_.levels())
        throw Error("entropy model: action out of range");
    return tables_[size_t(channel) * size_t(ladder_.levels()) + size_t(action)];
}

}  // namespace pcdc
