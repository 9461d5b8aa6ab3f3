#ifndef PCDC_TESTS_SYNTHETIC_ENV_HPP
#define PCDC_TESTS_SYNTHETIC_ENV_HPP

#include <vector>

#include "pcdc/allocator.hpp"
#include "pcdc/common.hpp"

namespace pcdc::test {

// Test double for the allocation environment: additive per-block
// utilities and integer bit costs, no codec and no decoding. Utilities
// increase with finer actions; costs strictly increase.
class SyntheticAdditiveEnv : public AllocationEnv {
public:
    SyntheticAdditiveEnv(int blocks, int actions, uint64_t seed, double r_max)
        : blocks_(blocks), actions_(actions), r_max_(r_max) {
        Rng rng(seed);
        utility_.resize(size_t(blocks));
        cost_.resize(size_t(blocks));
        for (int b = 0; b < blocks; ++b) {
            utility_[size_t(b)].resize(size_t(actions));
            cost_[size_t(b)].resize(size_t(actions));
            double u = 0, c = 10;
            for (int k = 0; k < actions; ++k) {
                if (k > 0) {
                    u += rng.uniform(0.05, 0.5);
                    c += std::floor(rng.uniform(5.0, 25.0));
                }
                utility_[size_t(b)][size_t(k)] = u;
                cost_[size_t(b)][size_t(k)] = c;
            }
        }
    }

    int num_blocks() const override { return blocks_; }
    int num_actions() const override { return actions_; }
    double r_max() const override { return r_max_; }
    void set_r_max(double v) { r_max_ = v; }

    std::vector<double> state(int block, double rho) const override {
        std::vector<double> s(size_t(kStateDim), 0.0);
        for (int k = 0; k < std::min(4, actions_); ++k)
            s[size_t(k)] = utility_[size_t(block)][size_t(k)];
        if (block < 8) s[size_t(4 + block)] = 1.0;  // block identity
        for (int k = 0; k < std::min(8, actions_); ++k)
            s[size_t(12 + k)] = cost_[size_t(block)][size_t(k)] / 100.0;
        s[20] = rho;
        s[21] = blocks_ > 1 ? double(block) / (blocks_ - 1) : 0.0;
        s[22] = 0.0;
        return s;
    }

    double est_bits(int block, int action) const override {
        return cost_[size_t(block)][size_t(action)];
    }

    double fixed_bits() const override { return fixed_; }

    EpisodeOutcome finish(const std::vector<int>& actions) override {
        EpisodeOutcome out;
        out.r_tot = fixed_;
        for (int b = 0; b < blocks_; ++b) {
            out.utility += utility_[size_t(b)][size_t(actions[size_t(b)])];
            out.r_tot += cost_[size_t(b)][size_t(actions[size_t(b)])];
        }
        return out;
    }

    double total_utility(const std::vector<int>& actions) const {
        double u = 0;
        for (int b = 0; b < blocks_; ++b) u += utility_[size_t(b)][size_t(actions[size_t(b)])];
        return u;
    }

    double total_bits(const std::vector<int>& actions) const {
        double r = fixed_;
        for (int b = 0; b < blocks_; ++b) r += cost_[size_t(b)][size_t(actions[size_t(b)])];
        return r;
    }

    double min_bits() const {
        std::vector<int> coarse(size_t(blocks_), 0);
        return total_bits(coarse);
    }

    // Exhaustive search over all actions^blocks allocations.
    struct BruteForce {
        double best_utility = -1e300;
        std::vector<int> best_actions;
        int64_t feasible_count = 0;
    };
    BruteForce brute_force() const {
        BruteForce bf;
        std::vector<int> actions(size_t(blocks_), 0);
        for (;;) {
            if (total_bits(actions) <= r_max_) {
                ++bf.feasible_count;
                double u = total_utility(actions);
                if (u > bf.best_utility) {
                    bf.best_utility = u;
                    bf.best_actions = actions;
                }
            }
            int b = 0;
            while (b < blocks_) {
                if (++actions[size_t(b)] < actions_) break;
                actions[size_t(b)] = 0;
                ++b;
            }
            if (b == blocks_) break;
        }
        return bf;
    }

private:
    int blocks_, actions_;
    double r_max_;
    double fixed_ = 50.0;
    std::vector<std::vector<double>> utility_;
    std::vector<std::vector<double>> cost_;
};

}  // namespace pcdc::test

#endif
