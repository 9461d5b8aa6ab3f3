#ifndef PCDC_TESTS_GOLDEN_INPUTS_HPP
#define PCDC_TESTS_GOLDEN_INPUTS_HPP

#include <string>
#include <vector>

#include "pcdc/codec.hpp"
#include "pcdc/common.hpp"
#include "pcdc/entropy.hpp"
#include "pcdc/image.hpp"
#include "pcdc/optim.hpp"

namespace pcdc::test {

// Deterministic synthetic inputs behind the committed golden files. The
// generator tool and the tests must build byte-identical structures from
// these, so everything below is pinned to fixed seeds.

struct GoldenCase {
    int height, width, block_size;
    uint64_t seed;
};

inline std::vector<GoldenCase> golden_cases() {
    return {{64, 64, 16, 1001}, {60, 76, 16, 1002}, {33, 47, 16, 1003}};
}

struct GoldenStream {
    QuantizedLatent latent;
    BlockGrid grid;
    EntropyModel model;
    int height, width;
};

inline GoldenStream build_golden_stream(const GoldenCase& gc) {
    Rng rng(gc.seed);
    GoldenStream g;
    g.height = gc.height;
    g.width = gc.width;
    ImagePlane probe(gc.height, gc.width);
    g.grid = partition(probe, gc.block_size);

    StepLadder ladder;
    std::vector<double> sigma(static_cast<size_t>(kLatentChannels));
    for (auto& s : sigma) s = rng.uniform(0.1, 3.0);
    g.model = EntropyModel::from_sigma(sigma, ladder);

    QuantizedLatent& q = g.latent;
    q.channels = kLatentChannels;
    q.h = g.grid.padded_h / kLatentDownsample;
    q.w = g.grid.padded_w / kLatentDownsample;
    q.symbols.assign(size_t(q.channels) * q.h * q.w, 0);
    q.actions.resize(size_t(g.grid.count()));
    for (auto& a : q.actions) a = int(rng.next_below(uint64_t(ladder.levels())));

    const int side = gc.block_size / kLatentDownsample;
    for (int b = 0; b < g.grid.count(); ++b) {
        const Block& blk = g.grid.blocks[size_t(b)];
        double step = ladder.step(q.actions[size_t(b)]);
        for (int c = 0; c < q.channels; ++c) {
            double scale = g.model.sigma(c) / step;
            for (int y = blk.row * side; y < (blk.row + 1) * side; ++y)
                for (int x = blk.col * side; x < (blk.col + 1) * side; ++x) {
                    double v = rng.normal() * scale;
                    v = round_half_away_from_zero(v);
                    q.at(c, y, x) =
                        int(std::clamp(v, double(-kLatentClamp), double(kLatentClamp)));
                }
        }
    }
    return g;
}

inline Bitstream build_golden_bitstream(const GoldenCase& gc) {
    GoldenStream g = build_golden_stream(gc);
    return serialize(g.latent, g.grid, g.height, g.width, g.model);
}

// Tiny fixed-seed model for the checkpoint-format golden file.
inline std::vector<std::pair<std::string, Tensor>> golden_checkpoint_tensors() {
    Rng rng(0xC4CA11);
    std::vector<std::pair<std::string, Tensor>> out;
    auto rand_tensor = [&](Shape shape) {
        std::vector<double> v(size_t(shape_numel(shape)));
        for (auto& x : v) x = rng.normal();
        return Tensor::from(shape, std::move(v));
    };
    out.emplace_back("enc.conv1.w", rand_tensor({4, 3, 3, 3}));
    out.emplace_back("enc.conv1.b", rand_tensor({4}));
    out.emplace_back("pol.head.w", rand_tensor({8, 5}));
    out.emplace_back("meta.info", Tensor::from({3}, {50.0, 8.0, 5.0}));
    return out;
}

}  // namespace pcdc::test

#endif
