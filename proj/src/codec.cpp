#include "pcdc/codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "pcdc/range_coder.hpp"

namespace pcdc {

namespace {

Tensor conv_init(Rng& rng, int cout, int cin, int k) {
    std::vector<double> w(size_t(cout) * cin * k * k);
    double std_dev = std::sqrt(2.0 / double(cin * k * k));
    for (auto& v : w) v = rng.normal() * std_dev;
    return Tensor::from({cout, cin, k, k}, std::move(w));
}

}  // namespace

EncoderNet::EncoderNet(Rng& rng) {
    params_.add("enc.conv1.w", conv_init(rng, 32, 3, 3));
    params_.add("enc.conv1.b", Tensor::zeros({32}));
    params_.add("enc.conv2.w", conv_init(rng, 64, 32, 3));
    params_.add("enc.conv2.b", Tensor::zeros({64}));
    params_.add("enc.conv3.w", conv_init(rng, kLatentChannels, 64, 3));
    params_.add("enc.conv3.b", Tensor::zeros({kLatentChannels}));
}

Tensor EncoderNet::forward(const Tensor& image) const {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw ShapeError("encoder: expected (3,H,W), got " + shape_str(image.shape()));
    if (image.dim(1) % kLatentDownsample != 0 || image.dim(2) % kLatentDownsample != 0)
        throw ShapeError("encoder: dims must be multiples of " +
                         std::to_string(kLatentDownsample));
    Tensor h = conv2d(image, params_.find("enc.conv1.w"), 2, 1);
    h = silu(add_channel_bias(h, params_.find("enc.conv1.b")));
    h = conv2d(h, params_.find("enc.conv2.w"), 2, 1);
    h = silu(add_channel_bias(h, params_.find("enc.conv2.b")));
    h = conv2d(h, params_.find("enc.conv3.w"), 1, 1);
    return add_channel_bias(h, params_.find("enc.conv3.b"));
}

double round_half_away_from_zero(double v) {
    return v >= 0 ? std::floor(v + 0.5) : std::ceil(v - 0.5);
}

namespace {

int latent_block_side(const BlockGrid& grid) {
    if (grid.block_size % kLatentDownsample != 0)
        throw Error("block size must be a multiple of " + std::to_string(kLatentDownsample));
    return grid.block_size / kLatentDownsample;
}

}  // namespace

QuantizedLatent quantize(const Tensor& latent, const std::vector<int>& block_actions,
                         const BlockGrid& grid, const StepLadder& ladder) {
    if (latent.ndim() != 3) throw ShapeError("quantize: expected (C,h,w) latent");
    if (int(block_actions.size()) != grid.count())
        throw Error("quantize: need one action per block");
    QuantizedLatent q;
    q.channels = latent.dim(0);
    q.h = latent.dim(1);
    q.w = latent.dim(2);
    q.symbols.assign(size_t(latent.size()), 0);
    q.actions = block_actions;
    const int side = latent_block_side(grid);
    auto v = latent.values();
    for (int b = 0; b < grid.count(); ++b) {
        const Block& blk = grid.blocks[size_t(b)];
        double step = ladder.step(block_actions[size_t(b)]);
        for (int c = 0; c < q.channels; ++c)
            for (int y = blk.row * side; y < (blk.row + 1) * side; ++y)
                for (int x = blk.col * side; x < (blk.col + 1) * side; ++x) {
                    double s = round_half_away_from_zero(
                        v[(size_t(c) * q.h + y) * q.w + x] / step);
                    if (s > kLatentClamp) {
                        s = kLatentClamp;
                        ++q.clamped;
                    } else if (s < -kLatentClamp) {
                        s = -kLatentClamp;
                        ++q.clamped;
                    }
                    q.at(c, y, x) = int(s);
                }
    }
    return q;
}

Tensor dequantize(const QuantizedLatent& q, const BlockGrid& grid, const StepLadder& ladder) {
    std::vector<double> out(q.symbols.size());
    const int side = latent_block_side(grid);
    for (int b = 0; b < grid.count(); ++b) {
        const Block& blk = grid.blocks[size_t(b)];
        double step = ladder.step(q.actions[size_t(b)]);
        for (int c = 0; c < q.channels; ++c)
            for (int y = blk.row * side; y < (blk.row + 1) * side; ++y)
                for (int x = blk.col * side; x < (blk.col + 1) * side; ++x)
                    out[(size_t(c) * q.h + y) * q.w + x] = q.at(c, y, x) * step;
    }
    return Tensor::from({q.channels, q.h, q.w}, std::move(out));
}

RateEstimate rate_estimate(const QuantizedLatent& q, const BlockGrid& grid,
                           const EntropyModel& model) {
    RateEstimate r;
    r.block_bits.resize(size_t(grid.count()), 0.0);
    const int side = latent_block_side(grid);
    for (int b = 0; b < grid.count(); ++b) {
        const Block& blk = grid.blocks[size_t(b)];
        int action = q.actions[size_t(b)];
        double bits = 0;
        for (int c = 0; c < q.channels; ++c) {
            const SymbolTable& t = model.table(c, action);
            for (int y = blk.row * side; y < (blk.row + 1) * side; ++y)
                for (int x = blk.col * side; x < (blk.col + 1) * side; ++x)
                    bits += t.bits(q.at(c, y, x));
        }
        r.block_bits[size_t(b)] = bits;
        r.total_bits += bits;
    }
    return r;
}

// ---- bitstream ----

namespace {

void put_u16(std::vector<uint8_t>& v, uint16_t x) {
    v.push_back(uint8_t(x & 0xFF));
    v.push_back(uint8_t(x >> 8));
}

void put_u32(std::vector<uint8_t>& v, uint32_t x) {
    for (int i = 0; i < 4; ++i) v.push_back(uint8_t((x >> (8 * i)) & 0xFF));
}

struct ByteReader {
    const std::vector<uint8_t>& v;
    size_t pos = 0;

    uint8_t u8() {
        if (pos >= v.size()) throw DataError("bitstream: truncated");
        return v[pos++];
    }
    uint16_t u16() {
        uint16_t lo = u8(), hi = u8();
        return uint16_t(lo | (hi << 8));
    }
    uint32_t u32() {
        uint32_t x = 0;
        for (int i = 0; i < 4; ++i) x |= uint32_t(u8()) << (8 * i);
        return x;
    }
};

std::vector<uint8_t> pack_actions(const std::vector<int>& actions) {
    std::vector<uint8_t> out((actions.size() * 3 + 7) / 8, 0);
    size_t bit = 0;
    for (int a : actions) {
        for (int i = 2; i >= 0; --i) {
            if ((a >> i) & 1) out[bit / 8] |= uint8_t(0x80 >> (bit % 8));
            ++bit;
        }
    }
    return out;
}

std::vector<int> unpack_actions(ByteReader& r, size_t count) {
    std::vector<uint8_t> raw((count * 3 + 7) / 8);
    for (auto& b : raw) b = r.u8();
    std::vector<int> actions(count, 0);
    size_t bit = 0;
    for (size_t i = 0; i < count; ++i) {
        int a = 0;
        for (int j = 0; j < 3; ++j) {
            a = (a << 1) | ((raw[bit / 8] >> (7 - bit % 8)) & 1);
            ++bit;
        }
        actions[i] = a;
    }
    return actions;
}

}  // namespace

int64_t header_bits(int height, int width, int block_size, int k_levels, int c_lat) {
    (void)k_levels;
    int rows = (height + block_size - 1) / block_size;
    int cols = (width + block_size - 1) / block_size;
    int64_t blocks = int64_t(rows) * cols;
    int64_t bytes = 12 + 2 * c_lat + (blocks * 3 + 7) / 8 + 4;
    return bytes * 8;
}

Bitstream serialize(const QuantizedLatent& q, const BlockGrid& grid, int orig_height,
                    int orig_width, const EntropyModel& model) {
    if (orig_height <= 0 || orig_height > 0xFFFF || orig_width <= 0 || orig_width > 0xFFFF)
        throw Error("serialize: image dims out of range");
    if (model.channels() != q.channels) throw Error("serialize: channel count mismatch");

    Bitstream bs;
    auto& v = bs.bytes;
    v.insert(v.end(), {'P', 'C', 'D', 'C'});
    v.push_back(kBitstreamVersion);
    put_u16(v, uint16_t(orig_height));
    put_u16(v, uint16_t(orig_width));
    v.push_back(uint8_t(grid.block_size));
    v.push_back(uint8_t(model.ladder().levels()));
    v.push_back(uint8_t(q.channels));
    for (uint16_t s : model.sigma_q16()) put_u16(v, s);
    auto packed = pack_actions(q.actions);
    v.insert(v.end(), packed.begin(), packed.end());

    // Payload: block-raster, then channel, then footprint cells, so the
    // decoder knows each symbol's table from the action field alone.
    RangeEncoder enc;
    const int side = grid.block_size / kLatentDownsample;
    for (int b = 0; b < grid.count(); ++b) {
        const Block& blk = grid.blocks[size_t(b)];
        int action = q.actions[size_t(b)];
        for (int c = 0; c < q.channels; ++c) {
            const SymbolTable& t = model.table(c, action);
            for (int y = blk.row * side; y < (blk.row + 1) * side; ++y)
                for (int x = blk.col * side; x < (blk.col + 1) * side; ++x)
                    enc.encode_symbol(t, q.at(c, y, x));
        }
    }
    auto payload = enc.finish();
    put_u32(v, uint32_t(payload.size()));
    v.insert(v.end(), payload.begin(), payload.end());
    return bs;
}

DecodedStream deserialize(const Bitstream& bs) {
    ByteReader r{bs.bytes};
    if (r.u8() != 'P' || r.u8() != 'C' || r.u8() != 'D' || r.u8() != 'C')
        throw DataError("bitstream: bad magic");
    uint8_t version = r.u8();
    if (version != kBitstreamVersion)
        throw DataError("bitstream: unsupported version " + std::to_string(version));

    DecodedStream d;
    d.height = r.u16();
    d.width = r.u16();
    int block_size = r.u8();
    int k_levels = r.u8();
    int c_lat = r.u8();
    if (block_size < 4 || k_levels < 1 || k_levels > 8 || c_lat < 1)
        throw DataError("bitstream: bad header fields");

    std::vector<uint16_t> sigma_q(static_cast<size_t>(c_lat));
    for (auto& s : sigma_q) s = r.u16();
    StepLadder ladder;
    if (k_levels != ladder.levels())
        throw DataError("bitstream: ladder level count mismatch");
    d.model = EntropyModel::from_sigma_q16(sigma_q, ladder);

    ImagePlane shape_probe(d.height, d.width);
    d.grid = partition(shape_probe, block_size);
    auto actions = unpack_actions(r, size_t(d.grid.count()));
    for (int a : actions)
        if (a >= k_levels) throw DataError("bitstream: action index out of range");

    uint32_t payload_len = r.u32();
    if (r.pos + payload_len != bs.bytes.size())
        throw DataError("bitstream: payload length mismatch");
    std::vector<uint8_t> payload(bs.bytes.begin() + long(r.pos), bs.bytes.end());

    QuantizedLatent& q = d.latent;
    q.channels = c_lat;
    q.h = d.grid.padded_h / kLatentDownsample;
    q.w = d.grid.padded_w / kLatentDownsample;
    q.symbols.assign(size_t(q.channels) * q.h * q.w, 0);
    q.actions = actions;

    RangeDecoder dec(payload);
    const int side = block_size / kLatentDownsample;
    for (int b = 0; b < d.grid.count(); ++b) {
        const Block& blk = d.grid.blocks[size_t(b)];
        int action = actions[size_t(b)];
        for (int c = 0; c < c_lat; ++c) {
            const SymbolTable& t = d.model.table(c, action);
            for (int y = blk.row * side; y < (blk.row + 1) * side; ++y)
                for (int x = blk.col * side; x < (blk.col + 1) * side; ++x)
                    q.at(c, y, x) = dec.decode_symbol(t);
        }
    }
    return d;
}

void write_bitstream(const Bitstream& bs, const std::string& path) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot write bitstream: " + path);
        out.write(reinterpret_cast<const char*>(bs.bytes.data()),
                  std::streamsize(bs.bytes.size()));
        if (!out) throw DataError("short write: " + path);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw DataError("cannot move temp file into place: " + path);
}

Bitstream read_bitstream(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open bitstream: " + path);
    Bitstream bs;
    bs.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return bs;
}

Tensor gaussian_rate_bits(const Tensor& latent, const std::vector<double>& sigma) {
    if (latent.ndim() != 3 || latent.dim(0) != int(sigma.size()))
        throw ShapeError("gaussian_rate_bits: latent/sigma channel mismatch");
    const int64_t plane = int64_t(latent.dim(1)) * latent.dim(2);
    const double inv_ln2 = 1.4426950408889634;
    auto v = latent.values();
    auto cdf = [](double x, double s) { return 0.5 * std::erfc(-x / (s * 1.4142135623730951)); };
    auto pdf = [](double x, double s) {
        return std::exp(-x * x / (2 * s * s)) / (s * 2.5066282746310002);
    };
    double total = 0;
    for (size_t c = 0; c < sigma.size(); ++c) {
        double s = sigma[c];
        for (int64_t i = 0; i < plane; ++i) {
            double z = v[size_t(int64_t(c) * plane + i)];
            double p = std::max(cdf(z + 0.5, s) - cdf(z - 0.5, s), 1e-12);
            total -= std::log2(p);
        }
    }
    return Tensor::make_op(
        "gaussian_rate_bits", {1}, {total}, {latent}, [sigma, plane, cdf, pdf, inv_ln2](detail::Node& n) {
            auto& p = *n.parents[0];
            p.ensure_grad();
            double g = n.grad[0];
            for (size_t c = 0; c < sigma.size(); ++c) {
                double s = sigma[c];
                for (int64_t i = 0; i < plane; ++i) {
                    size_t idx = size_t(int64_t(c) * plane + i);
                    double z = p.value[idx];
                    double prob = std::max(cdf(z + 0.5, s) - cdf(z - 0.5, s), 1e-12);
                    double dp = pdf(z + 0.5, s) - pdf(z - 0.5, s);
                    p.grad[idx] += g * (-inv_ln2 * dp / prob);
                }
            }
        });
}

}  // namespace pcdc
