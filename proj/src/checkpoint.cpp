#include "pcdc/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace pcdc {

namespace {

void put_u16(std::vector<uint8_t>& v, uint16_t x) {
    v.push_back(uint8_t(x & 0xFF));
    v.push_back(uint8_t(x >> 8));
}

void put_u32(std::vector<uint8_t>& v, uint32_t x) {
    for (int i = 0; i < 4; ++i) v.push_back(uint8_t((x >> (8 * i)) & 0xFF));
}

void put_f64(std::vector<uint8_t>& v, double x) {
    uint64_t bits;
    std::memcpy(&bits, &x, 8);
    for (int i = 0; i < 8; ++i) v.push_back(uint8_t((bits >> (8 * i)) & 0xFF));
}

struct Reader {
    const std::vector<uint8_t>& v;
    size_t pos = 0;

    uint8_t u8() {
        if (pos >= v.size()) throw DataError("checkpoint: truncated");
        return v[pos++];
    }
    uint16_t u16() { return uint16_t(u8() | (u8() << 8)); }
    uint32_t u32() {
        uint32_t x = 0;
        for (int i = 0; i < 4; ++i) x |= uint32_t(u8()) << (8 * i);
        return x;
    }
    double f64() {
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= uint64_t(u8()) << (8 * i);
        double x;
        std::memcpy(&x, &bits, 8);
        return x;
    }
};

}  // namespace

std::vector<uint8_t> checkpoint_bytes(
    const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::vector<uint8_t> out{'P', 'C', 'K', 'P', 1};
    put_u32(out, uint32_t(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put_u16(out, uint16_t(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(uint8_t(t.ndim()));
        for (int i = 0; i < t.ndim(); ++i) put_u32(out, uint32_t(t.dim(i)));
        for (double x : t.values()) put_f64(out, x);
    }
    return out;
}

void save_checkpoint(const std::vector<std::pair<std::string, Tensor>>& tensors,
                     const std::string& path) {
    auto bytes = checkpoint_bytes(tensors);
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot write checkpoint: " + path);
        out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
        if (!out) throw DataError("short write: " + path);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw DataError("cannot move temp file into place: " + path);
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    Reader r{bytes};
    if (r.u8() != 'P' || r.u8() != 'C' || r.u8() != 'K' || r.u8() != 'P')
        throw DataError("checkpoint: bad magic in " + path);
    uint8_t version = r.u8();
    if (version != 1)
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    uint32_t count = r.u32();
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t len = r.u16();
        std::string name;
        for (uint16_t j = 0; j < len; ++j) name.push_back(char(r.u8()));
        uint8_t rank = r.u8();
        Shape shape(rank);
        for (auto& d : shape) d = int(r.u32());
        std::vector<double> data(size_t(shape_numel(shape)));
        for (auto& x : data) x = r.f64();
        out.emplace_back(name, Tensor::from(shape, std::move(data)));
    }
    return out;
}

void restore_params(ParamStore& dst, const std::vector<std::pair<std::string, Tensor>>& loaded) {
    for (auto& [name, t] : dst.entries()) {
        const Tensor* src = nullptr;
        for (const auto& [lname, lt] : loaded)
            if (lname == name) {
                src = &lt;
                break;
            }
        if (!src) throw DataError("checkpoint: missing tensor '" + name + "'");
        if (src->shape() != t.shape())
            throw DataError("checkpoint: shape mismatch for '" + name + "': file " +
                            shape_str(src->shape()) + " vs model " + shape_str(t.shape()));
        auto sv = src->values();
        t.raw().assign(sv.begin(), sv.end());
    }
}

uint64_t checkpoint_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return content_hash(bytes.data(), bytes.size());
}

}  // namespace pcdc
