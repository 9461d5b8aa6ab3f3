#include "pcdc/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace pcdc {

ImagePlane ImagePlane::from_tensor(const Tensor& t) {
    if (t.ndim() != 3 || t.dim(0) != 3)
        throw ShapeError("ImagePlane::from_tensor expects (3,H,W), got " + shape_str(t.shape()));
    ImagePlane img(t.dim(1), t.dim(2));
    auto v = t.values();
    img.data.assign(v.begin(), v.end());
    return img;
}

namespace {

// Reads one whitespace-delimited token, skipping '#' comments.
std::string next_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (!std::isspace(c)) {
            tok.push_back(char(c));
            while ((c = in.peek()) != EOF && !std::isspace(c) && c != '#')
                tok.push_back(char(in.get()));
            return tok;
        }
    }
    throw DataError("ppm: truncated header");
}

int parse_int(const std::string& tok, const char* what) {
    for (char c : tok)
        if (!std::isdigit(static_cast<unsigned char>(c)))
            throw DataError(std::string("ppm: malformed ") + what + " '" + tok + "'");
    return std::stoi(tok);
}

}  // namespace

ImagePlane load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image file: " + path);
    std::string magic = next_token(in);
    if (magic != "P6") throw DataError("ppm: bad magic '" + magic + "' in " + path);
    int w = parse_int(next_token(in), "width");
    int h = parse_int(next_token(in), "height");
    int maxval = parse_int(next_token(in), "maxval");
    if (w <= 0 || h <= 0) throw DataError("ppm: non-positive dimensions in " + path);
    if (maxval != 255) throw DataError("ppm: unsupported maxval " + std::to_string(maxval));
    in.get();  // single whitespace byte after maxval

    std::vector<unsigned char> raw(size_t(3) * w * h);
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
    if (size_t(in.gcount()) != raw.size())
        throw DataError("ppm: truncated pixel payload in " + path);

    ImagePlane img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = double(raw[(size_t(y) * w + x) * 3 + c]) / 255.0;
    return img;
}

void save_ppm(const ImagePlane& img, const std::string& path,
              const std::vector<std::string>& header_comments) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot write image file: " + path);
        out << "P6\n";
        for (const auto& line : header_comments) out << "# " << line << "\n";
        out << img.width << " " << img.height << "\n255\n";
        std::vector<unsigned char> raw(size_t(3) * img.width * img.height);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                for (int c = 0; c < 3; ++c) {
                    double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
                    raw[(size_t(y) * img.width + x) * 3 + c] =
                        (unsigned char)(std::lround(v * 255.0));
                }
        out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
        if (!out) throw DataError("short write: " + path);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw DataError("cannot move temp file into place: " + path);
}

ImagePlane pad_to_multiple(const ImagePlane& img, int block_size) {
    int ph = (img.height + block_size - 1) / block_size * block_size;
    int pw = (img.width + block_size - 1) / block_size * block_size;
    if (ph == img.height && pw == img.width) return img;
    ImagePlane out(ph, pw);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < ph; ++y) {
            int sy = std::min(y, img.height - 1);
            for (int x = 0; x < pw; ++x)
                out.at(c, y, x) = img.at(c, sy, std::min(x, img.width - 1));
        }
    return out;
}

BlockGrid partition(const ImagePlane& img, int block_size) {
    if (block_size < 4) throw Error("partition: block_size must be >= 4");
    BlockGrid grid;
    grid.block_size = block_size;
    grid.rows = (img.height + block_size - 1) / block_size;
    grid.cols = (img.width + block_size - 1) / block_size;
    grid.padded_h = grid.rows * block_size;
    grid.padded_w = grid.cols * block_size;
    grid.blocks.reserve(size_t(grid.rows) * grid.cols);
    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c)
            grid.blocks.push_back(
                Block{r, c, r * block_size, c * block_size, block_size, block_size});
    return grid;
}

ResidualMap highpass(const ImagePlane& img) {
    const int h = img.height, w = img.width;
    ResidualMap out;
    out.height = h;
    out.width = w;
    out.data.resize(size_t(h) * w);
    auto lum = [&](int y, int x) {
        y = std::clamp(y, 0, h - 1);
        x = std::clamp(x, 0, w - 1);
        return img.luma(y, x);
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.data[size_t(y) * w + x] =
                4.0 * lum(y, x) - lum(y - 1, x) - lum(y + 1, x) - lum(y, x - 1) - lum(y, x + 1);
    return out;
}

std::vector<double> block_stats(const ResidualMap& residual, const Block& block) {
    if (block.y0 < 0 || block.x0 < 0 || block.y0 + block.h > residual.height ||
        block.x0 + block.w > residual.width)
        throw Error("block_stats: block outside residual map");
    double sum_abs = 0, sum = 0, sum_sq = 0, max_abs = 0;
    int active = 0;
    const int n = block.h * block.w;
    for (int y = block.y0; y < block.y0 + block.h; ++y)
        for (int x = block.x0; x < block.x0 + block.w; ++x) {
            double v = residual.at(y, x);
            double a = std::fabs(v);
            sum_abs += a;
            sum += v;
            sum_sq += v * v;
            max_abs = std::max(max_abs, a);
            if (a > kActivityThreshold) ++active;
        }
    double mean = sum / n;
    double var = std::max(0.0, sum_sq / n - mean * mean);
    return {sum_abs / n, std::sqrt(var), max_abs, double(active) / n};
}

}  // namespace pcdc
