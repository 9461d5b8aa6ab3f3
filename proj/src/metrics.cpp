#include "pcdc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pcdc {

namespace {

void require_same_dims(const ImagePlane& a, const ImagePlane& b, const char* op) {
    if (a.height != b.height || a.width != b.width)
        throw ShapeError(std::string(op) + ": image dims differ");
}

std::vector<double> luma_plane(const ImagePlane& img) {
    std::vector<double> out(size_t(img.height) * img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) out[size_t(y) * img.width + x] = img.luma(y, x);
    return out;
}

}  // namespace

std::string MetricReport::csv_header() {
    return "mse,psnr_db,ssim,lpips_proxy,dists_proxy,utility";
}

std::string MetricReport::csv_row() const {
    std::ostringstream os;
    os.precision(10);
    os << mse << "," << psnr_db << "," << ssim << "," << lpips_proxy << "," << dists_proxy
       << "," << utility;
    return os.str();
}

double mse(const ImagePlane& a, const ImagePlane& b) {
    require_same_dims(a, b, "mse");
    double s = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s / double(a.data.size());
}

double psnr(const ImagePlane& a, const ImagePlane& b) {
    double m = mse(a, b);
    if (m < 1e-10) return 99.0;
    return 10.0 * std::log10(1.0 / m);
}

double ssim(const ImagePlane& a, const ImagePlane& b) {
    require_same_dims(a, b, "ssim");
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5;
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;
    if (a.height < kWin || a.width < kWin)
        throw ShapeError("ssim: image smaller than the 11x11 window");

    double win[kWin][kWin];
    double norm = 0;
    for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
            double dy = i - (kWin - 1) / 2.0, dx = j - (kWin - 1) / 2.0;
            win[i][j] = std::exp(-(dy * dy + dx * dx) / (2 * kSigma * kSigma));
            norm += win[i][j];
        }
    for (auto& row : win)
        for (auto& v : row) v /= norm;

    auto la = luma_plane(a), lb = luma_plane(b);
    const int w = a.width;
    double total = 0;
    int64_t count = 0;
    for (int y = 0; y + kWin <= a.height; ++y)
        for (int x = 0; x + kWin <= a.width; ++x) {
            double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
            for (int i = 0; i < kWin; ++i)
                for (int j = 0; j < kWin; ++j) {
                    double va = la[size_t(y + i) * w + (x + j)];
                    double vb = lb[size_t(y + i) * w + (x + j)];
                    double wt = win[i][j];
                    mu_a += wt * va;
                    mu_b += wt * vb;
                    aa += wt * va * va;
                    bb += wt * vb * vb;
                    ab += wt * va * vb;
                }
            double var_a = aa - mu_a * mu_a;
            double var_b = bb - mu_b * mu_b;
            double cov = ab - mu_a * mu_b;
            total += ((2 * mu_a * mu_b + kC1) * (2 * cov + kC2)) /
                     ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
            ++count;
        }
    return total / double(count);
}

// ---- perceptual proxies ----

namespace {

struct Plane {
    int h = 0, w = 0;
    std::vector<double> v;

    double at(int y, int x) const {
        y = std::clamp(y, 0, h - 1);
        x = std::clamp(x, 0, w - 1);
        return v[size_t(y) * w + x];
    }
};

// 2x average pooling, ragged edge dropped.
std::vector<Plane> downscale(const std::vector<Plane>& in) {
    std::vector<Plane> out;
    out.reserve(in.size());
    for (const auto& p : in) {
        Plane q;
        q.h = p.h / 2;
        q.w = p.w / 2;
        q.v.resize(size_t(q.h) * q.w);
        for (int y = 0; y < q.h; ++y)
            for (int x = 0; x < q.w; ++x)
                q.v[size_t(y) * q.w + x] =
                    0.25 * (p.at(2 * y, 2 * x) + p.at(2 * y, 2 * x + 1) +
                            p.at(2 * y + 1, 2 * x) + p.at(2 * y + 1, 2 * x + 1));
        out.push_back(std::move(q));
    }
    return out;
}

std::vector<Plane> rgb_planes(const ImagePlane& img) {
    std::vector<Plane> out(3);
    for (int c = 0; c < 3; ++c) {
        out[size_t(c)].h = img.height;
        out[size_t(c)].w = img.width;
        out[size_t(c)].v.assign(img.data.begin() + long(size_t(c) * img.height * img.width),
                                img.data.begin() + long(size_t(c + 1) * img.height * img.width));
    }
    return out;
}

constexpr uint64_t kFeatureSeed = 0xC0DEC;
constexpr int kNumFilters = 8;

// Fixed random 3x3x3 filter bank, each filter normalized to unit L2 norm.
const std::vector<double>& feature_filters() {
    static const std::vector<double> filters = [] {
        Rng rng(kFeatureSeed);
        std::vector<double> f(size_t(kNumFilters) * 27);
        for (int k = 0; k < kNumFilters; ++k) {
            double norm_sq = 0;
            for (int i = 0; i < 27; ++i) {
                double v = rng.normal();
                f[size_t(k) * 27 + i] = v;
                norm_sq += v * v;
            }
            double inv = 1.0 / std::sqrt(norm_sq);
            for (int i = 0; i < 27; ++i) f[size_t(k) * 27 + i] *= inv;
        }
        return f;
    }();
    return filters;
}

// Mean squared difference between the two images' feature maps at one scale.
double feature_map_msd(const std::vector<Plane>& a, const std::vector<Plane>& b) {
    const auto& f = feature_filters();
    const int h = a[0].h, w = a[0].w;
    double sum = 0;
    for (int k = 0; k < kNumFilters; ++k) {
        const double* fk = f.data() + size_t(k) * 27;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double fa = 0, fb = 0;
                int i = 0;
                for (int c = 0; c < 3; ++c)
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx, ++i) {
                            fa += fk[i] * a[size_t(c)].at(y + dy, x + dx);
                            fb += fk[i] * b[size_t(c)].at(y + dy, x + dx);
                        }
                double d = fa - fb;
                sum += d * d;
            }
    }
    return sum / double(kNumFilters * h * w);
}

Plane luma_of(const ImagePlane& img) {
    Plane p;
    p.h = img.height;
    p.w = img.width;
    p.v = luma_plane(img);
    return p;
}

Plane gradient_magnitude(const Plane& p) {
    Plane g;
    g.h = p.h;
    g.w = p.w;
    g.v.resize(p.v.size());
    for (int y = 0; y < p.h; ++y)
        for (int x = 0; x < p.w; ++x) {
            double gx = (p.at(y, x + 1) - p.at(y, x - 1)) / 2.0;
            double gy = (p.at(y + 1, x) - p.at(y - 1, x)) / 2.0;
            g.v[size_t(y) * g.w + x] = std::sqrt(gx * gx + gy * gy);
        }
    return g;
}

// 4x4 block means (stride 4), ragged edge dropped.
Plane local_means(const Plane& p) {
    Plane m;
    m.h = std::max(1, p.h / 4);
    m.w = std::max(1, p.w / 4);
    m.v.resize(size_t(m.h) * m.w);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            double s = 0;
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) s += p.at(4 * y + i, 4 * x + j);
            m.v[size_t(y) * m.w + x] = s / 16.0;
        }
    return m;
}

// (2<a,b> + c) / (|a|^2 + |b|^2 + c) over per-pixel means; 1 iff a == b.
double similarity(const Plane& a, const Plane& b, double c) {
    double cross = 0, ea = 0, eb = 0;
    for (size_t i = 0; i < a.v.size(); ++i) {
        cross += a.v[i] * b.v[i];
        ea += a.v[i] * a.v[i];
        eb += b.v[i] * b.v[i];
    }
    double n = double(a.v.size());
    return (2 * cross / n + c) / (ea / n + eb / n + c);
}

constexpr double kSimC = 1e-6;
constexpr int kScales = 3;

}  // namespace

double lpips_proxy(const ImagePlane& a, const ImagePlane& b) {
    require_same_dims(a, b, "lpips_proxy");
    auto pa = rgb_planes(a), pb = rgb_planes(b);
    double total = 0;
    for (int s = 0; s < kScales; ++s) {
        total += feature_map_msd(pa, pb);
        if (s + 1 < kScales) {
            pa = downscale(pa);
            pb = downscale(pb);
        }
    }
    return total / kScales;
}

double dists_proxy(const ImagePlane& a, const ImagePlane& b) {
    require_same_dims(a, b, "dists_proxy");
    Plane la = luma_of(a), lb = luma_of(b);
    double total = 0;
    for (int s = 0; s < kScales; ++s) {
        double structure = similarity(gradient_magnitude(la), gradient_magnitude(lb), kSimC);
        double texture = similarity(local_means(la), local_means(lb), kSimC);
        total += structure * texture;
        if (s + 1 < kScales) {
            std::vector<Plane> da = downscale({la}), db = downscale({lb});
            la = std::move(da[0]);
            lb = std::move(db[0]);
        }
    }
    return 1.0 - total / kScales;
}

double utility(const MetricReport& r, const MetricWeights& w) {
    return -(w.pixel * r.mse + w.structural * (1.0 - r.ssim) + w.lpips * r.lpips_proxy +
             w.dists * r.dists_proxy);
}

MetricReport evaluate_pair(const ImagePlane& a, const ImagePlane& b, const MetricWeights& w) {
    MetricReport r;
    r.mse = mse(a, b);
    r.psnr_db = psnr(a, b);
    r.ssim = ssim(a, b);
    r.lpips_proxy = lpips_proxy(a, b);
    r.dists_proxy = dists_proxy(a, b);
    r.utility = utility(r, w);
    return r;
}

namespace {

class LpipsProxyMetric : public PerceptualMetric {
public:
    std::string name() const override { return "lpips_proxy"; }
    double distance(const ImagePlane& a, const ImagePlane& b) const override {
        return lpips_proxy(a, b);
    }
};

class DistsProxyMetric : public PerceptualMetric {
public:
    std::string name() const override { return "dists_proxy"; }
    double distance(const ImagePlane& a, const ImagePlane& b) const override {
        return dists_proxy(a, b);
    }
};

}  // namespace

std::unique_ptr<PerceptualMetric> make_lpips_proxy() {
    return std::make_unique<LpipsProxyMetric>();
}

std::unique_ptr<PerceptualMetric> make_dists_proxy() {
    return std::make_unique<DistsProxyMetric>();
}

}  // namespace pcdc
