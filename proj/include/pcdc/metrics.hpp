#ifndef PCDC_METRICS_HPP
#define PCDC_METRICS_HPP

#include <memory>
#include <string>
#include <vector>

#include "pcdc/image.hpp"

namespace pcdc {

struct MetricWeights {
    double pixel = 1.0;       // lambda_p, on MSE
    double structural = 0.5;  // lambda_s, on 1 - SSIM
    double lpips = 0.2;       // lambda_l
    double dists = 0.2;       // lambda_d
};

struct MetricReport {
    double mse = 0;
    double psnr_db = 0;
    double ssim = 0;
    double lpips_proxy = 0;
    double dists_proxy = 0;
    double utility = 0;

    // Fixed column order: mse, psnr_db, ssim, lpips_proxy, dists_proxy, utility.
    std::string csv_row() const;
    static std::string csv_header();
};

double mse(const ImagePlane& a, const ImagePlane& b);
// 10*log10(1/mse) on the [0,1] scale; returns 99 dB when mse < 1e-10.
double psnr(const ImagePlane& a, const ImagePlane& b);

// Single-scale SSIM on luma: 11x11 Gaussian window (sigma 1.5),
// C1 = 0.01^2, C2 = 0.03^2, averaged over valid window positions.
double ssim(const ImagePlane& a, const ImagePlane& b);

// Deterministic stand-ins for learned perceptual metrics. Both are
// symmetric, non-negative and zero iff the inputs match.
double lpips_proxy(const ImagePlane& a, const ImagePlane& b);
double dists_proxy(const ImagePlane& a, const ImagePlane& b);

// U = -lp*D - ls*(1-SSIM) - ll*LPIPS - ld*DISTS. Zero iff the inputs match.
double utility(const MetricReport& r, const MetricWeights& w);
MetricReport evaluate_pair(const ImagePlane& a, const ImagePlane& b, const MetricWeights& w);

// Swappable perceptual distance; the built-in proxies implement it and a
// real LPIPS/DISTS can be plugged in without touching the allocator.
class PerceptualMetric {
public:
    virtual ~PerceptualMetric() = default;
    virtual std::string name() const = 0;
    virtual double distance(const ImagePlane& a, const ImagePlane& b) const = 0;
};

std::unique_ptr<PerceptualMetric> make_lpips_proxy();
std::unique_ptr<PerceptualMetric> make_dists_proxy();

}  // namespace pcdc

#endif
