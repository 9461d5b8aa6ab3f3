#ifndef PCDC_TESTS_TEST_UTIL_HPP
#define PCDC_TESTS_TEST_UTIL_HPP

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pcdc/common.hpp"
#include "pcdc/image.hpp"
#include "pcdc/tensor.hpp"

namespace pcdc::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0,
                            bool requires_grad = false) {
    std::vector<double> data(size_t(shape_numel(shape)));
    for (auto& v : data) v = rng.normal() * scale;
    return Tensor::from(std::move(shape), std::move(data), requires_grad);
}

// Central finite differences against the analytic gradient of a scalar
// loss built from `x`. Independent oracle for every differentiable op.
struct FdReport {
    double max_abs_err = 0;
    double max_rel_err = 0;
    bool ok(double abs_tol = 1e-4, double rel_tol = 1e-3) const {
        return max_abs_err <= abs_tol || max_rel_err <= rel_tol;
    }
};

inline FdReport fd_check(const std::function<Tensor(const Tensor&)>& loss_fn, Tensor x,
                         double h = 1e-4) {
    x.set_requires_grad(true);
    x.zero_grad();
    Tensor loss = loss_fn(x);
    backward(loss);
    std::vector<double> analytic(x.grad().begin(), x.grad().end());

    FdReport rep;
    auto& data = x.raw();
    for (size_t i = 0; i < data.size(); ++i) {
        double keep = data[i];
        data[i] = keep + h;
        double up = loss_fn(x).item();
        data[i] = keep - h;
        double down = loss_fn(x).item();
        data[i] = keep;
        double fd = (up - down) / (2 * h);
        double abs_err = std::fabs(fd - analytic[i]);
        double denom = std::max(std::fabs(fd), std::fabs(analytic[i]));
        double rel_err = denom > 1e-12 ? abs_err / denom : 0.0;
        if (abs_err > rep.max_abs_err) rep.max_abs_err = abs_err;
        if (abs_err > 1e-4 && rel_err > rep.max_rel_err) rep.max_rel_err = rel_err;
    }
    return rep;
}

inline ImagePlane random_image(int h, int w, Rng& rng) {
    ImagePlane img(h, w);
    for (auto& v : img.data) v = rng.uniform();
    return img;
}

// Smooth gradients plus sharp texture patches; the toy stand-in for
// aerial imagery with mixed flat and detailed regions.
inline ImagePlane textured_image(int h, int w, Rng& rng) {
    ImagePlane img(h, w);
    double cx = rng.uniform(0.2, 0.8) * w, cy = rng.uniform(0.2, 0.8) * h;
    double fx = rng.uniform(0.05, 0.3), fy = rng.uniform(0.05, 0.3);
    double base_r = rng.uniform(0.2, 0.8), base_g = rng.uniform(0.2, 0.8),
           base_b = rng.uniform(0.2, 0.8);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double ramp = 0.3 * (double(x) / w) + 0.2 * (double(y) / h);
            double wave = 0.15 * std::sin(fx * x) * std::cos(fy * y);
            img.at(0, y, x) = std::clamp(base_r * 0.6 + ramp + wave, 0.0, 1.0);
            img.at(1, y, x) = std::clamp(base_g * 0.6 + ramp + wave * 0.7, 0.0, 1.0);
            img.at(2, y, x) = std::clamp(base_b * 0.6 + ramp - wave * 0.4, 0.0, 1.0);
        }
    // sharp texture patch around (cx, cy)
    int py = std::clamp(int(cy) - h / 6, 0, h - h / 3);
    int px = std::clamp(int(cx) - w / 6, 0, w - w / 3);
    for (int y = py; y < py + h / 3; ++y)
        for (int x = px; x < px + w / 3; ++x) {
            double check = ((x / 2 + y / 2) % 2 == 0) ? 0.35 : -0.35;
            double noise = rng.uniform(-0.1, 0.1);
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = std::clamp(img.at(c, y, x) + check + noise, 0.0, 1.0);
        }
    return img;
}

}  // namespace pcdc::test

#endif
