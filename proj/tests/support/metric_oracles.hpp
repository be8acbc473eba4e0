#pragma once

// Second implementations of PSNR and SSIM: long double, one window at a time.

#include "ipapr/core.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace ipapr::fixtures {

inline long double ref_psnr(const Image<double>& a, const Image<double>& b) {
    long double sum = 0;
    for (int r = 0; r < a.height; ++r)
        for (int c = 0; c < a.width; ++c)
            for (int ch = 0; ch < a.channels(); ++ch) {
                const long double d = (long double)a.at(r, c, ch) - b.at(r, c, ch);
                sum += d * d;
            }
    const long double mse = sum / (a.height * a.width * a.channels());
    return 10.0L * std::log10(1.0L / mse);
}

// direct 2D weighted window statistics, one window position at a time
inline long double ref_ssim(const Image<double>& a, const Image<double>& b) {
    int w = std::min({11, a.height, a.width});
    if (w % 2 == 0) --w;
    std::vector<long double> g(w);
    long double gs = 0;
    for (int i = 0; i < w; ++i) {
        const long double d = i - (w - 1) / 2.0L;
        g[i] = std::exp(-d * d / (2 * 1.5L * 1.5L));
        gs += g[i];
    }
    const long double c1 = 0.0001L, c2 = 0.0009L;
    long double total = 0;
    for (int ch = 0; ch < a.channels(); ++ch) {
        long double mean = 0;
        int count = 0;
        for (int r0 = 0; r0 + w <= a.height; ++r0) {
            for (int q0 = 0; q0 + w <= a.width; ++q0) {
                long double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
                for (int i = 0; i < w; ++i)
                    for (int j = 0; j < w; ++j) {
                        const long double wt = g[i] * g[j] / (gs * gs);
                        const long double x = a.at(r0 + i, q0 + j, ch), y = b.at(r0 + i, q0 + j, ch);
                        mx += wt * x;
                        my += wt * y;
                        xx += wt * x * x;
                        yy += wt * y * y;
                        xy += wt * x * y;
                    }
                const long double sx = xx - mx * mx, sy = yy - my * my, sxy = xy - mx * my;
                mean += ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sx + sy + c2));
                ++count;
            }
        }
        total += mean / count;
    }
    return total / a.channels();
}


}  // namespace ipapr::fixtures
