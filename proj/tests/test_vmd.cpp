#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "ppgkit/errors.hpp"
#include "ppgkit/vmd.hpp"

using namespace ppg;

namespace {

std::vector<double> two_tone(int n, double rate) {
    std::vector<double> x(n);
    for (int i = 0; i < n; ++i) {
        const double t = i / rate;
        x[i] = std::sin(2.0 * std::numbers::pi * 2.0 * t) +
               std::sin(2.0 * std::numbers::pi * 10.0 * t);
    }
    return x;
}

double rel_l2(const std::vector<double>& err, const std::vector<double>& ref) {
    double e = 0.0, r = 0.0;
    for (size_t i = 0; i < err.size(); ++i) e += err[i] * err[i];
    for (double v : ref) r += v * v;
    return std::sqrt(e / r);
}

}  // namespace

TEST_CASE("vmd config validation") {
    VmdConfig cfg;
    cfg.k = 0;
    CHECK_THROWS_AS(cfg.validate(), DataError);
    cfg = VmdConfig{};
    cfg.alpha = 0.0;
    CHECK_THROWS_AS(cfg.validate(), DataError);
    cfg = VmdConfig{};
    cfg.eps = 0.0;
    CHECK_THROWS_AS(cfg.validate(), DataError);
    cfg = VmdConfig{};
    cfg.max_iter = 0;
    CHECK_THROWS_AS(cfg.validate(), DataError);
    cfg = VmdConfig{};
    cfg.tau = -0.1;
    CHECK_THROWS_AS(cfg.validate(), DataError);
}

TEST_CASE("constant signal collapses to a single dc mode") {
    std::vector<double> x(256, 1.5);
    VmdConfig cfg;
    cfg.k = 1;
    const ModeSet ms = vmd_decompose(x, cfg);
    REQUIRE(ms.modes.size() == 1);
    CHECK(ms.center_freqs[0] <= 1e-3);
    for (size_t i = 0; i < x.size(); ++i) {
        CHECK(std::abs(ms.modes[0][i] - 1.5) <= 1e-3);
        CHECK(std::abs(ms.residual[i]) <= 1e-3);
    }
}

TEST_CASE("reconstruction identity holds exactly by construction") {
    const auto x = two_tone(300, 125.0);
    VmdConfig cfg;
    cfg.k = 2;
    cfg.max_iter = 40;
    const ModeSet ms = vmd_decompose(x, cfg);
    REQUIRE(ms.residual.size() == x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        double sum = ms.residual[i];
        for (const auto& m : ms.modes) sum += m[i];
        CHECK(sum == doctest::Approx(x[i]).epsilon(1e-12));
    }
}

TEST_CASE("two tones separate into modes at the right center frequencies") {
    const auto x = two_tone(700, 125.0);
    VmdConfig cfg;
    cfg.k = 2;
    cfg.alpha = 2000.0;
    cfg.tau = 0.5;
    const ModeSet ms = vmd_decompose(x, cfg);
    REQUIRE(ms.center_freqs.size() == 2);

    std::vector<double> cfs = ms.center_freqs;
    std::sort(cfs.begin(), cfs.end());
    CHECK(std::abs(cfs[0] - 2.0 / 125.0) <= 0.05 * (2.0 / 125.0));
    CHECK(std::abs(cfs[1] - 10.0 / 125.0) <= 0.05 * (10.0 / 125.0));
    CHECK(rel_l2(ms.residual, x) <= 0.05);
    CHECK(ms.iterations_used <= cfg.max_iter);
}

TEST_CASE("mode recovery is equivariant to amplitude scaling") {
    const auto x = two_tone(400, 125.0);
    std::vector<double> xs(x);
    const double c = 3.7;
    for (auto& v : xs) v *= c;

    VmdConfig cfg;
    cfg.k = 2;
    const ModeSet a = vmd_decompose(x, cfg);
    const ModeSet b = vmd_decompose(xs, cfg);
    for (int m = 0; m < cfg.k; ++m) {
        CHECK(std::abs(a.center_freqs[m] - b.center_freqs[m]) <= 1e-6);
        for (size_t i = 0; i < x.size(); ++i)
            CHECK(std::abs(b.modes[m][i] - c * a.modes[m][i]) <= 1e-6);
    }
}

TEST_CASE("time reversal reverses modes and keeps center frequencies") {
    const auto x = two_tone(400, 125.0);
    std::vector<double> xr(x.rbegin(), x.rend());

    VmdConfig cfg;
    cfg.k = 2;
    const ModeSet a = vmd_decompose(x, cfg);
    const ModeSet b = vmd_decompose(xr, cfg);
    for (int m = 0; m < cfg.k; ++m) {
        CHECK(std::abs(a.center_freqs[m] - b.center_freqs[m]) <= 1e-6);
        for (size_t i = 0; i < x.size(); ++i)
            CHECK(std::abs(b.modes[m][x.size() - 1 - i] - a.modes[m][i]) <= 1e-6);
    }
}

TEST_CASE("iteration cap is honored") {
    const auto x = two_tone(256, 125.0);
    VmdConfig cfg;
    cfg.k = 2;
    cfg.max_iter = 3;
    const ModeSet ms = vmd_decompose(x, cfg);
    CHECK(ms.iterations_used == 3);
}

TEST_CASE("dilate stacks the raw signal over its modes") {
    const auto x = two_tone(128, 125.0);
    VmdConfig cfg;
    cfg.k = 2;
    cfg.max_iter = 20;
    const ModeSet ms = vmd_decompose(x, cfg);
    const Mat d = dilate(x, ms);
    REQUIRE(d.rows == 3);
    REQUIRE(d.cols == 128);
    for (int c = 0; c < d.cols; ++c) {
        CHECK(d.at(0, c) == x[c]);
        CHECK(d.at(1, c) == ms.modes[0][c]);
        CHECK(d.at(2, c) == ms.modes[1][c]);
    }
}
