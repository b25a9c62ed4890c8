#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "isorec/metrics.hpp"

using namespace isorec;

namespace {

Image random_image(int c, int h, int w, std::uint64_t seed) {
    Image img(c, h, w);
    Rng rng(seed);
    for (auto& v : img.v) v = rng.uniform();
    return img;
}

// Brute-force SSIM oracle: direct weighted sums per 11x11 window, no
// separable passes, no shared state with the implementation.
real ssim_bruteforce(const Image& a, const Image& b) {
    const int win = 11, half = 5;
    std::vector<real> w(std::size_t(win) * win);
    real wsum = 0;
    for (int dy = 0; dy < win; ++dy)
        for (int dx = 0; dx < win; ++dx) {
            const real r2 = real((dy - half) * (dy - half) + (dx - half) * (dx - half));
            w[std::size_t(dy) * win + dx] = std::exp(-r2 / (2.0 * 1.5 * 1.5));
            wsum += w[std::size_t(dy) * win + dx];
        }
    for (auto& v : w) v /= wsum;

    const real c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    real total = 0;
    for (int c = 0; c < a.channels; ++c) {
        real acc = 0;
        int count = 0;
        for (int y = 0; y + win <= a.height; ++y)
            for (int x = 0; x + win <= a.width; ++x) {
                real ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int dy = 0; dy < win; ++dy)
                    for (int dx = 0; dx < win; ++dx) {
                        const real wv = w[std::size_t(dy) * win + dx];
                        const real va = a.at(c, y + dy, x + dx);
                        const real vb = b.at(c, y + dy, x + dx);
                        ma += wv * va;
                        mb += wv * vb;
                        saa += wv * va * va;
                        sbb += wv * vb * vb;
                        sab += wv * va * vb;
                    }
                const real var_a = saa - ma * ma;
                const real var_b = sbb - mb * mb;
                const real cov = sab - ma * mb;
                acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                       ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
                ++count;
            }
        total += acc / count;
    }
    return total / a.channels;
}

}  // namespace

TEST_CASE("psnr") {
    const Image x = random_image(1, 8, 8, 1);
    CHECK(std::isinf(psnr(x, x)));
    CHECK(psnr(x, x) > 0);

    const Image zero(1, 8, 8, 0.0);
    const Image half(1, 8, 8, 0.5);
    CHECK(psnr(zero, half) == doctest::Approx(20.0 * std::log10(2.0)).epsilon(1e-6));
    CHECK(psnr(zero, half) == doctest::Approx(6.0206).epsilon(1e-3));

    CHECK_THROWS_AS(psnr(x, Image(1, 4, 4)), ShapeError);
    CHECK_THROWS_AS(psnr(x, x, 0.0), ConfigError);

    SUBCASE("strictly decreasing under increasing noise") {
        const Image base = random_image(1, 16, 16, 2);
        real prev = std::numeric_limits<real>::infinity();
        for (const real sigma : {0.01, 0.05, 0.1}) {
            Image noisy = base;
            Rng rng(7);
            for (auto& v : noisy.v) v += sigma * rng.normal();
            const real p = psnr(base, noisy);
            CHECK(p < prev);
            prev = p;
        }
    }
}

TEST_CASE("ssim") {
    const Image x = random_image(1, 16, 16, 3);
    const Image y = random_image(1, 16, 16, 4);

    CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-9));
    CHECK(ssim(x, y) < 1.0);
    CHECK(ssim(x, y) >= -1.0);

    SUBCASE("matches the brute-force oracle on random pairs") {
        for (int trial = 0; trial < 5; ++trial) {
            const Image a = random_image(1, 16, 16, 10 + trial);
            const Image b = random_image(1, 16, 16, 20 + trial);
            CHECK(ssim(a, b) == doctest::Approx(ssim_bruteforce(a, b)).epsilon(1e-6));
        }
        const Image a2 = random_image(2, 16, 16, 30);
        const Image b2 = random_image(2, 16, 16, 31);
        CHECK(ssim(a2, b2) == doctest::Approx(ssim_bruteforce(a2, b2)).epsilon(1e-6));
    }

    SUBCASE("window underflow is a parameter error") {
        CHECK_THROWS_AS(ssim(Image(1, 8, 8), Image(1, 8, 8)), ConfigError);
    }
}

TEST_CASE("linear_interp_volume") {
    SUBCASE("constant volume stays constant") {
        const VolumeGrid vol(4, 3, 3, 1, 0.4f);
        const VolumeGrid up = linear_interp_volume(vol, 4);
        CHECK(up.dz == 16);
        for (float v : up.data) CHECK(v == doctest::Approx(0.4).epsilon(1e-6));
    }

    SUBCASE("two-slice profile is monotone") {
        VolumeGrid vol(2, 1, 1, 1);
        vol.at(0, 0, 0, 0) = 0.0f;
        vol.at(0, 1, 0, 0) = 1.0f;
        const VolumeGrid up = linear_interp_volume(vol, 2);
        for (int z = 1; z < up.dz; ++z)
            CHECK(up.at(0, z, 0, 0) >= up.at(0, z - 1, 0, 0));
    }

    SUBCASE("s=4 matches the line through the sample centers") {
        VolumeGrid vol(2, 1, 1, 1);
        vol.at(0, 0, 0, 0) = 0.0f;
        vol.at(0, 1, 0, 0) = 1.0f;
        const VolumeGrid up = linear_interp_volume(vol, 4);
        // centers: z=2 (value 0) and z=6 (value 1); replicate outside
        for (int z = 0; z < 8; ++z) {
            const real expect = std::clamp((real(z) - 2.0) / 4.0, 0.0, 1.0);
            CHECK(up.at(0, z, 0, 0) == doctest::Approx(expect).epsilon(1e-6));
        }
    }

    SUBCASE("restriction to the sample centers reproduces the input") {
        VolumeGrid vol(5, 4, 4, 2);
        Rng rng(5);
        for (auto& v : vol.data) v = float(rng.uniform());
        const int s = 4, phase = 2;
        const VolumeGrid up = linear_interp_volume(vol, s);
        for (int c = 0; c < 2; ++c)
            for (int k = 0; k < vol.dz; ++k)
                for (int y = 0; y < 4; ++y)
                    for (int x = 0; x < 4; ++x)
                        CHECK(up.at(c, k * s + phase, y, x) == vol.at(c, k, y, x));
    }
}

TEST_CASE("evaluate_volumes") {
    VolumeGrid gt(12, 13, 14, 1);
    Rng rng(9);
    for (auto& v : gt.data) v = float(rng.uniform());

    SUBCASE("identical volumes: infinite psnr, ssim 1") {
        const MetricsReport rep = evaluate_volumes(gt, gt);
        CHECK(std::isinf(rep.zx.psnr_db));
        CHECK(std::isinf(rep.zy.psnr_db));
        CHECK(std::isinf(rep.xy.psnr_db));
        CHECK(rep.zx.ssim_val == doctest::Approx(1.0).epsilon(1e-9));
        for (const auto& s : rep.slices) CHECK(s.ssim_val == doctest::Approx(1.0).epsilon(1e-9));
    }

    SUBCASE("slice counts follow (H_y, W_x, D_z)") {
        const MetricsReport rep = evaluate_volumes(gt, gt);
        CHECK(rep.zx.count == 13);
        CHECK(rep.zy.count == 14);
        CHECK(rep.xy.count == 12);
        CHECK(rep.slices.size() == std::size_t(13 + 14 + 12));
    }

    SUBCASE("metrics are symmetric in the argument order") {
        VolumeGrid other = gt;
        Rng rng2(10);
        for (auto& v : other.data) v = float(rng2.uniform());
        const MetricsReport ab = evaluate_volumes(gt, other);
        const MetricsReport ba = evaluate_volumes(other, gt);
        CHECK(ab.zx.psnr_db == doctest::Approx(ba.zx.psnr_db).epsilon(1e-9));
        CHECK(ab.zy.ssim_val == doctest::Approx(ba.zy.ssim_val).epsilon(1e-9));
        CHECK(ab.xy.psnr_db == doctest::Approx(ba.xy.psnr_db).epsilon(1e-9));
    }

    SUBCASE("dimension mismatch rejected") {
        CHECK_THROWS_AS(evaluate_volumes(gt, VolumeGrid(12, 13, 13, 1)), ShapeError);
    }
}
