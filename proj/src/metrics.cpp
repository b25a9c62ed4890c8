#include "isorec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace isorec {

VolumeGrid linear_interp_volume(const VolumeGrid& aniso, int factor, int phase) {
    if (factor < 2) throw ConfigError("linear_interp_volume: factor must be >= 2");
    if (phase < 0) phase = factor / 2;
    if (phase >= factor) throw ConfigError("linear_interp_volume: phase must lie in [0, factor)");
    const int nz = aniso.dz * factor;
    VolumeGrid out(nz, aniso.hy, aniso.wx, aniso.channels);
    out.spacing = {aniso.spacing[0] / factor, aniso.spacing[1], aniso.spacing[2]};
    out.scale = aniso.scale;
    out.offset = aniso.offset;
    for (int z = 0; z < nz; ++z) {
        // LR sample k sits at HR position k*factor + phase
        const real u = (real(z) - real(phase)) / real(factor);
        const real uc = std::clamp(u, 0.0, real(aniso.dz - 1));  // endpoint replication
        const int k0 = std::min(int(std::floor(uc)), aniso.dz - 1);
        const int k1 = std::min(k0 + 1, aniso.dz - 1);
        const real frac = uc - real(k0);
        for (int c = 0; c < aniso.channels; ++c)
            for (int y = 0; y < aniso.hy; ++y)
                for (int x = 0; x < aniso.wx; ++x)
                    out.at(c, z, y, x) = float((1.0 - frac) * aniso.at(c, k0, y, x) +
                                               frac * aniso.at(c, k1, y, x));
    }
    return out;
}

namespace {

template <typename GetA, typename GetB>
real psnr_impl(std::size_t n, real peak, GetA a, GetB b) {
    if (!(peak > 0)) throw ConfigError("psnr: peak must be positive");
    real mse = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const real d = a(i) - b(i);
        mse += d * d;
    }
    mse /= real(n);
    if (mse == 0) return std::numeric_limits<real>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

}  // namespace

real psnr(const Image& a, const Image& b, real peak) {
    require_same_shape(a, b, "psnr");
    return psnr_impl(a.v.size(), peak, [&](std::size_t i) { return a.v[i]; },
                     [&](std::size_t i) { return b.v[i]; });
}

real psnr(const VolumeGrid& a, const VolumeGrid& b, real peak) {
    if (a.dz != b.dz || a.hy != b.hy || a.wx != b.wx || a.channels != b.channels)
        throw ShapeError("psnr: volume shapes differ");
    return psnr_impl(a.data.size(), peak, [&](std::size_t i) { return real(a.data[i]); },
                     [&](std::size_t i) { return real(b.data[i]); });
}

namespace {

constexpr int kWin = 11;
constexpr int kHalf = kWin / 2;
constexpr real kK1 = 0.01, kK2 = 0.03, kRange = 1.0;

const std::vector<real>& ssim_window_1d() {
    static const std::vector<real> w = [] {
        std::vector<real> v(kWin);
        real sum = 0;
        for (int i = 0; i < kWin; ++i) {
            const real d = real(i - kHalf);
            v[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            sum += v[i];
        }
        for (auto& x : v) x /= sum;
        return v;
    }();
    return w;
}

// separable weighted blur, valid region only; input HxW plane, output
// (H-10)x(W-10)
std::vector<real> blur_valid(const real* p, int H, int W) {
    const auto& w1 = ssim_window_1d();
    const int Wv = W - kWin + 1, Hv = H - kWin + 1;
    std::vector<real> tmp(std::size_t(H) * Wv);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < Wv; ++x) {
            real acc = 0;
            for (int k = 0; k < kWin; ++k) acc += w1[k] * p[y * W + x + k];
            tmp[std::size_t(y) * Wv + x] = acc;
        }
    std::vector<real> out(std::size_t(Hv) * Wv);
    for (int y = 0; y < Hv; ++y)
        for (int x = 0; x < Wv; ++x) {
            real acc = 0;
            for (int k = 0; k < kWin; ++k) acc += w1[k] * tmp[std::size_t(y + k) * Wv + x];
            out[std::size_t(y) * Wv + x] = acc;
        }
    return out;
}

}  // namespace

real ssim(const Image& a, const Image& b) {
    require_same_shape(a, b, "ssim");
    if (a.height < kWin || a.width < kWin)
        throw ConfigError("ssim: image smaller than the 11x11 window");
    const real c1 = (kK1 * kRange) * (kK1 * kRange);
    const real c2 = (kK2 * kRange) * (kK2 * kRange);
    const std::size_t npix = a.pixels();

    real total = 0;
    for (int c = 0; c < a.channels; ++c) {
        const real* pa = a.plane(c);
        const real* pb = b.plane(c);
        std::vector<real> aa(npix), bb(npix), ab(npix);
        for (std::size_t i = 0; i < npix; ++i) {
            aa[i] = pa[i] * pa[i];
            bb[i] = pb[i] * pb[i];
            ab[i] = pa[i] * pb[i];
        }
        const auto mu_a = blur_valid(pa, a.height, a.width);
        const auto mu_b = blur_valid(pb, a.height, a.width);
        const auto m_aa = blur_valid(aa.data(), a.height, a.width);
        const auto m_bb = blur_valid(bb.data(), a.height, a.width);
        const auto m_ab = blur_valid(ab.data(), a.height, a.width);
        real acc = 0;
        for (std::size_t i = 0; i < mu_a.size(); ++i) {
            const real va = m_aa[i] - mu_a[i] * mu_a[i];
            const real vb = m_bb[i] - mu_b[i] * mu_b[i];
            const real cov = m_ab[i] - mu_a[i] * mu_b[i];
            acc += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
                   ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
        }
        total += acc / real(mu_a.size());
    }
    return total / real(a.channels);
}

FamilyMeans evaluate_family(const VolumeGrid& recon, const VolumeGrid& gt, Orientation o) {
    const int count = o == Orientation::ZX ? recon.hy
                      : o == Orientation::ZY ? recon.wx
                                             : recon.dz;
    FamilyMeans fm;
    fm.count = count;
    for (int i = 0; i < count; ++i) {
        fm.psnr_db += psnr(get_slice(recon, o, i), get_slice(gt, o, i));
        fm.ssim_val += ssim(get_slice(recon, o, i), get_slice(gt, o, i));
    }
    fm.psnr_db /= real(count);
    fm.ssim_val /= real(count);
    return fm;
}

MetricsReport evaluate_volumes(const VolumeGrid& recon, const VolumeGrid& gt) {
    if (recon.dz != gt.dz || recon.hy != gt.hy || recon.wx != gt.wx ||
        recon.channels != gt.channels)
        throw ShapeError("evaluate_volumes: volume shapes differ");
    MetricsReport rep;
    struct FamilyDef {
        Orientation o;
        const char* name;
        int count;
        FamilyMeans* out;
    };
    const FamilyDef families[] = {
        {Orientation::ZX, "ZX", recon.hy, &rep.zx},
        {Orientation::ZY, "ZY", recon.wx, &rep.zy},
        {Orientation::XY, "XY", recon.dz, &rep.xy},
    };
    for (const auto& f : families) {
        f.out->count = f.count;
        for (int i = 0; i < f.count; ++i) {
            SliceMetric sm;
            sm.family = f.name;
            sm.index = i;
            sm.psnr_db = psnr(get_slice(recon, f.o, i), get_slice(gt, f.o, i));
            sm.ssim_val = ssim(get_slice(recon, f.o, i), get_slice(gt, f.o, i));
            f.out->psnr_db += sm.psnr_db;
            f.out->ssim_val += sm.ssim_val;
            rep.slices.push_back(std::move(sm));
        }
        f.out->psnr_db /= real(f.count);
        f.out->ssim_val /= real(f.count);
    }
    return rep;
}

namespace {
json finite_or_string(real v) {
    if (std::isfinite(v)) return v;
    return v > 0 ? "inf" : "-inf";
}
}  // namespace

json MetricsReport::to_json() const {
    json fam = json::object();
    const std::pair<const char*, const FamilyMeans*> items[] = {
        {"ZX", &zx}, {"ZY", &zy}, {"XY", &xy}};
    for (auto [name, fm] : items)
        fam[name] = {{"mean_psnr_db", finite_or_string(fm->psnr_db)},
                     {"mean_ssim", fm->ssim_val},
                     {"slice_count", fm->count}};
    json rows = json::array();
    for (const auto& s : slices)
        rows.push_back({{"family", s.family},
                        {"index", s.index},
                        {"psnr_db", finite_or_string(s.psnr_db)},
                        {"ssim", s.ssim_val}});
    return json{{"psnr_peak", 1.0}, {"families", fam}, {"slices", rows}};
}

std::string MetricsReport::to_csv() const {
    std::ostringstream os;
    os << "family,index,psnr_db,ssim\n";
    os.precision(10);
    for (const auto& s : slices)
        os << s.family << "," << s.index << "," << s.psnr_db << "," << s.ssim_val << "\n";
    return os.str();
}

void MetricsReport::write(const std::filesystem::path& json_path,
                          const std::filesystem::path& csv_path) const {
    atomic_write_json(json_path, to_json());
    atomic_write_text(csv_path, to_csv());
}

}  // namespace isorec
