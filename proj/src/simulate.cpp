#include "isorec/simulate.hpp"

#include <algorithm>
#include <cmath>

namespace isorec {

json PhantomSpec::to_json() const {
    return json{{"dims", dims},
                {"channels", channels},
                {"seed", seed},
                {"shells",
                 {{"count_min", shells_min},
                  {"count_max", shells_max},
                  {"radius_min", shell_radius_min},
                  {"radius_max", shell_radius_max},
                  {"thickness", shell_thickness},
                  {"intensity_min", shell_intensity_min},
                  {"intensity_max", shell_intensity_max}}},
                {"filaments",
                 {{"count_min", filaments_min},
                  {"count_max", filaments_max},
                  {"radius", filament_radius},
                  {"segments", filament_segments},
                  {"intensity_min", filament_intensity_min},
                  {"intensity_max", filament_intensity_max},
                  {"z_slope", filament_z_slope}}},
                {"texture",
                 {{"enabled", texture},
                  {"sigma", texture_sigma},
                  {"amplitude", texture_amplitude},
                  {"midpoint", texture_midpoint}}},
                {"blur_sigma", blur_sigma}};
}

PhantomSpec PhantomSpec::from_json(const json& j) {
    PhantomSpec s;
    s.dims = j.value("dims", s.dims);
    s.channels = j.value("channels", s.channels);
    s.seed = j.value("seed", s.seed);
    if (j.contains("shells")) {
        const auto& sh = j["shells"];
        s.shells_min = sh.value("count_min", s.shells_min);
        s.shells_max = sh.value("count_max", s.shells_max);
        s.shell_radius_min = sh.value("radius_min", s.shell_radius_min);
        s.shell_radius_max = sh.value("radius_max", s.shell_radius_max);
        s.shell_thickness = sh.value("thickness", s.shell_thickness);
        s.shell_intensity_min = sh.value("intensity_min", s.shell_intensity_min);
        s.shell_intensity_max = sh.value("intensity_max", s.shell_intensity_max);
    }
    if (j.contains("filaments")) {
        const auto& f = j["filaments"];
        s.filaments_min = f.value("count_min", s.filaments_min);
        s.filaments_max = f.value("count_max", s.filaments_max);
        s.filament_radius = f.value("radius", s.filament_radius);
        s.filament_segments = f.value("segments", s.filament_segments);
        s.filament_intensity_min = f.value("intensity_min", s.filament_intensity_min);
        s.filament_intensity_max = f.value("intensity_max", s.filament_intensity_max);
        s.filament_z_slope = f.value("z_slope", s.filament_z_slope);
    }
    if (j.contains("texture")) {
        const auto& t = j["texture"];
        s.texture = t.value("enabled", s.texture);
        s.texture_sigma = t.value("sigma", s.texture_sigma);
        s.texture_amplitude = t.value("amplitude", s.texture_amplitude);
        s.texture_midpoint = t.value("midpoint", s.texture_midpoint);
    }
    s.blur_sigma = j.value("blur_sigma", s.blur_sigma);
    return s;
}

namespace {

struct Vec3 {
    real z, y, x;
};

// separable 3D gaussian blur with replicate padding, in place
void blur3d(std::vector<real>& v, int n, real sigma) {
    if (!(sigma > 0)) return;
    const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
    const std::vector<real> w = gaussian_kernel_1d(sigma, radius);
    std::vector<real> tmp(v.size());
    auto idx = [n](int z, int y, int x) { return (std::size_t(z) * n + y) * n + x; };
    auto pass = [&](int axis, const std::vector<real>& src, std::vector<real>& dst) {
        for (int z = 0; z < n; ++z)
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x) {
                    real acc = 0;
                    for (int k = -radius; k <= radius; ++k) {
                        int zz = z, yy = y, xx = x;
                        if (axis == 0) zz = std::clamp(z + k, 0, n - 1);
                        if (axis == 1) yy = std::clamp(y + k, 0, n - 1);
                        if (axis == 2) xx = std::clamp(x + k, 0, n - 1);
                        acc += w[std::size_t(k + radius)] * src[idx(zz, yy, xx)];
                    }
                    dst[idx(z, y, x)] = acc;
                }
    };
    pass(0, v, tmp);
    pass(1, tmp, v);
    pass(2, v, tmp);
    v.swap(tmp);
}

void rasterize_shell(std::vector<real>& field, int n, Rng& rng, const PhantomSpec& spec) {
    const real cz = rng.uniform(0.2, 0.8) * n;
    const real cy = rng.uniform(0.2, 0.8) * n;
    const real cx = rng.uniform(0.2, 0.8) * n;
    const real az = rng.uniform(spec.shell_radius_min, spec.shell_radius_max) * n;
    const real ay = rng.uniform(spec.shell_radius_min, spec.shell_radius_max) * n;
    const real ax = rng.uniform(spec.shell_radius_min, spec.shell_radius_max) * n;
    const real intensity = rng.uniform(spec.shell_intensity_min, spec.shell_intensity_max);
    const real interior = intensity * rng.uniform(0.15, 0.35);
    const real tau = spec.shell_thickness * n / std::min({az, ay, ax});

    const int z0 = std::max(0, int(cz - az - 3)), z1 = std::min(n - 1, int(cz + az + 3));
    const int y0 = std::max(0, int(cy - ay - 3)), y1 = std::min(n - 1, int(cy + ay + 3));
    const int x0 = std::max(0, int(cx - ax - 3)), x1 = std::min(n - 1, int(cx + ax + 3));
    auto idx = [n](int z, int y, int x) { return (std::size_t(z) * n + y) * n + x; };
    for (int z = z0; z <= z1; ++z)
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const real dz = (z - cz) / az, dy = (y - cy) / ay, dx = (x - cx) / ax;
                const real g = std::sqrt(dz * dz + dy * dy + dx * dx);
                real v = 0;
                if (std::abs(g - 1.0) < tau) {
                    const real fall = 1.0 - std::abs(g - 1.0) / tau;
                    v = intensity * fall;
                } else if (g < 1.0) {
                    v = interior;
                }
                real& cell = field[idx(z, y, x)];
                cell = std::max(cell, v);
            }
}

void rasterize_filament(std::vector<real>& field, int n, Rng& rng, const PhantomSpec& spec) {
    const real intensity =
        rng.uniform(spec.filament_intensity_min, spec.filament_intensity_max);
    const real r = spec.filament_radius;
    Vec3 p{rng.uniform(0.1, 0.9) * n, rng.uniform(0.1, 0.9) * n, rng.uniform(0.1, 0.9) * n};
    // mostly in-plane course: z component limited to +-z_slope
    real theta = rng.uniform(0.0, 6.283185307179586);
    auto idx = [n](int z, int y, int x) { return (std::size_t(z) * n + y) * n + x; };

    for (int seg = 0; seg < spec.filament_segments; ++seg) {
        theta += rng.uniform(-0.7, 0.7);
        const real dz = rng.uniform(-spec.filament_z_slope, spec.filament_z_slope);
        const real len = rng.uniform(0.15, 0.3) * n;
        const Vec3 dir{dz, std::sin(theta), std::cos(theta)};
        const real norm = std::sqrt(dir.z * dir.z + dir.y * dir.y + dir.x * dir.x);
        const Vec3 q{p.z + dir.z / norm * len, p.y + dir.y / norm * len,
                     p.x + dir.x / norm * len};

        const int z0 = std::clamp(int(std::min(p.z, q.z) - 3 * r), 0, n - 1);
        const int z1 = std::clamp(int(std::max(p.z, q.z) + 3 * r), 0, n - 1);
        const int y0 = std::clamp(int(std::min(p.y, q.y) - 3 * r), 0, n - 1);
        const int y1 = std::clamp(int(std::max(p.y, q.y) + 3 * r), 0, n - 1);
        const int x0 = std::clamp(int(std::min(p.x, q.x) - 3 * r), 0, n - 1);
        const int x1 = std::clamp(int(std::max(p.x, q.x) + 3 * r), 0, n - 1);
        const Vec3 d{q.z - p.z, q.y - p.y, q.x - p.x};
        const real dd = d.z * d.z + d.y * d.y + d.x * d.x;
        for (int z = z0; z <= z1; ++z)
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const Vec3 w{z - p.z, y - p.y, x - p.x};
                    real tproj = dd > 0 ? (w.z * d.z + w.y * d.y + w.x * d.x) / dd : 0.0;
                    tproj = std::clamp(tproj, 0.0, 1.0);
                    const real ez = w.z - tproj * d.z;
                    const real ey = w.y - tproj * d.y;
                    const real ex = w.x - tproj * d.x;
                    const real dist2 = ez * ez + ey * ey + ex * ex;
                    const real v = intensity * std::exp(-dist2 / (2.0 * r * r));
                    real& cell = field[idx(z, y, x)];
                    cell = std::max(cell, v);
                }
        p = q;
    }
}

std::vector<real> make_channel_field(int n, std::uint64_t seed, const PhantomSpec& spec) {
    std::vector<real> field(std::size_t(n) * n * n, 0.0);
    const int shell_span = spec.shells_max - spec.shells_min;
    const int fil_span = spec.filaments_max - spec.filaments_min;
    Rng count_rng(mix_seed(seed, 0xc0));
    const int n_shells =
        spec.shells_min + (shell_span > 0 ? int(count_rng.uniform_int(shell_span + 1)) : 0);
    const int n_fils =
        spec.filaments_min + (fil_span > 0 ? int(count_rng.uniform_int(fil_span + 1)) : 0);
    if (n_shells <= 0 && n_fils <= 0 && !spec.texture)
        throw ConfigError("make_phantom: spec generates neither structures nor texture");

    // per-structure seeds keep the result independent of rasterization order
    for (int i = 0; i < n_shells; ++i) {
        Rng rng(mix_seed(seed, 0x5e11 + std::uint64_t(i)));
        rasterize_shell(field, n, rng, spec);
    }
    for (int i = 0; i < n_fils; ++i) {
        Rng rng(mix_seed(seed, 0xf17a + std::uint64_t(i)));
        rasterize_filament(field, n, rng, spec);
    }

    if (spec.texture) {
        Rng rng(mix_seed(seed, 0x7e47));
        std::vector<real> noise(field.size());
        for (auto& v : noise) v = rng.normal();
        blur3d(noise, n, spec.texture_sigma);
        // rescale the smoothed noise back to unit variance before applying
        // the configured amplitude
        real var = 0;
        for (const auto& v : noise) var += v * v;
        var /= real(noise.size());
        const real inv_std = var > 0 ? 1.0 / std::sqrt(var) : 0.0;
        for (std::size_t i = 0; i < field.size(); ++i) {
            const real tex = spec.texture_midpoint + spec.texture_amplitude * noise[i] * inv_std;
            field[i] = std::max(field[i], 0.0) + tex;
        }
    }

    blur3d(field, n, spec.blur_sigma);
    for (auto& v : field) v = std::clamp(v, 0.0, 1.0);
    return field;
}

}  // namespace

VolumeGrid make_phantom(const PhantomSpec& spec) {
    if (spec.dims < 16) throw ConfigError("make_phantom: dims must be >= 16");
    if (spec.channels < 1) throw ConfigError("make_phantom: channels must be >= 1");
    VolumeGrid vol(spec.dims, spec.dims, spec.dims, spec.channels);
    for (int c = 0; c < spec.channels; ++c) {
        const auto field = make_channel_field(spec.dims, mix_seed(spec.seed, 0xc4a + c), spec);
        float* dst = vol.data.data() + std::size_t(c) * vol.voxels();
        for (std::size_t i = 0; i < field.size(); ++i) dst[i] = float(field[i]);
    }
    return vol;
}

VolumeGrid simulate_anisotropic(const VolumeGrid& gt, real sigma_z, int s) {
    return degrade_volume(gt, DegradationOp::gaussian(s, sigma_z));
}

std::vector<Image> extract_lateral_patches(const VolumeGrid& aniso, int patch, int count,
                                           std::uint64_t seed) {
    if (patch < 1 || patch > std::min(aniso.hy, aniso.wx))
        throw ConfigError("extract_lateral_patches: patch size exceeds lateral extent");
    if (count < 1) throw ConfigError("extract_lateral_patches: count must be >= 1");
    Rng rng(mix_seed(seed, 0xa7c4));
    std::vector<Image> patches;
    patches.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int z = int(rng.uniform_int(aniso.dz));
        const int y0 = int(rng.uniform_int(aniso.hy - patch + 1));
        const int x0 = int(rng.uniform_int(aniso.wx - patch + 1));
        Image img(aniso.channels, patch, patch);
        for (int c = 0; c < aniso.channels; ++c)
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x)
                    img.at(c, y, x) = aniso.at(c, z, y0 + y, x0 + x);
        patches.push_back(std::move(img));
    }
    return patches;
}

VolumeGrid patches_to_volume(const std::vector<Image>& patches) {
    if (patches.empty()) throw ConfigError("patches_to_volume: empty dataset");
    const Image& p0 = patches[0];
    VolumeGrid stack(int(patches.size()), p0.height, p0.width, p0.channels);
    for (std::size_t i = 0; i < patches.size(); ++i) {
        if (!patches[i].same_shape(p0)) throw ShapeError("patches_to_volume: mixed shapes");
        set_slice(stack, Orientation::XY, int(i), patches[i]);
    }
    return stack;
}

std::vector<Image> volume_to_patches(const VolumeGrid& stack) {
    std::vector<Image> patches;
    patches.reserve(static_cast<std::size_t>(stack.dz));
    for (int z = 0; z < stack.dz; ++z) patches.push_back(get_slice(stack, Orientation::XY, z));
    return patches;
}

}  // namespace isorec
