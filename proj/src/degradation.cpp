#include "isorec/degradation.hpp"

#include <algorithm>
#include <cmath>

namespace isorec {

std::vector<real> gaussian_kernel_1d(real sigma, int radius) {
    if (!(sigma > 0)) throw ConfigError("gaussian_kernel_1d: sigma must be positive");
    if (radius < 1) throw ConfigError("gaussian_kernel_1d: radius must be >= 1");
    std::vector<real> w(static_cast<std::size_t>(2 * radius + 1));
    real sum = 0;
    for (int k = -radius; k <= radius; ++k) {
        const real val = std::exp(-real(k) * real(k) / (2.0 * sigma * sigma));
        w[std::size_t(k + radius)] = val;
        sum += val;
    }
    for (auto& v : w) v /= sum;
    return w;
}

DegradationOp DegradationOp::gaussian(int factor, real sigma_z, int kernel_radius, int phase) {
    if (factor < 2) throw ConfigError("DegradationOp: factor must be >= 2");
    if (!(sigma_z > 0)) throw ConfigError("DegradationOp: sigma_z must be positive");
    DegradationOp op;
    op.mode = DegradeMode::GaussianSubsample;
    op.factor = factor;
    op.sigma_z = sigma_z;
    op.kernel_radius = kernel_radius >= 1 ? kernel_radius : int(std::ceil(3.0 * sigma_z));
    op.phase = phase >= 0 ? phase : factor / 2;
    if (op.phase >= factor) throw ConfigError("DegradationOp: phase must lie in [0, factor)");
    return op;
}

DegradationOp DegradationOp::linear_average(int factor, int phase) {
    if (factor < 2) throw ConfigError("DegradationOp: factor must be >= 2");
    DegradationOp op;
    op.mode = DegradeMode::LinearAverage;
    op.factor = factor;
    op.phase = phase >= 0 ? phase : factor / 2;
    if (op.phase >= factor) throw ConfigError("DegradationOp: phase must lie in [0, factor)");
    return op;
}

std::vector<real> DegradationOp::kernel() const {
    return gaussian_kernel_1d(sigma_z, kernel_radius);
}

json DegradationOp::to_json() const {
    return json{{"mode", mode == DegradeMode::GaussianSubsample ? "gaussian_subsample"
                                                                : "linear_average"},
                {"factor", factor},
                {"sigma_z", sigma_z},
                {"kernel_radius", kernel_radius},
                {"phase", phase}};
}

DegradationOp DegradationOp::from_json(const json& j) {
    const std::string mode = j.value("mode", "gaussian_subsample");
    const int factor = j.value("factor", 4);
    const int phase = j.value("phase", -1);
    if (mode == "gaussian_subsample")
        return gaussian(factor, j.value("sigma_z", 2.0), j.value("kernel_radius", -1), phase);
    if (mode == "linear_average") return linear_average(factor, phase);
    throw ConfigError("DegradationOp: unknown mode " + mode);
}

static void check_rows(int hr_rows, const DegradationOp& op) {
    if (hr_rows % op.factor != 0)
        throw ShapeError("degrade: row count " + std::to_string(hr_rows) +
                         " not divisible by factor " + std::to_string(op.factor));
}

Image degrade(const Image& hr, const DegradationOp& op) {
    check_rows(hr.height, op);
    const int m = hr.height / op.factor;
    Image lr(hr.channels, m, hr.width);

    if (op.mode == DegradeMode::LinearAverage) {
        const real inv = 1.0 / real(op.factor);
        for (int c = 0; c < hr.channels; ++c)
            for (int k = 0; k < m; ++k)
                for (int x = 0; x < hr.width; ++x) {
                    real acc = 0;
                    for (int i = 0; i < op.factor; ++i) acc += hr.at(c, k * op.factor + i, x);
                    lr.at(c, k, x) = acc * inv;
                }
        return lr;
    }

    const std::vector<real> w = op.kernel();
    const int R = op.kernel_radius;
    for (int c = 0; c < hr.channels; ++c)
        for (int k = 0; k < m; ++k) {
            const int z = k * op.factor + op.phase;
            for (int x = 0; x < hr.width; ++x) {
                real acc = 0;
                for (int j = -R; j <= R; ++j) {
                    const int zz = std::clamp(z + j, 0, hr.height - 1);
                    acc += w[std::size_t(j + R)] * hr.at(c, zz, x);
                }
                lr.at(c, k, x) = acc;
            }
        }
    return lr;
}

Image degrade_adjoint(const Image& lr, int hr_rows, const DegradationOp& op) {
    check_rows(hr_rows, op);
    if (lr.height != hr_rows / op.factor)
        throw ShapeError("degrade_adjoint: lr row count inconsistent with hr_rows");
    Image hr(lr.channels, hr_rows, lr.width, 0.0);

    if (op.mode == DegradeMode::LinearAverage) {
        const real inv = 1.0 / real(op.factor);
        for (int c = 0; c < lr.channels; ++c)
            for (int k = 0; k < lr.height; ++k)
                for (int x = 0; x < lr.width; ++x) {
                    const real g = lr.at(c, k, x) * inv;
                    for (int i = 0; i < op.factor; ++i) hr.at(c, k * op.factor + i, x) += g;
                }
        return hr;
    }

    const std::vector<real> w = op.kernel();
    const int R = op.kernel_radius;
    for (int c = 0; c < lr.channels; ++c)
        for (int k = 0; k < lr.height; ++k) {
            const int z = k * op.factor + op.phase;
            for (int x = 0; x < lr.width; ++x) {
                const real g = lr.at(c, k, x);
                for (int j = -R; j <= R; ++j) {
                    const int zz = std::clamp(z + j, 0, hr_rows - 1);
                    hr.at(c, zz, x) += w[std::size_t(j + R)] * g;
                }
            }
        }
    return hr;
}

VolumeGrid degrade_volume(const VolumeGrid& vol, const DegradationOp& op) {
    check_rows(vol.dz, op);
    VolumeGrid out(vol.dz / op.factor, vol.hy, vol.wx, vol.channels);
    out.spacing = vol.spacing;
    out.spacing[0] *= real(op.factor);
    out.scale = vol.scale;
    out.offset = vol.offset;
    for (int y = 0; y < vol.hy; ++y) {
        const Image hr = get_slice(vol, Orientation::ZX, y);
        const Image lr = degrade(hr, op);
        set_slice(out, Orientation::ZX, y, lr);
    }
    return out;
}

}  // namespace isorec
