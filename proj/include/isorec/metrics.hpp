#pragma once

#include <filesystem>
#include <vector>

#include "isorec/image.hpp"
#include "isorec/io_util.hpp"
#include "isorec/volume.hpp"

namespace isorec {

// Baseline: 1D linear interpolation along z with voxel-center alignment
// matching the degradation subsample phase (default factor/2); endpoints
// replicate.
VolumeGrid linear_interp_volume(const VolumeGrid& aniso, int factor, int phase = -1);

// 10 log10(peak^2 / MSE); identical inputs return +infinity.
real psnr(const Image& a, const Image& b, real peak = 1.0);
real psnr(const VolumeGrid& a, const VolumeGrid& b, real peak = 1.0);

// Single-scale SSIM: 11x11 Gaussian window sigma 1.5, K1=0.01, K2=0.03,
// dynamic range 1.0, mean over valid window positions; channels averaged.
real ssim(const Image& a, const Image& b);

struct SliceMetric {
    std::string family;  // "ZX", "ZY", "XY"
    int index = 0;
    real psnr_db = 0;
    real ssim_val = 0;
};

struct FamilyMeans {
    real psnr_db = 0;
    real ssim_val = 0;
    int count = 0;
};

struct MetricsReport {
    FamilyMeans zx, zy, xy;
    std::vector<SliceMetric> slices;

    json to_json() const;
    std::string to_csv() const;
    void write(const std::filesystem::path& json_path,
               const std::filesystem::path& csv_path) const;
};

FamilyMeans evaluate_family(const VolumeGrid& recon, const VolumeGrid& gt, Orientation o);
MetricsReport evaluate_volumes(const VolumeGrid& recon, const VolumeGrid& gt);

}  // namespace isorec
