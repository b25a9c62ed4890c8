#pragma once

#include <filesystem>
#include <vector>

#include "isorec/degradation.hpp"
#include "isorec/io_util.hpp"
#include "isorec/volume.hpp"

namespace isorec {

// Procedural ground-truth phantom: ellipsoid shells, tubular filaments
// (biased towards in-plane courses so axial downsampling breaks them), and
// band-limited Gaussian texture, followed by a mild isotropic blur that
// mimics the lateral resolution limit.
struct PhantomSpec {
    int dims = 64;      // isotropic (N, N, N)
    int channels = 1;
    std::uint64_t seed = 0;

    int shells_min = 3, shells_max = 6;
    real shell_radius_min = 0.12, shell_radius_max = 0.32;  // fraction of N
    real shell_thickness = 0.035;                           // fraction of N
    real shell_intensity_min = 0.55, shell_intensity_max = 0.95;

    int filaments_min = 6, filaments_max = 12;
    real filament_radius = 1.2;  // voxels
    int filament_segments = 6;
    real filament_intensity_min = 0.6, filament_intensity_max = 1.0;
    real filament_z_slope = 0.25;  // max |dz| per unit in-plane step

    bool texture = true;
    real texture_sigma = 1.5;
    real texture_amplitude = 0.08;
    real texture_midpoint = 0.2;  // background level

    real blur_sigma = 0.5;  // lateral-matching blur, all axes

    json to_json() const;
    static PhantomSpec from_json(const json& j);
};

VolumeGrid make_phantom(const PhantomSpec& spec);

// The simulation protocol: z-stretched Gaussian blur + keep every s-th
// slice (gaussian_subsample mode of the degradation operator).
VolumeGrid simulate_anisotropic(const VolumeGrid& gt, real sigma_z, int s);

// Random crops from XY slices only; every patch has constant z.
std::vector<Image> extract_lateral_patches(const VolumeGrid& aniso, int patch, int count,
                                           std::uint64_t seed);

// Patches stacked along z into one volume (patch datasets on disk).
VolumeGrid patches_to_volume(const std::vector<Image>& patches);
std::vector<Image> volume_to_patches(const VolumeGrid& stack);

struct BundlePaths {
    std::filesystem::path dir;
    std::filesystem::path gt() const { return dir / "gt.volume"; }
    std::filesystem::path aniso() const { return dir / "aniso.volume"; }
    std::filesystem::path patches() const { return dir / "patches.volume"; }
    std::filesystem::path meta() const { return dir / "bundle.json"; }
};

}  // namespace isorec
