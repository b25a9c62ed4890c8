#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "isorec/common.hpp"
#include "isorec/image.hpp"

namespace isorec {

// C-channel 3D scalar field, layout (c, z, y, x) row-major. Payload is
// float32 in memory and on disk; all heavy math converts slices to double.
// Data is normalized to [0, 1]; `scale`/`offset` record the per-channel
// affine map applied at ingestion: stored = (original - offset) * scale.
struct VolumeGrid {
    int dz = 0, hy = 0, wx = 0;
    int channels = 1;
    std::array<real, 3> spacing = {1, 1, 1};  // (s_z, s_y, s_x)
    std::vector<real> scale;                  // length == channels
    std::vector<real> offset;                 // length == channels
    std::vector<float> data;                  // c * dz * hy * wx values

    VolumeGrid() = default;
    VolumeGrid(int dz_, int hy_, int wx_, int channels_ = 1, float fill = 0);

    std::size_t voxels() const { return std::size_t(dz) * hy * wx; }
    std::size_t size() const { return voxels() * channels; }

    float& at(int c, int z, int y, int x) {
        return data[((std::size_t(c) * dz + z) * hy + y) * wx + x];
    }
    float at(int c, int z, int y, int x) const {
        return data[((std::size_t(c) * dz + z) * hy + y) * wx + x];
    }
};

enum class Orientation { ZX, ZY, XY };

const char* orientation_name(Orientation o);
Orientation orientation_from_name(const std::string& name);

// 2D plane specification expanding to normalized 3D coordinates on the
// target isotropic grid `coord_dims` = (nz, ny, nx). Image rows/cols map
// to the two free axes:
//   ZX: fixed y, rows over z, cols over x
//   ZY: fixed x, rows over z, cols over y
//   XY: fixed z, rows over y, cols over x
struct SlicePlan {
    Orientation orientation = Orientation::ZX;
    int index = 0;
    int rows = 0, cols = 0;
    int nz = 0, ny = 0, nx = 0;
};

// Plan spanning the full extent of the two free axes.
SlicePlan make_slice_plan(Orientation o, int index, int nz, int ny, int nx);

void validate_plan(const SlicePlan& plan);

// Voxel-center normalization: c = 2*(i + 0.5)/n - 1.
real normalize_index(int i, int n);

using CoordMatrix = Eigen::Matrix<real, Eigen::Dynamic, 3>;  // columns (z, y, x)

// Row-major list of rows*cols coordinate triples.
CoordMatrix expand_slice(const SlicePlan& plan);

// Native cross-section of a volume (all channels), rows/cols per the
// orientation table above.
Image get_slice(const VolumeGrid& vol, Orientation o, int index);
void set_slice(VolumeGrid& vol, Orientation o, int index, const Image& img);

Image volume_as_image_stack(const VolumeGrid& vol, int z);  // = get_slice XY

VolumeGrid crop_volume(const VolumeGrid& vol, int z0, int y0, int x0, int dz, int hy, int wx);
VolumeGrid stack_channels(const std::vector<VolumeGrid>& parts);

// On-disk format: JSON header at `path`, raw little-endian f32 payload at
// `path + ".raw"`. Ingestion min-max normalizes any channel with values
// outside [0, 1] and folds the transform into scale/offset.
void save_volume(const VolumeGrid& vol, const std::filesystem::path& path);
VolumeGrid load_volume(const std::filesystem::path& path);

}  // namespace isorec
