#include "isorec/volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "isorec/io_util.hpp"

namespace isorec {

namespace fs = std::filesystem;

VolumeGrid::VolumeGrid(int dz_, int hy_, int wx_, int channels_, float fill)
    : dz(dz_), hy(hy_), wx(wx_), channels(channels_),
      scale(channels_, 1.0), offset(channels_, 0.0),
      data(std::size_t(channels_) * dz_ * hy_ * wx_, fill) {
    if (dz <= 0 || hy <= 0 || wx <= 0 || channels <= 0)
        throw ConfigError("VolumeGrid dimensions must be positive");
}

const char* orientation_name(Orientation o) {
    switch (o) {
        case Orientation::ZX: return "ZX";
        case Orientation::ZY: return "ZY";
        case Orientation::XY: return "XY";
    }
    return "?";
}

Orientation orientation_from_name(const std::string& name) {
    if (name == "ZX" || name == "zx") return Orientation::ZX;
    if (name == "ZY" || name == "zy") return Orientation::ZY;
    if (name == "XY" || name == "xy") return Orientation::XY;
    throw ConfigError("unknown orientation: " + name);
}

real normalize_index(int i, int n) {
    if (n < 1 || i < 0 || i >= n)
        throw ShapeError("normalize_index: index " + std::to_string(i) + " out of [0, " +
                         std::to_string(n) + ")");
    return 2.0 * (real(i) + 0.5) / real(n) - 1.0;
}

SlicePlan make_slice_plan(Orientation o, int index, int nz, int ny, int nx) {
    SlicePlan p;
    p.orientation = o;
    p.index = index;
    p.nz = nz;
    p.ny = ny;
    p.nx = nx;
    switch (o) {
        case Orientation::ZX: p.rows = nz; p.cols = nx; break;
        case Orientation::ZY: p.rows = nz; p.cols = ny; break;
        case Orientation::XY: p.rows = ny; p.cols = nx; break;
    }
    return p;
}

static int fixed_extent(const SlicePlan& p) {
    switch (p.orientation) {
        case Orientation::ZX: return p.ny;
        case Orientation::ZY: return p.nx;
        case Orientation::XY: return p.nz;
    }
    return 0;
}

void validate_plan(const SlicePlan& p) {
    if (p.nz < 1 || p.ny < 1 || p.nx < 1)
        throw ShapeError("SlicePlan: coord_dims must be positive");
    if (p.index < 0 || p.index >= fixed_extent(p))
        throw ShapeError("SlicePlan: index out of fixed-axis extent");
    const SlicePlan full = make_slice_plan(p.orientation, p.index, p.nz, p.ny, p.nx);
    if (p.rows != full.rows || p.cols != full.cols)
        throw ShapeError("SlicePlan: shape must match free-axis extents");
}

CoordMatrix expand_slice(const SlicePlan& plan) {
    validate_plan(plan);
    CoordMatrix coords(std::size_t(plan.rows) * plan.cols, 3);
    std::size_t k = 0;
    switch (plan.orientation) {
        case Orientation::ZX: {
            const real y = normalize_index(plan.index, plan.ny);
            for (int r = 0; r < plan.rows; ++r) {
                const real z = normalize_index(r, plan.nz);
                for (int c = 0; c < plan.cols; ++c, ++k) {
                    coords(k, 0) = z;
                    coords(k, 1) = y;
                    coords(k, 2) = normalize_index(c, plan.nx);
                }
            }
            break;
        }
        case Orientation::ZY: {
            const real x = normalize_index(plan.index, plan.nx);
            for (int r = 0; r < plan.rows; ++r) {
                const real z = normalize_index(r, plan.nz);
                for (int c = 0; c < plan.cols; ++c, ++k) {
                    coords(k, 0) = z;
                    coords(k, 1) = normalize_index(c, plan.ny);
                    coords(k, 2) = x;
                }
            }
            break;
        }
        case Orientation::XY: {
            const real z = normalize_index(plan.index, plan.nz);
            for (int r = 0; r < plan.rows; ++r) {
                const real y = normalize_index(r, plan.ny);
                for (int c = 0; c < plan.cols; ++c, ++k) {
                    coords(k, 0) = z;
                    coords(k, 1) = y;
                    coords(k, 2) = normalize_index(c, plan.nx);
                }
            }
            break;
        }
    }
    return coords;
}

Image get_slice(const VolumeGrid& vol, Orientation o, int index) {
    switch (o) {
        case Orientation::ZX: {
            if (index < 0 || index >= vol.hy) throw ShapeError("get_slice: y index out of range");
            Image img(vol.channels, vol.dz, vol.wx);
            for (int c = 0; c < vol.channels; ++c)
                for (int z = 0; z < vol.dz; ++z)
                    for (int x = 0; x < vol.wx; ++x)
                        img.at(c, z, x) = vol.at(c, z, index, x);
            return img;
        }
        case Orientation::ZY: {
            if (index < 0 || index >= vol.wx) throw ShapeError("get_slice: x index out of range");
            Image img(vol.channels, vol.dz, vol.hy);
            for (int c = 0; c < vol.channels; ++c)
                for (int z = 0; z < vol.dz; ++z)
                    for (int y = 0; y < vol.hy; ++y)
                        img.at(c, z, y) = vol.at(c, z, y, index);
            return img;
        }
        case Orientation::XY: {
            if (index < 0 || index >= vol.dz) throw ShapeError("get_slice: z index out of range");
            Image img(vol.channels, vol.hy, vol.wx);
            for (int c = 0; c < vol.channels; ++c)
                for (int y = 0; y < vol.hy; ++y)
                    for (int x = 0; x < vol.wx; ++x)
                        img.at(c, y, x) = vol.at(c, index, y, x);
            return img;
        }
    }
    throw ShapeError("get_slice: bad orientation");
}

void set_slice(VolumeGrid& vol, Orientation o, int index, const Image& img) {
    switch (o) {
        case Orientation::ZX:
            if (img.channels != vol.channels || img.height != vol.dz || img.width != vol.wx)
                throw ShapeError("set_slice ZX: shape mismatch");
            for (int c = 0; c < vol.channels; ++c)
                for (int z = 0; z < vol.dz; ++z)
                    for (int x = 0; x < vol.wx; ++x)
                        vol.at(c, z, index, x) = float(img.at(c, z, x));
            return;
        case Orientation::ZY:
            if (img.channels != vol.channels || img.height != vol.dz || img.width != vol.hy)
                throw ShapeError("set_slice ZY: shape mismatch");
            for (int c = 0; c < vol.channels; ++c)
                for (int z = 0; z < vol.dz; ++z)
                    for (int y = 0; y < vol.hy; ++y)
                        vol.at(c, z, y, index) = float(img.at(c, z, y));
            return;
        case Orientation::XY:
            if (img.channels != vol.channels || img.height != vol.hy || img.width != vol.wx)
                throw ShapeError("set_slice XY: shape mismatch");
            for (int c = 0; c < vol.channels; ++c)
                for (int y = 0; y < vol.hy; ++y)
                    for (int x = 0; x < vol.wx; ++x)
                        vol.at(c, index, y, x) = float(img.at(c, y, x));
            return;
    }
}

Image volume_as_image_stack(const VolumeGrid& vol, int z) { return get_slice(vol, Orientation::XY, z); }

VolumeGrid crop_volume(const VolumeGrid& vol, int z0, int y0, int x0, int dz, int hy, int wx) {
    if (z0 < 0 || y0 < 0 || x0 < 0 || z0 + dz > vol.dz || y0 + hy > vol.hy || x0 + wx > vol.wx)
        throw ShapeError("crop_volume: window out of bounds");
    VolumeGrid out(dz, hy, wx, vol.channels);
    out.spacing = vol.spacing;
    out.scale = vol.scale;
    out.offset = vol.offset;
    for (int c = 0; c < vol.channels; ++c)
        for (int z = 0; z < dz; ++z)
            for (int y = 0; y < hy; ++y)
                for (int x = 0; x < wx; ++x)
                    out.at(c, z, y, x) = vol.at(c, z0 + z, y0 + y, x0 + x);
    return out;
}

VolumeGrid stack_channels(const std::vector<VolumeGrid>& parts) {
    if (parts.empty()) throw ConfigError("stack_channels: no volumes");
    int channels = 0;
    for (const auto& p : parts) {
        if (p.dz != parts[0].dz || p.hy != parts[0].hy || p.wx != parts[0].wx)
            throw ShapeError("stack_channels: dimension mismatch");
        channels += p.channels;
    }
    VolumeGrid out(parts[0].dz, parts[0].hy, parts[0].wx, channels);
    out.spacing = parts[0].spacing;
    int co = 0;
    for (const auto& p : parts) {
        for (int c = 0; c < p.channels; ++c, ++co) {
            out.scale[co] = p.scale[c];
            out.offset[co] = p.offset[c];
            std::copy(p.data.begin() + std::size_t(c) * p.voxels(),
                      p.data.begin() + std::size_t(c + 1) * p.voxels(),
                      out.data.begin() + std::size_t(co) * out.voxels());
        }
    }
    return out;
}

void save_volume(const VolumeGrid& vol, const fs::path& path) {
    if (vol.size() != vol.data.size())
        throw ShapeError("save_volume: payload length does not match dims");
    const fs::path payload = path.string() + ".raw";
    json header = {
        {"version", 1},
        {"dims", {vol.dz, vol.hy, vol.wx}},
        {"channels", vol.channels},
        {"dtype", "f32le"},
        {"spacing", {vol.spacing[0], vol.spacing[1], vol.spacing[2]}},
        {"scale", vol.scale},
        {"offset", vol.offset},
        {"layout", "c,z,y,x"},
        {"payload", payload.filename().string()},
    };
    write_f32_payload(payload, vol.data);
    atomic_write_json(path, header);
}

VolumeGrid load_volume(const fs::path& path) {
    const json h = read_json_file(path);
    if (!h.contains("version") || !h["version"].is_number_integer() || h["version"].get<int>() != 1)
        throw FormatError("unsupported volume format version in " + path.string());
    if (h.value("dtype", "") != std::string("f32le"))
        throw FormatError("unsupported dtype in " + path.string());
    if (h.value("layout", "") != std::string("c,z,y,x"))
        throw FormatError("unsupported layout in " + path.string());
    const auto dims = h.at("dims");
    if (!dims.is_array() || dims.size() != 3) throw FormatError("bad dims in " + path.string());

    VolumeGrid vol(dims[0].get<int>(), dims[1].get<int>(), dims[2].get<int>(),
                   h.value("channels", 1));
    const auto spacing = h.at("spacing");
    for (int i = 0; i < 3; ++i) {
        vol.spacing[i] = spacing[i].get<real>();
        if (!(vol.spacing[i] > 0)) throw FormatError("spacing must be positive");
    }
    auto read_affine = [&](const char* key, std::vector<real>& out) {
        const auto& j = h.at(key);
        if (j.is_number())
            out.assign(std::size_t(vol.channels), j.get<real>());
        else if (j.is_array() && int(j.size()) == vol.channels)
            out = j.get<std::vector<real>>();
        else
            throw FormatError(std::string("bad ") + key + " in " + path.string());
    };
    read_affine("scale", vol.scale);
    read_affine("offset", vol.offset);

    const fs::path payload = path.parent_path() / h.value("payload", path.filename().string() + ".raw");
    vol.data = read_f32_payload(payload, vol.size());

    // Ingestion normalization: per-channel min-max for channels outside [0, 1].
    for (int c = 0; c < vol.channels; ++c) {
        float mn = std::numeric_limits<float>::infinity();
        float mx = -std::numeric_limits<float>::infinity();
        float* p = vol.data.data() + std::size_t(c) * vol.voxels();
        for (std::size_t i = 0; i < vol.voxels(); ++i) {
            mn = std::min(mn, p[i]);
            mx = std::max(mx, p[i]);
        }
        if (mn >= 0.0f && mx <= 1.0f) continue;
        const real lo = mn, hi = mx;
        if (hi > lo) {
            const real inv = 1.0 / (hi - lo);
            for (std::size_t i = 0; i < vol.voxels(); ++i)
                p[i] = float((real(p[i]) - lo) * inv);
            // original = stored/scale + offset composed with the new map
            vol.offset[c] = lo / vol.scale[c] + vol.offset[c];
            vol.scale[c] = vol.scale[c] * inv;
        } else {
            for (std::size_t i = 0; i < vol.voxels(); ++i) p[i] = 0.0f;
            vol.offset[c] = lo / vol.scale[c] + vol.offset[c];
            vol.scale[c] = 1.0;
        }
    }
    return vol;
}

}  // namespace isorec
